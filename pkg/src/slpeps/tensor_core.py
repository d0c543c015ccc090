"""
Dense complex tensor algebra.

Tensors are plain ``numpy.ndarray`` objects of dtype ``complex128`` in
C (row-major) order. The factorizations take a set of *row axes*: the
tensor is permuted so those axes come first (in the given order), reshaped
to a matrix and factorized. The returned left factor carries the row axes
followed by the new bond axis, the right factor carries the new bond axis
followed by the remaining axes in their original order.

Phase convention: in every left factor column the entry of largest
magnitude is made real and positive, and the compensating phase is moved
into the right factor.
"""

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericError

DTYPE = np.complex128


def as_tensor(x):
    """Return ``x`` as a C-ordered complex128 array."""
    return np.ascontiguousarray(x, dtype=DTYPE)


def contract(a, b, pairs):
    """
    Contract ``a`` and ``b`` over the given axis pairs.

    Parameters
    ----------
    a, b : ndarray
    pairs : sequence of (int, int)
        Each pair is ``(axis of a, axis of b)``.

    Returns
    -------
    ndarray
        Free axes of ``a`` (in order) followed by free axes of ``b``.
    """
    pairs = list(pairs)
    ax_a = [p[0] % a.ndim for p in pairs]
    ax_b = [p[1] % b.ndim for p in pairs]
    if len(set(ax_a)) != len(ax_a) or len(set(ax_b)) != len(ax_b):
        raise DimensionError(f"axis paired twice in {pairs}")
    for i, j in zip(ax_a, ax_b):
        if a.shape[i] != b.shape[j]:
            raise DimensionError(
                f"cannot contract axis {i} of shape {a.shape} "
                f"with axis {j} of shape {b.shape}"
            )
    return np.tensordot(a, b, axes=(ax_a, ax_b))


def _split_axes(t, row_axes):
    row_axes = [ax % t.ndim for ax in row_axes]
    if not row_axes or len(row_axes) >= t.ndim or len(set(row_axes)) != len(row_axes):
        raise DimensionError(
            f"row axes {row_axes} must be a nonempty proper subset of {t.ndim} axes"
        )
    col_axes = [ax for ax in range(t.ndim) if ax not in row_axes]
    row_shape = tuple(t.shape[ax] for ax in row_axes)
    col_shape = tuple(t.shape[ax] for ax in col_axes)
    mat = np.transpose(t, row_axes + col_axes).reshape(
        int(np.prod(row_shape)), int(np.prod(col_shape))
    )
    return mat, row_shape, col_shape


def _fix_phases(u, vh):
    """Make the largest entry of every column of ``u`` real positive."""
    if u.shape[1] == 0:
        return u, vh
    idx = np.argmax(np.abs(u), axis=0)
    piv = u[idx, np.arange(u.shape[1])]
    mag = np.abs(piv)
    phase = np.where(mag > 0, piv / np.where(mag > 0, mag, 1), 1)
    return u * phase.conj(), vh * phase[:, None]


def svd_matrix(mat):
    """Thin SVD with a fallback LAPACK driver and the phase convention."""
    try:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vh = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"SVD failed for matrix of shape {mat.shape}") from exc
    u, vh = _fix_phases(u, vh)
    return u, s, vh


def svd(t, row_axes):
    """
    Singular value decomposition across a bipartition of the axes.

    Returns
    -------
    u : ndarray, shape ``row_shape + (k,)``
    s : ndarray, shape ``(k,)``, real, descending
    vh : ndarray, shape ``(k,) + col_shape``
    """
    mat, row_shape, col_shape = _split_axes(t, row_axes)
    try:
        u, s, vh = svd_matrix(mat)
    except NumericError as exc:
        raise NumericError(f"SVD failed for tensor of shape {t.shape}") from exc
    k = s.shape[0]
    return u.reshape(row_shape + (k,)), s, vh.reshape((k,) + col_shape)


def qr(t, row_axes):
    """
    Thin QR decomposition across a bipartition of the axes.

    ``q`` is isometric on its last axis; ``r`` is upper triangular once
    reshaped to a matrix (up to the column phase convention).
    """
    mat, row_shape, col_shape = _split_axes(t, row_axes)
    try:
        q, r = np.linalg.qr(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"QR failed for tensor of shape {t.shape}") from exc
    q, r = _fix_phases(q, r)
    k = q.shape[1]
    return q.reshape(row_shape + (k,)), r.reshape((k,) + col_shape)


def truncated_svd(t, row_axes, keep):
    """
    SVD keeping at most ``keep`` leading singular triples.

    Returns
    -------
    u, s, vh
        As for :func:`svd`, truncated.
    discarded : float
        Sum of the squared singular values that were dropped.
    """
    if keep < 1:
        raise ValueError(f"keep must be >= 1, got {keep}")
    u, s, vh = svd(t, row_axes)
    k = min(keep, s.shape[0])
    discarded = float(np.sum(s[k:] ** 2))
    return u[..., :k], s[:k], vh[:k], discarded


def isometry_residual(q, n_out=1):
    """``max |Q^dagger Q - 1|`` with the last ``n_out`` axes as columns."""
    cols = int(np.prod(q.shape[q.ndim - n_out:]))
    mat = q.reshape(-1, cols)
    return float(np.max(np.abs(mat.conj().T @ mat - np.eye(cols))))


# --- lean factorizations for the hot loops --------------------------------------
#
# The contraction engine factorizes many small matrices; calling LAPACK
# directly avoids most of the per-call overhead of the generic wrappers.
# No phase convention is applied here: callers only use gauge-invariant
# combinations of the factors.

_gesdd = scipy.linalg.lapack.zgesdd
_geqrf = scipy.linalg.lapack.zgeqrf
_ungqr = scipy.linalg.lapack.zungqr


def thin_svd(mat):
    """Thin SVD of a complex matrix, falling back to the slower driver on failure."""
    mat = np.asarray(mat, dtype=complex)
    u, s, vh, info = _gesdd(mat, full_matrices=0)
    if info != 0:
        try:
            u, s, vh = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"SVD failed for matrix of shape {mat.shape}") from exc
    return u, s, vh


def thin_qr(mat):
    """Thin QR of a complex matrix: ``Q`` has ``min(rows, cols)`` columns."""
    mat = np.asarray(mat, dtype=complex)
    rows, cols = mat.shape
    qr, tau, _, info = _geqrf(mat)
    if info != 0:
        raise NumericError(f"QR failed for matrix of shape {mat.shape}")
    k = min(rows, cols)
    r = np.triu(qr[:k])
    q, _, info = _ungqr(qr[:, :k], tau)
    if info != 0:
        raise NumericError(f"QR failed for matrix of shape {mat.shape}")
    return q, r
