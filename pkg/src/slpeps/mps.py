"""
Finite open-boundary matrix product states.

Public sites are stored with axes ``(left, right, *external)``; both outer
bonds have length 1. Internally every routine works on *cores*, the same
tensors reshaped to ``(left, x, right)`` with all external axes fused into
``x``, which is the layout the sweeps want.

When an MPS summarizes part of a two-dimensional network, its last external
axis is a *dangling* bond pointing into the uncontracted region and the
remaining external axes form the (merged) physical index. ``Mps.dangling``
records whether the last axis has that role.

Equilibrated form: sites are left-canonical (the last one carries the norm)
and ``weights[j]`` holds the Schmidt values of bond ``j | j+1``, so the
orthogonality centre of site ``j`` is ``A_j * weights[j]``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, DegenerateStateError, DimensionError
from .tensor_core import thin_qr, thin_svd

WEIGHT_DROP = 1e-14


@dataclass(frozen=True)
class Mps:
    sites: list
    dangling: bool = False
    form: str = None
    weights: list = field(default=None, compare=False)

    def __post_init__(self):
        if not self.sites:
            raise DimensionError("an MPS needs at least one site")
        if self.sites[0].shape[0] != 1 or self.sites[-1].shape[1] != 1:
            raise DimensionError("outer bonds of an open MPS must have length 1")
        for j in range(len(self.sites) - 1):
            if self.sites[j].shape[1] != self.sites[j + 1].shape[0]:
                raise DimensionError(
                    f"bond {j}: right length {self.sites[j].shape[1]} != "
                    f"left length {self.sites[j + 1].shape[0]}"
                )

    def __len__(self):
        return len(self.sites)

    @property
    def bonds(self):
        return [t.shape[1] for t in self.sites[:-1]]

    @property
    def ext_shapes(self):
        return [t.shape[2:] for t in self.sites]

    def cores(self):
        return [to_core(t) for t in self.sites]


def to_core(site):
    l, r = site.shape[:2]
    return np.transpose(site, (0,) + tuple(range(2, site.ndim)) + (1,)).reshape(l, -1, r)


def from_core(core, ext_shape):
    l, _, r = core.shape
    t = core.reshape((l,) + tuple(ext_shape) + (r,))
    nd = t.ndim
    return np.ascontiguousarray(np.transpose(t, (0, nd - 1) + tuple(range(1, nd - 1))))


def from_cores(cores, ext_shapes, **kw):
    return Mps([from_core(c, e) for c, e in zip(cores, ext_shapes)], **kw)


def from_dense(vec, ext_shapes, max_bond=None, dangling=False):
    """Exact (or truncated) MPS of a dense vector by successive SVDs."""
    dims = [int(np.prod(e)) for e in ext_shapes]
    rest = np.asarray(vec, dtype=complex).reshape(1, -1)
    cores = []
    for d in dims[:-1]:
        l = rest.shape[0]
        u, s, vh = np.linalg.svd(rest.reshape(l * d, -1), full_matrices=False)
        k = int(np.sum(s > WEIGHT_DROP * max(s[0], 1e-300))) or 1
        if max_bond is not None:
            k = min(k, max_bond)
        cores.append(u[:, :k].reshape(l, d, k))
        rest = s[:k, None] * vh[:k]
    cores.append(rest.reshape(rest.shape[0], dims[-1], 1))
    return from_cores(cores, ext_shapes, dangling=dangling)


def to_dense(phi):
    """Full state vector over the external axes, site 0 most significant."""
    cores = phi.cores() if isinstance(phi, Mps) else phi
    v = np.ones((1, 1), dtype=complex)
    for c in cores:
        v = np.tensordot(v, c, axes=(1, 0)).reshape(-1, c.shape[2])
    return v.reshape(-1)


def overlap_cores(bra, ket):
    """``<bra|ket>`` for two lists of cores."""
    env = np.ones((1, 1), dtype=complex)
    for b, k in zip(bra, ket):
        env = np.tensordot(env, k, axes=(1, 0))
        env = np.tensordot(b.conj(), env, axes=([0, 1], [0, 1]))
    return env[0, 0]


def overlap(a, b):
    return overlap_cores(a.cores(), b.cores())


def norm_sq(phi):
    return float(np.real(overlap(phi, phi)))


# --- sweeps on cores -------------------------------------------------------


def left_qr_sweep(cores):
    """Left-canonicalize in place; the last core keeps the norm."""
    for j in range(len(cores) - 1):
        l, x, r = cores[j].shape
        q, rm = thin_qr(cores[j].reshape(l * x, r))
        k = q.shape[1]
        cores[j] = q.reshape(l, x, k)
        cores[j + 1] = np.tensordot(rm, cores[j + 1], axes=(1, 0))
    return cores


def _keep(s, max_bond):
    if s.shape[0] == 0 or s[0] == 0:
        return 1
    k = int(np.count_nonzero(s > WEIGHT_DROP * s[0]))
    if max_bond is not None:
        k = min(k, max_bond)
    return max(k, 1)


def rtl_truncate(cores, max_bond):
    """
    Right-to-left SVD sweep from a left-canonical state, keeping at most
    ``max_bond`` values per bond. Leaves the state right-canonical with the
    norm in core 0. Returns the total discarded weight.
    """
    discarded = 0.0
    for j in range(len(cores) - 1, 0, -1):
        l, x, r = cores[j].shape
        u, s, vh = thin_svd(cores[j].reshape(l, x * r))
        k = _keep(s, max_bond)
        discarded += float(np.sum(s[k:] ** 2))
        cores[j] = vh[:k].reshape(k, x, r)
        cores[j - 1] = np.tensordot(cores[j - 1], u[:, :k] * s[:k], axes=(2, 0))
    return discarded


def ltr_equilibrate(cores, phys_split=None, phys_keep=None):
    """
    Left-to-right SVD sweep from a right-canonical state (norm in core 0).

    Produces left-canonical cores and the Schmidt values of every bond.
    If ``phys_keep`` is given, ``x`` of core ``j`` is read as
    ``(p, v) = (x // phys_split[j], phys_split[j])`` and the ``p`` axis of
    every site is projected onto its ``phys_keep`` leading right singular
    vectors of the orthogonality centre. The projections are computed from
    the untruncated centres, so each site is truncated independently.

    Returns
    -------
    cores, weights, discarded
        ``discarded`` is the sum over sites of squared dropped singular values.
    """
    n = len(cores)
    weights = []
    discarded = 0.0
    for j in range(n):
        c = cores[j]
        l, x, r = c.shape
        proj = None
        if phys_keep is not None:
            v = phys_split[j]
            p = x // v
            if p > phys_keep:
                m = np.transpose(c.reshape(l, p, v, r), (0, 2, 3, 1)).reshape(l * v * r, p)
                _, sp, vhp = thin_svd(m)
                keep = min(phys_keep, int(np.count_nonzero(sp > WEIGHT_DROP * sp[0])) or 1)
                discarded += float(np.sum(sp[keep:] ** 2))
                proj = vhp[:keep].conj().T
        if j < n - 1:
            u, s, vh = thin_svd(c.reshape(l * x, r))
            k = _keep(s, None)
            a = u[:, :k].reshape(l, x, k)
            weights.append(s[:k])
            cores[j + 1] = np.tensordot(s[:k, None] * vh[:k], cores[j + 1], axes=(1, 0))
        else:
            a = c
            k = r
        if proj is not None:
            a = np.tensordot(a.reshape(l, p, v, k), proj, axes=(1, 0))
            a = np.transpose(a, (0, 3, 1, 2)).reshape(l, -1, k)
        cores[j] = a
    return cores, weights, discarded


def variational_sweeps(target, approx, max_sweeps=20, tol=1e-10):
    """
    One-site variational fitting of ``approx`` to ``target``.

    ``approx`` must be right-canonical with the centre in core 0. Each
    half sweep sets the centre to the optimal tensor for fixed isometries,
    so the fidelity never decreases. Stops when the relative fidelity gain
    of a full sweep is below ``tol`` or after ``max_sweeps`` sweeps.

    Returns
    -------
    approx : list of cores (right-canonical, centre in core 0)
    fidelity : float
    sweeps : int
    """
    n = len(target)
    tnorm = float(np.real(overlap_cores(target, target)))
    if tnorm <= 0:
        raise DegenerateStateError("cannot fit a zero-norm MPS")
    approx = list(approx)

    def step(left, t, right):
        tmp = np.tensordot(left, t, axes=(1, 0))
        return np.tensordot(tmp, right, axes=(2, 1))

    # right environments <approx|target> for the current right-canonical approx
    renv = [None] * (n + 1)
    renv[n] = np.ones((1, 1), dtype=complex)
    for j in range(n - 1, 0, -1):
        tmp = np.tensordot(target[j], renv[j + 1], axes=(2, 1))
        renv[j] = np.tensordot(approx[j].conj(), tmp, axes=([1, 2], [1, 2]))
    lenv = [None] * (n + 1)
    lenv[0] = np.ones((1, 1), dtype=complex)

    fid = abs(overlap_cores(approx, target)) ** 2 / (
        float(np.real(overlap_cores(approx, approx))) * tnorm
    )
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for j in range(n - 1):
            c = step(lenv[j], target[j], renv[j + 1])
            l, x, r = c.shape
            q, _ = thin_qr(c.reshape(l * x, r))
            approx[j] = q.reshape(l, x, -1)
            tmp = np.tensordot(lenv[j], target[j], axes=(1, 0))
            lenv[j + 1] = np.tensordot(approx[j].conj(), tmp, axes=([0, 1], [0, 1]))
        for j in range(n - 1, 0, -1):
            c = step(lenv[j], target[j], renv[j + 1])
            l, x, r = c.shape
            q, _ = thin_qr(c.reshape(l, x * r).T)
            approx[j] = q.T.reshape(-1, x, r)
            tmp = np.tensordot(target[j], renv[j + 1], axes=(2, 1))
            renv[j] = np.tensordot(approx[j].conj(), tmp, axes=([1, 2], [1, 2]))
        approx[0] = step(lenv[0], target[0], renv[1])
        new = float(np.sum(np.abs(approx[0]) ** 2)) / tnorm
        gain = (new - fid) / max(fid, 1e-300)
        fid = new
        if gain < tol:
            break
    return approx, min(fid, 1.0 + 1e-12), sweeps


# --- public operations -----------------------------------------------------


def merge_external(row_a, row_b):
    """
    Contract two rows over their vertical bonds into one MPS.

    Parameters
    ----------
    row_a : Mps or list of ndarray
        Either a boundary MPS with sites ``(l, r, *phys, v)`` (``dangling``
        set) or a row of PEPS tensors ``(s, l, r, u, d)`` whose ``u`` bonds
        all have length 1.
    row_b : list of ndarray
        PEPS tensors ``(s, l, r, u, d)``; ``u`` contracts with the dangling
        bond of ``row_a``.

    Returns
    -------
    Mps
        Sites ``(l_a*l_b, r_a*r_b, *phys_a, s_b, d_b)`` with ``dangling`` set.
    """
    if isinstance(row_a, Mps):
        if not row_a.dangling:
            raise DimensionError("row_a must carry a dangling bond")
        a_sites = row_a.sites
    else:
        a_sites = []
        for j, t in enumerate(row_a):
            if t.shape[3] != 1:
                raise DimensionError(f"row_a site {j} has an upward bond of length {t.shape[3]}")
            a_sites.append(np.transpose(t[:, :, :, 0, :], (1, 2, 0, 3)))
    if len(a_sites) != len(row_b):
        raise DimensionError(f"rows of length {len(a_sites)} and {len(row_b)}")
    out = []
    for j, (a, b) in enumerate(zip(a_sites, row_b)):
        if a.shape[-1] != b.shape[3]:
            raise DimensionError(
                f"column {j}: dangling bond {a.shape[-1]} of shape {a.shape} "
                f"does not match upward bond of shape {b.shape}"
            )
        la, ra = a.shape[:2]
        phys = a.shape[2:-1]
        s, lb, rb, _, db = b.shape
        t = np.tensordot(a, b, axes=(a.ndim - 1, 3))
        # axes: la, ra, *phys, s, lb, rb, db
        nph = len(phys)
        perm = (0, 3 + nph, 1, 4 + nph) + tuple(range(2, 2 + nph)) + (2 + nph, 5 + nph)
        t = np.transpose(t, perm).reshape((la * lb, ra * rb) + phys + (s, db))
        out.append(np.ascontiguousarray(t))
    return Mps(out, dangling=True)


def compress_bonds(phi, max_bond, mode="variational", max_sweeps=20, tol=1e-10):
    """
    Approximate ``phi`` by an MPS with all bonds at most ``max_bond``.

    ``mode="svd"`` does one canonical truncation sweep; ``"variational"``
    refines that result by one-site sweeps (see :func:`variational_sweeps`).

    Returns
    -------
    Mps
        Right-canonical result.
    fidelity : float
        ``|<new|phi>|^2 / (<new|new> <phi|phi>)``.
    """
    if max_bond < 1:
        raise ValueError(f"max_bond must be >= 1, got {max_bond}")
    target = phi.cores()
    nrm = float(np.real(overlap_cores(target, target)))
    if not np.isfinite(nrm) or nrm <= 0:
        raise DegenerateStateError("cannot compress a zero-norm MPS")
    cores = left_qr_sweep(list(target))
    rtl_truncate(cores, max_bond)
    if mode == "svd":
        ov = overlap_cores(cores, target)
        fid = abs(ov) ** 2 / (float(np.real(overlap_cores(cores, cores))) * nrm)
    elif mode == "variational":
        cores, fid, _ = variational_sweeps(target, cores, max_sweeps, tol)
    else:
        raise ValueError(f"unknown compression mode {mode!r}")
    out = from_cores(cores, phi.ext_shapes, dangling=phi.dangling, form="right")
    return out, float(min(fid, 1.0))


def equilibrate(phi):
    """Exact equilibrated (Schmidt) form of ``phi``."""
    cores = phi.cores()
    nrm = float(np.real(overlap_cores(cores, cores)))
    if not np.isfinite(nrm) or nrm <= 0:
        raise DegenerateStateError("cannot equilibrate a zero-norm MPS")
    cores = left_qr_sweep(cores)
    rtl_truncate(cores, None)
    cores, weights, _ = ltr_equilibrate(cores)
    return from_cores(cores, phi.ext_shapes, dangling=phi.dangling,
                      form="equilibrated", weights=weights)


def centre(phi, j):
    """Orthogonality centre of site ``j`` of an equilibrated MPS, as a core."""
    c = to_core(phi.sites[j])
    if j < len(phi) - 1:
        c = c * phi.weights[j][None, None, :]
    return c


def truncate_physical(phi, j, keep):
    """
    Reduce the physical group of site ``j`` to at most ``keep`` values.

    The physical group is every external axis except a dangling bond. The
    kept subspace is spanned by the leading right singular vectors of the
    orthogonality centre with rows ``(l, r, v)`` and columns the physical
    group. Because the projection acts on external axes only it commutes
    with the virtual gauge; the returned MPS keeps the equilibrated marker
    and weights of ``phi`` so that further sites can be truncated
    independently against the same reference.

    Returns
    -------
    Mps
        Site ``j`` has axes ``(l, r, p, [v])`` with ``p <= keep``.
    isometry : ndarray
        Shape ``(old physical group..., p)``; new site = old site times it.
    discarded : float
        Squared singular values dropped at this site.
    """
    if phi.form != "equilibrated":
        raise ContractViolation("truncate_physical needs an equilibrated MPS")
    if keep < 1:
        raise ValueError(f"keep must be >= 1, got {keep}")
    ext = phi.sites[j].shape[2:]
    phys = ext[:-1] if phi.dangling else ext
    v = ext[-1] if phi.dangling else 1
    p = int(np.prod(phys))
    c = centre(phi, j)
    l, _, r = c.shape
    m = np.transpose(c.reshape(l, p, v, r), (0, 2, 3, 1)).reshape(l * v * r, p)
    _, s, vh = np.linalg.svd(m, full_matrices=False)
    k = min(keep, _keep(s, None))
    discarded = float(np.sum(s[k:] ** 2))
    iso = vh[:k].conj().T
    site = to_core(phi.sites[j]).reshape(l, p, v, -1)
    new = np.transpose(np.tensordot(site, iso, axes=(1, 0)), (0, 3, 1, 2))
    new_ext = (k, v) if phi.dangling else (k,)
    new_site = from_core(new.reshape(l, -1, new.shape[-1]), new_ext)
    sites = list(phi.sites)
    sites[j] = new_site
    return replace(phi, sites=sites), iso.reshape(tuple(phys) + (k,)), discarded


def isometry_residuals(phi):
    """Left and right isometry residuals of an equilibrated MPS, per site."""
    if phi.form != "equilibrated":
        raise ContractViolation("isometry_residuals needs an equilibrated MPS")
    res = []
    n = len(phi)
    cores = phi.cores()
    for j in range(n):
        worst = 0.0
        if j < n - 1:
            l, x, r = cores[j].shape
            m = cores[j].reshape(l * x, r)
            worst = max(worst, float(np.max(np.abs(m.conj().T @ m - np.eye(r)))))
        if j > 0:
            b = cores[j] / phi.weights[j - 1][:, None, None]
            if j < n - 1:
                b = b * phi.weights[j][None, None, :]
            l, x, r = b.shape
            m = b.reshape(l, x * r)
            worst = max(worst, float(np.max(np.abs(m @ m.conj().T - np.eye(l)))))
        res.append(worst)
    return res
