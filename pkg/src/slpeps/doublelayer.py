"""
Conventional double-layer contraction of ``<Psi|O|Psi>``.

Boundary sites carry one ket and one bra dangling bond, ``(l, vk, vb, r)``.
Rows are absorbed from the top and the bottom with the horizontal bond
capped at ``D_cut`` by a canonical SVD sweep; the remaining three-row strip
is contracted exactly from both sides. Boundaries are kept at unit norm:
only ratios are ever used.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DegenerateStateError, TopologyError
from .mps import left_qr_sweep, rtl_truncate

MAX_STRIP_ENTRIES = 2 ** 24


@dataclass
class DoubleLayerBoundary:
    """Boundary MPO of the bra-ket network; ``sites[j]`` is ``(l, vk, vb, r)``."""

    sites: list
    D_cut: int
    covers: tuple = ()

    @property
    def bonds(self):
        return [s.shape[3] for s in self.sites[:-1]]


def trivial_dl(n, D_cut):
    one = np.ones((1, 1, 1, 1), dtype=complex)
    return DoubleLayerBoundary([one] * n, D_cut)


def absorb_row_dl(boundary, row, D_cut, from_top=True):
    """Absorb a PEPS row into a double-layer boundary and compress to ``D_cut``."""
    cores = []
    shapes = []
    for b, a in zip(boundary.sites, row):
        if not from_top:
            a = a.transpose(0, 1, 2, 4, 3)
        if b.shape[1] != a.shape[3] or b.shape[2] != a.shape[3]:
            raise TopologyError(f"boundary bonds {b.shape} do not match tensor {a.shape}")
        x = np.tensordot(b, a, axes=(1, 3))  # l vb r s l' r' d
        x = np.tensordot(x, a.conj(), axes=([1, 3], [3, 0]))  # l r l' r' d l'' r'' d''
        l, r, l1, r1, dk, l2, r2, db = x.shape
        x = x.transpose(0, 2, 5, 4, 7, 1, 3, 6).reshape(l * l1 * l2, dk * db, r * r1 * r2)
        cores.append(x)
        shapes.append((dk, db))
    cores = left_qr_sweep(cores)
    nrm = np.linalg.norm(cores[-1])
    if not np.isfinite(nrm) or nrm == 0:
        raise DegenerateStateError("double-layer boundary has zero norm")
    cores[-1] = cores[-1] / nrm
    rtl_truncate(cores, D_cut)
    cores[0] = cores[0] / np.linalg.norm(cores[0])
    sites = [c.reshape(c.shape[0], k, b, c.shape[2]) for c, (k, b) in zip(cores, shapes)]
    return DoubleLayerBoundary(sites, D_cut, boundary.covers)


def dl_boundaries(state, D_cut):
    """Top and bottom boundaries for every row: ``top[i]`` covers rows ``< i``."""
    m, n = state.m, state.n
    top = [trivial_dl(n, D_cut)]
    for i in range(m - 1):
        b = absorb_row_dl(top[-1], state.tensors[i], D_cut, True)
        b.covers = top[-1].covers + (i,)
        top.append(b)
    bottom = [None] * m
    bottom[m - 1] = trivial_dl(n, D_cut)
    for i in range(m - 1, 0, -1):
        b = absorb_row_dl(bottom[i], state.tensors[i], D_cut, False)
        b.covers = bottom[i].covers + (i,)
        bottom[i - 1] = b
    return top, bottom


# --- strip contraction ---------------------------------------------------------


def _open_column(env, t, a, b):
    """
    Advance a left environment ``(t, k, b, bb)`` by one column, keeping the
    ket and bra physical indices open: result ``(t', s, r, s*, r*, bb')``.
    """
    x = np.tensordot(env, t, axes=(0, 0))  # k b bb vk vb t'
    x = np.tensordot(x, a, axes=([0, 3], [1, 3]))  # b bb vb t' s r d
    x = np.tensordot(x, a.conj(), axes=([0, 2], [1, 3]))  # bb t' s r d s* r* d*
    x = np.tensordot(x, b, axes=([0, 4, 7], [0, 1, 2]))  # t' s r s* r* bb'
    return x


def _closed_column(env, t, a, b):
    x = np.tensordot(env, t, axes=(0, 0))  # k b bb vk vb t'
    x = np.tensordot(x, a, axes=([0, 3], [1, 3]))  # b bb vb t' s r d
    x = np.tensordot(x, a.conj(), axes=([0, 2, 4], [1, 3, 0]))  # bb t' r d r* d*
    x = np.tensordot(x, b, axes=([0, 3, 5], [0, 1, 2]))  # t' r r* bb'
    x = x / np.linalg.norm(x)
    return x


def _right_closed_column(env, t, a, b):
    """Right environment ``(t, k, b, bb)`` advanced one column to the left."""
    x = np.tensordot(t, env, axes=(3, 0))  # t' vk vb k b bb
    x = np.tensordot(x, a, axes=([1, 3], [3, 2]))  # t' vb b bb s l d
    x = np.tensordot(x, a.conj(), axes=([1, 2, 4], [3, 2, 0]))  # t' bb l d l* d*
    x = np.tensordot(x, b, axes=([1, 3, 5], [3, 1, 2]))  # t' l l* bb'
    return x / np.linalg.norm(x)


class DoubleLayerStrip:
    """Exact left/right environments of one row between two boundaries."""

    def __init__(self, top, row, bottom):
        self.top, self.row, self.bottom = top.sites, list(row), bottom.sites
        n = len(self.row)
        one = np.ones((1, 1, 1, 1), dtype=complex)
        self.left = [one]
        for j in range(n - 1):
            self.left.append(_closed_column(self.left[-1], self.top[j], self.row[j],
                                            self.bottom[j]))
        self.right = [None] * (n + 1)
        self.right[n] = one
        for j in range(n - 1, 0, -1):
            self.right[j] = _right_closed_column(self.right[j + 1], self.top[j], self.row[j],
                                                 self.bottom[j])

    def norm(self, j=0):
        x = _open_column(self.left[j], self.top[j], self.row[j], self.bottom[j])
        x = np.einsum("tsrsRb,trRb->", x, self.right[j + 1])
        return x

    def site_expectation(self, j, op):
        x = _open_column(self.left[j], self.top[j], self.row[j], self.bottom[j])
        num = np.einsum("tsrSRb,Ss,trRb->", x, op, self.right[j + 1])
        den = np.einsum("tsrsRb,trRb->", x, self.right[j + 1])
        return num / den

    def pair_expectation(self, j, op):
        """``<h>`` for the pair ``(j, j+1)``; ``op`` has axes ``(t, t', s, s')``."""
        x = _open_column(self.left[j], self.top[j], self.row[j], self.bottom[j])
        a = self.row[j + 1]
        # ket/bra right bonds of site j feed the left bonds of site j+1
        y = np.tensordot(x, self.top[j + 1], axes=(0, 0))  # s r S R bb vk vb t'
        y = np.tensordot(y, a, axes=([1, 5], [1, 3]))  # s S R bb vb t' s' r d
        y = np.tensordot(y, a.conj(), axes=([2, 4], [1, 3]))  # s S bb t' s' r d S' R D
        y = np.tensordot(y, self.bottom[j + 1], axes=([2, 6, 9], [0, 1, 2]))  # s S t' s' r S' R bb'
        y = np.tensordot(y, self.right[j + 2], axes=([2, 4, 6, 7], [0, 1, 2, 3]))  # s S s' S'
        num = np.einsum("aAbB,ABab->", y, op)
        den = np.einsum("aabb->", y)
        return num / den

    def pair_gram(self, j):
        """
        Norm operator of the pair ``(j, j+1)`` as
        ``N[(l u u' d d' r)*, (l u u' d d' r)]`` (bra indices first).
        """
        L, R = self.left[j], self.right[j + 2]  # (t, k, b, bb)
        t0, t1 = self.top[j], self.top[j + 1]  # (l, vk, vb, r)
        b0, b1 = self.bottom[j], self.bottom[j + 1]
        N = np.einsum("tlLb,tuUx,xvVy,bdDc,ceEz,yrRz->LUVDERluvder",
                      L, t0, t1, b0, b1, R, optimize=True)
        s = int(np.sqrt(N.size))
        N = N.reshape(s, s)
        return 0.5 * (N + N.conj().T)


def pair_norm_operator_dl(state, pair, D_cut, max_dim=4096):
    """Double-layer norm operator of any nearest-neighbour pair."""
    from .environment import horizontal_view

    st, ((i, j), _) = horizontal_view(state, pair)
    a, b = st[i, j], st[i, j + 1]
    size = a.shape[1] * a.shape[3] * b.shape[3] * a.shape[4] * b.shape[4] * b.shape[2]
    if size > max_dim:
        raise CapacityError(f"norm operator of dimension {size} exceeds cap {max_dim}")
    top = trivial_dl(st.n, D_cut)
    for r in range(i):
        top = absorb_row_dl(top, st.tensors[r], D_cut, True)
    bottom = trivial_dl(st.n, D_cut)
    for r in range(st.m - 1, i, -1):
        bottom = absorb_row_dl(bottom, st.tensors[r], D_cut, False)
    return DoubleLayerStrip(top, st.tensors[i], bottom).pair_gram(j)


def _check_capacity(state, D_cut):
    D = state.max_bond()
    # a boundary over k rows cannot exceed bond (D^2)^k
    reach = D ** (2 * max(1, (state.m - 1) // 2 + 1))
    D_cut = min(D_cut, reach)
    if D_cut * D_cut * D ** 4 > MAX_STRIP_ENTRIES:
        raise CapacityError(f"double-layer strip with D={D}, D_cut={D_cut} exceeds the cap")


def row_pair_expectations(state, op, D_cut):
    """``<op>`` on every horizontal pair, as an ``m x (n-1)`` array."""
    _check_capacity(state, D_cut)
    top, bottom = dl_boundaries(state, D_cut)
    out = np.zeros((state.m, state.n - 1), dtype=complex)
    for i in range(state.m):
        strip = DoubleLayerStrip(top[i], state.tensors[i], bottom[i])
        for j in range(state.n - 1):
            out[i, j] = strip.pair_expectation(j, op)
    return out


def site_expectations(state, op, D_cut):
    """``<op>`` on every site."""
    _check_capacity(state, D_cut)
    top, bottom = dl_boundaries(state, D_cut)
    out = np.zeros((state.m, state.n), dtype=complex)
    for i in range(state.m):
        strip = DoubleLayerStrip(top[i], state.tensors[i], bottom[i])
        for j in range(state.n):
            out[i, j] = strip.site_expectation(j, op)
    return out


def norm_dl(state, D_cut):
    """
    ``log <Psi|Psi>`` of the physical state (including ``log_scale``),
    from successive row absorptions with normalization factors tracked.
    """
    _check_capacity(state, D_cut)
    n = state.n
    b = trivial_dl(n, D_cut)
    log_norm = 0.0
    for i in range(state.m):
        cores = []
        for s, a in zip(b.sites, state.tensors[i]):
            x = np.tensordot(s, a, axes=(1, 3))
            x = np.tensordot(x, a.conj(), axes=([1, 3], [3, 0]))
            l, r, l1, r1, dk, l2, r2, db = x.shape
            cores.append(x.transpose(0, 2, 5, 4, 7, 1, 3, 6).reshape(l * l1 * l2, dk * db,
                                                                  r * r1 * r2))
        if i == state.m - 1:
            v = np.ones((1,), dtype=complex)
            for c in cores:
                v = np.tensordot(v, c[:, 0, :], axes=(0, 0))
            val = v[0]
            return float(np.log(np.real(val)) + log_norm + 2 * state.log_scale)
        cores = left_qr_sweep(cores)
        nrm = np.linalg.norm(cores[-1])
        log_norm += np.log(nrm)
        cores[-1] = cores[-1] / nrm
        rtl_truncate(cores, D_cut)
        nrm = np.linalg.norm(cores[0])
        log_norm += np.log(nrm)
        cores[0] = cores[0] / nrm
        b = DoubleLayerBoundary(
            [c.reshape(c.shape[0], a.shape[4], a.shape[4], c.shape[2])
             for c, a in zip(cores, state.tensors[i])], D_cut)
    raise AssertionError("unreachable")
