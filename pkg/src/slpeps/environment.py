"""
Single-layer environments of a nearest-neighbour pair.

Rows of the PEPS are absorbed one at a time into boundary MPS coming from
the top and from the bottom of the lattice. Each absorption contracts the
boundary with the next row over the vertical bonds, compresses the
horizontal bonds to ``Dt``, brings the result to equilibrated form and cuts
the merged physical index of every site to at most ``dt`` values. Inside
the three-row strip that is left around the target row, the same procedure
runs column-wise from the left and from the right edge. What remains is a
ring of six effective sites around the pair (corners absorbed into their
horizontal neighbours), which is either contracted into the double-layer
norm operator or split into two open pieces for the update.

Only horizontal pairs are handled here; vertical pairs are treated on the
transposed lattice.

Index names used throughout: ``p`` effective physical, ``v`` dangling bond
into the uncovered region, ``g``/``gb`` top/bottom ring-closure bonds.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DegenerateStateError, TopologyError
from .mps import Mps, from_core, left_qr_sweep, ltr_equilibrate, rtl_truncate, variational_sweeps
from .tensor_core import thin_qr, thin_svd

MAX_NORM_OPERATOR_DIM = 4096


@dataclass
class BoundaryMps:
    """
    Effective particles summarizing several rows (or columns).

    ``cores[j]`` has shape ``(left, phys[j] * dangling[j], right)``. The
    cores are in the state produced by equilibrate-then-truncate; call
    :meth:`mixed` for an exactly canonical representation.
    """

    cores: list
    phys: list
    dangling: list
    direction: str
    covers: tuple
    weights: list = None
    discarded: float = 0.0
    _mixed: tuple = field(default=None, repr=False)

    def __len__(self):
        return len(self.cores)

    @property
    def bonds(self):
        return [c.shape[2] for c in self.cores[:-1]]

    def site(self, j):
        """Site ``j`` as ``(l, p, v, r)``."""
        c = self.cores[j]
        return c.reshape(c.shape[0], self.phys[j], self.dangling[j], c.shape[2])

    def as_mps(self):
        sites = [from_core(c, (p, v)) for c, p, v in zip(self.cores, self.phys, self.dangling)]
        return Mps(sites, dangling=True, form="equilibrated", weights=self.weights)

    def mixed(self):
        """
        Left-canonical sites, right-canonical sites and bond matrices.

        For every cut ``j | j+1`` the state equals
        ``lefts[0..j] @ bond[j] @ rights[j+1..]``.
        """
        if self._mixed is None:
            lefts = left_qr_sweep(list(self.cores))
            rights = list(lefts)
            bond = [None] * (len(lefts) - 1)
            for j in range(len(rights) - 1, 0, -1):
                l, x, r = rights[j].shape
                q, rm = thin_qr(rights[j].reshape(l, x * r).T)
                rights[j] = q.T.reshape(-1, x, r)
                bond[j - 1] = rm.T
                rights[j - 1] = np.tensordot(rights[j - 1], rm.T, axes=(2, 0))
            self._mixed = (lefts, rights, bond)
        return self._mixed

    def left_site(self, j):
        lefts = self.mixed()[0]
        c = lefts[j]
        return c.reshape(c.shape[0], self.phys[j], self.dangling[j], c.shape[2])

    def right_site(self, j):
        rights = self.mixed()[1]
        c = rights[j]
        return c.reshape(c.shape[0], self.phys[j], self.dangling[j], c.shape[2])

    def pair_sites(self, j):
        """
        Sites ``j`` and ``j+1`` with the bond between them in Schmidt gauge,
        square roots of the Schmidt values absorbed on both sides.
        """
        lefts, rights, bond = self.mixed()
        u, s, vh = thin_svd(bond[j])
        keep = max(1, int(np.count_nonzero(s > 1e-14 * s[0]))) if s[0] > 0 else 1
        sq = np.sqrt(s[:keep])
        a = np.tensordot(lefts[j], u[:, :keep] * sq, axes=(2, 0))
        b = np.tensordot(sq[:, None] * vh[:keep], rights[j + 1], axes=(1, 0))
        shp = lambda c, k: c.reshape(c.shape[0], self.phys[k], self.dangling[k], c.shape[2])
        return shp(a, j), shp(b, j + 1)


def trivial_boundary(length, direction="from-top", covers=()):
    one = np.ones((1, 1, 1), dtype=complex)
    return BoundaryMps([one] * length, [1] * length, [1] * length, direction, covers,
                       weights=[np.ones(1)] * (length - 1))


def absorb(boundary, layer, Dt, dt, mode="svd", covers=None):
    """
    Absorb one layer of tensors into a boundary MPS.

    Parameters
    ----------
    boundary : BoundaryMps
    layer : list of ndarray
        Tensors with axes ``(q, a, b, vin, vout)``: physical, MPS-left,
        MPS-right, bond into the boundary, bond out of it.
    Dt, dt : int
        Caps on the virtual bonds and on the effective physical index.
    mode : {"svd", "variational"}
        Bond compression mode.
    """
    if Dt < 1 or dt < 1:
        raise ValueError(f"truncation parameters must be >= 1, got Dt={Dt}, dt={dt}")
    if len(layer) != len(boundary):
        raise TopologyError(f"layer of length {len(layer)} vs boundary of {len(boundary)}")
    cores, vout = [], []
    for j, t in enumerate(layer):
        c = boundary.site(j)  # l p v r
        if c.shape[2] != t.shape[3]:
            raise TopologyError(
                f"site {j}: dangling bond {c.shape[2]} does not match layer bond {t.shape}"
            )
        x = np.tensordot(c, t, axes=(2, 3))  # l p r q a b w
        l, p, r, q, a, b, w = x.shape
        x = np.transpose(x, (0, 4, 1, 3, 6, 2, 5)).reshape(l * a, p * q * w, r * b)
        cores.append(x)
        vout.append(w)
    target = list(cores) if mode == "variational" else None
    cores = left_qr_sweep(cores)
    norm2 = float(np.sum(np.abs(cores[-1]) ** 2))
    if not np.isfinite(norm2) or norm2 == 0:
        raise DegenerateStateError("boundary contraction produced a zero-norm state")
    disc = rtl_truncate(cores, Dt)
    if mode == "variational":
        cores, fid, _ = variational_sweeps(target, cores)
        disc = max(0.0, 1.0 - fid) * norm2
    elif mode != "svd":
        raise ValueError(f"unknown compression mode {mode!r}")
    cores, weights, pdisc = ltr_equilibrate(cores, vout, dt)
    phys = [c.shape[1] // w for c, w in zip(cores, vout)]
    covers = boundary.covers if covers is None else covers
    return BoundaryMps(cores, phys, vout, boundary.direction, covers, weights,
                       boundary.discarded + (disc + pdisc) / norm2)


# --- layers --------------------------------------------------------------------


def row_layer(row, from_top=True):
    """PEPS row as an absorption layer (vertical bonds in/out)."""
    if from_top:
        return list(row)
    return [t.transpose(0, 1, 2, 4, 3) for t in row]


def strip_layer(top_site, peps_site, bottom_site, from_left=True):
    """
    One column of the three-row strip as a layer for a vertical MPS.

    ``top_site`` and ``bottom_site`` are boundary sites ``(l, p, v, r)``.
    """
    if from_left:
        top = top_site.transpose(1, 2, 0, 3)[:, None]  # p 1 v l r
        mid = peps_site.transpose(0, 3, 4, 1, 2)  # s u d l r
        bot = bottom_site.transpose(1, 2, 0, 3)[:, :, None]  # p v 1 l r
    else:
        top = top_site.transpose(1, 2, 3, 0)[:, None]
        mid = peps_site.transpose(0, 3, 4, 2, 1)
        bot = bottom_site.transpose(1, 2, 3, 0)[:, :, None]
    return [top, mid, bot]


def contract_from_edge(state, edge, upto, Dt, dt, mode="svd"):
    """
    Boundary MPS of the rows (columns) beyond ``upto`` as seen from ``edge``.

    ``edge="top"`` covers rows ``0 .. upto-1``, ``"bottom"`` rows
    ``upto+1 .. m-1``; ``"left"``/``"right"`` do the same for columns on the
    transposed lattice, so their dangling bonds point along rows.
    """
    if edge in ("left", "right"):
        b = contract_from_edge(state.transpose(), "top" if edge == "left" else "bottom",
                               upto, Dt, dt, mode)
        b.direction = f"from-{edge}"
        return b
    if Dt < 1 or dt < 1:
        raise ValueError(f"truncation parameters must be >= 1, got Dt={Dt}, dt={dt}")
    m = state.m
    if edge == "top":
        if not 1 <= upto <= m - 1:
            raise ValueError(f"upto={upto} must lie in [1, {m - 1}]")
        rows = range(0, upto)
    elif edge == "bottom":
        if not 0 <= upto <= m - 2:
            raise ValueError(f"upto={upto} must lie in [0, {m - 2}]")
        rows = range(m - 1, upto, -1)
    else:
        raise ValueError(f"unknown edge {edge!r}")
    b = trivial_boundary(state.n, f"from-{edge}")
    for i in rows:
        b = absorb(b, row_layer(state.tensors[i], edge == "top"), Dt, dt, mode,
                   covers=b.covers + (i,))
    return b


def top_boundaries(state, Dt, dt, mode="svd", upto=None):
    """``out[i]`` summarizes rows ``< i`` (``out[0]`` is trivial)."""
    upto = state.m - 1 if upto is None else upto
    out = [trivial_boundary(state.n, "from-top")]
    for i in range(upto):
        out.append(absorb(out[-1], row_layer(state.tensors[i]), Dt, dt, mode,
                          covers=out[-1].covers + (i,)))
    return out


def bottom_boundaries(state, Dt, dt, mode="svd"):
    """``out[i]`` summarizes rows ``> i`` (``out[m-1]`` is trivial)."""
    m = state.m
    out = [None] * m
    out[m - 1] = trivial_boundary(state.n, "from-bottom")
    for i in range(m - 1, 0, -1):
        out[i - 1] = absorb(out[i], row_layer(state.tensors[i], False), Dt, dt, mode,
                            covers=out[i].covers + (i,))
    return out


# --- strip (column) environments ----------------------------------------------


class RowStrip:
    """
    Column environments inside the strip ``top / row / bottom``.

    ``left(J)`` absorbs columns ``< J`` and ``right(J)`` columns ``> J + 1``.
    Left environments are built incrementally and stay valid for columns
    that have not been changed; call :meth:`set_sites` after an update.
    """

    def __init__(self, top, row, bottom, Dt, dt, mode="svd"):
        self.top, self.bottom = top, bottom
        self.row = list(row)
        self.Dt, self.dt, self.mode = Dt, dt, mode
        self.n = len(self.row)
        self._left = {0: trivial_boundary(3, "from-left")}
        self._right = {}

    def set_sites(self, j, tensors):
        for k, t in enumerate(tensors):
            self.row[j + k] = t
        lo = j
        self._left = {k: v for k, v in self._left.items() if k <= lo}
        self._right = {k: v for k, v in self._right.items() if k + 2 > j + len(tensors) - 1}

    def left(self, J):
        k = max(x for x in self._left if x <= J)
        env = self._left[k]
        while k < J:
            layer = strip_layer(self.top.left_site(k), self.row[k], self.bottom.left_site(k))
            env = absorb(env, layer, self.Dt, self.dt, self.mode, covers=env.covers + (k,))
            k += 1
            self._left[k] = env
        return env

    def right(self, J):
        """Environment of columns ``J+2 ..``; ``J`` is the left site of the pair."""
        if J in self._right:
            return self._right[J]
        n = self.n
        known = [x for x in self._right if x > J]
        if known:
            k = min(known)
            env = self._right[k]
        else:
            k = n - 2
            env = trivial_boundary(3, "from-right")
            self._right[k] = env
        while k > J:
            c = k + 1
            layer = strip_layer(self.top.right_site(c), self.row[c], self.bottom.right_site(c),
                                from_left=False)
            env = absorb(env, layer, self.Dt, self.dt, self.mode, covers=env.covers + (c,))
            k -= 1
            self._right[k] = env
        return env


# --- frame -----------------------------------------------------------------------


def _reduce_phys(t):
    """Lossless reduction of axis 0: keep the R factor of ``t = Q R``."""
    p = t.shape[0]
    rest = t.shape[1:]
    mat = t.reshape(p, -1)
    if p <= mat.shape[1]:
        return t
    _, r = thin_qr(mat)
    return r.reshape((r.shape[0],) + rest)


@dataclass
class EffectiveFrame:
    """
    Six effective sites around a horizontal pair.

    Axis orders: ``ul (p, a, u, g)``, ``left (p, a, l, b)``,
    ``dl (p, b, d, gb)``, ``ur (p, g, u', a')``, ``right (p, a', r, b')``,
    ``dr (p, gb, d', b')``. ``a, b, a', b'`` are internal vertical bonds of
    the left and right blocks; ``g`` and ``gb`` close the ring through the
    top and bottom rows.
    """

    ul: np.ndarray
    left: np.ndarray
    dl: np.ndarray
    ur: np.ndarray
    right: np.ndarray
    dr: np.ndarray
    pair: tuple

    @property
    def ring_bonds(self):
        return self.ul.shape[3], self.dl.shape[3]

    @property
    def system_bonds(self):
        """Lengths of ``(l, u, u', d, d', r)``."""
        return (self.left.shape[2], self.ul.shape[2], self.ur.shape[2],
                self.dl.shape[2], self.dr.shape[2], self.right.shape[2])


def check_frame(frame, state):
    (i, j), (_, j1) = frame.pair
    a, b = state[i, j], state[i, j1]
    want = (a.shape[1], a.shape[3], b.shape[3], a.shape[4], b.shape[4], b.shape[2])
    if frame.system_bonds != want:
        raise TopologyError(f"frame bonds {frame.system_bonds} do not match pair bonds {want}")


def build_frame(state, top, bottom, pair, Dt, dt, mode="svd", left_env=None, right_env=None):
    """
    Effective environment of a horizontal pair from its top and bottom
    boundaries. Column environments are computed unless supplied.
    """
    (i, j), (i1, j1) = pair
    if i1 != i or j1 != j + 1:
        raise TopologyError(f"{pair} is not a left-to-right horizontal pair")
    n = state.n
    if len(top) != n or len(bottom) != n:
        raise TopologyError("boundary length does not match the lattice width")
    if top.covers != tuple(range(i)) or bottom.covers != tuple(range(state.m - 1, i, -1)):
        raise TopologyError(
            f"boundaries cover rows {top.covers} and {bottom.covers}, not the rows around {i}"
        )
    if left_env is None or right_env is None:
        strip = RowStrip(top, state.tensors[i], bottom, Dt, dt, mode)
        left_env = strip.left(j) if left_env is None else left_env
        right_env = strip.right(j) if right_env is None else right_env
    frame = assemble_frame(top, bottom, j, left_env, right_env, pair)
    check_frame(frame, state)
    return frame


def assemble_frame(top, bottom, j, left_env, right_env, pair=None):
    """Six-site frame from boundaries and column environments (no checks on the PEPS)."""
    t_j, t_j1 = top.pair_sites(j)
    b_j, b_j1 = bottom.pair_sites(j)
    for side, env in (("left", left_env), ("right", right_env)):
        if len(env) != 3:
            raise TopologyError(f"{side} column environment must have three sites")
    cl = [left_env.site(k) for k in range(3)]  # (a, p, h, b)
    cr = [right_env.site(k) for k in range(3)]

    # up-left: corner (1, p1, h, a) with top site (h, p2, v, g)
    x = np.tensordot(cl[0][0], t_j, axes=(1, 0))  # p1 a p2 v g
    ul = np.transpose(x, (0, 2, 1, 3, 4))
    ul = _reduce_phys(ul.reshape((-1,) + ul.shape[2:]))
    left = np.transpose(cl[1], (1, 0, 2, 3))  # p a h b
    x = np.tensordot(cl[2][..., 0], b_j, axes=(2, 0))  # b p1 p2 v gb
    dl = np.transpose(x, (1, 2, 0, 3, 4))
    dl = _reduce_phys(dl.reshape((-1,) + dl.shape[2:]))
    # up-right: top site (g, p2, v, r') with corner (1, p1, r', a')
    x = np.tensordot(t_j1, cr[0][0], axes=(3, 1))  # g p2 v p1 a'
    ur = np.transpose(x, (1, 3, 0, 2, 4))
    ur = _reduce_phys(ur.reshape((-1,) + ur.shape[2:]))
    right = np.transpose(cr[1], (1, 0, 2, 3))
    x = np.tensordot(b_j1, cr[2][..., 0], axes=(3, 2))  # gb p2 v b' p1
    dr = np.transpose(x, (1, 4, 0, 2, 3))
    dr = _reduce_phys(dr.reshape((-1,) + dr.shape[2:]))
    return EffectiveFrame(ul, left, dl, ur, right, dr, pair)


# --- norm operator -------------------------------------------------------------


def _gram(t):
    """``G[bra..., ket...] = sum_p conj(t[p, bra]) t[p, ket]``."""
    return np.tensordot(t.conj(), t, axes=(0, 0))


def block_grams(frame):
    """
    Double-layer tensors of the left and right blocks.

    Returns ``GL[g*, u*, l*, d*, gb*, g, u, l, d, gb]`` and
    ``GR[g*, u'*, r*, d'*, gb*, g, u', r, d', gb]``.
    """
    gul = _gram(frame.ul)  # a* u* g* a u g
    gl = _gram(frame.left)  # a* l* b* a l b
    gdl = _gram(frame.dl)  # b* d* gb* b d gb
    GL = np.einsum("AUGaug,ALBalb,BDHbdh->GULDHguldh", gul, gl, gdl, optimize=True)
    gur = _gram(frame.ur)  # g* u'* a'* g u' a'
    gr = _gram(frame.right)  # a'* r* b'* a' r b'
    gdr = _gram(frame.dr)  # gb* d'* b'* gb d' b'
    GR = np.einsum("GUAgua,ARBarb,HDBhdb->GURDHgurdh", gur, gr, gdr, optimize=True)
    return GL, GR


def build_norm_operator(frame, max_dim=MAX_NORM_OPERATOR_DIM):
    """
    Effective double-layer norm operator of the pair, as a matrix
    ``N[(l u u' d d' r)*, (l u u' d d' r)]``.
    """
    dims = frame.system_bonds
    size = int(np.prod(dims))
    if size > max_dim:
        raise CapacityError(f"norm operator of dimension {size} exceeds cap {max_dim}")
    GL, GR = block_grams(frame)
    N = np.einsum("GULDHguldh,GVREHgvreh->LUVDERluvder", GL, GR, optimize=True)
    N = N.reshape(size, size)
    return 0.5 * (N + N.conj().T)


def norm_operator_from_environment(env):
    """``N = E^dagger E`` for an environment matrix ``E[s_E, j]``."""
    return env.conj().T @ env


def effective_environment_qr(env, max_entries=2 ** 24):
    """
    Effective environment of at most ``D^6`` physical values from an exact
    environment matrix ``E[s_E, (l u u' d d' r)]``: the R factor of
    ``E = Q R``, which has the same Gram matrix.
    """
    env = np.asarray(env)
    if env.size > max_entries:
        raise CapacityError(f"environment matrix with {env.size} entries exceeds cap")
    if env.shape[0] <= env.shape[1]:
        return env.copy()
    _, r = np.linalg.qr(env)
    return r


# --- splitting -----------------------------------------------------------------


@dataclass
class SplitEnvironment:
    """
    Open-boundary environment of a pair: ``left[k, l, u, d]`` and
    ``right[k, r, u', d']``, each given by an effective physical index ``k``
    of minimal length. The up/down sites of each block are contained in the
    respective piece.
    """

    left: np.ndarray
    right: np.ndarray
    method: str

    def left_gram(self):
        k = self.left.shape[0]
        m = self.left.reshape(k, -1)
        return m.conj().T @ m

    def right_gram(self):
        k = self.right.shape[0]
        m = self.right.reshape(k, -1)
        return m.conj().T @ m


def _factor_gram(G, shape):
    """A tensor ``X[k, *shape]`` with ``X^dagger X = G`` and minimal ``k``."""
    G = 0.5 * (G + G.conj().T)
    w, v = np.linalg.eigh(G)
    top = max(w[-1], 0.0)
    keep = w > 1e-15 * top if top > 0 else np.zeros_like(w, dtype=bool)
    if not keep.any():
        keep[-1] = True
    x = np.sqrt(np.clip(w[keep], 0, None))[:, None] * v[:, keep].conj().T
    return x.reshape((x.shape[0],) + tuple(shape))


def _chain_gram(top, mid, bottom):
    """
    Gram matrix over ``(h, v_top, v_bottom)`` of a three-site column block
    ``top (p, a, vt)``, ``mid (p, a, h, b)``, ``bottom (p, b, vb)``.
    """
    g1 = _gram(top)  # a* vt* a vt
    g2 = _gram(mid)  # a* h* b* a h b
    g3 = _gram(bottom)  # b* vb* b vb
    vt, h, vb = top.shape[2], mid.shape[2], bottom.shape[2]
    # contract the a bonds: (vt*, vt) x (h*, b*, h, b)
    x = np.tensordot(g1, g2, axes=([0, 2], [0, 3]))  # vt* vt h* b* h b
    x = np.tensordot(x, g3, axes=([3, 5], [0, 2]))  # vt* vt h* h vb* vb
    x = x.transpose(2, 0, 4, 3, 1, 5)  # h* vt* vb* h vt vb
    n = h * vt * vb
    return x.reshape(n, n)


def _self_contracted_grams(frame):
    """Gram matrices ``(l u d) x (l u d)`` and ``(r u' d') x (r u' d')``."""
    nl = _chain_gram(frame.ul.sum(axis=3), frame.left, frame.dl.sum(axis=3))
    ur = frame.ur.sum(axis=1).transpose(0, 2, 1)  # p a' u'
    dr = frame.dr.sum(axis=1).transpose(0, 2, 1)  # p b' d'
    nr = _chain_gram(ur, frame.right, dr)
    return nl, nr


def _block_tensors(frame):
    """Explicit ``L[p_ul, p_l, p_dl, g, gb, l, u, d]`` and mirror for the right block."""
    L = np.einsum("xaug,yalb,zbdh->xyzghlud", frame.ul, frame.left, frame.dl, optimize=True)
    R = np.einsum("xgua,yarb,zhdb->xyzghrud", frame.ur, frame.right, frame.dr, optimize=True)
    return L, R


def _staged_svd_split(block):
    """
    ``sum_gamma`` of the block Gram via a per-gamma SVD, then one SVD of
    the stacked weighted right singular vectors.
    """
    px, py, pz, g, h = block.shape[:5]
    sysdims = block.shape[5:]
    mats = block.reshape(px * py * pz, g * h, -1)
    stacked = []
    for gamma in range(g * h):
        _, s, vh = np.linalg.svd(mats[:, gamma, :], full_matrices=False)
        stacked.append(s[:, None] * vh)
    w = np.concatenate(stacked, axis=0)
    _, s, vh = np.linalg.svd(w, full_matrices=False)
    keep = max(1, int(np.count_nonzero(s > 1e-15 * s[0]))) if s[0] > 0 else 1
    return (s[:keep, None] * vh[:keep]).reshape((keep,) + sysdims)


def split_environment(frame, method="self-contraction"):
    """
    Approximate the ring-shaped environment by two disconnected pieces.

    ``"self-contraction"`` sums each block over the ring-closure bonds;
    ``"svd-split"`` keeps ``Sigma V^dagger`` of the block's SVD with the
    ring bonds grouped with the physical index.
    """
    l, u, u2, d, d2, r = frame.system_bonds
    if method == "self-contraction":
        NL, NR = _self_contracted_grams(frame)
        left = _factor_gram(NL, (l, u, d))
        right = _factor_gram(NR, (r, u2, d2))
    elif method == "svd-split":
        L, R = _block_tensors(frame)
        left = _staged_svd_split(L)
        right = _staged_svd_split(R)
    else:
        raise ValueError(f"unknown split method {method!r}")
    return SplitEnvironment(left, right, method)


def horizontal_view(state, pair):
    """``(state, pair)`` with a vertical pair mapped to the transposed lattice."""
    pair = tuple(sorted(pair))
    (i, j), (i1, j1) = pair
    if i1 == i and j1 == j + 1:
        return state, pair
    if j1 == j and i1 == i + 1:
        return state.transpose(), ((j, i), (j1, i1))
    raise TopologyError(f"{pair} is not a nearest-neighbour pair")


def pair_frame(state, pair, Dt, dt, mode="svd"):
    """Frame of any nearest-neighbour pair (vertical pairs on the transposed lattice)."""
    st, pr = horizontal_view(state, pair)
    i = pr[0][0]
    top = contract_from_edge(st, "top", i, Dt, dt, mode) if i > 0 else trivial_boundary(st.n)
    bottom = (contract_from_edge(st, "bottom", i, Dt, dt, mode) if i < st.m - 1
              else trivial_boundary(st.n, "from-bottom"))
    return build_frame(st, top, bottom, pr, Dt, dt, mode)
