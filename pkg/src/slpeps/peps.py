"""
Finite PEPS with open boundaries.

Site tensors have axes ``(s, l, r, u, d)``: physical, left, right, up, down.
Row index ``i`` grows downwards, column index ``j`` to the right. The
physical amplitude of the stored network is ``exp(log_scale)`` times the
contraction of the tensors.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStateError, DimensionError, FormatError, TopologyError

MAGIC = b"SLP1"
VERSION = 1
# axis permutation that swaps the roles of rows and columns; it is an involution
TRANSPOSE_AXES = (0, 3, 4, 1, 2)


@dataclass(frozen=True)
class PepsState:
    tensors: tuple
    log_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tensors", tuple(tuple(row) for row in self.tensors))
        check_bonds(self.tensors)

    @property
    def m(self):
        return len(self.tensors)

    @property
    def n(self):
        return len(self.tensors[0])

    @property
    def d(self):
        return self.tensors[0][0].shape[0]

    @property
    def shape(self):
        return self.m, self.n

    def __getitem__(self, ij):
        i, j = ij
        return self.tensors[i][j]

    def replace_sites(self, updates, log_scale=None):
        """New state with ``{(i, j): tensor}`` substituted."""
        rows = [list(r) for r in self.tensors]
        for (i, j), t in updates.items():
            rows[i][j] = t
        return PepsState(rows, self.log_scale if log_scale is None else log_scale)

    def transpose(self):
        """The same state on the mirrored lattice (rows become columns)."""
        rows = [
            [np.ascontiguousarray(self.tensors[i][j].transpose(TRANSPOSE_AXES))
             for i in range(self.m)]
            for j in range(self.n)
        ]
        return PepsState(rows, self.log_scale)

    def max_bond(self):
        return max(max(t.shape[1:]) for row in self.tensors for t in row)

    def site_norms(self):
        return np.array([[np.linalg.norm(t) for t in row] for row in self.tensors])


def check_bonds(tensors):
    m, n = len(tensors), len(tensors[0])
    for i in range(m):
        if len(tensors[i]) != n:
            raise TopologyError(f"row {i} has {len(tensors[i])} sites, expected {n}")
        for j in range(n):
            t = tensors[i][j]
            if t.ndim != 5:
                raise DimensionError(f"site {(i, j)} has rank {t.ndim}, expected 5")
            _, l, r, u, dn = t.shape
            if j == 0 and l != 1 or j == n - 1 and r != 1:
                raise TopologyError(f"site {(i, j)} has a boundary bond of length != 1")
            if i == 0 and u != 1 or i == m - 1 and dn != 1:
                raise TopologyError(f"site {(i, j)} has a boundary bond of length != 1")
            if j + 1 < n and r != tensors[i][j + 1].shape[1]:
                raise TopologyError(f"horizontal bond {(i, j)}-{(i, j + 1)} mismatch")
            if i + 1 < m and dn != tensors[i + 1][j].shape[3]:
                raise TopologyError(f"vertical bond {(i, j)}-{(i + 1, j)} mismatch")


@dataclass(frozen=True)
class TwoSiteGate:
    """
    Two-site operator with axes ``(t, t', s, s')`` acting on ``sites``.

    Output labels come first; ``s`` belongs to ``sites[0]``.
    """

    tensor: np.ndarray
    sites: tuple
    orientation: str = field(init=False)

    def __post_init__(self):
        (i0, j0), (i1, j1) = self.sites
        if i0 == i1 and abs(j1 - j0) == 1:
            orient = "horizontal"
        elif j0 == j1 and abs(i1 - i0) == 1:
            orient = "vertical"
        else:
            raise TopologyError(f"sites {self.sites} are not nearest neighbours")
        object.__setattr__(self, "orientation", orient)

    def canonical(self):
        """Same gate with the sites ordered left-to-right or top-to-bottom."""
        a, b = self.sites
        if a < b:
            return self
        return TwoSiteGate(np.ascontiguousarray(self.tensor.transpose(1, 0, 3, 2)), (b, a))

    def transposed(self):
        """The gate on the mirrored lattice."""
        (i0, j0), (i1, j1) = self.sites
        return TwoSiteGate(self.tensor, ((j0, i0), (j1, i1)))


def _bond_shapes(m, n, D):
    def bond(k, size):
        return 1 if k == 0 or k == size else D

    return [
        [(bond(j, n), bond(j + 1, n), bond(i, m), bond(i + 1, m)) for j in range(n)]
        for i in range(m)
    ]


def init_random(m, n, D, seed, d=2):
    """Complex Gaussian tensors (unit variance) followed by ``rescale_uniform``."""
    if m < 1 or n < 1 or D < 1:
        raise ValueError(f"invalid lattice {m}x{n} or bond {D}")
    rng = np.random.default_rng(seed)
    rows = []
    for shapes in _bond_shapes(m, n, D):
        row = []
        for shp in shapes:
            full = (d,) + shp
            t = (rng.standard_normal(full) + 1j * rng.standard_normal(full)) / np.sqrt(2)
            row.append(t)
        rows.append(row)
    return rescale_uniform(PepsState(rows))


def init_product(vectors):
    """D=1 PEPS from an ``m x n`` nested list of local state vectors."""
    rows = [
        [np.asarray(v, dtype=complex).reshape(-1, 1, 1, 1, 1) for v in row]
        for row in vectors
    ]
    return PepsState(rows)


def init_neel(m, n):
    """Checkerboard product state, spin up where ``i + j`` is even."""
    up, down = np.array([1, 0]), np.array([0, 1])
    return init_product([[up if (i + j) % 2 == 0 else down for j in range(n)] for i in range(m)])


def apply_gate_grown(state, gate, cutoff=1e-14):
    """
    Apply a two-site gate exactly, growing the connecting bond.

    The gate is split by an SVD across the two sites, with the square root
    of each singular value absorbed on either side; the bond between the
    sites is multiplied by the gate's Schmidt rank.
    """
    gate = gate.canonical()
    if gate.orientation == "vertical":
        return apply_gate_grown(state.transpose(), gate.transposed(), cutoff).transpose()
    (i, j), (_, j1) = gate.sites
    if not (0 <= i < state.m and 0 <= j and j1 < state.n):
        raise TopologyError(f"gate sites {gate.sites} outside {state.m}x{state.n} lattice")
    d = state.d
    g = np.transpose(gate.tensor, (0, 2, 1, 3)).reshape(d * d, d * d)
    u, s, vh = np.linalg.svd(g)
    k = max(1, int(np.count_nonzero(s > cutoff * s[0])))
    sq = np.sqrt(s[:k])
    ga = (u[:, :k] * sq).reshape(d, d, k)  # t, s, k
    gb = (sq[:, None] * vh[:k]).reshape(k, d, d)  # k, t', s'
    a, b = state[i, j], state[i, j1]
    _, la, c, ua, da = a.shape
    na = np.tensordot(ga, a, axes=(1, 0))  # t k l c u d
    na = np.transpose(na, (0, 2, 3, 1, 4, 5)).reshape(d, la, c * k, ua, da)
    _, _, rb, ub, db = b.shape
    nb = np.tensordot(gb, b, axes=(2, 0))  # k t' c r u d
    nb = np.transpose(nb, (1, 2, 0, 3, 4, 5)).reshape(d, c * k, rb, ub, db)
    return state.replace_sites({(i, j): na, (i, j1): nb})


def rescale_uniform(state):
    """
    Scale every site tensor to unit 2-norm; ``log_scale`` absorbs the factors.
    """
    norms = state.site_norms()
    if not np.all(np.isfinite(norms)) or np.any(norms == 0):
        raise DegenerateStateError("a site tensor has zero or non-finite norm")
    rows = [
        [t / norms[i, j] for j, t in enumerate(row)] for i, row in enumerate(state.tensors)
    ]
    return PepsState(rows, state.log_scale + float(np.sum(np.log(norms))))


# --- checkpoint I/O ------------------------------------------------------------


def save_checkpoint(state, path):
    """
    Write ``state`` in the little-endian ``SLP1`` format.

    Layout: magic, u32 version, u32 m, n, d; per site in row-major order four
    u32 bond lengths ``(l, r, u, d)`` and the tensor as (re, im) f64 pairs in
    ``(s, l, r, u, d)`` row-major order; finally the f64 log-scale.
    """
    parts = [MAGIC, struct.pack("<4I", VERSION, state.m, state.n, state.d)]
    for row in state.tensors:
        for t in row:
            parts.append(struct.pack("<4I", *t.shape[1:]))
            parts.append(np.ascontiguousarray(t, dtype="<c16").tobytes())
    parts.append(struct.pack("<d", state.log_scale))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    return _parse_checkpoint(buf)


def _parse_checkpoint(buf):
    pos = 0

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise FormatError(f"truncated file: {what} needs {nbytes} bytes at offset {pos}")
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    m, n, d = struct.unpack("<3I", take(12, "header"))
    if m == 0 or n == 0 or d == 0:
        raise FormatError(f"empty lattice {m}x{n}, d={d} in header at offset 8")
    rows = []
    for _ in range(m):
        row = []
        for _ in range(n):
            at = pos
            bonds = struct.unpack("<4I", take(16, "bond lengths"))
            if 0 in bonds:
                raise FormatError(f"zero bond length at offset {at}")
            count = d * int(np.prod(bonds))
            data = np.frombuffer(take(16 * count, "tensor data"), dtype="<c16")
            row.append(data.astype(np.complex128).reshape((d,) + bonds))
        rows.append(row)
    (log_scale,) = struct.unpack("<d", take(8, "scale exponent"))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes at offset {pos}")
    try:
        return PepsState(rows, log_scale)
    except (TopologyError, DimensionError) as exc:
        raise FormatError(f"inconsistent bonds: {exc}") from exc
