"""
Imaginary time evolution of a PEPS by two-site Trotter gates.

Two update schemes are provided:

* the single-layer update (``slte``): the environment of the pair is built
  by single-layer contraction, split into a left and a right open piece,
  and the truncated tensors follow from one SVD of the gated pair in the
  metric of the split environment;
* the conventional update (``als``): the environment is the double-layer
  norm operator and the two tensors are found by alternating linear solves
  with a spectral cutoff ``eps`` on the effective norm matrices.

The evolution loop applies the symmetric sequence
``hE/2 hO/2 vE/2 vO vE/2 hO/2 hE/2`` per step, where ``h``/``v`` are
horizontal/vertical bonds and ``E``/``O`` the bonds starting at even/odd
columns (rows). Gates of one orientation act on different rows
independently, so consecutive groups of one orientation are performed in a
single sweep over the rows with shared boundary MPS.
"""

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .environment import (
    RowStrip,
    _self_contracted_grams,
    assemble_frame,
    bottom_boundaries,
    pair_frame,
    row_layer,
    absorb,
    split_environment,
    trivial_boundary,
)
from .errors import DegenerateStateError, TopologyError
from .peps import PepsState, TwoSiteGate, rescale_uniform, save_checkpoint
from .tensor_core import thin_qr, thin_svd

log = logging.getLogger(__name__)

PINV_CUTOFF = 1e-12
TRAJECTORY_FIELDS = ("step", "tau", "energy", "scale_exponent", "max_discarded_weight", "wall_ms")


# --- schedule ------------------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    """One stage of the annealing schedule."""

    dt: float
    steps: int
    D: int
    Dt: int
    dt_eff: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if self.steps < 0:
            raise ValueError(f"step count must be >= 0, got {self.steps}")
        if self.D < 1 or self.Dt < 1 or self.dt_eff < 1:
            raise ValueError(f"bond caps must be >= 1, got D={self.D}, Dt={self.Dt}, "
                             f"dt_eff={self.dt_eff}")


@dataclass(frozen=True)
class TrotterSchedule:
    """
    Annealing phases and the second-order gate sequence.

    A phase ends after its step count, or earlier if a later phase exists
    and the relative energy decrease per unit imaginary time measured
    between two records falls below ``anneal_threshold``.
    """

    phases: tuple
    anneal_threshold: float = 1e-6

    # (orientation, parity, fraction of dt)
    GROUPS = (("h", 0, 0.5), ("h", 1, 0.5), ("v", 0, 0.5), ("v", 1, 1.0),
              ("v", 0, 0.5), ("h", 1, 0.5), ("h", 0, 0.5))

    def __post_init__(self):
        phases = tuple(p if isinstance(p, Phase) else Phase(**p) for p in self.phases)
        if not phases:
            raise ValueError("a schedule needs at least one phase")
        object.__setattr__(self, "phases", phases)

    @property
    def total_steps(self):
        return sum(p.steps for p in self.phases)

    def substeps(self):
        return list(self.GROUPS)


@dataclass
class UpdateReport:
    pair: tuple
    bond_before: int
    bond_after: int
    fidelity: float
    discarded: float
    iterations: int = 0
    residual: float = float("nan")
    rank: int = 0


# --- single-layer update -----------------------------------------------------------


def _metric_factor(gram):
    """``X`` with ``X^dagger X = gram`` restricted to the numerically supported part."""
    gram = 0.5 * (gram + gram.conj().T)
    w, v = np.linalg.eigh(gram)
    top = w[-1]
    if not top > 0:
        raise DegenerateStateError("environment has zero norm")
    keep = w > PINV_CUTOFF * top
    sq = np.sqrt(w[keep])
    vk = v[:, keep]
    x = sq[:, None] * vk.conj().T
    xinv = vk / sq[None, :]
    return x, xinv


def _pair_matrices(a, b):
    """QR of both sites with the shared bond ``c`` and the physical index split off."""
    s, l, c, u, d = a.shape
    ma = a.transpose(1, 3, 4, 0, 2).reshape(l * u * d, s * c)
    qa, ra = thin_qr(ma)
    s2, _, r, u2, d2 = b.shape
    mb = b.transpose(2, 3, 4, 0, 1).reshape(r * u2 * d2, s2 * c)
    qb, rb = thin_qr(mb)
    return qa, ra.reshape(-1, s, c), qb, rb.reshape(-1, s2, c)


def reduced_update(a, b, gram_left, gram_right, gate, D_cap):
    """
    Optimal truncated gate application for a product environment.

    Parameters
    ----------
    a, b : ndarray
        Site tensors ``(s, l, c, u, d)`` and ``(s', c, r, u', d')``.
    gram_left, gram_right : ndarray
        Gram matrices of the left piece over ``(l, u, d)`` and of the right
        piece over ``(r, u', d')``.
    gate : ndarray
        ``(t, t', s, s')``.
    D_cap : int

    Returns
    -------
    a_new, b_new, fidelity, discarded
        ``fidelity`` is the kept fraction of the gated pair's norm in the
        environment metric; ``discarded`` the complementary weight.
    """
    d = a.shape[0]
    l, u, dd = a.shape[1], a.shape[3], a.shape[4]
    r, u2, d2 = b.shape[2], b.shape[3], b.shape[4]
    qa, ra, qb, rb = _pair_matrices(a, b)
    x, xinv = _metric_factor(qa.conj().T @ gram_left @ qa)
    y, yinv = _metric_factor(qb.conj().T @ gram_right @ qb)
    xa = np.tensordot(x, ra, axes=(1, 0))  # x s c
    yb = np.tensordot(y, rb, axes=(1, 0))  # y s' c
    theta = np.tensordot(xa, yb, axes=(2, 2))  # x s y s'
    theta = np.tensordot(gate, theta, axes=([2, 3], [1, 3]))  # t t' x y
    kx, ky = theta.shape[2], theta.shape[3]
    mat = theta.transpose(2, 0, 1, 3).reshape(kx * d, d * ky)
    uu, sv, vh = thin_svd(mat)
    total = float(np.sum(sv ** 2))
    if not total > 0 or not np.isfinite(total):
        raise DegenerateStateError("gated pair has zero norm in the environment metric")
    keep = min(D_cap, max(1, int(np.count_nonzero(sv > 1e-14 * sv[0]))))
    kept = float(np.sum(sv[:keep] ** 2))
    sq = np.sqrt(sv[:keep])
    left = (uu[:, :keep] * sq).reshape(kx, d, keep)
    right = (sq[:, None] * vh[:keep]).reshape(keep, d, ky)
    ra_new = np.tensordot(xinv, left, axes=(1, 0))  # ka t c'
    rb_new = np.tensordot(yinv, right, axes=(1, 2))  # kb c' t'
    a_new = (qa @ ra_new.reshape(ra_new.shape[0], -1)).reshape(l, u, dd, d, keep)
    a_new = a_new.transpose(3, 0, 4, 1, 2)
    b_new = (qb @ rb_new.reshape(rb_new.shape[0], -1)).reshape(r, u2, d2, keep, d)
    b_new = b_new.transpose(4, 3, 0, 1, 2)
    return (np.ascontiguousarray(a_new), np.ascontiguousarray(b_new), kept / total,
            (total - kept) / total)


def split_grams(frame, method="self-contraction"):
    """Gram matrices of the left and right pieces of the split environment."""
    if method == "self-contraction":
        return _self_contracted_grams(frame)
    env = split_environment(frame, method)
    return env.left_gram(), env.right_gram()


def _oriented(state, gate):
    if not isinstance(gate, TwoSiteGate):
        raise TypeError("gate must be a TwoSiteGate")
    gate = gate.canonical()
    if gate.orientation == "vertical":
        return state.transpose(), gate.transposed(), True
    return state, gate, False


def _check_inside(state, gate):
    for (i, j) in gate.sites:
        if not (0 <= i < state.m and 0 <= j < state.n):
            raise TopologyError(f"gate sites {gate.sites} outside {state.m}x{state.n} lattice")


def slte_pair_tensors(state, gate, D_cap, Dt, dt, method="self-contraction", mode="svd"):
    """
    New tensors of a horizontal pair after a single-layer update (no rescaling).

    Returns ``(a_new, b_new, report)``.
    """
    (i, j), (_, j1) = gate.sites
    frame = pair_frame(state, gate.sites, Dt, dt, mode)
    gl, gr = split_grams(frame, method)
    a, b = state[i, j], state[i, j1]
    a_new, b_new, fid, disc = reduced_update(a, b, gl, gr, gate.tensor, D_cap)
    rep = UpdateReport(gate.sites, a.shape[2], a_new.shape[2], fid, disc)
    return a_new, b_new, rep


def slte_update_pair(state, gate, D_cap, Dt, dt, method="self-contraction", mode="svd"):
    """
    Single-layer two-site update of one nearest-neighbour pair.

    The pair's environment is built by single-layer contraction with caps
    ``Dt`` (virtual) and ``dt`` (effective physical), split by ``method``
    (``"self-contraction"`` or ``"svd-split"``), and the gated pair is
    truncated to at most ``D_cap`` by an SVD in the split-environment
    metric. The result is rescaled with :func:`rescale_uniform`.

    Returns
    -------
    PepsState, UpdateReport
    """
    if D_cap < 1:
        raise ValueError(f"D_cap must be >= 1, got {D_cap}")
    _check_inside(state, gate)
    st, g, flipped = _oriented(state, gate)
    a_new, b_new, rep = slte_pair_tensors(st, g, D_cap, Dt, dt, method, mode)
    (i, j), (_, j1) = g.sites
    st = st.replace_sites({(i, j): a_new, (i, j1): b_new})
    if flipped:
        st = st.transpose()
    rep.pair = gate.canonical().sites
    return rescale_uniform(st), rep


# --- conventional update -----------------------------------------------------------


def _pinv_psd(mat, eps):
    """Pseudo-inverse of a Hermitian PSD matrix with relative spectral cutoff."""
    mat = 0.5 * (mat + mat.conj().T)
    w, v = np.linalg.eigh(mat)
    top = w[-1]
    if not top > 0:
        return np.zeros_like(mat), 0
    keep = w > eps * top
    return (v[:, keep] / w[keep]) @ v[:, keep].conj().T, int(np.count_nonzero(keep))


def _pair_vector(a, b):
    """``x[(l u u' d d' r), t, t']`` of two site tensors sharing bond ``c``."""
    x = np.tensordot(a, b, axes=(2, 1))  # s l u d s' r u' d'
    x = x.transpose(1, 2, 6, 3, 7, 5, 0, 4)
    return x.reshape(-1, a.shape[0] * b.shape[0])


def pair_objective(norm_operator, a, b, a_new, b_new, gate):
    """
    ``1 - F`` with ``F = |<x|N|y>|^2 / (<x|N|x> <y|N|y>)`` for the truncated
    pair ``x`` and the gated pair ``y``, both contracted with the pair norm
    operator ``N``. Scale-free, in ``[0, 1]``.
    """
    d = a.shape[0]
    y = np.tensordot(gate, np.tensordot(a, b, axes=(2, 1)), axes=([2, 3], [0, 4]))
    y = y.transpose(2, 3, 6, 4, 7, 5, 0, 1).reshape(-1, d * d)
    x = _pair_vector(a_new, b_new)
    ny = norm_operator @ y
    nx = norm_operator @ x
    xy = np.vdot(x, ny)
    xx = np.real(np.vdot(x, nx))
    yy = np.real(np.vdot(y, ny))
    if xx <= 0 or yy <= 0:
        return 1.0
    return float(max(0.0, 1.0 - abs(xy) ** 2 / (xx * yy)))


def _als_solve(N6, ny, fixed, which, eps):
    """
    Optimal tensor of one site for the other one fixed.

    ``N6`` is the norm operator with axes ``(l u u' d d' r)`` for bra and
    ket, ``ny`` the norm operator applied to the gated pair, with axes
    ``(l u u' d d' r, t, t')``. ``which="a"`` solves for ``(s, l, c, u, d)``,
    ``"b"`` for ``(s', c, r, u', d')``.
    """
    if which == "a":
        k = np.einsum("LUVDERluvder,TCRVE,Tcrve->LCUDlcud", N6, fixed.conj(), fixed,
                      optimize=True)
        rhs = np.einsum("TCRVE,LUVDERsT->sLCUD", fixed.conj(), ny, optimize=True)
    else:
        k = np.einsum("LUVDERluvder,SLCUD,Slcud->CRVEcrve", N6, fixed.conj(), fixed,
                      optimize=True)
        rhs = np.einsum("SLCUD,LUVDERSt->tCRVE", fixed.conj(), ny, optimize=True)
    shp = k.shape[:4]
    size = int(np.prod(shp))
    kinv, rank = _pinv_psd(k.reshape(size, size), eps)
    sol = rhs.reshape(rhs.shape[0], size) @ kinv.T
    return sol.reshape((rhs.shape[0],) + shp), rank


def als_update_pair(state, gate, D_cap, eps=1e-6, D_cut=None, norm_operator=None, Dt=4, dt=4,
                    max_iter=50, tol=1e-10):
    """
    Conventional two-site update by alternating least squares.

    The environment is the double-layer norm operator of the pair from a
    boundary-MPO contraction with bond cap ``D_cut`` (default ``4 D^2``)
    unless ``norm_operator`` is given. Iterations start from the
    single-layer update (caps ``Dt``, ``dt``), solve for one tensor at a time
    with a pseudo-inverse of relative cutoff ``eps`` and stop when the
    objective changes by less than ``tol`` (relative) or after ``max_iter``
    iterations. The best iterate is kept.

    Returns
    -------
    PepsState, UpdateReport
        ``fidelity`` is ``1 - objective`` in the norm-operator metric.
    """
    from .doublelayer import pair_norm_operator_dl

    if D_cap < 1:
        raise ValueError(f"D_cap must be >= 1, got {D_cap}")
    _check_inside(state, gate)
    st, g, flipped = _oriented(state, gate)
    (i, j), (_, j1) = g.sites
    a, b = st[i, j], st[i, j1]
    if norm_operator is None:
        D = st.max_bond()
        N = pair_norm_operator_dl(st, g.sites, D_cut or 4 * D * D)
    else:
        N = np.asarray(norm_operator)
    scale = np.max(np.abs(N))
    if not scale > 0:
        raise DegenerateStateError("norm operator vanishes")
    N = N / scale
    dims = (a.shape[1], a.shape[3], b.shape[3], a.shape[4], b.shape[4], b.shape[2])
    N6 = N.reshape(dims + dims)
    d = a.shape[0]
    y = np.tensordot(g.tensor, np.tensordot(a, b, axes=(2, 1)), axes=([2, 3], [0, 4]))
    y = y.transpose(2, 3, 6, 4, 7, 5, 0, 1).reshape(N.shape[0], d * d)
    ny = (N @ y).reshape(dims + (d, d))

    a_new, b_new, _ = slte_pair_tensors(st, g, D_cap, Dt, dt)
    best = (pair_objective(N, a, b, a_new, b_new, g.tensor), a_new, b_new)
    obj = best[0]
    iterations, rank = 0, 0
    for iterations in range(1, max_iter + 1):
        a_new, rank_a = _als_solve(N6, ny, b_new, "a", eps)
        b_new, rank_b = _als_solve(N6, ny, a_new, "b", eps)
        rank = min(rank_a, rank_b)
        new = pair_objective(N, a, b, a_new, b_new, g.tensor)
        if not np.isfinite(new) or not np.all(np.isfinite(a_new)) or not np.all(np.isfinite(b_new)):
            log.warning("ALS iteration %d produced non-finite tensors; keeping best iterate",
                        iterations)
            break
        if new < best[0]:
            best = (new, a_new, b_new)
        change = abs(obj - new) / max(abs(obj), 1e-300)
        obj = new
        if change < tol:
            break
    objective, a_new, b_new = best
    st = st.replace_sites({(i, j): a_new, (i, j1): b_new})
    if flipped:
        st = st.transpose()
    rep = UpdateReport(gate.canonical().sites, a.shape[2], a_new.shape[2], 1.0 - objective,
                       objective, iterations, objective, rank)
    return rescale_uniform(st), rep


# --- fused sweeps ----------------------------------------------------------------


class _GateCache:
    def __init__(self, model):
        self.model = model
        self.cache = {}

    def __call__(self, dtau):
        key = round(dtau, 15)
        if key not in self.cache:
            self.cache[key] = self.model.gate(dtau)
        return self.cache[key]


def _merge_passes(passes):
    out = []
    for parity, weight in passes:
        if out and out[-1][0] == parity:
            out[-1] = (parity, out[-1][1] + weight)
        else:
            out.append((parity, weight))
    return out


def sweep_rows(state, passes, gates, D_cap, Dt, dt, split="self-contraction", mode="svd"):
    """
    Apply groups of horizontal gates, row by row.

    ``passes`` is a list of ``(parity, gate_tensor)``; within a row the
    passes are applied in order to the pairs starting at columns of that
    parity. Boundaries from the bottom are computed once; the top boundary
    is extended by each row after it has been updated.

    Returns the new state (tensors at unit norm) and the smallest
    update fidelity.
    """
    m, n = state.m, state.n
    rows = [list(r) for r in state.tensors]
    log_scale = state.log_scale
    worst = 1.0
    bottoms = bottom_boundaries(state, Dt, dt, mode) if m > 1 else [trivial_boundary(n, "from-bottom")]
    top = trivial_boundary(n, "from-top")
    for i in range(m):
        strip = RowStrip(top, rows[i], bottoms[i], Dt, dt, mode)
        for k, (parity, g) in enumerate(passes):
            # alternate directions so the environments built during one pass
            # serve the next one
            cols = range(parity, n - 1, 2)
            for j in (cols if k % 2 == 0 else reversed(cols)):
                frame = assemble_frame(top, bottoms[i], j, strip.left(j), strip.right(j))
                gl, gr = split_grams(frame, split)
                a_new, b_new, fid, _ = reduced_update(rows[i][j], rows[i][j + 1], gl, gr, g, D_cap)
                na, nb = np.linalg.norm(a_new), np.linalg.norm(b_new)
                if not (na > 0 and nb > 0 and np.isfinite(na) and np.isfinite(nb)):
                    raise DegenerateStateError(f"update of pair {(i, j)} produced a zero tensor")
                log_scale += math.log(na) + math.log(nb)
                rows[i][j], rows[i][j + 1] = a_new / na, b_new / nb
                strip.set_sites(j, [rows[i][j], rows[i][j + 1]])
                worst = min(worst, fid)
        if i < m - 1:
            top = absorb(top, row_layer(rows[i]), Dt, dt, mode, covers=top.covers + (i,))
    return PepsState(rows, log_scale), worst


def apply_group_sweep(state, orientation, passes, gates, D_cap, Dt, dt, split="self-contraction",
                      mode="svd"):
    """``passes`` as ``(parity, weight * dt)`` for one orientation."""
    tensors = [(p, gates(w)) for p, w in passes]
    if orientation == "v":
        new, worst = sweep_rows(state.transpose(), tensors, gates, D_cap, Dt, dt, split, mode)
        return new.transpose(), worst
    return sweep_rows(state, tensors, gates, D_cap, Dt, dt, split, mode)


def _pairs(m, n, orientation, parity):
    if orientation == "h":
        return [((i, j), (i, j + 1)) for i in range(m) for j in range(parity, n - 1, 2)]
    return [((i, j), (i + 1, j)) for j in range(n) for i in range(parity, m - 1, 2)]


def sequential_group(state, orientation, parity, gate_tensor, D_cap, Dt, dt, method="slte",
                     split="self-contraction", mode="svd", eps=1e-6, D_cut=None):
    """Apply one gate group pair by pair with freshly built environments."""
    worst = 1.0
    for sites in _pairs(state.m, state.n, orientation, parity):
        gate = TwoSiteGate(gate_tensor, sites)
        if method == "slte":
            state, rep = slte_update_pair(state, gate, D_cap, Dt, dt, split, mode)
        else:
            state, rep = als_update_pair(state, gate, D_cap, eps, D_cut, Dt=Dt, dt=dt)
        worst = min(worst, rep.fidelity)
    return state, worst


# --- trajectory and driver -------------------------------------------------------


@dataclass
class TrajectoryRecord:
    step: int
    tau: float
    energy: float
    scale_exponent: float
    max_discarded_weight: float
    wall_ms: float

    def csv_row(self):
        return [str(self.step), f"{self.tau:.12g}", f"{self.energy:.12g}",
                f"{self.scale_exponent:.12g}", f"{self.max_discarded_weight:.12g}",
                f"{self.wall_ms:.12g}"]


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def energies(self):
        return np.array([r.energy for r in self.records])

    def to_csv(self, header=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(TRAJECTORY_FIELDS)
        for r in self.records:
            w.writerow(r.csv_row())
        return buf.getvalue()


class TrajectoryWriter:
    """Observer appending trajectory records to a CSV file."""

    def __init__(self, path, append=False):
        self.path = path
        if not append or not os.path.exists(path):
            with open(path, "w") as fh:
                fh.write(",".join(TRAJECTORY_FIELDS) + "\n")

    def __call__(self, record, state):
        with open(self.path, "a") as fh:
            fh.write(",".join(record.csv_row()) + "\n")


class CheckpointWriter:
    """Saves checkpoints plus a JSON sidecar with the evolution position."""

    def __init__(self, directory, every):
        self.directory = directory
        self.every = every

    def path_for(self, step):
        return os.path.join(self.directory, f"checkpoint_{step:08d}.slp")

    def __call__(self, step, tau, phase_index, phase_step, state):
        path = self.path_for(step)
        save_checkpoint(state, path)
        write_sidecar(path, step, tau, phase_index, phase_step)
        return path


def write_sidecar(path, step, tau, phase_index, phase_step):
    with open(path + ".json", "w") as fh:
        json.dump({"step": step, "tau": repr(float(tau)), "phase": phase_index,
                   "phase_step": phase_step}, fh)


def read_sidecar(path):
    with open(path + ".json") as fh:
        meta = json.load(fh)
    meta["tau"] = float(meta["tau"])
    return meta


def run_evolution(state, model, schedule, method="slte", observers=(), *, energy_every=100,
                  D_cut=None, eps=1e-6, split="self-contraction", compression="svd",
                  checkpoint=None, fixed_wall=False, start=None, energy_fn=None, fused=True):
    """
    Imaginary time evolution following ``schedule``.

    Parameters
    ----------
    state : PepsState
    model : Heisenberg
    schedule : TrotterSchedule
    method : {"slte", "als"}
    observers : sequence of callables
        Called as ``observer(record, state)`` for every trajectory record.
        Exceptions are logged and collected in ``Trajectory.errors``.
    energy_every : int
        Record cadence in steps; a record is also made at the start and at
        the end of every phase.
    D_cut : int, optional
        Double-layer bond cap for energies (and the ALS environment);
        default ``4 D^2`` for the current phase.
    checkpoint : CheckpointWriter, optional
    fixed_wall : bool
        Write ``wall_ms`` as 0 so that trajectories are byte-reproducible.
    start : dict, optional
        ``{"step", "tau", "phase", "phase_step"}`` to resume a schedule.
    energy_fn : callable, optional
        ``energy_fn(state, D_cut) -> float``; defaults to the double-layer
        energy of ``model``.
    fused : bool
        Use row sweeps with shared boundaries (single-layer method only).

    Returns
    -------
    PepsState, Trajectory
    """
    from .observables import expect_energy_dl

    if method not in ("slte", "als"):
        raise ValueError(f"unknown method {method!r}")
    if energy_fn is None:
        def energy_fn(st, cut):
            return expect_energy_dl(st, model, cut)[0]
    start = start or {}
    step = int(start.get("step", 0))
    tau = float(start.get("tau", 0.0))
    first_phase = int(start.get("phase", 0))
    first_phase_step = int(start.get("phase_step", 0))
    traj = Trajectory()
    t0 = time.perf_counter()
    worst = 1.0

    def record(st, D):
        nonlocal worst
        cut = D_cut or 4 * D * D
        e = float(energy_fn(st, cut))
        wall = 0.0 if fixed_wall else (time.perf_counter() - t0) * 1e3
        rec = TrajectoryRecord(step, tau, e, st.log_scale, 1.0 - worst, round(wall, 3))
        worst = 1.0
        traj.records.append(rec)
        for obs in observers:
            try:
                obs(rec, st)
            except Exception as exc:  # observer failures must not stop the evolution
                log.warning("observer %r failed at step %d: %s", obs, step, exc)
                traj.errors.append(f"step {step}: {exc}")
        return e

    if schedule.total_steps == 0:
        return state, traj
    phases = schedule.phases
    for pidx in range(first_phase, len(phases)):
        ph = phases[pidx]
        k0 = first_phase_step if pidx == first_phase else 0
        if k0 >= ph.steps:
            continue
        gates = _GateCache(model)
        scaled = lambda w, dt=ph.dt: gates(w * dt)
        if traj.records:
            prev = (tau, traj.records[-1].energy)
        elif k0 > 0 or pidx > 0:
            # resumed run: the resume point is already in the trajectory
            prev = (tau, float(energy_fn(state, D_cut or 4 * ph.D * ph.D)))
        else:
            prev = (tau, record(state, ph.D))
        pending = []
        for k in range(k0, ph.steps):
            if method == "slte" and fused:
                passes = _merge_passes(pending + [(0, 0.5), (1, 0.5)])
                state, w1 = apply_group_sweep(state, "h", passes, scaled, ph.D, ph.Dt,
                                              ph.dt_eff, split, compression)
                state, w2 = apply_group_sweep(state, "v", [(0, 0.5), (1, 1.0), (0, 0.5)], scaled,
                                              ph.D, ph.Dt, ph.dt_eff, split, compression)
                worst = min(worst, w1, w2)
                pending = [(1, 0.5), (0, 0.5)]
            else:
                for orient, parity, w in schedule.substeps():
                    state, wg = sequential_group(state, orient, parity, gates(w * ph.dt), ph.D,
                                                 ph.Dt, ph.dt_eff, method, split, compression,
                                                 eps, D_cut)
                    worst = min(worst, wg)
            step += 1
            tau += ph.dt
            last = k == ph.steps - 1
            ckpt = checkpoint is not None and checkpoint.every and step % checkpoint.every == 0
            rec = step % energy_every == 0 if energy_every else False
            if pending and (last or ckpt or rec):
                state, w1 = apply_group_sweep(state, "h", pending, scaled, ph.D, ph.Dt,
                                              ph.dt_eff, split, compression)
                worst = min(worst, w1)
                pending = []
            advance = False
            if rec or last:
                e = record(state, ph.D)
                span = abs(e) * (tau - prev[0])
                rate = (prev[1] - e) / span if span > 0 else 0.0
                prev = (tau, e)
                if (schedule.anneal_threshold is not None and pidx < len(phases) - 1
                        and not last and rate < schedule.anneal_threshold):
                    log.info("phase %d: energy rate %.3g below threshold, advancing", pidx, rate)
                    advance = True
            if ckpt or (advance and checkpoint is not None):
                try:
                    checkpoint(step, tau, pidx if not advance else pidx + 1,
                               k + 1 if not advance else 0, state)
                except OSError as exc:
                    log.warning("checkpoint at step %d failed: %s", step, exc)
                    traj.errors.append(f"step {step}: {exc}")
            if advance:
                break
    return state, traj
