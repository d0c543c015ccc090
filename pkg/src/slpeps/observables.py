"""
Expectation values of a PEPS.

Two routes are available:

* the double-layer contraction (:func:`expect_energy_dl`), a boundary-MPO
  evaluation of ``<Psi|H|Psi> / <Psi|Psi>``;
* Metropolis sampling over spin configurations (:func:`metropolis_energy`),
  which only needs amplitudes ``<mu|Psi>``: the network with all physical
  indices fixed has bonds of size ``D`` instead of ``D^2``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .doublelayer import norm_dl, row_pair_expectations, site_expectations
from .errors import CapacityError, DegenerateStateError, TopologyError
from .models import SZ, lattice_bonds
from .mps import left_qr_sweep, rtl_truncate


def expect_energy_dl(state, model, D_cut, with_norm=True):
    """
    Energy from the double-layer contraction with boundary bond cap ``D_cut``.

    Bond terms are evaluated as ratios within each row strip and
    symmetrized (only the real part is kept).

    Returns
    -------
    energy : float
        Total energy, summed over all bonds.
    norm : float or None
        ``<Psi|Psi>`` of the stored tensors without the ``log_scale``
        factor (the physical norm is ``norm * exp(2 log_scale)``); ``None``
        when ``with_norm`` is false.
    """
    if D_cut < 1:
        raise ValueError(f"D_cut must be >= 1, got {D_cut}")
    h = model.pair_hamiltonian()
    e = 0.0
    if state.n > 1:
        e += np.sum(row_pair_expectations(state, h, D_cut))
    if state.m > 1:
        e += np.sum(row_pair_expectations(state.transpose(), h, D_cut))
    norm = None
    if with_norm:
        norm = math.exp(norm_dl(state, D_cut) - 2 * state.log_scale)
    return float(np.real(e)), norm


def staggered_magnetization_dl(state, D_cut):
    """``(1/N) sum_ij (-1)^(i+j) <Z_ij>``."""
    z = np.real(site_expectations(state, SZ, D_cut))
    sign = np.fromfunction(lambda i, j: (-1.0) ** (i + j), z.shape)
    return float(np.mean(sign * z))


# --- amplitudes ----------------------------------------------------------------


def _fixed_network(tensors, config):
    return [[t[config[i][j]] for j, t in enumerate(row)] for i, row in enumerate(tensors)]


def _absorb_fixed(cores, row, cap):
    """Boundary cores ``(l, v, r)`` times a fixed row ``(l, r, u, d)`` over ``v = u``."""
    out = []
    for c, t in zip(cores, row):
        x = np.tensordot(c, t, axes=(1, 2))  # l r l' r' d
        l, r, l1, r1, d = x.shape
        out.append(x.transpose(0, 2, 4, 1, 3).reshape(l * l1, d, r * r1))
    if cap is not None:
        out = left_qr_sweep(out)
        rtl_truncate(out, cap)
    scale = np.linalg.norm(out[0])
    if scale == 0:
        return out, 0.0, -np.inf
    out[0] = out[0] / scale
    return out, scale, math.log(scale)


class _RowView:
    """
    Boundaries and strip environments of a fixed-configuration network,
    for amplitudes of configurations differing inside one row.

    All boundaries are normalized; ``log_amp`` and ``phase`` hold the
    amplitude, and modified amplitudes are returned relative to it.
    """

    def __init__(self, net, cap):
        m, n = len(net), len(net[0])
        self.net, self.m, self.n, self.cap = net, m, n, cap
        one = [np.ones((1, 1, 1), dtype=complex)] * n
        tops, tlog = [one], [0.0]
        for i in range(m - 1):
            cores, _, lg = _absorb_fixed(tops[-1], net[i], cap)
            tops.append(cores)
            tlog.append(tlog[-1] + lg)
        bots, blog = [None] * m, [0.0] * m
        bots[m - 1] = one
        for i in range(m - 1, 0, -1):
            flipped = [t.transpose(0, 1, 3, 2) for t in net[i]]
            cores, _, lg = _absorb_fixed(bots[i], flipped, cap)
            bots[i - 1] = cores
            blog[i - 1] = blog[i] + lg
        self.tops, self.bots, self.tlog, self.blog = tops, bots, tlog, blog
        self.left = []
        self.right = []
        self.llog = []
        self.rlog = []
        for i in range(m):
            lv, ll = [np.ones((1, 1, 1), dtype=complex)], [0.0]
            for j in range(n):
                x = self._step_left(lv[-1], i, j, net[i][j])
                s = np.linalg.norm(x)
                lv.append(x / s if s > 0 else x)
                ll.append(ll[-1] + (math.log(s) if s > 0 else -np.inf))
            rv = [None] * (n + 1)
            rl = [0.0] * (n + 1)
            rv[n] = np.ones((1, 1, 1), dtype=complex)
            for j in range(n - 1, 0, -1):
                x = self._step_right(rv[j + 1], i, j, net[i][j])
                s = np.linalg.norm(x)
                rv[j] = x / s if s > 0 else x
                rl[j] = rl[j + 1] + (math.log(s) if s > 0 else -np.inf)
            self.left.append(lv)
            self.right.append(rv)
            self.llog.append(ll)
            self.rlog.append(rl)
        # full amplitude from row 0: tops[0] is trivial, bottoms[0] covers rows 1..
        self.log_amp = self.llog[0][n] + self.blog[0]
        self.phase = complex(self.left[0][n].reshape(-1)[0])

    def _step_left(self, env, i, j, t):
        x = np.tensordot(env, self.tops[i][j], axes=(0, 0))  # h b v t'
        x = np.tensordot(x, t, axes=([0, 2], [0, 2]))  # b t' h' d
        return np.tensordot(x, self.bots[i][j], axes=([0, 3], [0, 1]))  # t' h' b'

    def _step_right(self, env, i, j, t):
        x = np.tensordot(self.tops[i][j], env, axes=(2, 0))  # t v h b
        x = np.tensordot(x, t, axes=([1, 2], [2, 1]))  # t b h d
        return np.tensordot(x, self.bots[i][j], axes=([1, 3], [2, 1]))  # t h b

    def amplitude(self):
        if self.phase == 0:
            return 0.0
        return self.phase * math.exp(self.log_amp)

    def ratio(self, i, j, tensors):
        """Amplitude with sites ``(i, j), (i, j+1), ...`` replaced, over the current one."""
        if self.phase == 0:
            raise DegenerateStateError("current configuration has zero amplitude")
        x = self.left[i][j]
        for k, t in enumerate(tensors):
            x = self._step_left(x, i, j + k, t)
        k = j + len(tensors)
        val = np.vdot(self.right[i][k].conj(), x)
        log_ref = self.llog[i][j] + self.rlog[i][k] + self.tlog[i] + self.blog[i]
        # the reference amplitude expressed in this row's normalization
        ref = self.phase * math.exp(self.log_amp - log_ref)
        return complex(val) / ref


def amplitude(state, config, D_amp=None, physical=True):
    """
    ``<mu|Psi>`` by contracting the network with fixed physical indices.

    Parameters
    ----------
    config : array_like
        ``m x n`` labels (0 = up).
    D_amp : int, optional
        Bond cap of the boundary MPS; ``None`` contracts exactly.
    physical : bool
        Include the stored ``exp(log_scale)`` factor.
    """
    config = np.asarray(config)
    if config.shape != (state.m, state.n):
        raise TopologyError(f"configuration of shape {config.shape} for a "
                            f"{state.m}x{state.n} lattice")
    net = _fixed_network(state.tensors, config)
    n = state.n
    cores = [np.ones((1, 1, 1), dtype=complex)] * n
    log_amp = 0.0
    for i in range(state.m):
        cores, _, lg = _absorb_fixed(cores, net[i], D_amp)
        if lg == -np.inf:
            return 0.0j
        log_amp += lg
    v = np.ones((1,), dtype=complex)
    for c in cores:
        v = v @ c[:, 0, :]
    val = v[0]
    if physical:
        log_amp += state.log_scale
    return complex(val * math.exp(log_amp))


# --- Metropolis sampling -----------------------------------------------------------


def blocking_error(series, min_blocks=16):
    """
    Standard error of the mean of a correlated series by repeated pairwise
    blocking. The estimate at the first block size where it stops growing
    significantly is returned; if it never stops, the largest estimate
    with at least ``min_blocks`` blocks.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        return 0.0
    levels = []
    while x.size >= min_blocks:
        n = x.size
        var = np.var(x, ddof=1)
        err = math.sqrt(var / n)
        levels.append((err, err / math.sqrt(2 * (n - 1))))
        x = 0.5 * (x[: n // 2 * 2: 2] + x[1: n // 2 * 2: 2])
    if not levels:
        return float(math.sqrt(np.var(series, ddof=1) / len(series)))
    for k in range(len(levels) - 1):
        err, delta = levels[k]
        if levels[k + 1][0] < err + delta:
            return float(max(err, levels[k + 1][0]))
    return float(max(e for e, _ in levels))


@dataclass
class SampleChain:
    """State and accumulators of one Metropolis chain."""

    config: np.ndarray
    rng: np.random.Generator
    project_sz0: bool
    energies: list = field(default_factory=list)
    proposed: int = 0
    accepted: int = 0
    max_abs_sz: int = 0

    @property
    def acceptance(self):
        return self.accepted / self.proposed if self.proposed else 0.0


class _Evaluator:
    """Amplitude ratios and local energies for one configuration."""

    def __init__(self, state, model, D_amp):
        self.state = state
        self.T = state.transpose()
        self.model = model
        self.cap = D_amp
        self.m, self.n = state.m, state.n
        self.bonds = lattice_bonds(self.m, self.n)
        self.J = model.coupling

    def load(self, config):
        self.config = config
        self.rows = _RowView(_fixed_network(self.state.tensors, config), self.cap)
        if self.rows.phase == 0:
            return False
        if self.m > 1:
            self.cols = _RowView(_fixed_network(self.T.tensors, config.T), self.cap)
        self.neighbours = {}
        for bond in self.bonds:
            (i0, j0), (i1, j1) = bond
            if config[i0, j0] != config[i1, j1]:
                self.neighbours[bond] = self._exchange_ratio(bond)
        return True

    def _exchange_ratio(self, bond):
        (i0, j0), (i1, j1) = bond
        c = self.config
        if i0 == i1:
            ts = [self.state[i0, j0][c[i1, j1]], self.state[i1, j1][c[i0, j0]]]
            return self.rows.ratio(i0, j0, ts)
        ts = [self.T[j0, i0][c[i1, j1]], self.T[j1, i1][c[i0, j0]]]
        return self.cols.ratio(j0, i0, ts)

    def flip_ratio(self, i, j):
        return self.rows.ratio(i, j, [self.state[i, j][1 - self.config[i, j]]])

    def local_energy(self):
        c = self.config
        e = 0.0
        for (a, b) in self.bonds:
            e += self.J if c[a] == c[b] else -self.J
        for ratio in self.neighbours.values():
            e += 2 * self.J * ratio
        return e


def _initial_candidates(m, n, rng, project_sz0, retries):
    neel = np.fromfunction(lambda i, j: (i + j) % 2, (m, n), dtype=int)
    yield neel
    yield 1 - neel
    if not project_sz0:
        yield np.zeros((m, n), dtype=int)
        yield np.ones((m, n), dtype=int)
    for _ in range(retries):
        if project_sz0:
            flat = np.array([0] * (m * n // 2) + [1] * (m * n - m * n // 2))
            rng.shuffle(flat)
            yield flat.reshape(m, n)
        else:
            yield rng.integers(0, 2, size=(m, n))


def run_chain(state, model, steps, burn_in, seed, project_sz0=True, D_amp=None, retries=100):
    """
    One Metropolis chain; returns the :class:`SampleChain` with the local
    energy of every step after ``burn_in``.

    With ``project_sz0`` the move is the exchange of the two spins of a
    uniformly chosen bond (rejected outright if they are parallel), which
    keeps the total ``Sz``; otherwise a uniformly chosen spin is flipped.
    """
    m, n = state.m, state.n
    if project_sz0 and (m * n) % 2:
        raise ValueError("Sz=0 projection needs an even number of sites")
    if steps < 1 or burn_in < 0:
        raise ValueError(f"invalid chain length steps={steps}, burn_in={burn_in}")
    rng = np.random.default_rng(seed)
    ev = _Evaluator(state, model, D_amp)
    for cand in _initial_candidates(m, n, rng, project_sz0, retries):
        if ev.load(np.array(cand)):
            break
    else:
        raise DegenerateStateError(f"no configuration with nonzero amplitude in {retries} draws")
    chain = SampleChain(ev.config.copy(), rng, project_sz0)
    bonds = ev.bonds
    e_loc = ev.local_energy()
    sz = lambda c: int(np.sum(1 - 2 * c))
    chain.max_abs_sz = abs(sz(ev.config)) if project_sz0 else 0
    for it in range(burn_in + steps):
        chain.proposed += 1
        if project_sz0:
            bond = bonds[rng.integers(len(bonds))]
            ratio = ev.neighbours.get(bond)
            u = rng.random()
            if ratio is not None and u < abs(ratio) ** 2:
                new = ev.config.copy()
                a, b = bond
                new[a], new[b] = new[b], new[a]
                ev.load(new)
                e_loc = ev.local_energy()
                chain.accepted += 1
                chain.max_abs_sz = max(chain.max_abs_sz, abs(sz(new)))
        else:
            i, j = rng.integers(m), rng.integers(n)
            ratio = ev.flip_ratio(i, j)
            u = rng.random()
            if u < abs(ratio) ** 2:
                new = ev.config.copy()
                new[i, j] = 1 - new[i, j]
                ev.load(new)
                e_loc = ev.local_energy()
                chain.accepted += 1
        if it >= burn_in:
            chain.energies.append(e_loc)
    chain.config = ev.config.copy()
    return chain


def metropolis_energy(state, model, steps, burn_in, seed, project_sz0=True, D_amp=None):
    """
    Sampled energy ``sum_mu p_mu E_loc(mu) / sum_mu p_mu`` with
    ``p_mu = |<mu|Psi>|^2`` and ``E_loc(mu) = <mu|H|Psi> / <mu|Psi>``.

    Returns
    -------
    energy, stderr, acceptance : float
        ``stderr`` from a blocking analysis of the local-energy series.
    """
    chain = run_chain(state, model, steps, burn_in, seed, project_sz0, D_amp)
    series = np.real(np.array(chain.energies))
    return float(np.mean(series)), blocking_error(series), chain.acceptance


def sampling_csv_rows(results):
    """``seed,samples,acceptance,energy,stderr`` rows for a list of dicts."""
    lines = ["seed,samples,acceptance,energy,stderr"]
    for r in results:
        lines.append(f"{r['seed']},{r['samples']},{r['acceptance']:.12g},"
                     f"{r['energy']:.12g},{r['stderr']:.12g}")
    return "\n".join(lines) + "\n"


def check_amp_capacity(state, D_amp):
    if D_amp is None and state.max_bond() ** min(state.m, state.n) > 4096:
        raise CapacityError("exact amplitudes need a boundary bond above 4096; set D_amp")
