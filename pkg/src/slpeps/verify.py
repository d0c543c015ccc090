"""
Oracle-backed self-check of the package.

Each check builds a small instance, compares a fast routine with a
brute-force reference and reports ``(passed, detail)``. Checks marked
``informational`` are probes whose outcome is reported but does not decide
the overall result.
"""

import time
from dataclasses import dataclass

import numpy as np

from .doublelayer import norm_dl
from .environment import build_norm_operator, pair_frame
from .evolution import (
    Phase,
    TrotterSchedule,
    als_update_pair,
    pair_objective,
    run_evolution,
    slte_pair_tensors,
)
from .models import Heisenberg
from .mps import compress_bonds, from_dense, to_dense
from .observables import amplitude, expect_energy_dl
from .oracle import (
    apply_two_site,
    dense_energy,
    ed_ground,
    exact_environment_gram,
    peps_to_dense,
)
from .peps import TwoSiteGate, apply_gate_grown, init_random
from .tensor_core import truncated_svd


@dataclass
class Check:
    name: str
    func: object
    quick: bool = True
    informational: bool = False


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float
    informational: bool = False


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def check_eckart_young():
    rng = np.random.default_rng(11)
    t = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    u, s, vh, disc = truncated_svd(t, (0,), 4)
    err = np.linalg.norm(t - (u * s) @ vh) ** 2
    gap = abs(err - disc) / disc
    return gap <= 1e-10, f"|residual^2 - discarded| / discarded = {gap:.2e}"


def check_ghz_compression():
    vec = np.zeros(2 ** 6, dtype=complex)
    vec[0] = vec[-1] = 1 / np.sqrt(2)
    phi = from_dense(vec, [(2,)] * 6)
    _, fid = compress_bonds(phi, 1)
    exact, fid_exact = compress_bonds(phi, 2)
    err = _rel(to_dense(exact), vec)
    ok = abs(fid - 0.5) <= 1e-10 and err <= 1e-12
    return ok, f"D=1 fidelity {fid:.12f}, D=2 reconstruction error {err:.1e}"


def check_gate_application():
    st = init_random(2, 3, 2, seed=3)
    rng = np.random.default_rng(4)
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    pair = ((0, 1), (1, 1))
    new = apply_gate_grown(st, TwoSiteGate(g.reshape(2, 2, 2, 2), pair))
    ref = apply_two_site(peps_to_dense(st), 2, 3, g.reshape(2, 2, 2, 2), pair)
    err = _rel(peps_to_dense(new), ref)
    return err <= 1e-12, f"relative error {err:.1e}"


def make_environment_check(m, n, dt_eff=None):
    def check():
        st = init_random(m, n, 2, seed=7)
        pair = ((1, 1), (1, 2))
        big = 2 ** 10
        frame = pair_frame(st, pair, big, dt_eff or big)
        N = build_norm_operator(frame)
        ref = exact_environment_gram(st, pair)
        # both are bare-tensor grams, compare after fixing the scale
        alpha = np.vdot(N, ref) / np.vdot(N, N)
        err = _rel(alpha * N, ref)
        return err <= 1e-8, f"relative Frobenius error {err:.1e}"
    return check


def check_double_layer():
    model = Heisenberg()
    st = init_random(3, 3, 2, seed=2)
    e, _ = expect_energy_dl(st, model, 64, with_norm=False)
    vec = peps_to_dense(st)
    ref = dense_energy(vec, 3, 3, model)
    log_ref = np.log(np.vdot(vec, vec).real)
    err = abs(e - ref) / abs(ref)
    nerr = abs(norm_dl(st, 64) - log_ref)
    return err <= 1e-10 and nerr <= 1e-10, f"energy error {err:.1e}, log-norm error {nerr:.1e}"


def check_amplitudes():
    st = init_random(2, 3, 2, seed=9)
    vec = peps_to_dense(st)
    worst = 0.0
    for k in range(2 ** 6):
        cfg = np.array([(k >> (5 - b)) & 1 for b in range(6)]).reshape(2, 3)
        worst = max(worst, abs(amplitude(st, cfg) - vec[k]))
    worst /= np.max(np.abs(vec))
    return worst <= 1e-10, f"max amplitude error {worst:.1e}"


def check_update_optimality():
    st = init_random(3, 3, 2, seed=21)
    gate = TwoSiteGate(Heisenberg().gate(0.1), ((1, 0), (1, 1)))
    N = exact_environment_gram(st, gate.sites)
    a, b = st[1, 0], st[1, 1]
    a_s, b_s, _ = slte_pair_tensors(st, gate, 2, 64, 64)
    obj_s = pair_objective(N, a, b, a_s, b_s, gate.tensor)
    _, rep_a = als_update_pair(st, gate, 2, norm_operator=N, Dt=64, dt=64)
    obj_a = 1 - rep_a.fidelity
    return obj_a <= obj_s + 1e-10, f"objective slte {obj_s:.3e}, als {obj_a:.3e}"


def check_chain_ground_state():
    model = Heisenberg()
    e0, _ = ed_ground(model, 1, 4)
    st = init_random(1, 4, 4, seed=1)
    sched = TrotterSchedule([Phase(0.05, 200, 4, 4, 4), Phase(0.005, 200, 4, 4, 4)],
                            anneal_threshold=None)
    st, traj = run_evolution(st, model, sched, energy_every=400)
    err = abs(traj.records[-1].energy - e0) / abs(e0)
    return err <= 1e-3, f"relative error to ED {err:.1e}"


def default_checks(dt_eff=None):
    env_name = "environment exactness 3x3"
    checks = [
        Check("Eckart-Young identity", check_eckart_young),
        Check("MPS compression (GHZ)", check_ghz_compression),
        Check("gate application vs dense", check_gate_application),
        Check(env_name, make_environment_check(3, 3)),
        Check("double-layer energy and norm", check_double_layer),
        Check("amplitudes vs dense", check_amplitudes),
        Check("update optimality (ALS <= SLTE)", check_update_optimality),
        Check("1x4 ground state vs ED", check_chain_ground_state, quick=False),
        Check("environment exactness 3x4", make_environment_check(3, 4), quick=False),
    ]
    if dt_eff is not None:
        checks.append(Check(f"{env_name} with dt_eff={dt_eff} (probe)",
                            make_environment_check(3, 3, dt_eff), informational=True))
    return checks


def run_checks(quick=False, dt_eff=None, out=print):
    """Run the suite, print a table and return ``(all_passed, results)``."""
    results = []
    for chk in default_checks(dt_eff):
        if quick and not chk.quick:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = chk.func()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(chk.name, bool(ok), detail, time.perf_counter() - t0,
                                   chk.informational))
    width = max(len(r.name) for r in results)
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        if r.informational:
            tag += " (informational)"
        out(f"{r.name:<{width}}  {tag:<22} {r.seconds:7.2f}s  {r.detail}")
    passed = all(r.passed for r in results if not r.informational)
    return passed, results
