import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st_
from numpy.testing import assert_allclose

from slpeps.errors import TopologyError
from slpeps.evolution import (
    CheckpointWriter,
    Phase,
    TrotterSchedule,
    _oriented,
    _pairs,
    als_update_pair,
    pair_objective,
    read_sidecar,
    reduced_update,
    run_evolution,
    slte_pair_tensors,
    slte_update_pair,
)
from slpeps.models import Heisenberg
from slpeps.oracle import (
    apply_two_site,
    dense_energy,
    exact_environment_gram,
    heisenberg_sparse,
    peps_to_dense,
    trotter_evolve,
)
from slpeps.peps import TwoSiteGate, apply_gate_grown, init_neel, init_random, load_checkpoint

from conftest import random_complex


def fidelity(a, b):
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


def gated_pair(a, b, gate):
    """``(t, l, u, d, t', r, u', d')`` of the gate applied to two sites sharing bond c."""
    theta = np.tensordot(a, b, axes=(2, 1))  # s l u d s' r u' d'
    return np.tensordot(gate, theta, axes=([2, 3], [0, 4])).transpose(0, 2, 3, 4, 1, 5, 6, 7)


def merged_pair(a, b):
    return np.tensordot(a, b, axes=(2, 1))


def dense_density(vec):
    return vec / np.linalg.norm(vec)


def cheap_energy(model):
    """Energy through the dense vector; used to keep driver tests fast."""
    def energy(state, cut):
        return dense_energy(peps_to_dense(state), state.m, state.n, model)
    return energy


# --- schedule -------------------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [
    dict(dt=0.0, steps=1, D=2, Dt=2, dt_eff=2),
    dict(dt=-0.1, steps=1, D=2, Dt=2, dt_eff=2),
    dict(dt=0.1, steps=-1, D=2, Dt=2, dt_eff=2),
    dict(dt=0.1, steps=1, D=0, Dt=2, dt_eff=2),
    dict(dt=0.1, steps=1, D=2, Dt=0, dt_eff=2),
    dict(dt=0.1, steps=1, D=2, Dt=2, dt_eff=0),
])
def test_phase_validation(kwargs):
    with pytest.raises(ValueError):
        Phase(**kwargs)


def test_schedule_needs_phases_and_accepts_dicts():
    with pytest.raises(ValueError):
        TrotterSchedule(())
    sched = TrotterSchedule([dict(dt=0.1, steps=3, D=2, Dt=4, dt_eff=4), Phase(0.01, 2, 3, 3, 3)])
    assert all(isinstance(p, Phase) for p in sched.phases)
    assert sched.total_steps == 5


def test_gate_sequence_is_symmetric_and_complete():
    groups = TrotterSchedule.GROUPS
    assert groups == groups[::-1]
    weight = {}
    for orient, parity, frac in groups:
        weight[orient, parity] = weight.get((orient, parity), 0.0) + frac
    assert weight == {("h", 0): 1.0, ("h", 1): 1.0, ("v", 0): 1.0, ("v", 1): 1.0}


def test_pairs_cover_every_bond_once():
    m, n = 3, 4
    found = [p for o in "hv" for par in (0, 1) for p in _pairs(m, n, o, par)]
    assert len(found) == len(set(found)) == m * (n - 1) + n * (m - 1)


# --- reduced update -------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(l=st_.integers(1, 3), r=st_.integers(1, 3), u=st_.integers(1, 2), c=st_.integers(1, 3),
       D_cap=st_.integers(1, 4), seed=st_.integers(0, 2 ** 16))
def test_identity_grams_give_plain_svd_truncation(l, r, u, c, D_cap, seed):
    rng = np.random.default_rng(seed)
    a = random_complex(rng, (2, l, c, u, 1))
    b = random_complex(rng, (2, c, r, 1, u))
    gate = Heisenberg().gate(0.3)
    gl = np.eye(l * u)
    gr = np.eye(r * u)
    a_new, b_new, fid, disc = reduced_update(a, b, gl, gr, gate, D_cap)
    theta = gated_pair(a, b, gate)
    shp = theta.shape
    mat = theta.reshape(np.prod(shp[:4]), -1)
    u_, s, vh = np.linalg.svd(mat, full_matrices=False)
    k = min(D_cap, int(np.count_nonzero(s > 1e-14 * s[0])))
    best = (u_[:, :k] * s[:k]) @ vh[:k]
    got = merged_pair(a_new, b_new).reshape(mat.shape)
    assert_allclose(got, best, atol=1e-10 * s[0])
    assert_allclose(fid, np.sum(s[:k] ** 2) / np.sum(s ** 2), rtol=1e-10)
    assert_allclose(fid + disc, 1.0, rtol=1e-12)


def test_reduced_update_without_truncation_is_exact(rng):
    a = random_complex(rng, (2, 2, 2, 1, 2))
    b = random_complex(rng, (2, 2, 2, 1, 2))
    ml = random_complex(rng, (4, 4))
    mr = random_complex(rng, (4, 4))
    gate = Heisenberg().gate(0.2)
    a_new, b_new, fid, disc = reduced_update(a, b, ml.conj().T @ ml, mr.conj().T @ mr, gate, 64)
    assert_allclose(merged_pair(a_new, b_new), gated_pair(a, b, gate), atol=1e-10)
    assert disc < 1e-12


def test_chain_update_is_schmidt_truncation(model):
    # without loops the split environment is exact, and the update is the
    # optimal truncation of the gated state across the cut of the bond
    st = init_random(1, 5, 3, seed=8)
    pair = ((0, 1), (0, 2))
    gate = TwoSiteGate(model.gate(0.4), pair)
    new, rep = slte_update_pair(st, gate, 2, 64, 64)
    exact = apply_two_site(peps_to_dense(st), 1, 5, gate.tensor, pair)
    s = np.linalg.svd(exact.reshape(2 ** 2, 2 ** 3), compute_uv=False)
    optimum = np.sum(s[:2] ** 2) / np.sum(s ** 2)
    assert_allclose(fidelity(peps_to_dense(new), exact), optimum, rtol=1e-10)
    assert_allclose(rep.fidelity, optimum, rtol=1e-10)


@pytest.mark.parametrize("split", ["self-contraction", "svd-split"])
def test_vertical_update_matches_transposed_horizontal(model, split):
    st = init_random(3, 3, 2, seed=4)
    gate = TwoSiteGate(model.gate(0.1), ((0, 1), (1, 1)))
    new, _ = slte_update_pair(st, gate, 2, 16, 16, split)
    ref, _ = slte_update_pair(st.transpose(), gate.transposed(), 2, 16, 16, split)
    assert_allclose(peps_to_dense(new), peps_to_dense(ref.transpose()), atol=1e-12)


def test_update_rejects_bad_arguments(model):
    st = init_random(2, 2, 2, seed=0)
    with pytest.raises(ValueError):
        slte_update_pair(st, TwoSiteGate(model.gate(0.1), ((0, 0), (0, 1))), 0, 4, 4)
    with pytest.raises(TopologyError):
        slte_update_pair(st, TwoSiteGate(model.gate(0.1), ((1, 1), (1, 2))), 2, 4, 4)
    with pytest.raises(ValueError):
        run_evolution(st, model, TrotterSchedule([Phase(0.1, 1, 2, 2, 2)]), method="exact")


# --- conventional update and the objective -------------------------------------------


@pytest.mark.parametrize("sites", [((1, 0), (1, 1)), ((0, 1), (1, 1)), ((1, 1), (1, 2))])
def test_pair_objective_is_true_infidelity_with_exact_environment(model, sites):
    st = init_random(3, 3, 2, seed=13)
    gate = TwoSiteGate(model.gate(0.2), sites)
    so, g, flipped = _oriented(st, gate)
    (i, j), (_, j1) = g.sites
    N = exact_environment_gram(so, g.sites)
    a_new, b_new, _ = slte_pair_tensors(so, g, 2, 16, 16)
    obj = pair_objective(N, so[i, j], so[i, j1], a_new, b_new, g.tensor)
    trial = so.replace_sites({(i, j): a_new, (i, j1): b_new})
    exact = apply_two_site(peps_to_dense(so), so.m, so.n, g.tensor, g.sites)
    assert_allclose(obj, 1 - fidelity(peps_to_dense(trial), exact), atol=1e-12)


@pytest.mark.parametrize("seed", [3, 21, 34])
@pytest.mark.parametrize("sites", [((1, 0), (1, 1)), ((0, 2), (1, 2))])
def test_als_never_worse_than_slte_on_same_frame(model, seed, sites):
    st = init_random(3, 3, 2, seed=seed)
    gate = TwoSiteGate(model.gate(0.3), sites)
    so, g, _ = _oriented(st, gate)
    (i, j), (_, j1) = g.sites
    N = exact_environment_gram(so, g.sites)
    a_s, b_s, _ = slte_pair_tensors(so, g, 2, 64, 64)
    obj_s = pair_objective(N, so[i, j], so[i, j1], a_s, b_s, g.tensor)
    new, rep = als_update_pair(st, gate, 2, norm_operator=N, Dt=64, dt=64)
    assert rep.residual <= obj_s + 1e-10
    exact = apply_two_site(peps_to_dense(st), 3, 3, gate.tensor, gate.sites)
    assert_allclose(1 - fidelity(peps_to_dense(new), exact), rep.residual, atol=1e-10)


def test_als_with_double_layer_environment(model):
    st = init_random(3, 3, 2, seed=5)
    gate = TwoSiteGate(model.gate(0.1), ((1, 1), (1, 2)))
    exact_new, exact_rep = als_update_pair(st, gate, 2, norm_operator=exact_environment_gram(
        st, gate.sites))
    dl_new, dl_rep = als_update_pair(st, gate, 2, D_cut=256)
    assert_allclose(dl_rep.residual, exact_rep.residual, rtol=1e-6, atol=1e-12)


# --- Sz symmetry of the environment split ----------------------------------------------


def weight_outside_sz0(vec, nsites):
    counts = np.array([bin(k).count("1") for k in range(2 ** nsites)])
    vec = vec / np.linalg.norm(vec)
    return float(np.sum(np.abs(vec[counts != nsites // 2]) ** 2))


def test_svd_split_conserves_total_sz(model):
    sched = TrotterSchedule([Phase(0.05, 6, 2, 8, 8)], anneal_threshold=None)
    st, _ = run_evolution(init_neel(3, 4), model, sched, split="svd-split",
                          energy_fn=cheap_energy(model), energy_every=100)
    assert weight_outside_sz0(peps_to_dense(st), 12) < 1e-20


def test_svd_split_not_worse_than_self_contraction(model):
    st = init_random(3, 4, 2, seed=6)
    vec = peps_to_dense(st)
    for sites in _pairs(3, 4, "h", 1) + _pairs(3, 4, "v", 0):
        gate = TwoSiteGate(model.gate(0.1), sites)
        exact = apply_two_site(vec, 3, 4, gate.tensor, sites)
        f = {}
        for split in ("self-contraction", "svd-split"):
            new, _ = slte_update_pair(st, gate, 2, 64, 64, split)
            f[split] = fidelity(peps_to_dense(new), exact)
        assert f["svd-split"] >= f["self-contraction"] - 1e-3


# --- Trotter product -------------------------------------------------------------------


def test_grown_gate_step_equals_dense_trotter_step(model):
    st = init_random(2, 3, 1, seed=3)
    vec = peps_to_dense(st)
    for orient, parity, frac in TrotterSchedule.GROUPS:
        for sites in _pairs(2, 3, orient, parity):
            st = apply_gate_grown(st, TwoSiteGate(model.gate(frac * 0.1), sites))
    ref = trotter_evolve(vec / np.linalg.norm(vec), 2, 3, model, 0.1, 1, TrotterSchedule.GROUPS)
    assert_allclose(dense_density(peps_to_dense(st)), ref, atol=1e-12)


@pytest.mark.parametrize("fused", [True, False])
def test_driver_equals_dense_trotter_product_on_chain(model, fused):
    st0 = init_random(1, 5, 1, seed=4)
    vec = dense_density(peps_to_dense(st0))
    sched = TrotterSchedule([Phase(0.1, 10, 4, 16, 16)], anneal_threshold=None)
    st, traj = run_evolution(st0, model, sched, energy_every=5, fused=fused)
    ref = trotter_evolve(vec, 1, 5, model, 0.1, 10, TrotterSchedule.GROUPS)
    assert_allclose(fidelity(peps_to_dense(st), ref), 1.0, atol=1e-12)
    assert_allclose(traj.records[-1].energy, dense_energy(ref, 1, 5, model), rtol=1e-12)


def test_trotter_error_is_second_order(model):
    m, n, beta = 2, 3, 2.0
    h = heisenberg_sparse(m, n)[0].toarray()
    v0 = dense_density(peps_to_dense(init_random(m, n, 1, seed=3)))
    exact = dense_density(scipy.linalg.expm(-beta * h) @ v0)
    state_err = []
    for dt in (0.1, 0.05, 0.025):
        v = trotter_evolve(v0, m, n, model, dt, int(round(beta / dt)), TrotterSchedule.GROUPS)
        phase = np.vdot(exact, v) / abs(np.vdot(exact, v))
        state_err.append(np.linalg.norm(v - phase * exact))
    ratios = np.array(state_err[:-1]) / np.array(state_err[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_fused_and_sequential_sweeps_agree(model):
    # the same gate product, truncated in a different order: close, not equal
    sched = TrotterSchedule([Phase(0.05, 20, 2, 4, 4)], anneal_threshold=None)
    e = {}
    for fused in (True, False):
        _, traj = run_evolution(init_neel(3, 3), model, sched, energy_every=20, fused=fused)
        e[fused] = traj.records[-1].energy
    assert_allclose(e[True], e[False], rtol=2e-3)


# --- driver ----------------------------------------------------------------------------


def test_record_cadence(model):
    sched = TrotterSchedule([Phase(0.1, 5, 2, 4, 4), Phase(0.05, 3, 2, 4, 4)],
                            anneal_threshold=None)
    _, traj = run_evolution(init_random(2, 2, 2, seed=1), model, sched, energy_every=2,
                            energy_fn=cheap_energy(model))
    assert [r.step for r in traj.records] == [0, 2, 4, 5, 6, 8]
    assert_allclose([r.tau for r in traj.records], [0, 0.2, 0.4, 0.5, 0.55, 0.65], atol=1e-12)


def test_plaquette_energy_is_variational(model):
    # double-layer energies are exact on 2x2, so they stay above the ground
    # energy -8; the finite-step fixed point is reached from above -4
    sched = TrotterSchedule([Phase(0.05, 40, 2, 4, 4)], anneal_threshold=None)
    _, traj = run_evolution(init_neel(2, 2), model, sched, energy_every=10)
    assert traj.energies[0] == pytest.approx(-4.0)
    assert np.all(traj.energies[1:] > -8.0)
    assert traj.energies[-1] < -7.0


def test_zero_steps_return_input(model):
    st = init_random(2, 2, 2, seed=1)
    out, traj = run_evolution(st, model, TrotterSchedule([Phase(0.1, 0, 2, 4, 4)]))
    assert out is st
    assert len(traj) == 0


def test_observer_failures_are_collected(model):
    seen = []

    def broken(rec, st):
        raise RuntimeError("disk full")

    sched = TrotterSchedule([Phase(0.1, 4, 2, 4, 4)], anneal_threshold=None)
    _, traj = run_evolution(init_random(2, 2, 2, seed=1), model, sched, energy_every=2,
                            observers=(broken, lambda rec, st: seen.append(rec.step)),
                            energy_fn=cheap_energy(model))
    assert seen == [0, 2, 4]
    assert len(traj.errors) == 3 and "disk full" in traj.errors[0]


def test_annealing_advances_phase(model):
    sched = TrotterSchedule([Phase(0.1, 10, 2, 4, 4), Phase(0.01, 2, 2, 4, 4)],
                            anneal_threshold=1e9)
    _, traj = run_evolution(init_random(2, 2, 2, seed=1), model, sched, energy_every=1,
                            energy_fn=cheap_energy(model))
    # the first record of phase 0 triggers the advance; the last phase runs to its end
    assert [r.step for r in traj.records] == [0, 1, 2, 3]
    assert_allclose(traj.records[-1].tau, 0.12, atol=1e-12)


def test_fixed_wall_runs_are_reproducible(model):
    sched = TrotterSchedule([Phase(0.05, 6, 2, 4, 4)], anneal_threshold=None)
    out = [run_evolution(init_random(2, 3, 2, seed=9), model, sched, energy_every=2,
                         fixed_wall=True)[1].to_csv() for _ in range(2)]
    assert out[0] == out[1]
    assert all(line.endswith(",0") for line in out[0].splitlines()[1:])


def test_checkpoint_resume_continues_trajectory(model, tmp_path):
    sched = TrotterSchedule([Phase(0.05, 6, 2, 4, 4)], anneal_threshold=None)
    st0 = init_random(3, 3, 2, seed=9)
    ck = CheckpointWriter(str(tmp_path), 3)
    _, full = run_evolution(st0, model, sched, energy_every=1, checkpoint=ck)
    path = ck.path_for(3)
    meta = read_sidecar(path)
    assert meta == {"step": 3, "tau": pytest.approx(0.15), "phase": 0, "phase_step": 3}
    _, rest = run_evolution(load_checkpoint(path), model, sched, energy_every=1, start=meta)
    assert [r.step for r in rest.records] == [4, 5, 6]
    assert_allclose(rest.energies, full.energies[4:], rtol=1e-10)
