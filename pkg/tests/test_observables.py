import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from slpeps.errors import DegenerateStateError, TopologyError
from slpeps.models import lattice_bonds
from slpeps.observables import (
    amplitude,
    blocking_error,
    metropolis_energy,
    run_chain,
    sampling_csv_rows,
)
from slpeps.oracle import dense_energy, peps_to_dense
from slpeps.peps import init_neel, init_product, init_random

from conftest import config_index


def all_configs(m, n):
    for k in range(2 ** (m * n)):
        yield np.array([(k >> (m * n - 1 - b)) & 1 for b in range(m * n)]).reshape(m, n)


def test_amplitudes_match_dense():
    st = dataclasses.replace(init_random(2, 3, 2, seed=1), log_scale=0.3)
    vec = peps_to_dense(st)
    for cfg in all_configs(2, 3):
        assert_allclose(amplitude(st, cfg), vec[config_index(cfg)], atol=1e-12)


def test_amplitude_bare_and_truncated():
    st = init_random(3, 3, 2, seed=2)
    cfg = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 1]])
    bare = amplitude(st, cfg, physical=False)
    assert_allclose(bare * np.exp(st.log_scale), amplitude(st, cfg), rtol=1e-12)
    assert_allclose(amplitude(st, cfg, D_amp=4), amplitude(st, cfg), rtol=1e-10)


def test_amplitude_shape_checked():
    with pytest.raises(TopologyError):
        amplitude(init_neel(2, 2), np.zeros((2, 3), dtype=int))


def test_product_state_without_projection(model):
    # every spin up: single flips have zero amplitude, the chain never moves
    up = np.array([1.0, 0.0])
    st = init_product([[up] * 3] * 2)
    e, err, acc = metropolis_energy(st, model, 500, 10, seed=1, project_sz0=False)
    assert e == len(lattice_bonds(2, 3))
    assert err == 0 and acc == 0


def test_neel_state_with_projection(model):
    e, err, acc = metropolis_energy(init_neel(2, 2), model, 200, 0, seed=3)
    assert_allclose(e, -4.0)
    assert acc == 0


def test_projection_needs_even_sites(model):
    with pytest.raises(ValueError):
        run_chain(init_neel(3, 3), model, 10, 0, seed=0)


def test_zero_state_rejected(model):
    zero = np.zeros(2)
    st = init_product([[zero, zero]])
    with pytest.raises(DegenerateStateError):
        run_chain(st, model, 10, 0, seed=0, project_sz0=False, retries=5)


def test_sampling_matches_dense_without_projection(model):
    st = init_random(2, 3, 2, seed=3)
    ref = dense_energy(peps_to_dense(st), 2, 3, model)
    e, err, _ = metropolis_energy(st, model, 20000, 500, seed=5, project_sz0=False)
    assert abs(e - ref) <= 4 * err


def test_projected_chain_stays_in_sector(model):
    st = init_random(2, 2, 2, seed=4)
    chain = run_chain(st, model, 2000, 100, seed=2)
    assert chain.max_abs_sz == 0
    assert 0 < chain.acceptance <= 1


def test_sampling_deterministic(model):
    st = init_random(2, 2, 2, seed=4)
    a = metropolis_energy(st, model, 500, 50, seed=9)
    b = metropolis_energy(st, model, 500, 50, seed=9)
    assert a == b


def test_blocking_error_white_noise():
    x = np.random.default_rng(0).standard_normal(2 ** 14)
    assert_allclose(blocking_error(x), 1 / np.sqrt(x.size), rtol=0.15)


def test_blocking_error_grows_with_correlation():
    rng = np.random.default_rng(1)
    x = np.repeat(rng.standard_normal(2 ** 10), 16)
    naive = x.std(ddof=1) / np.sqrt(x.size)
    assert blocking_error(x) > 2.5 * naive


def test_sampling_csv():
    text = sampling_csv_rows([{"seed": 1, "samples": 10, "acceptance": 0.5,
                               "energy": -1.0, "stderr": 0.1}])
    assert text.splitlines() == ["seed,samples,acceptance,energy,stderr", "1,10,0.5,-1,0.1"]
