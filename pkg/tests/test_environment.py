import numpy as np
import pytest
from numpy.testing import assert_allclose

from slpeps.environment import (
    build_frame,
    build_norm_operator,
    contract_from_edge,
    pair_frame,
    split_environment,
    trivial_boundary,
)
from slpeps.errors import CapacityError, TopologyError
from slpeps.oracle import exact_environment_gram
from slpeps.peps import init_random

BIG = 2 ** 10


def rel_error_up_to_scale(N, ref):
    """Bare-tensor grams agree up to the boundary normalization constant."""
    alpha = np.vdot(N, ref) / np.vdot(N, N)
    return np.linalg.norm(alpha * N - ref) / np.linalg.norm(ref)


@pytest.mark.parametrize("shape,pair", [
    ((3, 3), ((1, 1), (1, 2))),
    ((3, 3), ((0, 0), (0, 1))),
    ((3, 3), ((2, 1), (2, 2))),
    ((3, 3), ((0, 1), (1, 1))),
    ((3, 4), ((1, 1), (1, 2))),
    ((3, 4), ((1, 3), (2, 3))),
])
def test_norm_operator_exact_without_truncation(shape, pair):
    st = init_random(*shape, 2, seed=17)
    N = build_norm_operator(pair_frame(st, pair, BIG, BIG))
    assert rel_error_up_to_scale(N, exact_environment_gram(st, pair)) <= 1e-8


@pytest.mark.parametrize("mode", ["svd", "variational"])
def test_norm_operator_modes_agree_when_exact(mode):
    st = init_random(3, 3, 2, seed=2)
    pair = ((1, 0), (1, 1))
    N = build_norm_operator(pair_frame(st, pair, BIG, BIG, mode))
    assert rel_error_up_to_scale(N, exact_environment_gram(st, pair)) <= 1e-8


def test_norm_operator_hermitian_psd():
    st = init_random(3, 4, 2, seed=5)
    N = build_norm_operator(pair_frame(st, ((1, 1), (1, 2)), 4, 4))
    assert np.abs(N - N.conj().T).max() <= 1e-10 * np.abs(N).max()
    assert np.linalg.eigvalsh(N)[0] >= -1e-10 * np.abs(N).max()


def test_physical_truncation_to_one_is_inexact():
    st = init_random(3, 3, 2, seed=7)
    pair = ((1, 1), (1, 2))
    N = build_norm_operator(pair_frame(st, pair, BIG, 1))
    assert rel_error_up_to_scale(N, exact_environment_gram(st, pair)) > 1e-2


def test_boundary_reports_discarded_weight():
    st = init_random(4, 4, 2, seed=3)
    exact = contract_from_edge(st, "top", 2, BIG, BIG)
    cut = contract_from_edge(st, "top", 2, 2, 2)
    assert exact.discarded <= 1e-12
    assert cut.discarded > 0
    assert max(cut.bonds) <= 2
    assert exact.covers == (0, 1)


def test_contract_from_edge_range_checked():
    st = init_random(3, 3, 2, seed=3)
    with pytest.raises(ValueError):
        contract_from_edge(st, "top", 0, 4, 4)
    with pytest.raises(ValueError):
        contract_from_edge(st, "bottom", 2, 4, 4)
    with pytest.raises(ValueError):
        contract_from_edge(st, "top", 1, 0, 4)


def test_frame_rejects_wrong_boundaries():
    st = init_random(3, 3, 2, seed=3)
    top = contract_from_edge(st, "top", 1, 4, 4)
    bottom = contract_from_edge(st, "bottom", 1, 4, 4)
    with pytest.raises(TopologyError):
        build_frame(st, top, bottom, ((2, 0), (2, 1)), 4, 4)
    with pytest.raises(TopologyError):
        build_frame(st, top, bottom, ((1, 0), (2, 0)), 4, 4)
    with pytest.raises(TopologyError):
        build_frame(st, trivial_boundary(2), bottom, ((1, 0), (1, 1)), 4, 4)


def test_norm_operator_capacity():
    st = init_random(3, 3, 4, seed=1)
    frame = pair_frame(st, ((1, 0), (1, 1)), 4, 4)
    with pytest.raises(CapacityError):
        build_norm_operator(frame, max_dim=100)


@pytest.mark.parametrize("method", ["self-contraction", "svd-split"])
def test_split_exact_without_ring(method):
    # on a single row both ring-closure bonds have length one
    st = init_random(1, 4, 3, seed=11)
    pair = ((0, 1), (0, 2))
    frame = pair_frame(st, pair, BIG, BIG)
    assert frame.ring_bonds == (1, 1)
    env = split_environment(frame, method)
    l, u, u2, d, d2, r = frame.system_bonds
    gl = env.left_gram().reshape(l, u, d, l, u, d)
    gr = env.right_gram().reshape(r, u2, d2, r, u2, d2)
    prod = np.einsum("aUDbVE,cWFdXG->aUWDFcbVXEGd", gl, gr).reshape(
        l * u * u2 * d * d2 * r, -1)
    assert rel_error_up_to_scale(prod, exact_environment_gram(st, pair)) <= 1e-10


@pytest.mark.parametrize("method", ["self-contraction", "svd-split"])
def test_split_pieces_are_psd(method):
    st = init_random(3, 4, 2, seed=4)
    env = split_environment(pair_frame(st, ((1, 1), (1, 2)), 4, 4), method)
    for g in (env.left_gram(), env.right_gram()):
        assert np.abs(g - g.conj().T).max() <= 1e-12 * np.abs(g).max()
        assert np.linalg.eigvalsh(g)[0] >= -1e-10 * np.abs(g).max()


def test_unknown_split_method():
    st = init_random(2, 2, 2, seed=4)
    with pytest.raises(ValueError):
        split_environment(pair_frame(st, ((0, 0), (0, 1)), 4, 4), "magic")
