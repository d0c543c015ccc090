import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from slpeps.errors import DimensionError
from slpeps.tensor_core import (
    contract,
    isometry_residual,
    qr,
    svd,
    thin_qr,
    thin_svd,
    truncated_svd,
)

from conftest import random_complex


def naive_contract(a, b, pairs):
    """Nested-loop reference for :func:`contract`."""
    ax_a = [p[0] for p in pairs]
    ax_b = [p[1] for p in pairs]
    free_a = [k for k in range(a.ndim) if k not in ax_a]
    free_b = [k for k in range(b.ndim) if k not in ax_b]
    out = np.zeros([a.shape[k] for k in free_a] + [b.shape[k] for k in free_b], dtype=complex)
    summed = [a.shape[k] for k in ax_a]
    for fa in itertools.product(*[range(a.shape[k]) for k in free_a]):
        for fb in itertools.product(*[range(b.shape[k]) for k in free_b]):
            total = 0
            for sm in itertools.product(*[range(n) for n in summed]):
                ia = [0] * a.ndim
                ib = [0] * b.ndim
                for k, v in zip(free_a, fa):
                    ia[k] = v
                for k, v in zip(free_b, fb):
                    ib[k] = v
                for (ka, kb), v in zip(pairs, sm):
                    ia[ka] = v
                    ib[kb] = v
                total += a[tuple(ia)] * b[tuple(ib)]
            out[fa + fb] = total
    return out


def test_contract_matches_nested_loops(rng):
    a = random_complex(rng, (2, 3, 2, 3))
    b = random_complex(rng, (3, 2, 3, 2))
    pairs = [(1, 0), (3, 2)]
    assert_allclose(contract(a, b, pairs), naive_contract(a, b, pairs), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_contract_random_shapes(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 16)))
    na = data.draw(st.integers(1, 3))
    nb = data.draw(st.integers(1, 3))
    shape_a = data.draw(st.lists(st.integers(1, 3), min_size=na, max_size=na))
    shape_b = data.draw(st.lists(st.integers(1, 3), min_size=nb, max_size=nb))
    k = data.draw(st.integers(0, min(na, nb)))
    axes_a = data.draw(st.permutations(range(na)))[:k]
    axes_b = data.draw(st.permutations(range(nb)))[:k]
    for x, y in zip(axes_a, axes_b):
        shape_b[y] = shape_a[x]
    a = random_complex(rng, shape_a)
    b = random_complex(rng, shape_b)
    pairs = list(zip(axes_a, axes_b))
    assert_allclose(contract(a, b, pairs), naive_contract(a, b, pairs), atol=1e-10)


def test_contract_mismatch_raises(rng):
    with pytest.raises(DimensionError):
        contract(random_complex(rng, (2, 3)), random_complex(rng, (2, 3)), [(1, 1), (0, 1)])
    with pytest.raises(DimensionError):
        contract(random_complex(rng, (2, 3)), random_complex(rng, (4, 3)), [(0, 0)])


def test_svd_reconstruction(rng):
    t = random_complex(rng, (6, 4))
    u, s, vh = svd(t, (0,))
    assert_allclose((u * s) @ vh, t, rtol=0, atol=1e-12 * np.linalg.norm(t))
    assert np.all(np.diff(s) <= 0)


def test_svd_phase_convention(rng):
    u, s, vh = svd(random_complex(rng, (5, 3, 2)), (0, 2))
    cols = u.reshape(-1, u.shape[-1])
    piv = cols[np.argmax(np.abs(cols), axis=0), np.arange(cols.shape[1])]
    assert_allclose(piv.imag, 0, atol=1e-14)
    assert np.all(piv.real > 0)


def test_qr_isometry(rng):
    q, r = qr(random_complex(rng, (8, 3)), (0,))
    assert isometry_residual(q) <= 1e-12
    assert_allclose(q @ r, q @ r)


@pytest.mark.parametrize("shape,keep", [((8, 8), 4), ((6, 9), 2), ((5, 5), 5)])
def test_truncated_svd_eckart_young(rng, shape, keep):
    t = random_complex(rng, shape)
    u, s, vh, disc = truncated_svd(t, (0,), keep)
    err = np.linalg.norm(t - (u * s) @ vh) ** 2
    assert_allclose(err, disc, rtol=1e-10, atol=1e-12)


def test_truncated_svd_rejects_zero_keep(rng):
    with pytest.raises(ValueError):
        truncated_svd(random_complex(rng, (3, 3)), (0,), 0)


@pytest.mark.parametrize("shape", [(7, 3), (3, 7), (4, 4)])
def test_thin_factorizations(rng, shape):
    m = random_complex(rng, shape)
    u, s, vh = thin_svd(m)
    assert_allclose((u * s) @ vh, m, atol=1e-12)
    q, r = thin_qr(m)
    assert q.shape[1] == min(shape)
    assert_allclose(q @ r, m, atol=1e-12)
    assert_allclose(q.conj().T @ q, np.eye(q.shape[1]), atol=1e-12)
