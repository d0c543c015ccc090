import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from slpeps.errors import ContractViolation, DegenerateStateError, DimensionError
from slpeps.mps import (
    Mps,
    compress_bonds,
    equilibrate,
    from_dense,
    isometry_residuals,
    merge_external,
    norm_sq,
    to_dense,
    truncate_physical,
)

from conftest import random_complex


def random_mps(rng, n, d, D):
    sites = []
    for j in range(n):
        l = 1 if j == 0 else D
        r = 1 if j == n - 1 else D
        sites.append(random_complex(rng, (l, r, d)))
    return Mps(sites)


def fidelity(a, b):
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


def test_norm_matches_dense(rng):
    phi = random_mps(rng, 5, 2, 3)
    vec = to_dense(phi)
    assert_allclose(norm_sq(phi), np.vdot(vec, vec).real, rtol=1e-12)
    assert norm_sq(phi) > 0


def test_open_bonds_must_be_one(rng):
    with pytest.raises(DimensionError):
        Mps([random_complex(rng, (2, 1, 2))])
    with pytest.raises(DimensionError):
        Mps([random_complex(rng, (1, 2, 2)), random_complex(rng, (3, 1, 2))])


def test_merge_external_matches_row_contraction(rng):
    def row(up, down):
        return [random_complex(rng, (2, 1 if j == 0 else 2, 1 if j == 2 else 2, up, down))
                for j in range(3)]

    top, bot = row(1, 2), row(2, 1)
    merged = merge_external(top, bot)
    vec = to_dense(merged).reshape(2, 2, 1, 2, 2, 1, 2, 2, 1)[:, :, 0, :, :, 0, :, :, 0]
    t = [x[:, :, :, 0, :] for x in top]  # s l r d
    b = [x[:, :, :, :, 0] for x in bot]  # s l r u
    top_vec = np.einsum("sad,tabe,ubf->studef", t[0][:, 0], t[1], t[2][:, :, 0])
    bot_vec = np.einsum("sad,tabe,ubf->studef", b[0][:, 0], b[1], b[2][:, :, 0])
    full = np.einsum("abcxyz,defxyz->abcdef", top_vec, bot_vec)
    assert_allclose(vec.transpose(0, 2, 4, 1, 3, 5), full, atol=1e-12)


def test_merge_external_bond_mismatch(rng):
    top = [random_complex(rng, (2, 1, 1, 1, 2))]
    bot = [random_complex(rng, (2, 1, 1, 3, 1))]
    with pytest.raises(DimensionError):
        merge_external(top, bot)


@pytest.mark.parametrize("mode", ["svd", "variational"])
def test_compress_exact_at_sufficient_bond(rng, mode):
    phi = random_mps(rng, 5, 2, 3)
    out, fid = compress_bonds(phi, 4, mode=mode)
    assert_allclose(fid, 1.0, atol=1e-12)
    a, b = to_dense(out), to_dense(phi)
    assert_allclose(1 - fidelity(a, b), 0, atol=1e-12)


def test_compress_ghz_to_product():
    vec = np.zeros(2 ** 5, dtype=complex)
    vec[0] = vec[-1] = 1 / np.sqrt(2)
    _, fid = compress_bonds(from_dense(vec, [(2,)] * 5), 1)
    assert_allclose(fid, 0.5, atol=1e-10)


def test_variational_not_worse_than_svd(rng):
    phi = random_mps(rng, 6, 2, 8)
    _, f_svd = compress_bonds(phi, 4, mode="svd")
    out, f_var = compress_bonds(phi, 4, mode="variational")
    assert f_var >= f_svd - 1e-12
    assert_allclose(f_var, fidelity(to_dense(out), to_dense(phi)), rtol=1e-10)
    assert max(out.bonds) <= 4


def test_compress_zero_state_raises():
    phi = Mps([np.zeros((1, 1, 2), dtype=complex)])
    with pytest.raises(DegenerateStateError):
        compress_bonds(phi, 1)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2 ** 16))
def test_equilibrated_form_isometries(n, D, seed):
    rng = np.random.default_rng(seed)
    phi = random_mps(rng, n, 2, D)
    eq = equilibrate(phi)
    assert max(isometry_residuals(eq)) <= 1e-10
    assert_allclose(1 - fidelity(to_dense(eq), to_dense(phi)), 0, atol=1e-12)
    for w in eq.weights:
        assert np.all(np.diff(w) <= 1e-12)


def test_truncate_physical_global_fidelity(rng):
    sites = [random_complex(rng, (1 if j == 0 else 3, 1 if j == 3 else 3, 4)) for j in range(4)]
    phi = Mps(sites)
    eq = equilibrate(phi)
    new, iso, disc = truncate_physical(eq, 1, 2)
    assert new.sites[1].shape[2] == 2
    # projecting back with the isometry is the truncated state in the original space
    back = np.tensordot(new.sites[1], iso.conj(), axes=(2, 1))
    full = list(new.sites)
    full[1] = back
    ref, approx = to_dense(phi), to_dense(Mps(full))
    # the kept weight equals the discarded-complement of the centre singular values
    assert_allclose(np.vdot(approx, approx).real, norm_sq(phi) - disc, rtol=1e-10)
    assert_allclose(fidelity(approx, ref), 1 - disc / norm_sq(phi), rtol=1e-10)


def test_truncate_physical_needs_equilibrated(rng):
    phi = random_mps(rng, 3, 4, 2)
    with pytest.raises(ContractViolation):
        truncate_physical(phi, 0, 2)
