"""
Brute-force references at desk scale: dense state vectors, exact
environments and exact diagonalization.

Dense vectors index sites in row-major order with site ``(0, 0)`` as the
most significant digit; label 0 is spin up.
"""

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import CapacityError, TopologyError
from .models import lattice_bonds

MAX_DENSE_SITES = 16
MAX_DENSE_ENTRIES = 2 ** 26


def _row_tensor(row):
    """Contract one PEPS row horizontally: axes (s_0..s_{n-1}, u_0.., d_0..)."""
    t = row[0][:, 0]  # s, r, u, d
    n = len(row)
    t = np.moveaxis(t, 1, -1)  # s u d r
    for j in range(1, n):
        a = row[j]  # s l r u d
        t = np.tensordot(t, a, axes=(t.ndim - 1, 1))  # ... s r u d
        t = np.moveaxis(t, t.ndim - 3, -1)
    t = t[..., 0]
    # axes now: (s0,u0,d0, s1,u1,d1, ...)
    perm = [3 * j for j in range(n)] + [3 * j + 1 for j in range(n)] + [3 * j + 2 for j in range(n)]
    return np.transpose(t, perm)


def dense_from_tensors(tensors, max_sites=MAX_DENSE_SITES):
    """Contract a grid of ``(s, l, r, u, d)`` tensors with open bonds to a vector."""
    m, n = len(tensors), len(tensors[0])
    if m * n > max_sites:
        raise CapacityError(f"{m}x{n} lattice exceeds the dense cap of {max_sites} sites")
    psi = np.ones((1,) + (1,) * n, dtype=complex)
    for i in range(m):
        rt = _row_tensor(tensors[i])
        size = psi.shape[0] * int(np.prod(rt.shape[:n])) * int(np.prod(rt.shape[2 * n:]))
        if size > MAX_DENSE_ENTRIES:
            raise CapacityError(f"dense contraction of row {i} needs {size} entries")
        psi = np.tensordot(psi, rt, axes=(list(range(1, n + 1)), list(range(n, 2 * n))))
        psi = psi.reshape((-1,) + psi.shape[1 + n:])
    return psi.reshape(-1)


def peps_to_dense(state, max_sites=MAX_DENSE_SITES, physical=True):
    """
    State vector of ``state``. With ``physical`` the stored ``log_scale`` is
    applied, otherwise the bare tensor network is returned.
    """
    vec = dense_from_tensors(state.tensors, max_sites)
    if physical and state.log_scale != 0.0:
        vec = vec * np.exp(state.log_scale)
    return vec


def apply_two_site(vec, m, n, gate, sites, d=2):
    """Apply a ``(t, t', s, s')`` operator to two sites of a dense vector."""
    (i0, j0), (i1, j1) = sites
    a, b = i0 * n + j0, i1 * n + j1
    psi = vec.reshape((d,) * (m * n))
    psi = np.tensordot(gate, psi, axes=([2, 3], [a, b]))
    psi = np.moveaxis(psi, [0, 1], [a, b])
    return psi.reshape(-1)


def dense_energy(vec, m, n, model):
    """``<psi|H|psi> / <psi|psi>`` for a dense vector."""
    h = model.pair_hamiltonian()
    hv = np.zeros_like(vec)
    for bond in lattice_bonds(m, n):
        hv += apply_two_site(vec, m, n, h, bond, model.d)
    return float(np.real(np.vdot(vec, hv)) / np.real(np.vdot(vec, vec)))


def _pair_cut(state, pair):
    (i, j), (i1, j1) = pair
    if i1 != i or j1 != j + 1:
        raise TopologyError(f"{pair} is not a left-to-right horizontal pair")
    a, b = state[i, j], state[i, j1]
    _, la, c, ua, da = a.shape
    _, _, rb, ub, db = b.shape
    # site mu exposes (l, u, d) as its physical index, site mu' exposes (u', d', r)
    da_ = np.zeros((la, ua, da, la, 1, ua, da), dtype=complex)
    for x in np.ndindex(la, ua, da):
        da_[x + (x[0], 0, x[1], x[2])] = 1
    db_ = np.zeros((ub, db, rb, 1, rb, ub, db), dtype=complex)
    for x in np.ndindex(ub, db, rb):
        db_[x + (0, x[2], x[0], x[1])] = 1
    rows = [list(r) for r in state.tensors]
    rows[i][j] = da_.reshape(la * ua * da, la, 1, ua, da)
    rows[i][j1] = db_.reshape(ub * db * rb, 1, rb, ub, db)
    return rows, (la, ua, da), (ub, db, rb)


def environment_matrix(state, pair, max_sites=MAX_DENSE_SITES):
    """
    Environment states as a matrix ``E[s_E, (l, u, u', d, d', r)]`` for a
    horizontal pair, computed by brute force (bare tensors, no log-scale).
    """
    (i, j), _ = pair
    rows, (la, ua, da), (ub, db, rb) = _pair_cut(state, pair)
    m, n = state.m, state.n
    vec = dense_from_tensors(rows, max_sites)
    dims = [rows[x][y].shape[0] for x in range(m) for y in range(n)]
    psi = vec.reshape(dims)
    k = i * n + j
    psi = np.moveaxis(psi, [k, k + 1], [-2, -1])
    env = psi.reshape(-1, la, ua, da, ub, db, rb)
    env = np.transpose(env, (0, 1, 2, 4, 3, 5, 6))  # l u u' d d' r
    return env.reshape(env.shape[0], -1)


def exact_environment_gram(state, pair, max_sites=MAX_DENSE_SITES):
    """
    ``N[i, j] = <psi^E_i | psi^E_j>`` with multi-index ``(l, u, u', d, d', r)``.

    Vertical pairs are handled on the transposed lattice, where the same
    multi-index refers to the mirrored bonds.
    """
    pair = tuple(sorted(pair))
    (i, j), (i1, j1) = pair
    if j1 == j and i1 == i + 1:
        return exact_environment_gram(state.transpose(), ((j, i), (j1, i1)), max_sites)
    env = environment_matrix(state, pair, max_sites)
    return env.conj().T @ env


# --- exact diagonalization -----------------------------------------------------


def _basis(nsites, sector):
    if sector == "full":
        return np.arange(2 ** nsites, dtype=np.int64)
    if sector == "sz0":
        if nsites % 2:
            raise ValueError("the Sz=0 sector needs an even number of sites")
        states = np.arange(2 ** nsites, dtype=np.int64)
        pop = np.zeros_like(states)
        for b in range(nsites):
            pop += (states >> b) & 1
        return states[pop == nsites // 2]
    raise ValueError(f"unknown sector {sector!r}")


def heisenberg_sparse(m, n, coupling=1.0, sector="full"):
    """
    Sparse Pauli-convention Heisenberg Hamiltonian on the open ``m x n`` lattice.

    Bit ``nsites - 1 - k`` of a basis integer holds site ``k`` (row-major),
    1 meaning spin down, so basis order matches the dense vectors.
    """
    nsites = m * n
    basis = _basis(nsites, sector)
    dim = basis.shape[0]
    diag = np.zeros(dim)
    rows, cols, vals = [], [], []
    idx = np.arange(dim)
    for (a, b) in lattice_bonds(m, n):
        ka = nsites - 1 - (a[0] * n + a[1])
        kb = nsites - 1 - (b[0] * n + b[1])
        ba = (basis >> ka) & 1
        bb = (basis >> kb) & 1
        anti = ba != bb
        diag += np.where(anti, -1.0, 1.0) * coupling
        flipped = basis[anti] ^ ((1 << ka) | (1 << kb))
        target = np.searchsorted(basis, flipped)
        rows.append(target)
        cols.append(idx[anti])
        vals.append(np.full(target.shape, 2.0 * coupling))
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    h = scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return h, basis


def ed_ground(model, m, n, sector="sz0", tol=1e-10):
    """
    Ground energy and vector of the Heisenberg model.

    Returns
    -------
    e0 : float
    vec : ndarray
        Ground vector embedded in the full ``2**(m n)`` space.
    """
    nsites = m * n
    cap = 16 if sector == "full" else 20
    if nsites > cap:
        raise CapacityError(f"{nsites} sites exceed the ED cap of {cap} for sector {sector}")
    h, basis = heisenberg_sparse(m, n, model.coupling, sector)
    dim = h.shape[0]
    if dim <= 400:
        w, v = np.linalg.eigh(h.toarray())
        e0, g = w[0], v[:, 0]
    else:
        rng = np.random.default_rng(0)
        w, v = scipy.sparse.linalg.eigsh(h, k=1, which="SA", tol=tol, v0=rng.standard_normal(dim))
        e0, g = w[0], v[:, 0]
    full = np.zeros(2 ** nsites, dtype=complex)
    full[basis] = g
    return float(e0), full


def trotter_evolve(vec, m, n, model, dt, steps, groups):
    """
    Dense reference of the Trotter product: ``groups`` is a sequence of
    ``(orientation, parity, fraction)`` applied in order per step, with
    orientation ``"h"``/``"v"`` and parity selecting bonds that start at
    even/odd columns (rows).
    """
    cache = {}
    for _ in range(steps):
        for orient, parity, frac in groups:
            if frac not in cache:
                cache[frac] = model.gate(frac * dt)
            g = cache[frac]
            if orient == "h":
                pairs = [((i, j), (i, j + 1)) for i in range(m) for j in range(parity, n - 1, 2)]
            else:
                pairs = [((i, j), (i + 1, j)) for j in range(n) for i in range(parity, m - 1, 2)]
            for pair in pairs:
                vec = apply_two_site(vec, m, n, g, pair, model.d)
        vec = vec / np.linalg.norm(vec)
    return vec
