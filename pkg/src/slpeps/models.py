"""Nearest-neighbour spin models on open square lattices (Pauli convention)."""

from dataclasses import dataclass

import numpy as np

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def lattice_bonds(m, n):
    """All nearest-neighbour pairs, horizontal first, each in row-major order."""
    horiz = [((i, j), (i, j + 1)) for i in range(m) for j in range(n - 1)]
    vert = [((i, j), (i + 1, j)) for i in range(m - 1) for j in range(n)]
    return horiz + vert


@dataclass(frozen=True)
class Heisenberg:
    """
    ``H = J sum_<ij> (X_i X_j + Y_i Y_j + Z_i Z_j)`` with Pauli matrices.

    Basis label 0 is spin up (``Z = +1``), label 1 spin down.
    """

    coupling: float = 1.0

    d = 2

    def pair_hamiltonian(self):
        """Bond term as a ``(t, t', s, s')`` tensor."""
        h = self.coupling * (np.kron(SX, SX) + np.kron(SY, SY) + np.kron(SZ, SZ))
        return h.reshape(2, 2, 2, 2)

    def pair_matrix(self):
        return self.pair_hamiltonian().reshape(4, 4)

    def gate(self, dtau):
        """``exp(-dtau h)`` for one bond, from the eigendecomposition of ``h``."""
        w, v = np.linalg.eigh(self.pair_matrix())
        g = (v * np.exp(-dtau * w)) @ v.conj().T
        return g.reshape(2, 2, 2, 2)
