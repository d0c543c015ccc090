"""
Two ways of cutting the ring-shaped pair environment.

The environment around a pair closes into a ring; the single-layer update
needs it as a product of a left and a right piece. ``self-contraction``
sums the left piece over the ring index, ``svd-split`` instead keeps the
Gram matrix of each piece exactly (staged SVD). This demo measures, on a
random 3x4 state, how far each update is from the best rank-2 truncation
(alternating least squares in the exact environment), and then shows a
side effect of the plain sum: it does not respect the conservation of the
total Sz, so an evolution started in the Sz=0 sector leaks out of it.

Run: python3 demos/03_split_and_symmetry.py
"""

import numpy as np

from slpeps import Heisenberg, Phase, TrotterSchedule, init_neel, init_random, run_evolution
from slpeps.evolution import _oriented, als_update_pair, slte_update_pair
from slpeps.peps import TwoSiteGate
from slpeps.oracle import apply_two_site, exact_environment_gram, peps_to_dense

model = Heisenberg()


def fidelity(a, b):
    return abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real)


state = init_random(3, 4, 2, seed=5)
vec = peps_to_dense(state)
print("bond            best    self-contraction   svd-split")
for sites in (((0, 0), (0, 1)), ((1, 1), (1, 2)), ((0, 2), (1, 2)), ((2, 1), (2, 2))):
    gate = TwoSiteGate(model.gate(0.1), sites)
    exact = apply_two_site(vec, 3, 4, gate.tensor, sites)
    so, g, _ = _oriented(state, gate)
    best, _ = als_update_pair(state, gate, 2, norm_operator=exact_environment_gram(so, g.sites))
    row = [fidelity(peps_to_dense(best), exact)]
    for split in ("self-contraction", "svd-split"):
        new, _ = slte_update_pair(state, gate, 2, 16, 16, split)
        row.append(fidelity(peps_to_dense(new), exact))
    print(f"{str(sites):14s} {row[0]:.5f}   {row[1]:.5f}            {row[2]:.5f}")

counts = np.array([bin(k).count("1") for k in range(2 ** 12)])
print("\nweight outside Sz=0 after 20 steps from Neel, 3x4, D=2:")
for split in ("self-contraction", "svd-split"):
    sched = TrotterSchedule([Phase(0.05, 20, 2, 4, 4)], anneal_threshold=None)
    st, _ = run_evolution(init_neel(3, 4), model, sched, split=split, energy_every=20)
    v = peps_to_dense(st)
    v = v / np.linalg.norm(v)
    print(f"   {split:17s} {np.sum(np.abs(v[counts != 6]) ** 2):.2e}")
