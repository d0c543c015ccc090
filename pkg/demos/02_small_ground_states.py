"""
Ground states of small Heisenberg clusters by imaginary time evolution.

A Neel product state is evolved with second-order Trotter gates; each
pair update truncates the bond back to D using the single-layer
environment. The double-layer energy is compared with exact
diagonalisation.

* the open 1x6 chain: loop free, so the split environment is exact and
  the result is limited only by D and the Trotter step;
* the 2x2 plaquette at D=2: the loop makes D=2 too small to hold the
  singlet ground state exactly, the energy settles near -7.2 (ED: -8);
* the 4x4 lattice, annealed from D=2 to D=3 with Dt = dt = D.

Run: python3 demos/02_small_ground_states.py   (about a minute)
"""

from slpeps import Heisenberg, Phase, TrotterSchedule, init_neel, run_evolution
from slpeps.oracle import ed_ground

model = Heisenberg()

cases = [
    ("1x6 chain, D=4", (1, 6), [Phase(0.05, 200, 4, 8, 8), Phase(0.01, 200, 4, 8, 8)]),
    ("2x2 plaquette, D=2", (2, 2), [Phase(0.05, 400, 2, 4, 4), Phase(0.01, 400, 2, 4, 4)]),
    ("4x4 lattice, D=2->3", (4, 4), [Phase(0.05, 100, 2, 2, 2), Phase(0.05, 100, 3, 3, 3),
                                     Phase(0.01, 200, 3, 3, 3)]),
]

for name, (m, n), phases in cases:
    e0, _ = ed_ground(model, m, n)
    sched = TrotterSchedule(phases, anneal_threshold=None)
    _, traj = run_evolution(init_neel(m, n), model, sched, energy_every=100)
    print(f"{name}")
    for rec in traj.records:
        print(f"   tau {rec.tau:6.2f}   E = {rec.energy:10.5f}")
    e = traj.records[-1].energy
    print(f"   exact {e0:.5f}, relative error {abs(e - e0) / abs(e0):.2e}\n")
