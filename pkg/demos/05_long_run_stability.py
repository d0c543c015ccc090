"""
A long single-layer run on a 6x6 lattice.

The evolution keeps every site tensor at unit norm and carries the overall
scale as a logarithm, so nothing overflows however long it runs. Starting
from a random D=2 state, the energy drops and then stays on a plateau.
The acceptance suite runs 20000 steps of 0.001; this shorter version uses
a larger step.

Run: python3 demos/05_long_run_stability.py   (a few minutes)
"""

from slpeps import Heisenberg, Phase, TrotterSchedule, init_random, run_evolution

model = Heisenberg()
sched = TrotterSchedule([Phase(0.01, 800, 2, 4, 4)], anneal_threshold=None)


def show(rec, state):
    print(f"step {rec.step:5d}  tau {rec.tau:5.2f}  E = {rec.energy:9.4f}  "
          f"E/site = {rec.energy / 36:8.5f}  log scale {rec.scale_exponent:8.2f}", flush=True)


run_evolution(init_random(6, 6, 2, seed=1), model, sched, observers=(show,), energy_every=100)
