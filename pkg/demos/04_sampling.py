"""
Energy by Metropolis sampling of PEPS amplitudes.

Amplitudes <mu|Psi> are single-layer contractions with every physical
index fixed, so sampling avoids the double layer. A 4x4 D=2 state is
evolved from Neel with the Sz-conserving environment split; the chain then
moves by exchanging antiparallel neighbours, staying in the Sz=0 sector.
The sampled energy is compared with the double-layer expectation value.

Run: python3 demos/04_sampling.py   (about a minute)
"""

from slpeps import Heisenberg, Phase, TrotterSchedule, init_neel, run_evolution
from slpeps.observables import expect_energy_dl, metropolis_energy

model = Heisenberg()
sched = TrotterSchedule([Phase(0.05, 30, 2, 4, 4)], anneal_threshold=None)
state, _ = run_evolution(init_neel(4, 4), model, sched, split="svd-split", energy_every=30)

e_dl, _ = expect_energy_dl(state, model, 64, with_norm=False)
print(f"double layer          E = {e_dl:.4f}")
for samples in (5000, 20000, 80000):
    e, err, acc = metropolis_energy(state, model, samples, 1000, seed=1)
    print(f"{samples:6d} samples      E = {e:.4f} +- {err:.4f}   "
          f"({abs(e - e_dl) / err:.1f} std-errors, acceptance {acc:.2f})")
