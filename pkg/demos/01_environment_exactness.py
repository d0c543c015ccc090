"""
Environment of a nearest-neighbour pair from single-layer contraction.

The environment of the pair (2,1)-(2,2) of a 4x4 PEPS is contracted with
boundary MPS whose virtual and effective physical bonds are capped at
``Dt`` and ``dt``. Once both caps reach the exact sizes, the norm operator
of the pair agrees with the brute-force Gram matrix of the environment;
below that, the error shows how fast the caps converge.

Run: python3 demos/01_environment_exactness.py
"""

import numpy as np

from slpeps import init_random
from slpeps.environment import build_norm_operator, pair_frame
from slpeps.oracle import exact_environment_gram

state = init_random(4, 4, 2, seed=7)
pair = ((2, 1), (2, 2))
reference = exact_environment_gram(state, pair)

print("   Dt   dt   relative Frobenius error")
for cap in (1, 2, 3, 4, 8, 16):
    N = build_norm_operator(pair_frame(state, pair, cap, cap))
    # the contraction works with bare tensors; compare after fitting the scale
    alpha = np.vdot(N, reference) / np.vdot(N, N)
    err = np.linalg.norm(alpha * N - reference) / np.linalg.norm(reference)
    print(f"{cap:5d}{cap:5d}   {err:.3e}")
