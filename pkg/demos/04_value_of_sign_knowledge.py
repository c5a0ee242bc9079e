"""How much does knowing the noise signs reduce the estimation error?

For an AR(1) model of the SD process the MSE with and without sign
knowledge has a closed form.  Their ratio r lies in (1 - beta^2, 1]: it is
1 for white SD fluctuations and falls as the SD process becomes more
persistent.  A Kalman-filter simulation checks one point of the curve.
"""

import numpy as np

from trine.kernels import BETA
from trine.theory import TheoryParams, kalman_empirical_mse, mse_report, r_curve

for family in ("gaussian", "laplacian", "bernoulli"):
    base = TheoryParams(a=0.0, gamma2=1.0, mu=0.0, beta=BETA[family], sigma2=1.0)
    rows = r_curve(base, [0.0, 0.5, 0.9, 0.99, 0.999])
    curve = "  ".join(f"r({row['a']:g})={row['r']:.3f}" for row in rows)
    print(f"{family:9s} floor {1 - BETA[family] ** 2:.3f}: {curve}")

p = TheoryParams(a=0.9, gamma2=1.0, mu=1.0, sigma2=4.0)
rep = mse_report(p)
emp = kalman_empirical_mse(p, horizon=100_000, replicates=20, rng=np.random.default_rng(0))
print(f"\na=0.9, mu=1, sigma=2: MSE without signs {rep.mse1:.4f}, with signs {rep.mse2:.4f} "
      f"(Kalman simulation {emp:.4f}), r = {rep.r:.3f}")
