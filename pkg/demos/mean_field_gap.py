"""Why the variational posterior of a single Poisson cell misses the exact mean.

For a ~ Poisson(pi * lam) with Gamma priors the exact posterior couples pi
and lam; the factorized family q(pi) q(lam) cannot, so CAVI converges to a
different fixed point. With a = 3 and all hyperparameters 0.3 that point is
x^2 with x = (-0.3 + sqrt(0.09 + 4 * 3.3)) / 2.

    python3 demos/mean_field_gap.py
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import single_cell_posterior_mean  # noqa: E402
from topic_exposure.estimators import pf_fit  # noqa: E402

hyper = (0.3, 0.3, 0.3, 0.3)
for a in (0, 1, 3, 10, 50):
    vi = float(pf_fit([[a]], K=1, hyper=hyper, max_iters=5000, tol=1e-15).expected_rates()[0, 0])
    exact = single_cell_posterior_mean(a, hyper)
    print(f"a={a:3d}  variational {vi:9.5f}  exact {exact:9.5f}  gap {vi - exact:+.5f}")

x = (-0.3 + math.sqrt(0.09 + 4 * 3.3)) / 2
print(f"closed-form fixed point for a=3: {x * x:.6f}")
