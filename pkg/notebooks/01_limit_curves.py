"""
Limiting Sharpe ratio across the aspect ratio
=============================================

Evaluate the closed-form out-of-sample Sharpe ratio and prediction loss of
the pseudoinverse portfolio as N/T sweeps through the interpolation
threshold, with and without a common factor.
"""

# %%
import numpy as np

from pinvport import asymptotics as asy
from pinvport.asymptotics import LimitInputs

theta = 4.0
rhos = np.r_[np.linspace(0.05, 0.95, 10), np.linspace(1.1, 10, 12)]

# %% Factorless model: the curve dips towards zero at rho = 1 and recovers
# slowly above it.
print(f"{'rho':>6} {'SR':>8} {'loss':>8}")
for rho in rhos:
    inp = LimitInputs(theta, rho)
    print(f"{rho:6.2f} {asy.sr_limit_factorless(inp):8.4f} {asy.loss_limit_factorless(inp):8.4f}")

# %% A strong factor lifts the right branch: the second ascent.
for phi in (0.0, 1.0, 10.0, 100.0):
    sr = [asy.sr_limit_factor(LimitInputs(theta, rho, phi)) for rho in rhos]
    print(f"phi={phi:6.1f}  " + " ".join(f"{v:5.2f}" for v in sr))

# %% The same curve at fixed T with the theta(N) schedule, as the CLI emits it.
rows = asy.double_ascent_curve(100, [10, 30, 60, 90, 110, 150, 300, 600], phis=(100.0,))
for r in rows:
    print({k: round(v, 4) if isinstance(v, float) else v for k, v in r.items()})
