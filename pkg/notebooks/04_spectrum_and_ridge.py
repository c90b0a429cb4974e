"""
Sample spectrum and the ridge alternative
=========================================

Compare a simulated sample spectrum with the Marchenko-Pastur law, then
trace the limiting ridge Sharpe ratio as the penalty varies on both sides
of the interpolation threshold.
"""

# %%
import numpy as np

from pinvport import asymptotics as asy
from pinvport.asymptotics import RidgeInputs, SpectralMeasure
from pinvport.core import estimate_moments

rng = np.random.default_rng(0)
T, N = 250, 1000
m = estimate_moments(rng.standard_normal((T, N)))
nonzero = m.eigvals[: m.rank_used]
lo, hi = asy.mp_support(N / T)
print(f"sample range [{nonzero.min():.3f}, {nonzero.max():.3f}]  vs  MP support [{lo:.3f}, {hi:.3f}]")
print(f"zero mass {1 - m.rank_used / N:.3f}  vs  {asy.mp_zero_mass(N / T):.3f}")

# %% Histogram against the continuous part of the law, both normalized by N.
edges = np.linspace(lo, hi, 11)
counts, _ = np.histogram(nonzero, edges)
mid = 0.5 * (edges[1:] + edges[:-1])
for x, c, d in zip(mid, counts / (N * np.diff(edges)), asy.mp_density(mid, N / T)):
    print(f"{x:6.3f}  empirical {c:6.3f}  limit {d:6.3f}")

# %% Ridge limits: below the threshold a tiny penalty recovers the
# pseudoinverse; above it the penalty matters.
d = SpectralMeasure.point(1.0)
for rho in (0.5, 2.0):
    for lam in (1e-3, 0.1, 0.5, 2.0, 10.0):
        r = asy.ridge_limits(RidgeInputs(d, d, lam, rho, 4.0, 4.0))
        print(f"rho={rho}  lambda={lam:<6g} SR {r.sr:.4f}  loss {r.loss:.4f}")
