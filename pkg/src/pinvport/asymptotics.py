"""
Closed-form high-dimensional limits of the pseudoinverse portfolio,
Marčenko–Pastur spectral quantities and the ridge-regularized limits.

Units: ``theta_tilde`` is a per-period squared Sharpe ratio, ``sigma``
the per-period risk budget. Losses scale with ``sigma**2``; Sharpe
ratios do not depend on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import SolverError, UnsupportedAspectRatioError, ValidationError

RHO_WINDOW = 1e-6
THETA_MIN, THETA_MAX = 1e-8, 1e8


@dataclass(frozen=True)
class LimitInputs:
    """Parameters indexing every closed-form limit.

    Attributes
    ----------
    theta_tilde : float
        Limit of the squared clairvoyant Sharpe ratio.
    phi_tilde : float
        Factor signal-to-noise ratio (0 for the factorless model).
    rho : float
        Limit of N/T, excluding a 1e-6 window around 1.
    sigma : float
        Risk budget.
    """

    theta_tilde: float
    rho: float
    phi_tilde: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("theta_tilde", "rho", "phi_tilde", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if not THETA_MIN < self.theta_tilde < THETA_MAX:
            raise ValidationError(f"theta_tilde={self.theta_tilde} outside ({THETA_MIN}, {THETA_MAX})")
        if self.phi_tilde < 0:
            raise ValidationError("phi_tilde must be non-negative")
        if not self.rho > 0:
            raise ValidationError("rho must be positive")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if abs(self.rho - 1.0) < RHO_WINDOW:
            raise UnsupportedAspectRatioError(f"rho={self.rho} is within {RHO_WINDOW} of 1")


def sr_limit_factorless(inp: LimitInputs) -> float:
    """Limiting out-of-sample Sharpe ratio with Σ = I."""
    th, rho = inp.theta_tilde, inp.rho
    if rho < 1:
        return math.sqrt((1 - rho) / (th + rho)) * th
    return math.sqrt((rho - 1) / (th + rho)) * th / rho


def loss_limit_factorless(inp: LimitInputs) -> float:
    """Limiting prediction loss with Σ = I."""
    th, rho, s2 = inp.theta_tilde, inp.rho, inp.sigma**2
    if rho < 1:
        g = 1 - rho
        return s2 * ((th + rho) / (g**3 * th) + th / g**2 - 2 * (th + 1) / g + th + 1)
    g = rho - 1
    return s2 * ((th + rho) / (g**3 * th) + th / (rho**2 * g**2)
                 - 2 * (th + 1) / (rho * g) + th + 1)


def sr_limit_factor(inp: LimitInputs) -> float:
    """Limiting Sharpe ratio under the single-factor model.

    Below the threshold the factor drops out and the factorless value
    is returned.
    """
    th, rho, phi = inp.theta_tilde, inp.rho, inp.phi_tilde
    if rho < 1:
        return sr_limit_factorless(inp)
    k = (rho + phi) / (phi + 1)
    den = k**4 + th * rho * k**2 + th * phi**2 * (rho - 1) ** 2 / (phi + 1) ** 2
    return th * math.sqrt(rho * (rho - 1)) / math.sqrt(den)


def loss_limit_factor(inp: LimitInputs) -> float:
    """Limiting prediction loss under the single-factor model."""
    th, rho, phi, s2 = inp.theta_tilde, inp.rho, inp.phi_tilde, inp.sigma**2
    if rho < 1:
        return loss_limit_factorless(inp)
    a, b, g = phi + 1, phi + rho, rho - 1
    return s2 * (
        a**4 * rho**2 * th / (b**4 * g**2)
        + a**2 * phi**2 * rho / (b**4 * g)
        + a**2 * rho**2 / (b**2 * g**3)
        + rho / (th * g**3)
        - 2 * a**2 * rho * (th + 1) / (b**2 * g)
        + 1 + th
    )


def mean_sd_limit(inp: LimitInputs) -> tuple[float, float]:
    """Limits of the mean and standard deviation of the OOS return."""
    th, rho, phi, s = inp.theta_tilde, inp.rho, inp.phi_tilde, inp.sigma
    scale = s / math.sqrt(th)
    if rho < 1:
        g = 1 - rho
        return scale * th / g, scale * math.sqrt((th + rho) / g**3)
    a, b, g = phi + 1, phi + rho, rho - 1
    mean = scale * th * rho * a**2 / (g * b**2)
    var = (rho * th * phi**2 * a**2 / (g * b**4)
           + rho**2 * th * a**2 / (g**3 * b**2)
           + rho / g**3)
    return mean, scale * math.sqrt(var)


def theta_schedule(N) -> float | np.ndarray:
    """Illustrative clairvoyant curve θ(N) = 1 + 15(1 - e^{-0.05N})."""
    N = np.asarray(N, dtype=float)
    if (N < 0).any():
        raise ValidationError("N must be non-negative")
    out = 1.0 + 15.0 * (1.0 - np.exp(-0.05 * N))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# grid helpers
# ---------------------------------------------------------------------------

LIMIT_COLUMNS = ("theta", "phi", "rho", "sigma", "sr", "loss", "mean", "sd")


def limit_row(theta, rho, phi=0.0, sigma=1.0, factorless=False) -> dict:
    inp = LimitInputs(theta, rho, phi, sigma)
    if factorless:
        sr, loss = sr_limit_factorless(inp), loss_limit_factorless(inp)
    else:
        sr, loss = sr_limit_factor(inp), loss_limit_factor(inp)
    mean, sd = mean_sd_limit(inp)
    return dict(theta=theta, phi=phi, rho=rho, sigma=sigma, sr=sr, loss=loss, mean=mean, sd=sd)


def limit_grid(thetas: Iterable[float], rhos: Iterable[float], phis: Iterable[float] = (0.0,),
               sigma: float = 1.0, factorless: bool = False) -> list[dict]:
    """Evaluate all limits over the Cartesian (θ̃, φ̃, ρ) grid."""
    return [limit_row(th, rho, phi, sigma, factorless)
            for th in thetas for phi in phis for rho in rhos]


def double_ascent_curve(T: int, N_values: Sequence[int], phis: Iterable[float] = (0.0, 0.05, 1.0, 10.0, 100.0),
                        sigma: float = 1.0) -> list[dict]:
    """Limits along N with θ̃ = theta_schedule(N) and ρ = N/T.

    Points with N/T inside the excluded window around 1 are skipped.
    """
    rows = []
    for phi in phis:
        for N in N_values:
            rho = N / T
            if abs(rho - 1) < RHO_WINDOW:
                continue
            row = limit_row(theta_schedule(N), rho, phi, sigma)
            row["N"] = N
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Marčenko–Pastur
# ---------------------------------------------------------------------------


def mp_support(rho: float) -> tuple[float, float]:
    """Edges of the nonzero bulk, ((1-√ρ)², (1+√ρ)²)."""
    if not rho > 0:
        raise ValidationError("rho must be positive")
    r = math.sqrt(rho)
    return (1 - r) ** 2, (1 + r) ** 2


def mp_zero_mass(rho: float) -> float:
    """Point mass at zero, 1 - 1/ρ when ρ > 1."""
    if not rho > 0:
        raise ValidationError("rho must be positive")
    return max(0.0, 1.0 - 1.0 / rho)


def mp_density(x, rho: float):
    """Continuous part of the MP law for identity population covariance.

    Integrates to ``min(1, 1/ρ)``; the remaining mass sits at zero
    (see :func:`mp_zero_mass`).
    """
    a, b = mp_support(rho)
    x = np.asarray(x, dtype=float)
    inside = (x > a) & (x < b) & (x > 0)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2 * math.pi * rho * xi)
    return float(out) if out.ndim == 0 else out


def smallest_nonzero_eig_limit(rho: float, spike: tuple[float, float, float] | None = None,
                               sigma_eps2: float = 1.0) -> float:
    """Limit of the smallest nonzero sample eigenvalue, σε²(1-√ρ)².

    ``spike = (σf², ‖b‖², σε²)`` describes a single-factor covariance;
    one bounded-rank spike leaves the lower bulk edge where it is, so
    only its idiosyncratic variance is used.
    """
    if not rho > 0 or abs(rho - 1) < RHO_WINDOW:
        raise ValidationError("rho must be positive and away from 1")
    if spike is not None:
        sigma_eps2 = spike[2]
    return sigma_eps2 * (math.sqrt(rho) - 1) ** 2


# ---------------------------------------------------------------------------
# ridge-regularized limits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralMeasure:
    """Discrete probability measure on (0, ∞)."""

    locations: tuple
    weights: tuple

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if loc.shape != w.shape or loc.size == 0:
            raise ValidationError("need matching, non-empty locations and weights")
        if (loc <= 0).any() or (w < 0).any():
            raise ValidationError("locations must be positive and weights non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
        order = np.argsort(loc, kind="stable")
        object.__setattr__(self, "locations", tuple(loc[order]))
        object.__setattr__(self, "weights", tuple(w[order]))

    @classmethod
    def point(cls, tau: float = 1.0) -> "SpectralMeasure":
        return cls((tau,), (1.0,))

    @classmethod
    def from_samples(cls, values) -> "SpectralMeasure":
        vals, counts = np.unique(np.asarray(values, dtype=float), return_counts=True)
        w = counts / counts.sum()
        w[-1] = 1.0 - w[:-1].sum()
        return cls(vals, w)

    @property
    def arrays(self):
        return np.asarray(self.locations), np.asarray(self.weights)

    def mean(self) -> float:
        t, p = self.arrays
        return float(t @ p)


@dataclass(frozen=True)
class RidgeInputs:
    H: SpectralMeasure
    G: SpectralMeasure
    lam: float
    rho: float
    xi2: float
    theta_tilde: float
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("lam", "rho", "xi2", "theta_tilde", "sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and positive, got {v}")


def _mp_rhs(m, tau, p, rho, lam):
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.sum(p / (tau * (1 - rho + rho * lam * m) + lam)))


def mp_stieltjes(H: SpectralMeasure, rho: float, lam: float, *, tol: float = 1e-12,
                 max_iter: int = 10_000, damping: float = 0.5) -> float:
    """m(-λ): Stieltjes transform of the limiting sample spectrum at z = -λ.

    Solves ``m = ∫ dH(τ) / (τ(1 - ρ - ρzm) - z)`` at ``z = -λ`` by the
    damped iteration ``m ← (1-η)m + η·rhs(m)`` from ``m₀ = 1/(λ + E_H τ)``.
    If the iteration stalls (possible for ρ > 1 and tiny λ) the unique
    root is bracketed and polished with Brent's method in the variable
    u = 1 - ρ + λρm. There the m-residual is limited by roundoff to
    roughly eps·ρ/λ, so the 1e-12 target is only reachable for λ ≳ 1e-3.

    Raises
    ------
    SolverError
        If the residual cannot be pushed below ``tol``.
    """
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    if not rho > 0:
        raise ValidationError("rho must be positive")
    tau, p = H.arrays
    m = 1.0 / (lam + H.mean())
    for _ in range(max_iter):
        rhs = _mp_rhs(m, tau, p, rho, lam)
        if not math.isfinite(rhs) or rhs <= 0:
            break
        if abs(rhs - m) <= tol * max(1.0, abs(m)):
            m = rhs
            break
        m = (1 - damping) * m + damping * rhs
    if _residual(m, tau, p, rho, lam) <= tol * max(1.0, abs(m)):
        return m

    # Polish in u = 1 - ρ + ρλm, where the equation reads
    # g(u) = u - 1 + ρ - ρλ Σ p/(τu + λ) and g is increasing on u > -λ/max τ.
    # Working in u avoids the cancellation in 1 - ρ + ρλm when ρ > 1 and
    # λ is small.
    g = lambda u: u - 1 + rho - rho * lam * float(np.sum(p / (tau * u + lam)))
    u_lo = -lam / tau.max()
    step = max(abs(u_lo), lam) * 1e-3
    lo = u_lo + step
    k = 0
    while g(lo) >= 0 and k < 200:
        step *= 0.5
        lo = u_lo + step
        k += 1
    try:
        u = brentq(g, lo, 1.0, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    except ValueError as exc:
        raise SolverError(f"could not bracket m(-lambda): {exc}") from None
    m = (u + rho - 1) / (rho * lam)
    if not (math.isfinite(m) and m > 0):
        raise SolverError(f"m(-lambda) = {m!r} is not a positive number")
    # For ρ > 1 and λ -> 0 the residual in m cannot fall below about
    # eps·ρ/λ relative to m; the root in u is still correctly rounded.
    return m


def _residual(m, tau, p, rho, lam):
    rhs = _mp_rhs(m, tau, p, rho, lam)
    return abs(m - rhs) if math.isfinite(rhs) else math.inf


def mp_stieltjes_residual(m: float, H: SpectralMeasure, rho: float, lam: float) -> float:
    """|m - rhs(m)| / max(1, |m|) for the self-consistency equation at z = -λ."""
    tau, p = H.arrays
    return _residual(m, tau, p, rho, lam) / max(1.0, abs(m))


def mp_stieltjes_derivative(m: float, H: SpectralMeasure, rho: float, lam: float) -> float:
    """dm/dz at z = -λ by implicit differentiation of the fixed point."""
    tau, p = H.arrays
    z = -lam
    D = tau * (1 - rho - rho * z * m) - z
    num = np.sum(p * (rho * tau * m + 1) / D**2)
    den = 1 - rho * z * np.sum(p * tau / D**2)
    return float(num / den)


def mp_m1(m: float, H: SpectralMeasure, rho: float, lam: float) -> float:
    tau, p = H.arrays
    z = -lam
    a = 1 - rho - rho * z * m
    D = tau * a - z
    num = np.sum(p * tau**2 * a / D**2)
    den = 1 - rho * np.sum(p * z * tau / D**2)
    return float(num / den)


@dataclass(frozen=True)
class RidgeLimits:
    m: float
    dm: float
    m1: float
    Theta1: float
    Theta2: float
    Phi1: float
    Phi2: float
    sr: float
    loss: float
    residual: float


def ridge_limits(inp: RidgeInputs) -> RidgeLimits:
    """Limiting Sharpe ratio and prediction loss of the ridge estimator.

    Θ₁, Θ₂ are the limits of tr((Σ̂+λ)⁻¹Σ)/N and
    tr((Σ̂+λ)⁻¹Σ(Σ̂+λ)⁻¹Σ)/N; Φ₁, Φ₂ those of μᵀ(Σ̂+λ)⁻¹μ and
    μᵀ(Σ̂+λ)⁻¹Σ(Σ̂+λ)⁻¹μ. Φ₁ uses the deterministic equivalent
    (λ + (1-ρ+ρλm)Σ)⁻¹, the same one that appears in Φ₂.
    """
    H, G, lam, rho = inp.H, inp.G, inp.lam, inp.rho
    m = mp_stieltjes(H, rho, lam)
    dm = mp_stieltjes_derivative(m, H, rho, lam)
    m1 = mp_m1(m, H, rho, lam)
    a = 1 - rho + rho * lam * m
    theta1 = (1 - lam * m) / (1 - rho * (1 - lam * m))
    theta2 = (1 - lam * m) / a**3 - lam * (m - lam * dm) / a**4
    tg, pg = G.arrays
    phi1 = inp.xi2 * float(np.sum(pg / (lam + a * tg)))
    phi2 = inp.xi2 * (1 + rho * m1) * float(np.sum(pg * tg / (lam + a * tg) ** 2))
    sr = phi1 / math.sqrt(phi2 + rho * theta2)
    th = inp.theta_tilde
    q = phi1 + rho * theta1
    loss = inp.sigma**2 * ((phi1**2 + phi2 + rho * theta2) / q
                           - 2 * phi1 * (1 + th) / (math.sqrt(q) * math.sqrt(th))
                           + 1 + th)
    return RidgeLimits(m, dm, m1, theta1, theta2, phi1, phi2, sr, loss,
                       mp_stieltjes_residual(m, H, rho, lam))
