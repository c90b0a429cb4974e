"""
Back out a clairvoyant Sharpe-ratio curve θ(N) from an observed
out-of-sample Sharpe-vs-N curve by inverting the single-factor limit.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import asymptotics as asy
from .errors import SchemaError, ValidationError

MAX_ITER = 2000
TOL = 1e-10


@dataclass(frozen=True)
class ThetaCurveModel:
    """√θ(N) = √θ₁ e^{-λ(N-1)} + √θ̄ (1 - e^{-λ(N-1)}).

    Attributes
    ----------
    sqrt_theta1 : float
        Sharpe ratio of a single asset.
    sqrt_theta_bar : float
        Upper bound approached as N grows.
    lambda_speed : float
        Exponential rate per added asset.
    """

    sqrt_theta1: float
    sqrt_theta_bar: float
    lambda_speed: float

    def __post_init__(self):
        vals = (self.sqrt_theta1, self.sqrt_theta_bar, self.lambda_speed)
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValidationError("curve parameters must be finite and positive")
        if self.sqrt_theta_bar < self.sqrt_theta1:
            raise ValidationError("sqrt_theta_bar must be >= sqrt_theta1")


def theta_curve(model: ThetaCurveModel, N):
    """√θ(N) for scalar or array N ≥ 1."""
    N = np.asarray(N, dtype=float)
    if (N < 1).any():
        raise ValidationError("N must be >= 1")
    decay = np.exp(-model.lambda_speed * (N - 1.0))
    out = model.sqrt_theta1 * decay + model.sqrt_theta_bar * (1.0 - decay)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CalibrationFit:
    """Best-found curve and its residuals.

    ``points`` holds ``(N, observed SR, fitted SR)`` sorted by N, in the
    caller's unit. ``sse`` is the unweighted residual sum of squares in
    that unit.
    """

    model: ThetaCurveModel
    sse: float
    points: tuple
    converged: bool
    unit: str = "period"
    grid_best: float = float("nan")


def _unpack(p):
    s1 = math.exp(p[0])
    return s1, s1 + math.exp(p[1]), math.exp(p[2])


def _fitted_sr(s1, sbar, lam, Ns, rhos, phis):
    decay = np.exp(-lam * (Ns - 1.0))
    st = s1 * decay + sbar * (1.0 - decay)
    return np.array([asy.sr_limit_factor(asy.LimitInputs(s * s, r, f))
                     for s, r, f in zip(st, rhos, phis)])


def fit_theta_curve(observed: Sequence, T: int, phi_tilde: float | Mapping[int, float] = 0.0,
                    sigma: float = 1.0, *, unit: str = "period", periods_per_year: int = 12,
                    standard_errors: Sequence[float] | None = None) -> CalibrationFit:
    """Least-squares fit of the curve parameters to observed Sharpe ratios.

    Parameters
    ----------
    observed : sequence of (N, SR)
        Observed out-of-sample Sharpe ratios per number of assets.
    T : int
        Estimation window; ρ = N/T.
    phi_tilde : float or mapping N -> float
        Factor signal-to-noise, shared or per N.
    sigma : float
        Risk budget. Sharpe ratios do not depend on it.
    unit : {"period", "annual"}
        Unit of the observed Sharpe ratios. Annual values are divided by
        √periods_per_year before fitting and the fitted √θ parameters are
        reported back in the same unit.
    standard_errors : sequence of float, optional
        When given, residuals are divided by these in the objective.

    Returns
    -------
    CalibrationFit
        ``converged`` is False when the refinement exhausted its budget.

    Notes
    -----
    Parameters are searched in (log √θ₁, log(√θ̄ - √θ₁), log λ): a coarse
    8x8x8 grid scaled to the observed Sharpe ratios, then Nelder-Mead
    from the best grid point. Points with N = T are dropped with a warning.
    """
    if unit not in ("period", "annual"):
        raise ValidationError(f"unknown unit {unit!r}")
    if periods_per_year < 1:
        raise ValidationError("periods_per_year must be >= 1")
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    pts = [(int(n), float(s)) for n, s in observed]
    if standard_errors is not None:
        if len(standard_errors) != len(pts):
            raise ValidationError("need one standard error per point")
        ses = [float(e) for e in standard_errors]
        if not all(e > 0 for e in ses):
            raise ValidationError("standard errors must be positive")
    else:
        ses = [1.0] * len(pts)
    rows = [(n, s, e) for (n, s), e in zip(pts, ses)]
    dropped = [r for r in rows if abs(r[0] / T - 1) < asy.RHO_WINDOW]
    if dropped:
        warnings.warn(f"dropping {len(dropped)} point(s) with N = T", RuntimeWarning, stacklevel=2)
        rows = [r for r in rows if r not in dropped]
    if len(rows) < 4:
        raise ValidationError(f"need at least 4 usable points, got {len(rows)}")
    if any(n < 1 for n, _, _ in rows) or not all(math.isfinite(s) for _, s, _ in rows):
        raise ValidationError("N must be >= 1 and Sharpe ratios finite")
    rows.sort()

    scale = math.sqrt(periods_per_year) if unit == "annual" else 1.0
    Ns = np.array([r[0] for r in rows], dtype=float)
    obs = np.array([r[1] for r in rows]) / scale
    wts = 1.0 / (np.array([r[2] for r in rows]) / scale)
    rhos = Ns / T
    if isinstance(phi_tilde, Mapping):
        try:
            phis = np.array([float(phi_tilde[int(n)]) for n in Ns])
        except KeyError as exc:
            raise ValidationError(f"no phi_tilde for N={exc.args[0]}") from None
    else:
        phis = np.full(Ns.size, float(phi_tilde))

    def objective(p):
        if not np.all(np.abs(p) < 50):
            return math.inf
        try:
            fit = _fitted_sr(*_unpack(p), Ns, rhos, phis)
        except ValidationError:
            return math.inf
        val = float(np.sum((wts * (obs - fit)) ** 2))
        return val if math.isfinite(val) else math.inf

    top = max(float(np.max(np.abs(obs))), 1e-3)
    grid = itertools.product(np.log(top * np.geomspace(0.05, 3.0, 8)),
                             np.log(top * np.geomspace(0.01, 10.0, 8)),
                             np.log(np.geomspace(1e-4, 1.0, 8)))
    best_p, best_f = None, math.inf
    for p in grid:
        f = objective(np.array(p))
        if f < best_f:
            best_p, best_f = np.array(p), f
    if best_p is None:
        raise ValidationError("objective is undefined on the whole search grid")

    res = minimize(objective, best_p, method="Nelder-Mead",
                   options=dict(maxiter=MAX_ITER, maxfev=4 * MAX_ITER, xatol=TOL, fatol=TOL))
    p, converged = (res.x, bool(res.success)) if res.fun <= best_f else (best_p, False)
    s1, sbar, lam = _unpack(p)
    fitted = _fitted_sr(s1, sbar, lam, Ns, rhos, phis) * scale
    observed_out = obs * scale
    model = ThetaCurveModel(s1 * scale, sbar * scale, lam)
    points = tuple((int(n), float(o), float(f)) for n, o, f in zip(Ns, observed_out, fitted))
    sse = float(sum((o - f) ** 2 for _, o, f in points))
    return CalibrationFit(model, sse, points, converged, unit, best_f)


def read_sharpe_curve(path, delimiter: str = ","):
    """Read ``N,SR[,SE]`` rows. Returns (points, standard errors or None)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = [h.strip() for h in next(reader, [])]
        if header not in (["N", "SR"], ["N", "SR", "SE"]):
            bad = next((h for h, w in zip(header, ("N", "SR", "SE")) if h != w), None)
            raise SchemaError(f"{path}: header must be N,SR[,SE]; offending column {bad!r}"
                              if bad is not None else f"{path}: header must be N,SR[,SE], got {header}")
        pts, ses = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                pts.append((int(row[0]), float(row[1])))
                if len(header) == 3:
                    ses.append(float(row[2]))
            except ValueError:
                raise SchemaError(f"{path}: line {lineno}: cannot parse {row}") from None
    return pts, (ses if len(header) == 3 else None)


FIT_COLUMNS = ("N", "observed_sr", "fitted_sr", "sqrt_theta")


def fit_table(fit: CalibrationFit) -> list[dict]:
    return [dict(N=n, observed_sr=o, fitted_sr=f, sqrt_theta=theta_curve(fit.model, n))
            for n, o, f in fit.points]
