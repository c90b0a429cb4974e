"""
Moment estimation, the pseudoinverse mean-variance estimator and exact
population performance metrics.

Everything here is a pure function of its inputs. Arrays stored on the
frozen dataclasses are flagged read-only so instances can be shared
between threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from .errors import (
    DegenerateCovarianceError,
    InsufficientDataError,
    NonPositiveThetaError,
    SchemaError,
    UnsupportedAspectRatioError,
    ValidationError,
    ZeroSignalError,
)

#: |N/T - 1| below this is treated as the interpolation threshold itself.
UNIT_RATIO_WINDOW = 1e-6

_EIG_NEG_TOL = 1e-10


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReturnPanel:
    """T x N matrix of per-period excess returns with labels.

    Parameters
    ----------
    periods : sequence
        Strictly increasing period labels, length T.
    assets : sequence of str
        Unique asset identifiers, length N.
    values : array_like, shape (T, N)
        Excess returns as decimal fractions.
    allow_missing : bool
        Permit NaN entries (used for constructed test assets whose
        history has gaps). Infinite values are always rejected.
    """

    periods: tuple
    assets: tuple
    values: np.ndarray
    allow_missing: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {values.shape}")
        periods = tuple(self.periods)
        assets = tuple(str(a) for a in self.assets)
        T, N = values.shape
        if len(periods) != T:
            raise ValidationError(f"{len(periods)} period labels for {T} rows")
        if len(assets) != N:
            raise ValidationError(f"{len(assets)} asset identifiers for {N} columns")
        if len(set(assets)) != N:
            dup = sorted({a for a in assets if assets.count(a) > 1})
            raise ValidationError(f"duplicate asset identifiers: {dup}")
        for prev, nxt in zip(periods, periods[1:]):
            if not prev < nxt:
                raise ValidationError(f"periods not strictly increasing at {prev!r} -> {nxt!r}")
        if np.isinf(values).any():
            raise ValidationError("values contain infinite entries")
        if not self.allow_missing and np.isnan(values).any():
            raise ValidationError("values contain NaN entries")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "values", _frozen(values))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values, periods=None, assets=None, allow_missing=False):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        T, N = values.shape
        periods = tuple(range(T)) if periods is None else periods
        assets = tuple(f"a{j}" for j in range(N)) if assets is None else assets
        return cls(periods, assets, values, allow_missing)

    def select(self, columns) -> "ReturnPanel":
        """Sub-panel with the given column indices (order preserved)."""
        idx = np.asarray(columns, dtype=int)
        return ReturnPanel(self.periods, [self.assets[i] for i in idx],
                           self.values[:, idx], self.allow_missing)

    def rows(self, start, stop) -> "ReturnPanel":
        return ReturnPanel(self.periods[start:stop], self.assets,
                           self.values[start:stop], self.allow_missing)

    def complete_columns(self, start=0, stop=None) -> np.ndarray:
        """Indices of assets with no missing value in rows ``start:stop``."""
        block = self.values[start:stop]
        return np.flatnonzero(~np.isnan(block).any(axis=0))


@dataclass(frozen=True)
class MomentEstimate:
    """Sample moments and the spectral data the pseudoinverse needs.

    ``eigvals`` always has length N (descending, trailing zeros when
    N >= T). ``eigvecs`` holds one orthonormal column per retained
    eigenvalue: all N of them when N < T, otherwise only the leading
    min(T, N) directions spanned by the data; the discarded directions
    carry exact zero eigenvalues and never enter Σ̂⁺.
    """

    mean: np.ndarray
    cov: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    rank_used: int
    n_obs: int

    @property
    def N(self) -> int:
        return self.mean.shape[0]

    @property
    def aspect_ratio(self) -> float:
        return self.N / self.n_obs


@dataclass(frozen=True)
class Weights:
    """Portfolio weights together with the risk budget they target.

    ``theta_hat`` records the squared-Sharpe estimate used for scaling,
    and ``fallback`` is set when the unnormalized direction was used
    because that estimate was not positive.
    """

    w: np.ndarray
    risk_budget: float = 1.0
    theta_hat: float | None = None
    fallback: bool = False

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if w.ndim != 1:
            raise ValidationError("weights must be a vector")
        if not np.isfinite(w).all():
            raise ValidationError("weights contain non-finite entries")
        if not self.risk_budget > 0:
            raise ValidationError("risk budget must be positive")
        object.__setattr__(self, "w", _frozen(w))

    def __len__(self):
        return self.w.shape[0]


@dataclass(frozen=True)
class PopulationModel:
    """Population mean vector and positive definite covariance."""

    mu: np.ndarray
    sigma_mat: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        S = np.atleast_2d(np.asarray(self.sigma_mat, dtype=float))
        if S.shape != (mu.shape[0], mu.shape[0]):
            raise ValidationError(f"covariance shape {S.shape} does not match mean length {mu.shape[0]}")
        if not (np.isfinite(mu).all() and np.isfinite(S).all()):
            raise ValidationError("population moments must be finite")
        if not np.allclose(S, S.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(S).max())):
            raise ValidationError("covariance must be symmetric")
        S = 0.5 * (S + S.T)
        try:
            chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ValidationError("covariance must be positive definite") from None
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "sigma_mat", _frozen(S))
        object.__setattr__(self, "_chol", _frozen(chol))

    @property
    def N(self) -> int:
        return self.mu.shape[0]

    def solve(self, x) -> np.ndarray:
        """Σ⁻¹x via the stored Cholesky factor."""
        return cho_solve((self._chol, True), np.asarray(x, dtype=float))

    @property
    def theta(self) -> float:
        """Squared clairvoyant Sharpe ratio μᵀΣ⁻¹μ."""
        return float(self.mu @ self.solve(self.mu))


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------


def _values_of(panel) -> np.ndarray:
    values = panel.values if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2:
        raise ValidationError("return data must be a T x N matrix")
    return values


def estimate_moments(panel) -> MomentEstimate:
    """Sample mean, sample covariance (divisor T-1) and its spectrum.

    Parameters
    ----------
    panel : ReturnPanel or array_like, shape (T, N)

    Returns
    -------
    MomentEstimate
        ``rank_used`` is min(T-1, N).

    Raises
    ------
    InsufficientDataError
        If T < 2.
    ValidationError
        If the data contain non-finite values.
    """
    R = _values_of(panel)
    T, N = R.shape
    if T < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {T}")
    if not np.isfinite(R).all():
        raise ValidationError("return data contain non-finite values")

    mean = R.mean(axis=0)
    X = R - mean
    cov = X.T @ X / (T - 1)
    cov = 0.5 * (cov + cov.T)

    if N < T:
        vals, vecs = np.linalg.eigh(cov)
        vals, vecs = vals[::-1], vecs[:, ::-1]
    else:
        # Nonzero spectrum lives in the row space of the centered data, so
        # work with the T x T Gram matrix and map eigenvectors back.
        g, u = np.linalg.eigh(X @ X.T)
        g, u = np.clip(g[::-1], 0.0, None), u[:, ::-1]
        pos = g > g[0] * T * np.finfo(float).eps
        s = np.sqrt(g)
        vecs = np.zeros((N, T))
        vecs[:, pos] = (X.T @ u[:, pos]) / s[pos]
        # null directions of the Gram matrix (always at least the one removed
        # by centering) get orthonormal fill-ins with zero eigenvalue
        for col in np.flatnonzero(~pos):
            j = int(np.argmin(np.einsum("ij,ij->i", vecs, vecs)))  # e_j least covered
            v = -(vecs @ vecs[j])
            v[j] += 1.0
            v -= vecs @ (vecs.T @ v)
            vecs[:, col] = v / np.linalg.norm(v)
        vals = np.zeros(N)
        vals[:T] = np.where(pos, g, 0.0) / (T - 1)

    top = vals[0] if vals.size else 0.0
    if vals.size and vals[-1] < -_EIG_NEG_TOL * max(top, 0.0):
        raise ValidationError(f"covariance has a negative eigenvalue {vals[-1]:.3e}")
    vals = np.clip(vals, 0.0, None)

    return MomentEstimate(
        mean=_frozen(mean),
        cov=_frozen(cov),
        eigvals=_frozen(vals),
        eigvecs=_frozen(vecs),
        rank_used=min(T - 1, N),
        n_obs=T,
    )


def _pinv_factors(m: MomentEstimate):
    """Retained eigenvectors and reciprocal eigenvalues of Σ̂⁺."""
    vals = m.eigvals
    top = vals[0]
    cutoff = top * m.N * np.finfo(float).eps
    k = m.rank_used
    keep = np.flatnonzero(vals[:k] > cutoff)
    # centering roundoff leaves variance of order (eps·|μ̂|)² on constant data
    noise = (16 * m.N * np.finfo(float).eps * float(np.max(np.abs(m.mean)))) ** 2
    if top <= noise or keep.size == 0:
        raise DegenerateCovarianceError("sample covariance is numerically zero")
    return m.eigvecs[:, keep], 1.0 / vals[keep]


def pseudo_inverse(m: MomentEstimate) -> np.ndarray:
    """Σ̂⁺ built from the top ``rank_used`` eigenpairs.

    Eigenvalues below ``τ̂₁ · N · eps`` are skipped even inside the first
    K so rounding noise is not amplified.
    """
    V, inv = _pinv_factors(m)
    P = (V * inv) @ V.T
    return 0.5 * (P + P.T)


def pinv_apply(m: MomentEstimate, x) -> np.ndarray:
    """Σ̂⁺x without forming Σ̂⁺."""
    V, inv = _pinv_factors(m)
    return V @ (inv * (V.T @ np.asarray(x, dtype=float)))


def theta_s(m: MomentEstimate) -> float:
    """In-sample squared Sharpe ratio μ̂ᵀΣ̂⁺μ̂."""
    return float(m.mean @ pinv_apply(m, m.mean))


def estimate_theta_hat(m: MomentEstimate, rho_T: float | None = None,
                       phi_hat: float | None = None, *,
                       allow_unit_ratio: bool = False) -> float:
    """Bias-corrected estimate of the squared clairvoyant Sharpe ratio.

    Below the interpolation threshold ``(1-ρ)θ̂ₛ - ρ``; above it
    ``(φ̂+ρ)²/((φ̂+1)²ρ) · [(ρ-1)θ̂ₛ - 1]`` with ``φ̂ = 0`` when no
    signal-to-noise estimate is supplied.

    Parameters
    ----------
    m : MomentEstimate
    rho_T : float, optional
        N/T; defaults to the ratio implied by ``m``.
    phi_hat : float, optional
        Factor signal-to-noise estimate, used only when ρ > 1.
    allow_unit_ratio : bool
        Evaluate at ρ ≈ 1 instead of raising. Both branches give
        ``-1`` there, so the caller ends up on the fallback path.
    """
    rho = m.aspect_ratio if rho_T is None else float(rho_T)
    if abs(rho - 1.0) < UNIT_RATIO_WINDOW and not allow_unit_ratio:
        raise UnsupportedAspectRatioError(f"N/T = {rho} is within {UNIT_RATIO_WINDOW} of 1")
    ts = theta_s(m)
    if rho < 1.0:
        return (1.0 - rho) * ts - rho
    phi = 0.0 if phi_hat is None else float(phi_hat)
    return (phi + rho) ** 2 / ((phi + 1.0) ** 2 * rho) * ((rho - 1.0) * ts - 1.0)


def estimate_phi_hat(m: MomentEstimate) -> float:
    """Signal-to-noise estimate τ̂₁ / σ̂ε².

    σ̂ε² is the pooled variance (divisor TN - 1) of all entries of the
    centered data after the leading principal component is removed.
    That residual has zero mean and sum of squares
    ``(T-1)(tr Σ̂ - τ̂₁)``, so no data matrix is needed.
    """
    N, T = m.N, m.n_obs
    if N < 2 or T < 3:
        raise InsufficientDataError(f"need N >= 2 and T >= 3, got N={N}, T={T}")
    top = float(m.eigvals[0])
    resid_ss = (T - 1) * float(m.eigvals[1:].sum())
    s2 = resid_ss / (T * N - 1)
    if top <= 0 or s2 <= top * 1e-12:
        raise DegenerateCovarianceError("residual variance after removing the leading factor is zero")
    return top / s2


def pseudoinverse_weights(data, sigma: float = 1.0, phi_hat: float | None = None, *,
                          fallback: bool = False,
                          allow_unit_ratio: bool = False) -> Weights:
    """Pseudoinverse plug-in estimate of the optimal portfolio.

    ``w = σ/√θ̂ · Σ̂⁺μ̂``.

    Parameters
    ----------
    data : ReturnPanel, array_like or MomentEstimate
    sigma : float
        Risk budget.
    phi_hat : float, optional
        Signal-to-noise estimate for the ρ > 1 branch of θ̂.
    fallback : bool
        When θ̂ ≤ 0, return ``σ Σ̂⁺μ̂ / √θ̂ₛ`` (in-sample risk equal to σ)
        flagged with ``fallback=True`` instead of raising.
    allow_unit_ratio : bool
        Forwarded to :func:`estimate_theta_hat`.

    Raises
    ------
    NonPositiveThetaError
        θ̂ ≤ 0 and ``fallback`` is false.
    """
    m = data if isinstance(data, MomentEstimate) else estimate_moments(data)
    if not sigma > 0:
        raise ValidationError("risk budget must be positive")
    direction = pinv_apply(m, m.mean)
    th = estimate_theta_hat(m, phi_hat=phi_hat, allow_unit_ratio=allow_unit_ratio)
    if th > 0:
        return Weights(sigma / math.sqrt(th) * direction, sigma, th)
    if not fallback:
        raise NonPositiveThetaError(f"theta_hat = {th:.6g} is not positive", th)
    ts = float(m.mean @ direction)
    if not ts > 0:
        raise DegenerateCovarianceError("sample mean is orthogonal to the retained eigenspace")
    return Weights(sigma / math.sqrt(ts) * direction, sigma, th, fallback=True)


def ridge_weights(data, lam: float, sigma: float = 1.0) -> Weights:
    """Ridge-regularized estimate ``σ (Σ̂+λI)⁻¹μ̂ / √(μ̂ᵀ(Σ̂+λI)⁻¹μ̂)``."""
    if not lam > 0:
        raise ValidationError("ridge penalty must be positive")
    m = data if isinstance(data, MomentEstimate) else estimate_moments(data)
    A = m.cov + lam * np.eye(m.N)
    d = np.linalg.solve(A, m.mean)
    q = float(m.mean @ d)
    if not q > 0:
        raise ZeroSignalError("sample mean is zero")
    return Weights(sigma / math.sqrt(q) * d, sigma, q)


def optimal_weights(pop: PopulationModel, sigma: float = 1.0) -> Weights:
    """Clairvoyant portfolio ``σ/√θ · Σ⁻¹μ`` with risk exactly σ."""
    d = pop.solve(pop.mu)
    th = float(pop.mu @ d)
    if not th > 0:
        raise ZeroSignalError("population mean is zero")
    return Weights(sigma / math.sqrt(th) * d, sigma, th)


def minvar_weights(m: MomentEstimate) -> Weights:
    """Global minimum-variance weights Σ̂⁺e / (eᵀΣ̂⁺e), summing to one."""
    e = np.ones(m.N)
    d = pinv_apply(m, e)
    norm = float(e @ d)
    if abs(norm) <= np.finfo(float).eps * np.abs(d).sum():
        raise DegenerateCovarianceError("minimum-variance normalizer is zero")
    return Weights(d / norm)


def equal_weights(N: int, sigma_mat=None) -> Weights:
    """The 1/N portfolio. ``sigma_mat`` is accepted and ignored."""
    if N < 1:
        raise ValidationError("need at least one asset")
    return Weights(np.full(N, 1.0 / N))


# ---------------------------------------------------------------------------
# population metrics
# ---------------------------------------------------------------------------


def _w(w) -> np.ndarray:
    return w.w if isinstance(w, Weights) else np.asarray(w, dtype=float)


def oos_sharpe(w, pop: PopulationModel) -> float:
    """Out-of-sample Sharpe ratio wᵀμ / √(wᵀΣw)."""
    w = _w(w)
    var = float(w @ pop.sigma_mat @ w)
    if not var > 0:
        raise DegenerateCovarianceError("portfolio has zero risk")
    return float(w @ pop.mu) / math.sqrt(var)


def oos_loss(w, pop: PopulationModel, sigma: float = 1.0) -> float:
    """Prediction loss (w - w*)ᵀ(Σ + μμᵀ)(w - w*) against the optimum."""
    d = _w(w) - optimal_weights(pop, sigma).w
    return max(float(d @ pop.sigma_mat @ d) + float(d @ pop.mu) ** 2, 0.0)


@dataclass(frozen=True)
class EigenPortfolio:
    eigenvalue: float
    sharpe: float
    loading: float


def eigen_portfolio_decomposition(pop: PopulationModel) -> list[EigenPortfolio]:
    """Split θ over the principal components of Σ.

    Entry i carries τᵢ, the Sharpe ratio υᵢᵀμ/√τᵢ of the i-th eigen
    portfolio, and the loading SRᵢ/√τᵢ of υᵢ in Σ⁻¹μ. Sorted by
    decreasing eigenvalue; the eigenvector sign makes SRᵢ ≥ 0.
    """
    vals, vecs = np.linalg.eigh(pop.sigma_mat)
    order = np.argsort(vals)[::-1]
    out = []
    for i in order:
        v = vecs[:, i]
        proj = float(v @ pop.mu)
        sr = abs(proj) / math.sqrt(vals[i])
        out.append(EigenPortfolio(float(vals[i]), sr, sr / math.sqrt(vals[i])))
    return out


def eigen_portfolio_vectors(pop: PopulationModel):
    """Eigenvalues, sign-aligned eigenvectors and per-direction Sharpe ratios."""
    vals, vecs = np.linalg.eigh(pop.sigma_mat)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    proj = vecs.T @ pop.mu
    vecs = vecs * np.where(proj < 0, -1.0, 1.0)
    return vals, vecs, np.abs(proj) / np.sqrt(vals)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _parse_label(s):
    try:
        return int(s)
    except ValueError:
        return s


def read_return_panel(path, delimiter: str = ",", allow_missing: bool = False) -> ReturnPanel:
    """Load a panel: header ``period,<asset ids...>``, one row per period.

    Empty cells (and ``NA``/``nan``) are read as missing when
    ``allow_missing`` is set.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if len(header) < 2:
            raise SchemaError(f"{path}: header needs a period column and at least one asset column")
        assets = [h.strip() for h in header[1:]]
        seen = set()
        for j, a in enumerate(assets, start=2):
            if not a:
                raise SchemaError(f"{path}: header column {j} has an empty asset identifier")
            if a in seen:
                raise SchemaError(f"{path}: header column {j} repeats asset identifier {a!r}")
            seen.add(a)
        periods, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            periods.append(_parse_label(row[0].strip()))
            vals = []
            for j, c in enumerate(row[1:]):
                c = c.strip()
                if c == "" or c.lower() in ("na", "nan"):
                    if not allow_missing:
                        raise SchemaError(f"{path}: line {lineno} column {assets[j]!r} is missing")
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(c))
                except ValueError:
                    raise SchemaError(f"{path}: line {lineno} column {assets[j]!r}: cannot parse {c!r}") from None
            rows.append(vals)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    if len({type(p) for p in periods}) > 1:
        periods = [str(p) for p in periods]
    return ReturnPanel(periods, assets, np.array(rows), allow_missing)


def write_return_panel(panel: ReturnPanel, path, delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["period", *panel.assets])
        for p, row in zip(panel.periods, panel.values):
            w.writerow([p, *("" if np.isnan(x) else repr(float(x)) for x in row)])
