"""
Characteristic-sorted test assets and the rolling-window out-of-sample
evaluation of the pseudoinverse, minimum-variance and 1/N portfolios.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ReturnPanel,
    Weights,
    estimate_moments,
    estimate_phi_hat,
    minvar_weights,
    pseudoinverse_weights,
    read_return_panel,
    theta_s,
)
from .errors import (
    DegenerateCovarianceError,
    InsufficientDataError,
    NonPositiveThetaError,
    SchemaError,
    ValidationError,
)


@dataclass(frozen=True)
class CharacteristicPanel:
    """Stock-level inputs for building sorted portfolios.

    Missing entries are NaN. ``characteristics`` maps a characteristic
    name to a T x S array observed at the same dates as ``returns``.
    """

    periods: tuple
    stocks: tuple
    returns: np.ndarray
    characteristics: Mapping[str, np.ndarray]
    ranking_weights: np.ndarray
    market: np.ndarray | None = None

    def __post_init__(self):
        R = np.asarray(self.returns, dtype=float)
        T, S = R.shape
        if len(self.periods) != T or len(self.stocks) != S:
            raise ValidationError("labels do not match the return matrix")
        W = np.asarray(self.ranking_weights, dtype=float)
        if W.shape != (T, S):
            raise ValidationError(f"ranking weights have shape {W.shape}, expected {(T, S)}")
        chars = {}
        for k, v in self.characteristics.items():
            v = np.asarray(v, dtype=float)
            if v.shape != (T, S):
                raise ValidationError(f"characteristic {k!r} has shape {v.shape}, expected {(T, S)}")
            chars[str(k)] = v
        if self.market is not None:
            mk = np.asarray(self.market, dtype=float)
            if mk.shape != (T,):
                raise ValidationError("market series must have one value per period")
            object.__setattr__(self, "market", mk)
        object.__setattr__(self, "periods", tuple(self.periods))
        object.__setattr__(self, "stocks", tuple(self.stocks))
        object.__setattr__(self, "returns", R)
        object.__setattr__(self, "ranking_weights", W)
        object.__setattr__(self, "characteristics", chars)


def build_sorted_portfolios(panel: CharacteristicPanel, top_M: int, groups: int = 10) -> ReturnPanel:
    """Equal-weighted characteristic-sorted portfolios.

    Each period, per characteristic: keep the ``top_M`` stocks by
    ranking weight, drop those missing the characteristic or the
    return, sort ascending and split into ``groups`` consecutive groups
    (remainder to the earliest groups). Periods with fewer than
    ``groups`` eligible stocks leave that characteristic's assets NaN.

    Asset identifiers are ``"<characteristic>_g<k>"`` with k = 1..groups.
    """
    if groups < 2:
        raise ValidationError("need at least 2 groups")
    if top_M < groups:
        raise ValidationError("top_M must be at least the number of groups")
    R, W = panel.returns, panel.ranking_weights
    T = R.shape[0]
    names = list(panel.characteristics)
    out = np.full((T, len(names) * groups), np.nan)
    for t in range(T):
        w = W[t]
        ok = np.flatnonzero(np.isfinite(w))
        if ok.size > top_M:
            # ties broken by column order
            order = np.argsort(-w[ok], kind="stable")
            ok = ok[order[:top_M]]
        for c, name in enumerate(names):
            x = panel.characteristics[name][t]
            elig = ok[np.isfinite(x[ok]) & np.isfinite(R[t, ok])]
            if elig.size < groups:
                continue
            ranked = elig[np.argsort(x[elig], kind="stable")]
            for g, members in enumerate(np.array_split(ranked, groups)):
                out[t, c * groups + g] = R[t, members].mean()
    assets = [f"{name}_g{g + 1}" for name in names for g in range(groups)]
    return ReturnPanel(panel.periods, assets, out, allow_missing=True)


@dataclass(frozen=True)
class BacktestConfig:
    """Rolling-window protocol settings.

    ``insample`` selects how the in-sample Sharpe ratio is measured:
    ``"window"`` averages √(μ̂ᵀΣ̂⁺μ̂) over the training windows,
    ``"full"`` uses the moments of the whole sample.
    """

    window: int = 120
    N_list: tuple = (10,)
    sigma: float = 0.03
    gamma: float = 3.0
    reps: int = 100
    seed: int = 0
    periods_per_year: int = 12
    insample: str = "window"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        if self.window < 2:
            raise ValidationError("window must be >= 2")
        if self.reps < 1:
            raise ValidationError("reps must be >= 1")
        if any(n < 1 for n in self.N_list):
            raise ValidationError("every N must be >= 1")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if self.periods_per_year < 1:
            raise ValidationError("periods_per_year must be >= 1")
        if self.insample not in ("window", "full"):
            raise ValidationError(f"unknown in-sample mode {self.insample!r}")

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_COLUMNS = ("N", "sr", "cer", "avg", "std", "capm_alpha", "minvar_sr", "minvar_cer",
                  "ew_sr", "ew_cer", "insample_sr", "sd_sr", "sd_minvar_sr", "sd_ew_sr",
                  "fallback_count", "degenerate_count", "reps", "market_proxy", "annualized")


@dataclass(frozen=True)
class MetricsRow:
    """Replication-averaged metrics for one N (per period unless annualized).

    ``avg``, ``std`` and ``capm_alpha`` are means over replications;
    each strategy's Sharpe ratio and CER are formed from its averaged
    mean and standard deviation, so ``sr = avg/std`` and
    ``cer = avg - γ/2·std²`` hold exactly. The ``sd_*`` columns are the
    standard deviations across replications of the per-replication
    Sharpe ratios.
    """

    N: int
    sr: float
    cer: float
    avg: float
    std: float
    capm_alpha: float
    minvar_sr: float
    minvar_cer: float
    ew_sr: float
    ew_cer: float
    insample_sr: float
    sd_sr: float = float("nan")
    sd_minvar_sr: float = float("nan")
    sd_ew_sr: float = float("nan")
    fallback_count: int = 0
    degenerate_count: int = 0
    reps: int = 1
    market_proxy: bool = False
    annualized: bool = False
    per_rep_sr: np.ndarray = field(default=None, repr=False, compare=False)
    per_rep_ew_sr: np.ndarray = field(default=None, repr=False, compare=False)


def annualize(row: MetricsRow, periods_per_year: int = 12) -> MetricsRow:
    """Scale Sharpe ratios and SDs by √k, means, CERs and alpha by k."""
    if periods_per_year < 1:
        raise ValidationError("periods_per_year must be >= 1")
    if row.annualized:
        raise ValidationError("row is already annualized")
    k = float(periods_per_year)
    rk = math.sqrt(k)
    scale = lambda a: None if a is None else a * rk
    return replace(
        row,
        sr=row.sr * rk, minvar_sr=row.minvar_sr * rk, ew_sr=row.ew_sr * rk,
        insample_sr=row.insample_sr * rk, sd_sr=row.sd_sr * rk,
        sd_minvar_sr=row.sd_minvar_sr * rk, sd_ew_sr=row.sd_ew_sr * rk,
        std=row.std * rk, avg=row.avg * k, cer=row.cer * k,
        minvar_cer=row.minvar_cer * k, ew_cer=row.ew_cer * k,
        capm_alpha=row.capm_alpha * k, annualized=True,
        per_rep_sr=scale(row.per_rep_sr), per_rep_ew_sr=scale(row.per_rep_ew_sr),
    )


def _series_stats(r: np.ndarray):
    avg = float(r.mean())
    std = float(r.std())  # divisor n
    if std <= 16 * np.finfo(float).eps * abs(avg):
        std = 0.0  # constant series up to roundoff
    return avg, std, (avg / std if std > 0 else float("nan"))


def _capm_alpha(r: np.ndarray, market: np.ndarray) -> float:
    X = np.column_stack([np.ones_like(market), market])
    coef, *_ = np.linalg.lstsq(X, r, rcond=None)
    return float(coef[0])


def _selection_rng(seed: int, N: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(N, rep)))


def _pinv_weights(m, window: int, sigma: float):
    """Pseudoinverse weights with the window's θ̂ branch; returns (w, in-sample SR, fallback)."""
    N = m.N
    phi = estimate_phi_hat(m) if N > window and N >= 2 and window >= 3 else None
    w = pseudoinverse_weights(m, sigma, phi, fallback=True, allow_unit_ratio=True)
    return w.w, math.sqrt(max(theta_s(m), 0.0)), w.fallback


@dataclass(frozen=True)
class RollingPath:
    """Out-of-sample paths of one fixed selection.

    Row i of ``weights`` is the pseudoinverse portfolio held at date
    ``window + i``; it is zero where the training window was degenerate.
    """

    pinv: np.ndarray
    minvar: np.ndarray
    ew: np.ndarray
    weights: np.ndarray
    insample: np.ndarray
    fallback_count: int
    degenerate_count: int


def rolling_path(X: np.ndarray, window: int, sigma: float = 1.0) -> RollingPath:
    """Evaluate the three strategies on a T x N block of complete returns.

    Weights at date h are fit on rows h-window .. h-1 and applied to row h.
    """
    X = np.asarray(X, dtype=float)
    T, N = X.shape
    L = window
    if T <= L:
        raise InsufficientDataError(f"need more than {L} periods, got {T}")
    n_out = T - L
    r_pinv = np.zeros(n_out)
    r_mv = np.zeros(n_out)
    W = np.zeros((n_out, N))
    ins = np.full(n_out, np.nan)
    n_fb = n_deg = 0
    for i, h in enumerate(range(L, T)):
        m = estimate_moments(X[h - L:h])
        try:
            W[i], ins[i], fb = _pinv_weights(m, L, sigma)
            n_fb += fb
            r_pinv[i] = X[h] @ W[i]
        except (DegenerateCovarianceError, NonPositiveThetaError, InsufficientDataError):
            n_deg += 1
        try:
            r_mv[i] = X[h] @ minvar_weights(m).w
        except DegenerateCovarianceError:
            pass
    return RollingPath(r_pinv, r_mv, X[L:].mean(axis=1), W, ins, n_fb, n_deg)


def _run_rep(values: np.ndarray, universe: np.ndarray, market: np.ndarray, N: int, rep: int,
             cfg: BacktestConfig):
    rng = _selection_rng(cfg.seed, N, rep)
    sel = np.sort(rng.choice(universe, size=N, replace=False))
    X = values[:, sel]
    path = rolling_path(X, cfg.window, cfg.sigma)

    stats = {}
    for tag, r in (("", path.pinv), ("minvar_", path.minvar), ("ew_", path.ew)):
        avg, std, sr = _series_stats(r)
        stats.update({tag + "avg": avg, tag + "std": std, tag + "sr": sr})
    alpha = _capm_alpha(path.pinv, market[cfg.window:])
    if cfg.insample == "full":
        try:
            insample = math.sqrt(max(theta_s(estimate_moments(X)), 0.0))
        except DegenerateCovarianceError:
            insample = float("nan")
    else:
        ins = path.insample
        insample = float(np.nanmean(ins)) if np.isfinite(ins).any() else float("nan")
    return dict(stats, capm_alpha=alpha, insample_sr=insample, fallback=path.fallback_count,
                degenerate=path.degenerate_count)


def rolling_backtest(assets: ReturnPanel, cfg: BacktestConfig, market=None) -> list[MetricsRow]:
    """Rolling out-of-sample evaluation for each N in ``cfg.N_list``.

    Per replication N assets are drawn once and held for every
    investment date h; weights at h use rows h-window .. h-1 only.
    Assets with any missing value are excluded from the selection
    universe. When ``market`` is None the equal-weighted average of
    all usable assets serves as the CAPM market proxy.

    Returns
    -------
    list of MetricsRow
        One row per N with per-period metrics averaged over replications.
    """
    values = assets.values
    T = values.shape[0]
    if T <= cfg.window:
        raise InsufficientDataError(f"need more than {cfg.window} periods, got {T}")
    universe = assets.complete_columns()
    if universe.size == 0:
        raise ValidationError("no asset has a complete history")
    proxy = market is None
    if proxy:
        market = values[:, universe].mean(axis=1)
    market = np.asarray(market, dtype=float)
    if market.shape != (T,):
        raise ValidationError("market series must have one value per period")

    rows = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for N in cfg.N_list:
            if N > universe.size:
                raise ValidationError(f"N={N} exceeds the {universe.size} usable assets")
            fn = lambda r: _run_rep(values, universe, market, N, r, cfg)
            reps = list(pool.map(fn, range(cfg.reps))) if pool else [fn(r) for r in range(cfg.reps)]
            rows.append(_aggregate(N, reps, cfg.gamma, proxy))
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def _aggregate(N: int, reps: list[dict], gamma: float, proxy: bool) -> MetricsRow:
    # avg and std are replication means; sr and cer follow from them so the
    # row identities hold exactly, while sd_* use the per-replication ratios
    col = lambda k: np.array([r[k] for r in reps], dtype=float)
    mean = lambda k: float(np.mean(col(k)))
    sd = lambda k: float(np.std(col(k), ddof=1)) if len(reps) > 1 else float("nan")

    def ratio(tag):
        avg, std = mean(tag + "avg"), mean(tag + "std")
        return (avg / std if std > 0 else float("nan")), avg - 0.5 * gamma * std**2

    sr, cer = ratio("")
    mv_sr, mv_cer = ratio("minvar_")
    ew_sr, ew_cer = ratio("ew_")
    return MetricsRow(
        N=N, sr=sr, cer=cer, avg=mean("avg"), std=mean("std"), capm_alpha=mean("capm_alpha"),
        minvar_sr=mv_sr, minvar_cer=mv_cer, ew_sr=ew_sr, ew_cer=ew_cer,
        insample_sr=float(np.nanmean(col("insample_sr"))) if np.isfinite(col("insample_sr")).any()
        else float("nan"),
        sd_sr=sd("sr"), sd_minvar_sr=sd("minvar_sr"), sd_ew_sr=sd("ew_sr"),
        fallback_count=int(col("fallback").sum()), degenerate_count=int(col("degenerate").sum()),
        reps=len(reps), market_proxy=proxy, per_rep_sr=col("sr"), per_rep_ew_sr=col("ew_sr"),
    )


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_metrics_table(rows: Sequence[MetricsRow], path, delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def metrics_as_dicts(rows: Sequence[MetricsRow]) -> list[dict]:
    return [{c: getattr(r, c) for c in METRIC_COLUMNS} for r in rows]


def _read_long(path, columns: Sequence[str], delimiter=","):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = [h.strip() for h in next(reader, [])]
        if len(header) != len(columns):
            raise SchemaError(f"{path}: expected {len(columns)} columns {list(columns)}, got {header}")
        for j, (got, want) in enumerate(zip(header, columns), start=1):
            if got != want:
                raise SchemaError(f"{path}: header column {j} is {got!r}, expected {want!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise SchemaError(f"{path}: line {lineno} has {len(row)} fields, expected {len(columns)}")
            yield lineno, [c.strip() for c in row]


def _parse_value(path, lineno, s):
    if s == "" or s.lower() in ("na", "nan"):
        return np.nan
    try:
        return float(s)
    except ValueError:
        raise SchemaError(f"{path}: line {lineno}: cannot parse {s!r}") from None


def load_characteristic_panel(returns_path, characteristics_path, weights_path,
                              market_path=None, delimiter=",") -> CharacteristicPanel:
    """Assemble a :class:`CharacteristicPanel` from delimited files.

    ``returns_path`` uses the return-panel layout (missing cells allowed);
    ``characteristics_path`` has columns ``period,stock,characteristic,value``;
    ``weights_path`` has ``period,stock,weight``; the optional
    ``market_path`` has ``period,market``.
    """
    rp = read_return_panel(returns_path, delimiter, allow_missing=True)
    key = lambda p: str(p)
    t_index = {key(p): i for i, p in enumerate(rp.periods)}
    s_index = {s: j for j, s in enumerate(rp.assets)}
    T, S = rp.values.shape

    def locate(path, lineno, p, s):
        if p not in t_index:
            raise SchemaError(f"{path}: line {lineno}: unknown period {p!r}")
        if s not in s_index:
            raise SchemaError(f"{path}: line {lineno}: unknown stock {s!r}")
        return t_index[p], s_index[s]

    chars: dict[str, np.ndarray] = {}
    for lineno, (p, s, c, v) in _read_long(characteristics_path,
                                          ("period", "stock", "characteristic", "value"), delimiter):
        t, j = locate(characteristics_path, lineno, p, s)
        arr = chars.setdefault(c, np.full((T, S), np.nan))
        arr[t, j] = _parse_value(characteristics_path, lineno, v)
    W = np.full((T, S), np.nan)
    for lineno, (p, s, v) in _read_long(weights_path, ("period", "stock", "weight"), delimiter):
        t, j = locate(weights_path, lineno, p, s)
        W[t, j] = _parse_value(weights_path, lineno, v)
    market = None
    if market_path is not None:
        market = np.full(T, np.nan)
        for lineno, (p, v) in _read_long(market_path, ("period", "market"), delimiter):
            if p not in t_index:
                raise SchemaError(f"{market_path}: line {lineno}: unknown period {p!r}")
            market[t_index[p]] = _parse_value(market_path, lineno, v)
        if np.isnan(market).any():
            raise SchemaError(f"{market_path}: market series does not cover every period")
    return CharacteristicPanel(rp.periods, rp.assets, rp.values.copy(), chars, W, market)
