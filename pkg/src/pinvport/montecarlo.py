"""
Seeded single-factor data generation and finite-sample sweeps.

Every replication draws from its own generator, keyed by
``(master seed, N, φ, rep)`` through :class:`numpy.random.SeedSequence`
spawn keys, so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import asymptotics as asy
from .core import (
    PopulationModel,
    ReturnPanel,
    estimate_moments,
    estimate_phi_hat,
    oos_loss,
    oos_sharpe,
    pseudoinverse_weights,
)
from .errors import ValidationError

_CELL_TAG, _REP_TAG = 0, 1


@dataclass(frozen=True)
class FactorSpec:
    """Single-factor generator r_t = b μ_f + b σ_f z_t + σ_ε y_t."""

    b: np.ndarray
    mu_f: float
    sigma_f: float
    sigma_eps: float = 1.0

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        b.flags.writeable = False
        if b.ndim != 1 or not np.isfinite(b).all():
            raise ValidationError("loadings must be a finite vector")
        if self.sigma_f < 0 or not self.sigma_eps > 0:
            raise ValidationError("need sigma_f >= 0 and sigma_eps > 0")
        object.__setattr__(self, "b", b)

    @property
    def N(self) -> int:
        return self.b.shape[0]

    @property
    def b2(self) -> float:
        return float(self.b @ self.b)

    @property
    def theta(self) -> float:
        """μ_f²‖b‖² / (σ_ε² + σ_f²‖b‖²)."""
        return self.mu_f**2 * self.b2 / (self.sigma_eps**2 + self.sigma_f**2 * self.b2)

    @property
    def phi(self) -> float:
        return self.sigma_f**2 * self.b2 / self.sigma_eps**2

    @property
    def mu(self) -> np.ndarray:
        return self.b * self.mu_f

    @property
    def sigma_mat(self) -> np.ndarray:
        return self.sigma_f**2 * np.outer(self.b, self.b) + self.sigma_eps**2 * np.eye(self.N)

    def population(self) -> PopulationModel:
        return PopulationModel(self.mu, self.sigma_mat)


def make_factor_spec(N: int, theta_target: float, phi: float, rng) -> FactorSpec:
    """Loadings b = b̃/‖b̃‖ (b̃ standard normal), σ_ε = 1, σ_f² = φ and
    μ_f = √(θ(1 + φ)) so the population θ equals ``theta_target``."""
    if not theta_target > 0:
        raise ValidationError("theta_target must be positive")
    if phi < 0:
        raise ValidationError("phi must be non-negative")
    bt = rng.standard_normal(N)
    b = bt / np.linalg.norm(bt)
    sigma_eps = 1.0
    sigma_f = math.sqrt(phi)
    b2 = float(b @ b)
    mu_f = math.sqrt(theta_target * (sigma_eps**2 + sigma_f**2 * b2) / b2)
    return FactorSpec(b, mu_f, sigma_f, sigma_eps)


def _standard_draws(rng, shape, dist: str):
    if dist == "gaussian":
        return rng.standard_normal(shape)
    if dist == "student_t":
        df = 8.0
        return rng.standard_t(df, shape) / math.sqrt(df / (df - 2.0))
    raise ValidationError(f"unknown innovation distribution {dist!r}")


def generate_return_matrix(spec: FactorSpec, T: int, rng, dist: str = "gaussian") -> np.ndarray:
    if T < 2:
        raise ValidationError("need T >= 2")
    z = _standard_draws(rng, T, dist)
    y = _standard_draws(rng, (T, spec.N), dist)
    return spec.mu_f * spec.b + spec.sigma_f * z[:, None] * spec.b + spec.sigma_eps * y


def generate_returns(spec: FactorSpec, T: int, rng, dist: str = "gaussian") -> ReturnPanel:
    """T independent rows from the factor model (Gaussian or standardized t₈)."""
    return ReturnPanel.from_array(generate_return_matrix(spec, T, rng, dist))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _phi_words(phi: float) -> tuple[int, int]:
    (u,) = struct.unpack("<Q", struct.pack("<d", float(phi)))
    return u >> 32, u & 0xFFFFFFFF


def cell_seed(seed: int, N: int, phi: float) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(_CELL_TAG, N, *_phi_words(phi)))


def rep_seed(seed: int, N: int, phi: float, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(_REP_TAG, N, *_phi_words(phi), rep))


@dataclass(frozen=True)
class SweepConfig:
    """Grid and replication settings for :func:`run_sweep`.

    ``theta`` is either a positive constant or the string ``"schedule"``
    (θ = theta_schedule(N)). ``phi_source`` picks the signal-to-noise value
    fed to θ̂ above the threshold: the generator's true φ, the data
    estimate, or zero.
    """

    T: int = 100
    N_list: tuple = (20, 50, 80, 150, 300, 600)
    phi_list: tuple = (0.0, 1.0, math.log(100), 100.0)
    theta: float | str = "schedule"
    reps: int = 100
    seed: int = 0
    sigma: float = 1.0
    phi_source: str = "true"
    redraw_loadings: bool = False
    dist: str = "gaussian"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "N_list", tuple(int(n) for n in self.N_list))
        object.__setattr__(self, "phi_list", tuple(float(p) for p in self.phi_list))
        if self.reps < 1:
            raise ValidationError("reps must be >= 1")
        if self.T < 2:
            raise ValidationError("T must be >= 2")
        if any(n < 2 for n in self.N_list):
            raise ValidationError("every N must be >= 2")
        if any(p < 0 for p in self.phi_list):
            raise ValidationError("phi values must be non-negative")
        if self.theta != "schedule":
            th = float(self.theta)
            if not th > 0:
                raise ValidationError("theta must be positive or 'schedule'")
            object.__setattr__(self, "theta", th)
        if self.phi_source not in ("true", "estimated", "zero"):
            raise ValidationError(f"unknown phi_source {self.phi_source!r}")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def theta_of(self, N: int) -> float:
        return asy.theta_schedule(N) if self.theta == "schedule" else float(self.theta)

    def to_dict(self) -> dict:
        return asdict(self)


SWEEP_COLUMNS = ("N", "phi", "rho", "avg_sr", "se_sr", "avg_loss", "se_loss",
                 "asy_sr", "asy_loss", "fallback_count")


@dataclass(frozen=True)
class SweepRow:
    N: int
    phi: float
    rho: float
    avg_sr: float
    se_sr: float
    avg_loss: float
    se_loss: float
    asy_sr: float
    asy_loss: float
    fallback_count: int
    theta: float = float("nan")
    sr: np.ndarray = field(default=None, repr=False, compare=False)
    loss: np.ndarray = field(default=None, repr=False, compare=False)


def _one_rep(cfg: SweepConfig, N: int, phi: float, rep: int, spec: FactorSpec,
             pop: PopulationModel):
    rng = np.random.default_rng(rep_seed(cfg.seed, N, phi, rep))
    if cfg.redraw_loadings:
        spec = make_factor_spec(N, cfg.theta_of(N), phi, rng)
        pop = spec.population()
    R = generate_return_matrix(spec, cfg.T, rng, cfg.dist)
    m = estimate_moments(R)
    if cfg.phi_source == "true":
        phi_hat = spec.phi
    elif cfg.phi_source == "estimated":
        phi_hat = estimate_phi_hat(m)
    else:
        phi_hat = 0.0
    w = pseudoinverse_weights(m, cfg.sigma, phi_hat, fallback=True, allow_unit_ratio=True)
    return oos_sharpe(w, pop), oos_loss(w, pop, cfg.sigma), w.fallback


def _cell(cfg: SweepConfig, N: int, phi: float, pool) -> SweepRow:
    theta = cfg.theta_of(N)
    spec = make_factor_spec(N, theta, phi, np.random.default_rng(cell_seed(cfg.seed, N, phi)))
    pop = spec.population()
    reps = range(cfg.reps)
    fn = lambda r: _one_rep(cfg, N, phi, r, spec, pop)
    out = list(pool.map(fn, reps)) if pool is not None else [fn(r) for r in reps]
    sr = np.array([o[0] for o in out])
    loss = np.array([o[1] for o in out])
    n_fb = sum(o[2] for o in out)
    se = lambda x: float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    rho = N / cfg.T
    try:
        inp = asy.LimitInputs(theta, rho, phi, cfg.sigma)
        asy_sr, asy_loss = asy.sr_limit_factor(inp), asy.loss_limit_factor(inp)
    except ValidationError:
        asy_sr = asy_loss = float("nan")
    return SweepRow(N, phi, rho, float(sr.mean()), se(sr), float(loss.mean()), se(loss),
                    asy_sr, asy_loss, int(n_fb), theta, sr, loss)


def run_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """Average OOS Sharpe ratio and loss over replications per (N, φ) cell.

    Rows come back ordered by φ then N, the order of ``phi_list`` and
    ``N_list``. Replications where θ̂ ≤ 0 use the unnormalized
    direction and are counted in ``fallback_count``.
    """
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return [_cell(cfg, N, phi, pool) for phi in cfg.phi_list for N in cfg.N_list]
    return [_cell(cfg, N, phi, None) for phi in cfg.phi_list for N in cfg.N_list]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_sweep_table(rows: Sequence[SweepRow], path, delimiter: str = ",") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in SWEEP_COLUMNS])


def sweep_rows_as_dicts(rows: Sequence[SweepRow]) -> list[dict]:
    return [{c: getattr(r, c) for c in SWEEP_COLUMNS} for r in rows]


def write_manifest(path, command: str, config: dict) -> None:
    payload = {"command": command, "config": config}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
