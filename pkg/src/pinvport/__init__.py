"""Pseudoinverse mean-variance portfolios in high dimensions.

Estimators and out-of-sample metrics live in :mod:`pinvport.core`,
closed-form limits in :mod:`pinvport.asymptotics`, simulation sweeps in
:mod:`pinvport.montecarlo`, the empirical protocol in
:mod:`pinvport.backtest` and curve calibration in
:mod:`pinvport.calibration`.
"""

__version__ = "0.1.0"

from .core import (
    MomentEstimate,
    PopulationModel,
    ReturnPanel,
    Weights,
    estimate_moments,
    estimate_phi_hat,
    estimate_theta_hat,
    minvar_weights,
    equal_weights,
    oos_loss,
    oos_sharpe,
    optimal_weights,
    pseudoinverse_weights,
    ridge_weights,
    read_return_panel,
    write_return_panel,
)
from .asymptotics import (
    LimitInputs,
    loss_limit_factor,
    loss_limit_factorless,
    mean_sd_limit,
    sr_limit_factor,
    sr_limit_factorless,
    theta_schedule,
)
from .montecarlo import SweepConfig, run_sweep
from .backtest import BacktestConfig, annualize, build_sorted_portfolios, rolling_backtest
from .calibration import ThetaCurveModel, fit_theta_curve, theta_curve
from .errors import *  # noqa: F401,F403
