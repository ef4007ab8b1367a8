"""Adaptive volatility estimation by multiscale local change point detection."""

__version__ = "0.1.0"

from lcpvol.calibration import CalibConfig, calibrate, theoretical_cap, verify_propagation
from lcpvol.changepoint import change_contrast, max_stat, split_stat
from lcpvol.core import (
    Interval,
    ParamBounds,
    ReturnSeries,
    confidence_set,
    fitted_loglik_ratio,
    kl_divergence,
    local_mle,
    log_returns,
    loglik,
    modeling_bias,
)
from lcpvol.errors import LcpError
from lcpvol.forecasting import (
    GarchParams,
    backtest,
    garch_aggregated,
    garch_fit,
    garch_forecast,
    lcp_variance_forecast,
    msqe_ratio,
    realized_volatility,
    residual_diagnostics,
    var_quantile,
)
from lcpvol.procedure import (
    CriticalValues,
    IntervalScheme,
    LcpResult,
    build_scheme,
    rolling_estimate,
    run_lcp,
)
from lcpvol.simulation import (
    JumpSpec,
    detection_delay,
    oracle_comparison,
    replicate_study,
    sensitivity_experiment,
    simulate_jump_process,
)
