"""Threshold-cascade failure and recovery dynamics on hierarchical
borrower networks: simulation, equilibrium analysis, risk maps,
early-warning statistics and method-of-moments calibration."""

__version__ = "0.1.0"

from .network import (
    NetworkConfig,
    Network,
    DegreeSummary,
    expected_degree,
    solve_q4,
    build_hierarchy,
    degree_summary,
    save_network,
    load_network,
)
from .dynamics import (
    AgentState,
    SimParams,
    ForcingSchedule,
    SimState,
    Trajectory,
    sample_recovery_time,
    init_state,
    step,
    advance,
    run,
    critical_neighborhood_prob,
    spawn_rng,
)
from .analysis import (
    EquilibriumResult,
    equilibrium_fraction,
    equilibrium_pair,
    mean_field_fraction,
    deterministic_trajectory,
    HysteresisResult,
    hysteresis_sweep,
    ClassifyPolicy,
    RegimeResult,
    classify_regime,
    AxisSpec,
    RiskMapResult,
    risk_map,
    rolling_std,
    DfaResult,
    dfa,
    EarlyWarningResult,
    early_warning_scan,
)
from .calibration import (
    RepaymentSeries,
    load_series,
    save_series,
    SmoothingPolicy,
    TrendModel,
    fit_trend,
    build_forcing,
    Moments,
    compute_moments,
    ModelMomentsResult,
    model_moments,
    FitConfig,
    ParamEstimate,
    fit,
    synthetic_repayment_series,
    write_fit_report,
)
