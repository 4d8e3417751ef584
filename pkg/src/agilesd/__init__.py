"""Throughput modeling, simulation and lambda_max tuning for NewReno and Agile-SD."""
from .aacpt import (
    TuningGrid,
    TuningResult,
    fit_optimal_line,
    optimal_lambda_formula,
    run_aacpt,
)
from .estimators import AACPTTuner, FlowSimulator, MarkovThroughputModel
from .flow_simulator import (
    EpochRecord,
    SimReport,
    SimulationError,
    agility_factor_afm,
    epoch_average_rate,
    next_window_agile,
    next_window_newreno,
    run_flow,
    total_average_rate,
)
from .markov_model import (
    CcaParams,
    ModelError,
    NetworkConfig,
    StateDistribution,
    ThroughputReport,
    TransitionMatrix,
    agility_factor_model,
    average_throughput,
    build_transition_matrix,
    expected_window,
    initial_distribution,
    loss_probability,
    max_window,
    state_count,
    step_distribution,
)

__version__ = "0.1.0"
