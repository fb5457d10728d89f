"""Deterministic simulator for asynchronous federated learning with bounded staleness."""

from .core import GlobalModelHistory, ParamVector, RoundRecord, average_params
from .data import Dataset, PartitionPlan, dirichlet_partition, gen_classification_data, gen_regression_data
from .delay import DelayModel, LrSchedule, delay_adjusted_lr, round_delay_spread, sample_delay, sample_staleness
from .estimators import AFLClassifier, AFLRegressor
from .local import DivergenceError, LocalRunReport, local_sgd
from .metrics import MetricsLog, cumulative_wall_clock, energy_proxy, export_metrics, load_metrics, server_loss
from .models import ModelKind, hinge_loss, hinge_subgrad, mse_grad, mse_loss
from .orchestrator import (
    ConfigError,
    ExperimentConfig,
    TrainingTrace,
    afl_round,
    run_afl,
    run_sync_fl,
    svm_table_config,
)
from .theory import ProblemConstants, VerificationReport

__version__ = "0.1.0"
