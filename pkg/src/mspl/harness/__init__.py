from .config import ExperimentConfig
from .experiment import (
    ExperimentResult,
    FoldJob,
    FoldResult,
    TuningResult,
    aggregate_ci,
    plan_jobs,
    run_experiment,
    run_fold,
    split_folds,
    tune_threshold,
)
from .report import emit_report
