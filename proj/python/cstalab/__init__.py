"""Spatial-temporal adapter laboratory: C++ core behind a thin python veneer.

Clips are float64 arrays shaped [frames, height, width] with values in [0, 1].
"""

from cstalab._core import (
    AccuracyMatrix,
    BudgetReport,
    Corpus,
    CorpusConfig,
    ExperimentConfig,
    Model,
    ModelConfig,
    RunResult,
    TaskBudget,
    TaskStream,
    TrainConfig,
    account,
    avg_acc,
    bwf,
    default_experiment_config,
    experiment_config_json,
    load_checkpoint,
    load_corpus,
    load_experiment_config,
    make_corpus,
    make_task_stream,
    parse_experiment_config,
    run_experiment,
    save_checkpoint,
    save_corpus,
)

__all__ = [
    "AccuracyMatrix",
    "BudgetReport",
    "Corpus",
    "CorpusConfig",
    "ExperimentConfig",
    "Model",
    "ModelConfig",
    "RunResult",
    "TaskBudget",
    "TaskStream",
    "TrainConfig",
    "account",
    "avg_acc",
    "bwf",
    "default_experiment_config",
    "experiment_config_json",
    "load_checkpoint",
    "load_corpus",
    "load_experiment_config",
    "make_corpus",
    "make_task_stream",
    "parse_experiment_config",
    "run_experiment",
    "save_checkpoint",
    "save_corpus",
]
