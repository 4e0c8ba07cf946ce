"""Pickling line simulation, generative strip models and speed-control agents."""

from ._core import (
    LOG_COLUMNS,
    NUMERIC_COLUMNS,
    Bank,
    CganModel,
    Config,
    ConfigError,
    Dataset,
    GradeModel,
    GradeVocabulary,
    InputError,
    IoError,
    Line,
    ProtocolError,
    Report,
    Scenario,
    Strip,
    TrainingError,
    evaluate,
    fit_cgan,
    fit_grade_model,
    ingest_history,
    ks_statistics,
    precompute_scenarios,
    read_dataset,
    read_scenario_set,
    run_episode,
    synthetic_history,
    train,
    write_dataset,
    write_scenario_set,
)

__all__ = [name for name in dir() if not name.startswith("_")]
