"""Inverse-intensity weighted varying coefficient models."""

from ._ivcm import (
    Dataset,
    FitRun,
    IvcmError,
    SimulationConfig,
    SplineBasis,
    __version__,
    fit,
    fit_intensity,
    generate_adni_like,
    generate_dataset,
    report,
    run_study,
)

__all__ = [
    "Dataset",
    "FitRun",
    "IvcmError",
    "SimulationConfig",
    "SplineBasis",
    "__version__",
    "fit",
    "fit_intensity",
    "generate_adni_like",
    "generate_dataset",
    "report",
    "run_study",
]
