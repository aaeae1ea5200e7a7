"""noisylab: a desk-scale laboratory for noisy-label training with
geometry-aware virtual-outlier regularization and energy-score OOD
evaluation."""

from .config import RunConfig
from .harness import Experiment, RunReport, run_experiment

__version__ = "0.1.0"

__all__ = ["RunConfig", "Experiment", "RunReport", "run_experiment", "__version__"]
