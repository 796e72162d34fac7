"""
Continual-learning engine.

The management commands talk to three entry points:

* ``run_experiment(config)``: every (trainer, budget, seed) run of an
  experiment, written under ``<output-root>/<config-hash>/``.
* ``run_stream(kind, stream, hyper, seed)``: one single-pass run, in memory.
* ``StreamRunner.restore(path)``: resume a run from a checkpoint.

Plotting lives in ``logic.plots`` and is imported on demand so the engine
does not pull in matplotlib.
"""

from .experiment import ExperimentRunner
from .experiment import RunRecord
from .experiment import run_experiment
from .harness import StreamRunner
from .harness import run_joint_reference
from .harness import run_stream
from .schemas import ExperimentConfig
from .schemas import load_experiment_config
from .stream import TaskStream

__all__ = [
    "ExperimentConfig",
    "ExperimentRunner",
    "RunRecord",
    "StreamRunner",
    "TaskStream",
    "load_experiment_config",
    "run_experiment",
    "run_joint_reference",
    "run_stream",
]
