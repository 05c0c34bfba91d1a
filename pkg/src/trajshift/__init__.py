"""Meta-learning of shared initializations with continual trajectory shifting."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CountingTask,
    LinearTask,
    NumericError,
    QuadraticTask,
    Rng,
    Task,
    UsageError,
    as_param,
    axpy,
    finite_diff_grad,
    l2_norm,
)
from .errorlab import ErrorProbeConfig, measure_epsilon, sample_deltas, sweep, theoretical_bound  # noqa: E402
from .inner import InnerOptConfig, InnerOptState, Rule, init_state, shift, step, unroll  # noqa: E402
from .metagrad import MetaGradKind, average_meta_grad, meta_grad  # noqa: E402
from .mlp import MlpSpec, MlpTask  # noqa: E402
from .synthetic import Analytic2DTask, Grid, TaskFamilyConfig, make_tasks, quality_map  # noqa: E402
from .trainers import MetaConfig, MetaTrainRun, Variant, expected_inner_steps, train  # noqa: E402
