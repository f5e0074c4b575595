"""Simulator and verification suite for synchronous distributed SGD under
global shuffling, local shuffling, insufficient shuffling, i.i.d. sampling
and without-replacement sampling."""

from .errors import (BudgetExceeded, DivisibilityError, NoReferenceOptimum, NumericAbort,
                     ShuffleSGDError)
from .rng import RandomnessSource
from .shuffling import ShufflerSpec, enumerate_distribution, shuffle
from .schedule import BatchStream, StreamSpec, build_stream, conditional_batch_distribution
from .objectives import Dataset, ObjectiveSpec, full_objective, loss_and_grad_batch, loss_and_grad_single
from .engine import LrSchedule, MetricsTrace, lr_at, run, step

__version__ = "0.1.0"
