"""partialpde: physics-constrained surrogates of 2D PDE systems learned
from sparse partial observations.

The package couples an encoder that reconstructs a learnable fine-grid state
from a window of recent observations with a spectral transition operator,
and trains both against partial data plus a finite-difference/RK4 one-step
PDE residual, following a base-training + two-stage fine-tuning schedule.
"""

__version__ = "0.1.0"

from . import autodiff, datagen, evaluate, fd, models, systems, training  # noqa: F401
from .grid import GridField, ObservationSpec, ObservationWindow, observe  # noqa: F401
from .tensorio import read_tensor, write_tensor  # noqa: F401
