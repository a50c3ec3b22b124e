"""Space-time finite elements, learned solution operators and pulse optimal control
for nonlinear Lorentz media."""

from .config import RunConfig, load_config
from .diagnostics import conversion_efficiency, intensity_fluence, lorentz_permittivity, spectrum
from .errors import ConfigError, ConvergenceError, NumericalError, ShapeError, SolverError
from .fem import DomainSpec, Material, assemble_matrices, band_solve, build_domain
from .gcc import (BoundarySignal, GccProblem, NewtonConfig, SlabState, SlabSystem, march,
                  newton_solve_slab)
from .nets import (FnoConfig, GruConfig, SolutionOperator, checkpoint_read, checkpoint_write,
                   identity_operator, init_fno, init_gru)
from .ocp import CostConfig, OcpConfig, PulseBounds, PulseParams, objective, optimize_pulse
from .pml import PmlProfile, default_sigma_max
from .training import TrainConfig, evaluate_loss, loss, train
from .trajectory import TrajectorySeries, error_norms, hermite_reconstruct

__version__ = "0.1.0"
