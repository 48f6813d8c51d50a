"""Eulerian flow-map diagnostics for 2-D unsteady flows: FTLE, separation envelopes, ISLE and ridges."""
from .errors import ConfigError, FormatError, LcsError, SolverError
from .grid import Grid2D, TimeAxis, build_grid, cfl_timestep
from .fields import FlowMap2D, FtleField, IsleField, LambdaField, ScalarField2D
from .liouville import SubstepScheme, substep_map
from .flowmap import compose, forward_flow_run
from .lyapunov import SeparationEnvelope, cauchy_green_lambda, crossing_times, ftle, isle
from .ridge import RidgeSet, detect_ridges, tube_mask

__version__ = "0.1.0"
