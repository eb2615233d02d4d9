"""Phaseless inverse scattering in a ball: forward data, extraction of
travel times and amplitudes, and two reconstructions of the medium."""

from .abelgeo import (ModeTable, fourier_modes, kernel_Q, kernel_T, kernel_T_tilde,
                      reconstruct_beta_abel, reconstruct_q_abel, volterra_solve)
from .elliptic import VolumeGrid, poisson_solve_ball, residual_check
from .errors import (ConfigError, ConvergenceError, FormatError, NumericalError,
                     PhaselessError, VersionError)
from .estimators import (AbelReconstructor, ObservableExtractor, PoissonSolver,
                         RadonReconstructor)
from .extract import ObservablesTable, extract_observables, extract_series
from .forward import KGrid, KSeries, linearized_observables, synth_f1, synth_f2
from .geometry import BallConfig, ChordParam, ChordSet, chord_grid
from .phantom import Bump, Phantom, eval_beta, eval_laplacian_beta, single_bump
from .pipeline import PipelineConfig, RunReport, compare_volumes, run_pipeline
from .radon import Sinogram, inverse_radon_fbp, reconstruct_beta_radon

__version__ = "0.1.0"
