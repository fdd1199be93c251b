"""Limiting absorption solutions of periodic elliptic problems via Floquet-Bloch contours."""

from .errors import (BranchContinuationError, ConfigError, ContourConstructionError,
                     CrossingAmbiguityError, DegenerateBandError, DomainError,
                     HigherOrderDegeneracyError, InvalidDirectionError,
                     IrregularLevelError, LapBlochError, NumericalError,
                     PoleProximityError)
from .lattice import build_frame, clip_line, orbit_family, translate_boundary, wrap_to_B
from .medium import (MediumSpec, SourceSpec, cosine_medium, floquet_transform,
                     free_space, inverse_floquet, source_fourier_vector)
from .cell import (assemble, eigen_source_coeff, eigensolve, hf_gradient,
                   pole_free_check, solve_cell)
from .bands import check_regularity, relabel_slice, sample_grid
from .fermi import complex_extension, level_set
from .lap import (LapConfig, LapResult, build_contour, damped_solve, lap_solve,
                  residue_line_check)
from .special import (bessel_j0, bessel_y0, greens_free_1d, greens_free_2d, hankel1_0,
                      struve_h0)

__version__ = "0.1.0"
