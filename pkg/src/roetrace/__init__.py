"""Numerical laboratory for renormalized traces on discrete homogeneous
models: exhaustion-averaged functionals, mollified regularizations, heat
semigroup traces, spectral density functions, and L2 invariants.
"""

__version__ = "0.1.0"

from .space import (Exhaustion, RegularityReport, SpaceModel,
                    VolumeComparison, WindowEscape, beta_pair,
                    box_exhaustion, build_space, check_regular,
                    comparison_volume, pen_minus, pen_plus,
                    penumbra_lemma_check)
from .operator import (KernelOperator, add, adjoint, band_operator, compose,
                       conjugate, diagonal_operator, dump_kernel_csv,
                       from_matrix, identity, invert_delta_unitary,
                       is_delta_unitary, is_positive_certified,
                       load_kernel_csv, local_trace, make_delta_unitary,
                       measured_propagation, operator_norm, scale,
                       schur_bound, shift_operator)
from .trace import (ConjugationReport, CounterexampleReport, LimitProcedure,
                    MollifierFamily, TraceValue, cone_membership,
                    conjugation_suite, counterexample_suite,
                    kernel_continuity_probe, mollified_functional, mollifier,
                    regularized_trace, roe_functional, shifted_functional)
from .heat import (HeatFilter, HeatSample, apply_filter, chebyshev_operator,
                   diagonal_heat, gaussian_decay_check, heat_column,
                   heat_filter, heat_operator, hutchinson_theta, theta,
                   theta_value)
from .spectral import (BettiEstimate, NSReport, SpectralDensity, betti,
                       chebyshev_moments, hodge_laplacian, ns_numbers,
                       spectral_density, varopoulos_check)

__all__ = [name for name in dir() if not name.startswith("_")]
