"""Monte Carlo, exact-operator and Fourier-bound toolkit for two-dimensional
asymmetric exclusion processes in equilibrium."""

from .kernels import (
    EnsembleSpec,
    JumpKernel,
    KernelError,
    NegativeRate,
    NonIrreducible,
    TorusGeometry,
    ZeroDrift,
    comparison_kernel,
    sample_equilibrium,
    validate_kernel,
)
from .simulate import (
    CoupledEnsemble,
    ExclusionEnsemble,
    HorizonTooLargeForTorus,
    Trajectory,
    run_coupled_ensemble,
    run_exclusion_ensemble,
    run_walker_ensemble,
    simulate_coupled,
    simulate_exclusion,
)
from .observables import (
    ScalingFit,
    TimeSeries,
    estimate_return_probability,
    estimate_variance,
    fit_scaling,
    laplace_transform,
    make_time_grid,
    variance_via_kernel,
)
from .bounds import (
    BoundCurve,
    SymbolParams,
    bound_curve,
    fit_divergence,
    resolvent_lower_bound,
    resolvent_lower_bound_axis,
)

__version__ = "0.1.0"
