"""Randomised initial data for the energy-critical defocusing wave equation.

Spectral discretisation on a periodic box, Wiener randomisation on unit
frequency cubes, exact linear propagators, an integrating-factor solver for
the quintic and perturbed equations, space-time norms and Monte Carlo
experiments over seeded ensembles.
"""
from .grid import (
    ComplexField,
    CubeOutOfRange,
    Field,
    FieldPair,
    GridMismatch,
    GridSpec,
    InvalidParameter,
    Multiplier,
    UndefinedNorm,
    bessel,
    cube_multiplier,
    cube_project,
    homogeneous,
    lebesgue_norm,
    littlewood_paley,
    littlewood_paley_project,
    make_grid,
    random_field,
    sobolev_norm,
)
from .randomization import (
    DistributionKind,
    RandomCoefficients,
    khintchine_check,
    make_rough_pair,
    randomize_pair,
    sample_coefficients,
)
from .propagator import (
    PropagatorKind,
    dyadic_time_sup,
    half_wave_propagate,
    linear_propagate,
    linear_trajectory,
    sine_over_gradient,
    tilde_propagate,
)
from .solver import (
    BlowupError,
    EnergyTrace,
    LinearForcing,
    SolverConfig,
    Trajectory,
    energy,
    energy_trace,
    evolve_nlw,
    evolve_perturbed,
    nonlinearity_split,
    split_energy_terms,
    scaling_transform,
    truncate_data,
)
from .norms import (
    IntervalPartition,
    SpaceTimeNorm,
    admissible_pair_check,
    smallness_condition,
    spacetime_norm,
    subdivide_until_small,
)
from .experiments import (
    EnergyEnvelope,
    EnsembleSpec,
    TailCurve,
    exceptional_set_probe,
    strichartz_tail,
    sup_tail,
    truncation_convergence,
    uniform_energy,
)

__version__ = "0.1.0"
