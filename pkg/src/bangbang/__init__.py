"""On-off shape control synthesis for the Dirichlet heat equation.

The package minimises a convex dual functional over terminal adjoint states and
recovers nonnegative controls of the form ``M * chi_{omega(t)}`` through the
bathtub principle.

Modules:

* ``spectral``: grids, truncated sine basis, semigroup and Duhamel operators.
* ``kernel``: exact heat-kernel evaluation for cell-wise constant data.
* ``bathtub``: distribution function, quantiles and the relaxed bathtub problem.
* ``dual``: the dual functional, its minimisation and duality-gap certificates.
* ``synth``: control extraction and independent verification.
* ``studies``: amplitude sweeps, minimal time and support obstructions.
* ``config`` / ``cli``: configuration files and the command-line interface.
"""
from .bathtub import BathtubResult, brute_force_sigma, quantile, restricted_support_function, support_function
from .dual import ControlProblem, DualOptions, DualReport, eval_H, eval_J, minimize_dual, subgradient
from .spectral import (
    ConfigurationError,
    ControlTrajectory,
    Domain,
    GridField,
    GridMismatchError,
    ModeVector,
    TimeGrid,
    build_basis,
    duhamel,
    forward_solve,
    from_modes,
    semigroup_apply,
    to_modes,
)
from .studies import ProblemTemplate, adjoint_witness, minimal_time, obstruction_experiment, sweep_amplitude
from .synth import SynthesizedControl, VerificationReport, extract_control, verify

__all__ = [
    "BathtubResult",
    "ConfigurationError",
    "ControlProblem",
    "ControlTrajectory",
    "Domain",
    "DualOptions",
    "DualReport",
    "GridField",
    "GridMismatchError",
    "ModeVector",
    "ProblemTemplate",
    "SynthesizedControl",
    "TimeGrid",
    "VerificationReport",
    "adjoint_witness",
    "brute_force_sigma",
    "build_basis",
    "duhamel",
    "eval_H",
    "eval_J",
    "extract_control",
    "forward_solve",
    "from_modes",
    "minimal_time",
    "minimize_dual",
    "obstruction_experiment",
    "quantile",
    "restricted_support_function",
    "semigroup_apply",
    "subgradient",
    "support_function",
    "sweep_amplitude",
    "to_modes",
    "verify",
]
