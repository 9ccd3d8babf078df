"""crowdgames: discrete-time Markov games with a continuum of players and
their large-but-finite-population counterparts.

The library is organized bottom-up:

* :mod:`crowdgames.measure` -- finite metric spaces, finite-support
  probability measures, and an exact Prohorov metric.
* :mod:`crowdgames.model` -- game primitives (spaces, shock laws, payoff,
  transition, policies) and sampled continuity probes.
* :mod:`crowdgames.nonatomic` -- the deterministic continuum-population
  engine: environment propagation, value recursion, equilibrium search.
* :mod:`crowdgames.finite` -- the stochastic n-player engine and the
  convergence / regret experiments.
* :mod:`crowdgames.stationary` -- infinite-horizon discounted engine:
  invariant environments, contraction values, stationary equilibria.
* :mod:`crowdgames.pricing`, :mod:`crowdgames.experiments`,
  :mod:`crowdgames.cli` -- the built-in pricing games, experiment
  orchestration with manifests, and the command-line front end.
"""

__version__ = "0.1.0"

from .errors import ConfigError, InvalidInputError
from .model import (
    GameSpec,
    ModulusReport,
    PolicyProfile,
    StationarySpec,
    continuity_probe,
    policy_table,
    validate,
)
from .nonatomic import (
    EnvironmentTrajectory,
    EquilibriumReport,
    SolveResult,
    ValueTable,
    best_deviation,
    check_equilibrium,
    in_action_env,
    propagate,
    solve_equilibrium,
    step_env,
    value,
)
from .measure import (
    FiniteSpace,
    Measure,
    ProductSpace,
    delta,
    discrete_space,
    empirical,
    grid_space,
    measure_from_text,
    measure_to_text,
    mix_in,
    product,
    prohorov,
    pushforward,
    sample,
    space_from_text,
    space_to_text,
    uniform,
)

__all__ = [
    "ConfigError",
    "InvalidInputError",
    "GameSpec",
    "ModulusReport",
    "PolicyProfile",
    "StationarySpec",
    "continuity_probe",
    "policy_table",
    "validate",
    "EnvironmentTrajectory",
    "EquilibriumReport",
    "SolveResult",
    "ValueTable",
    "best_deviation",
    "check_equilibrium",
    "in_action_env",
    "propagate",
    "solve_equilibrium",
    "step_env",
    "value",
    "FiniteSpace",
    "Measure",
    "ProductSpace",
    "delta",
    "discrete_space",
    "empirical",
    "grid_space",
    "measure_from_text",
    "measure_to_text",
    "mix_in",
    "product",
    "prohorov",
    "pushforward",
    "sample",
    "space_from_text",
    "space_to_text",
    "uniform",
    "__version__",
]
