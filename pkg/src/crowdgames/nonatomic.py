"""Deterministic engine for the continuum-population game.

With a continuum of players, individual shocks average out exactly: the
population's state distribution evolves deterministically, and a single
player's deviation never moves the aggregate. That makes everything here
exact finite sums -- no sampling, no quadrature error:

* :func:`in_action_env` -- the mid-period joint state/action law
  ``M(sigma, x)`` induced by a state law and a period policy.
* :func:`step_env` / :func:`propagate` -- one-period and full-horizon
  environment evolution.
* :func:`value` -- backward-induction state values and their
  population averages, optionally with a single-period deviation.
* :func:`best_deviation` / :func:`check_equilibrium` -- the optimal
  one-period challenger and per-period deviation gaps.
* :func:`solve_equilibrium` -- iterated best response with
  gap-decrease acceptance and an honest non-convergence flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .errors import InvalidInputError
from .measure import Measure
from .model import GameSpec, PolicyProfile

__all__ = [
    "EnvironmentTrajectory",
    "ValueTable",
    "EquilibriumReport",
    "SolveResult",
    "in_action_env",
    "step_env",
    "propagate",
    "value",
    "best_deviation",
    "check_equilibrium",
    "solve_equilibrium",
]

Label = Hashable

# Tolerance for "this trajectory was produced by this profile" checks.
_TRAJ_ATOL = 1e-9


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EnvironmentTrajectory:
    """Pre-action state laws ``sigma_1 .. sigma_{horizon+1}``."""

    sigmas: tuple[Measure, ...]

    @property
    def horizon(self) -> int:
        return len(self.sigmas) - 1

    def sigma(self, t: int) -> Measure:
        """The period-t law, t in 1..horizon+1."""
        if not 1 <= t <= len(self.sigmas):
            raise InvalidInputError(f"period {t} outside 1..{len(self.sigmas)}")
        return self.sigmas[t - 1]


@dataclass(frozen=True, eq=False)
class ValueTable:
    """State values ``v(t, s)`` and population averages ``u(t)``.

    Row ``t`` holds the expected total payoff from period t onward for a
    player currently at each state, following the profile; ``v(horizon+1, .)``
    is identically zero. When built with a deviation ``(t_dev, y)``, row
    ``t_dev`` holds the deviated values (play y at t_dev, the profile
    afterwards) while all other rows keep the undeviated values -- a
    deviation at one period never changes the continuation rows above it,
    and rows below it describe periods before the deviation exists.
    """

    state_space: object
    v: np.ndarray  # shape (horizon+1, |S|); row index t-1
    u: np.ndarray  # shape (horizon,)

    @property
    def horizon(self) -> int:
        return self.v.shape[0] - 1

    def state_value(self, t: int, s: Label) -> float:
        return float(self.v[t - 1, self.state_space.index(s)])

    def average(self, t: int) -> float:
        return float(self.u[t - 1])


@dataclass(frozen=True)
class EquilibriumReport:
    """Per-period deviation gaps for a profile along its own trajectory."""

    gaps: np.ndarray            # averaged criterion, one entry per period
    pointwise_gaps: np.ndarray  # diagnostic: max over states of per-state regret
    tol: float

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())

    @property
    def certified(self) -> bool:
        return bool(self.max_gap <= self.tol)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Outcome of :func:`solve_equilibrium`."""

    profile: PolicyProfile
    report: EquilibriumReport
    converged: bool
    iterations: int
    gap_history: tuple[float, ...]


# ---------------------------------------------------------------------------
# Environment evolution
# ---------------------------------------------------------------------------

def in_action_env(spec: GameSpec, sigma: Measure, policy_t: np.ndarray) -> Measure:
    """The joint state/action law when states follow ``sigma`` and everyone
    plays the period policy ``policy_t``.

    This is the pushforward of ``sigma x gamma`` under ``(s, g) -> (s, x(s, g))``;
    its state marginal is exactly ``sigma``.
    """
    if sigma.space != spec.state_space:
        raise InvalidInputError("sigma must live on the state space")
    n_s, n_x = len(spec.state_space), len(spec.action_space)
    w = np.zeros((n_s, n_x))
    contrib = np.outer(sigma.weights, spec.gamma.weights)  # (s, g) mass
    rows = np.repeat(np.arange(n_s), policy_t.shape[1])
    np.add.at(w, (rows, policy_t.ravel()), contrib.ravel())
    return Measure(spec.env_space, w.ravel())


def _transition_index_cache(spec: GameSpec, t: int, mu: Measure):
    """Memoized ``(s_idx, x_idx, i_idx) -> next-state idx`` for fixed (t, mu)."""
    s_labels = spec.state_space.labels
    x_labels = spec.action_space.labels
    i_labels = spec.postshock_space.labels
    s_index = spec.state_space.index
    cache: dict[tuple[int, int, int], int] = {}

    def lookup(si: int, xi: int, ii: int) -> int:
        key = (si, xi, ii)
        hit = cache.get(key)
        if hit is None:
            hit = s_index(spec.transition(t, s_labels[si], x_labels[xi], mu, i_labels[ii]))
            cache[key] = hit
        return hit

    return lookup


def step_env(spec: GameSpec, sigma: Measure, policy_t: np.ndarray, t: int) -> Measure:
    """One-period environment update: push ``sigma x gamma x iota`` through
    the transition, with the in-action environment computed from ``sigma``
    and ``policy_t`` themselves. Mass is conserved exactly.
    """
    mu = in_action_env(spec, sigma, policy_t)
    theta = _transition_index_cache(spec, t, mu)
    gw = spec.gamma.weights
    iw = spec.iota.weights
    sw = sigma.weights
    out = np.zeros(len(spec.state_space))
    for si in np.flatnonzero(sw > 0.0):
        # Aggregate shock mass by chosen action before touching the callback.
        action_mass: dict[int, float] = {}
        for gj, g_mass in enumerate(gw):
            if g_mass == 0.0:
                continue
            xi = int(policy_t[si, gj])
            action_mass[xi] = action_mass.get(xi, 0.0) + g_mass
        for xi, g_mass in action_mass.items():
            base = sw[si] * g_mass
            for ii, i_mass in enumerate(iw):
                if i_mass == 0.0:
                    continue
                out[theta(si, xi, ii)] += base * i_mass
    return Measure(spec.state_space, out)


def propagate(spec: GameSpec, sigma1: Measure, profile: PolicyProfile) -> EnvironmentTrajectory:
    """Roll the environment forward through every period of the profile."""
    if profile.horizon != spec.horizon:
        raise InvalidInputError(
            f"profile covers {profile.horizon} periods, spec has {spec.horizon}"
        )
    sigmas = [sigma1]
    for t in range(1, spec.horizon + 1):
        sigmas.append(step_env(spec, sigmas[-1], profile.period(t), t))
    return EnvironmentTrajectory(tuple(sigmas))


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------

def _q_table(spec: GameSpec, sigma_t: Measure, policy_t: np.ndarray, t: int,
             v_next: np.ndarray) -> np.ndarray:
    """Action values ``Q[s, x] = psi_t + E_iota v_next(theta)`` at period t."""
    mu = in_action_env(spec, sigma_t, policy_t)
    theta = _transition_index_cache(spec, t, mu)
    s_labels = spec.state_space.labels
    x_labels = spec.action_space.labels
    iw = spec.iota.weights
    n_s, n_x = len(s_labels), len(x_labels)
    q = np.empty((n_s, n_x))
    for si in range(n_s):
        for xi in range(n_x):
            cont = 0.0
            for ii, i_mass in enumerate(iw):
                if i_mass == 0.0:
                    continue
                cont += i_mass * v_next[theta(si, xi, ii)]
            q[si, xi] = spec.payoff(t, s_labels[si], x_labels[xi], mu) + cont
    return q


def _policy_row_values(q: np.ndarray, table: np.ndarray, gamma_w: np.ndarray) -> np.ndarray:
    """Per-state value of playing ``table`` against action values ``q``."""
    n_s = q.shape[0]
    picked = q[np.arange(n_s)[:, None], table]  # (|S|, |G|)
    return picked @ gamma_w


def _check_consistency(spec: GameSpec, profile: PolicyProfile,
                       trajectory: EnvironmentTrajectory) -> None:
    if trajectory.horizon != spec.horizon:
        raise InvalidInputError(
            f"trajectory has {trajectory.horizon + 1} entries, expected {spec.horizon + 1}"
        )
    for t in range(1, spec.horizon + 1):
        expected = step_env(spec, trajectory.sigma(t), profile.period(t), t)
        drift = np.abs(expected.weights - trajectory.sigma(t + 1).weights).max()
        if drift > _TRAJ_ATOL:
            raise InvalidInputError(
                f"trajectory is inconsistent with the profile at period {t} "
                f"(max weight drift {drift:.3g})"
            )


def value(
    spec: GameSpec,
    profile: PolicyProfile,
    trajectory: EnvironmentTrajectory,
    deviation: tuple[int, np.ndarray] | None = None,
) -> ValueTable:
    """Backward-induction values along a profile's trajectory.

    Parameters
    ----------
    spec, profile : the game and the profile everyone follows.
    trajectory : EnvironmentTrajectory
        Must be the profile's own trajectory (checked; a deviating player
        never moves the population aggregate, so the deviated value uses
        the same trajectory).
    deviation : (t_dev, y_table), optional
        Replace the player's period-``t_dev`` action table by ``y_table``
        for that single period.

    Returns
    -------
    ValueTable
        ``v(t, s)`` per period and state, ``u(t)`` the sigma_t-weighted
        averages.
    """
    _check_consistency(spec, profile, trajectory)
    if deviation is not None:
        t_dev, y_table = deviation
        if not 1 <= t_dev <= spec.horizon:
            raise InvalidInputError(f"deviation period {t_dev} outside 1..{spec.horizon}")
    n_s = len(spec.state_space)
    gw = spec.gamma.weights
    v = np.zeros((spec.horizon + 1, n_s))
    u = np.zeros(spec.horizon)
    for t in range(spec.horizon, 0, -1):
        sigma_t = trajectory.sigma(t)
        q = _q_table(spec, sigma_t, profile.period(t), t, v[t])
        v[t - 1] = _policy_row_values(q, profile.period(t), gw)
        u[t - 1] = float(v[t - 1] @ sigma_t.weights)
    if deviation is not None:
        # Replace the one deviated row against the undeviated continuation;
        # earlier rows must not see it, so this happens after the full pass.
        sigma_t = trajectory.sigma(t_dev)
        q = _q_table(spec, sigma_t, profile.period(t_dev), t_dev, v[t_dev])
        v[t_dev - 1] = _policy_row_values(q, y_table, gw)
        u[t_dev - 1] = float(v[t_dev - 1] @ sigma_t.weights)
    return ValueTable(state_space=spec.state_space, v=v, u=u)


# ---------------------------------------------------------------------------
# Deviations and equilibrium
# ---------------------------------------------------------------------------

def best_deviation(
    spec: GameSpec,
    t: int,
    profile: PolicyProfile,
    trajectory: EnvironmentTrajectory,
    value_table: ValueTable | None = None,
) -> tuple[np.ndarray, float]:
    """The pointwise-optimal single-period challenger at period ``t``.

    Maximizes ``psi_t + E_iota v_{t+1}(theta)`` cell by cell; because the
    average deviation payoff is a nonnegative mixture over (s, g) cells,
    the cellwise argmax also attains the supremum over all action tables.
    Ties break to the smallest action index for reproducibility.

    Returns the challenger table and its average gain over the profile
    (always >= 0).
    """
    if value_table is None:
        value_table = value(spec, profile, trajectory)
    sigma_t = trajectory.sigma(t)
    q = _q_table(spec, sigma_t, profile.period(t), t, value_table.v[t])
    gw = spec.gamma.weights
    best_actions = np.argmax(q, axis=1)  # first max = smallest index
    y_table = np.repeat(best_actions[:, None], len(spec.preshock_space), axis=1)
    own = _policy_row_values(q, profile.period(t), gw)
    best = _policy_row_values(q, y_table, gw)
    gain = float((best - own) @ sigma_t.weights)
    return y_table, max(gain, 0.0)


def check_equilibrium(
    spec: GameSpec, profile: PolicyProfile, sigma1: Measure, tol: float
) -> EquilibriumReport:
    """Deviation gaps at every period along the profile's own trajectory.

    The certified criterion is the population-averaged gap; the max
    per-state regret is reported alongside as a stricter diagnostic.
    """
    trajectory = propagate(spec, sigma1, profile)
    table = value(spec, profile, trajectory)
    gaps = np.zeros(spec.horizon)
    pointwise = np.zeros(spec.horizon)
    gw = spec.gamma.weights
    for t in range(1, spec.horizon + 1):
        q = _q_table(spec, trajectory.sigma(t), profile.period(t), t, table.v[t])
        best_actions = np.argmax(q, axis=1)
        y_table = np.repeat(best_actions[:, None], len(spec.preshock_space), axis=1)
        own = _policy_row_values(q, profile.period(t), gw)
        best = _policy_row_values(q, y_table, gw)
        gaps[t - 1] = max(float((best - own) @ trajectory.sigma(t).weights), 0.0)
        pointwise[t - 1] = max(float((best - own).max()), 0.0)
    return EquilibriumReport(gaps=gaps, pointwise_gaps=pointwise, tol=tol)


def solve_equilibrium(
    spec: GameSpec,
    sigma1: Measure,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> SolveResult:
    """Iterated best response with monotone acceptance.

    Starting from the lowest-index constant profile, each iteration
    proposes replacing every period's table by its best deviation (computed
    against the current profile's own trajectory). A proposal is accepted
    only if it strictly decreases the max per-period gap; otherwise
    single-period replacements are tried in period order. If no proposal
    improves, the search stops and the result is flagged non-converged --
    best-response iteration has no general convergence guarantee here.
    """
    profile = PolicyProfile.constant(spec, spec.action_space.labels[0])

    def evaluate(p: PolicyProfile):
        traj = propagate(spec, sigma1, p)
        vt = value(spec, p, traj)
        tables = []
        gaps = np.zeros(spec.horizon)
        for t in range(1, spec.horizon + 1):
            y, g = best_deviation(spec, t, p, traj, vt)
            tables.append(y)
            gaps[t - 1] = g
        return gaps, tables

    gaps, br_tables = evaluate(profile)
    history = [float(gaps.max())]
    iterations = 0
    converged = False
    while iterations < max_iter:
        iterations += 1
        current = float(gaps.max())
        if current <= tol:
            converged = True
            break
        proposals = [
            PolicyProfile(spec.state_space, spec.preshock_space, spec.action_space,
                          np.stack(br_tables))
        ]
        proposals += [profile.with_period(t, br_tables[t - 1])
                      for t in range(1, spec.horizon + 1)]
        for candidate in proposals:
            cand_gaps, cand_tables = evaluate(candidate)
            if float(cand_gaps.max()) < current:
                profile, gaps, br_tables = candidate, cand_gaps, cand_tables
                break
        else:
            break  # stuck: no proposal improves the gap
        history.append(float(gaps.max()))
    if not converged and float(gaps.max()) <= tol:
        converged = True
    report = check_equilibrium(spec, profile, sigma1, tol)
    return SolveResult(
        profile=profile,
        report=report,
        converged=converged,
        iterations=iterations,
        gap_history=tuple(history),
    )
