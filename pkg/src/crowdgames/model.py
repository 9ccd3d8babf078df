"""Game primitives: spaces, shock laws, payoff/transition callbacks, policies.

A game is described by four finite metric spaces -- states S, actions X,
pre-action shocks G, post-action shocks I -- together with shock laws
``gamma`` on G and ``iota`` on I, a per-period payoff ``psi_t(s, x, mu)``
and transition ``theta_t(s, x, mu, i)``, and per-period payoff bounds.
The environment argument ``mu`` is always a :class:`~crowdgames.measure.Measure`
on the product space S x X describing the joint state/action distribution
of the whole population mid-period; callbacks may inspect it arbitrarily.

Policies map (state, pre-action shock) to an action each period. Randomized
behaviour is realized solely through the shock g -- there is no separate
mixed-action representation.

Specs and policies are immutable after construction and safe to share
across threads; payoff/transition callbacks are required to be pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Sequence

import numpy as np

from .errors import InvalidInputError
from .measure import (
    FiniteSpace,
    Measure,
    ProductSpace,
    delta,
    product,
    prohorov,
    uniform,
)

__all__ = [
    "GameSpec",
    "StationarySpec",
    "PolicyProfile",
    "policy_table",
    "validate",
    "continuity_probe",
    "ProbeRow",
    "ModulusReport",
]

Label = Hashable
PayoffFn = Callable[[int, Label, Label, Measure], float]
TransitionFn = Callable[[int, Label, Label, Measure, Label], Label]

_BOUND_SLACK = 1e-12


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GameSpec:
    """A finite-horizon symmetric population game.

    Parameters
    ----------
    horizon : int
        Number of periods, >= 1. Periods are 1-based throughout.
    state_space, action_space, preshock_space, postshock_space : FiniteSpace
    gamma : Measure
        Law of the pre-action shock, on ``preshock_space``.
    iota : Measure
        Law of the post-action shock, on ``postshock_space``.
    payoff : callable ``(t, s, x, mu) -> float``
    transition : callable ``(t, s, x, mu, i) -> state label``
    payoff_bounds : sequence of float
        One positive bound per period; ``|payoff(t, ...)| <= payoff_bounds[t-1]``.
    """

    horizon: int
    state_space: FiniteSpace
    action_space: FiniteSpace
    preshock_space: FiniteSpace
    postshock_space: FiniteSpace
    gamma: Measure
    iota: Measure
    payoff: PayoffFn
    transition: TransitionFn
    payoff_bounds: tuple[float, ...]

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")
        object.__setattr__(self, "payoff_bounds", tuple(float(b) for b in self.payoff_bounds))
        if len(self.payoff_bounds) != self.horizon:
            raise InvalidInputError(
                f"need {self.horizon} payoff bounds, got {len(self.payoff_bounds)}"
            )
        if any(b <= 0 for b in self.payoff_bounds):
            raise InvalidInputError("payoff bounds must be positive")
        if self.gamma.space != self.preshock_space:
            raise InvalidInputError("gamma must live on the pre-shock space")
        if self.iota.space != self.postshock_space:
            raise InvalidInputError("iota must live on the post-shock space")

    @cached_property
    def env_space(self) -> ProductSpace:
        """The space S x X that environments live on."""
        return ProductSpace([self.state_space, self.action_space])

    def total_bound(self) -> float:
        """Sum of the per-period payoff bounds."""
        return float(sum(self.payoff_bounds))


@dataclass(frozen=True, eq=False)
class StationarySpec:
    """Time-invariant primitives with geometric discounting.

    Equivalent to an infinite-horizon game whose period-t payoff is
    ``alpha**(t-1) * payoff``; :meth:`lift` materializes the finite-horizon
    truncation as a :class:`GameSpec`.
    """

    state_space: FiniteSpace
    action_space: FiniteSpace
    preshock_space: FiniteSpace
    postshock_space: FiniteSpace
    gamma: Measure
    iota: Measure
    payoff: Callable[[Label, Label, Measure], float]
    transition: Callable[[Label, Label, Measure, Label], Label]
    payoff_bound: float
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise InvalidInputError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.payoff_bound <= 0:
            raise InvalidInputError("payoff bound must be positive")
        if self.gamma.space != self.preshock_space:
            raise InvalidInputError("gamma must live on the pre-shock space")
        if self.iota.space != self.postshock_space:
            raise InvalidInputError("iota must live on the post-shock space")

    @cached_property
    def env_space(self) -> ProductSpace:
        return ProductSpace([self.state_space, self.action_space])

    def lift(self, horizon: int) -> GameSpec:
        """The finite-horizon game with payoffs discounted by ``alpha**(t-1)``."""
        psi, theta, alpha = self.payoff, self.transition, self.alpha

        def payoff_t(t, s, x, mu):
            return alpha ** (t - 1) * psi(s, x, mu)

        def transition_t(t, s, x, mu, i):
            return theta(s, x, mu, i)

        return GameSpec(
            horizon=horizon,
            state_space=self.state_space,
            action_space=self.action_space,
            preshock_space=self.preshock_space,
            postshock_space=self.postshock_space,
            gamma=self.gamma,
            iota=self.iota,
            payoff=payoff_t,
            transition=transition_t,
            payoff_bounds=tuple(
                self.payoff_bound * alpha ** (t - 1) for t in range(1, horizon + 1)
            ),
        )


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def policy_table(
    state_space: FiniteSpace,
    preshock_space: FiniteSpace,
    action_space: FiniteSpace,
    fn: Callable[[Label, Label], Label],
) -> np.ndarray:
    """Tabulate a single-period policy ``(s, g) -> x`` as an index array.

    The returned ``(|S|, |G|)`` int array is the representation all engines
    use for one period's policy; entry ``[i, j]`` is the action index chosen
    at state ``i`` under pre-shock ``j``.
    """
    table = np.empty((len(state_space), len(preshock_space)), dtype=np.int64)
    for i, s in enumerate(state_space.labels):
        for j, g in enumerate(preshock_space.labels):
            table[i, j] = action_space.index(fn(s, g))
    table.setflags(write=False)
    return table


@dataclass(frozen=True, eq=False)
class PolicyProfile:
    """Per-period policies ``x_t : S x G -> X`` for a finite-horizon game.

    ``actions[t-1, i, j]`` is the action index at period t, state i,
    pre-shock j.
    """

    state_space: FiniteSpace
    preshock_space: FiniteSpace
    action_space: FiniteSpace
    actions: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.actions)
        if a.ndim != 3 or a.shape[1:] != (len(self.state_space), len(self.preshock_space)):
            raise InvalidInputError(
                f"policy array shape {a.shape} does not match "
                f"(horizon, {len(self.state_space)}, {len(self.preshock_space)})"
            )
        if not np.issubdtype(a.dtype, np.integer):
            raise InvalidInputError("policy entries must be integer action indices")
        if a.shape[0] < 1:
            raise InvalidInputError("a profile needs at least one period")
        if (a < 0).any() or (a >= len(self.action_space)).any():
            raise InvalidInputError("policy entries must index the action space")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def period(self, t: int) -> np.ndarray:
        """The period-t table (1-based)."""
        if not 1 <= t <= self.horizon:
            raise InvalidInputError(f"period {t} outside 1..{self.horizon}")
        return self.actions[t - 1]

    def action(self, t: int, s: Label, g: Label) -> Label:
        idx = self.period(t)[self.state_space.index(s), self.preshock_space.index(g)]
        return self.action_space.labels[idx]

    def with_period(self, t: int, table: np.ndarray) -> "PolicyProfile":
        """A copy of this profile with period t replaced."""
        if not 1 <= t <= self.horizon:
            raise InvalidInputError(f"period {t} outside 1..{self.horizon}")
        stacked = self.actions.copy()
        stacked[t - 1] = table
        return PolicyProfile(self.state_space, self.preshock_space, self.action_space, stacked)

    @classmethod
    def constant(cls, spec: GameSpec, action: Label) -> "PolicyProfile":
        """Every state, shock, and period plays ``action``."""
        idx = spec.action_space.index(action)
        shape = (spec.horizon, len(spec.state_space), len(spec.preshock_space))
        return cls(
            spec.state_space,
            spec.preshock_space,
            spec.action_space,
            np.full(shape, idx, dtype=np.int64),
        )

    @classmethod
    def from_function(
        cls, spec: GameSpec, fn: Callable[[int, Label, Label], Label]
    ) -> "PolicyProfile":
        """Tabulate ``fn(t, s, g) -> action label`` over all periods."""
        tables = [
            policy_table(spec.state_space, spec.preshock_space, spec.action_space,
                         lambda s, g, _t=t: fn(_t, s, g))
            for t in range(1, spec.horizon + 1)
        ]
        return cls(spec.state_space, spec.preshock_space, spec.action_space,
                   np.stack(tables))

    @classmethod
    def stationary(
        cls,
        spec_like: "GameSpec | StationarySpec",
        table: np.ndarray,
        horizon: int,
    ) -> "PolicyProfile":
        """Repeat one period table across ``horizon`` periods."""
        return cls(
            spec_like.state_space,
            spec_like.preshock_space,
            spec_like.action_space,
            np.broadcast_to(table, (horizon,) + table.shape).copy(),
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _default_probe_envs(spec: GameSpec | StationarySpec) -> list[Measure]:
    envs = [product(uniform(spec.state_space), delta(spec.action_space, x))
            for x in spec.action_space.labels]
    envs.append(uniform(spec.env_space))
    return envs


def validate(spec: GameSpec, probe_envs: Sequence[Measure] | None = None) -> list[str]:
    """Exhaustively check payoff bounds and transition ranges.

    Every ``(t, s, x)`` (and ``i`` for transitions) is evaluated against each
    probe environment; the default probe set holds the uniform joint law
    plus one single-action law per action. Returns a list of human-readable
    violation strings -- empty iff no problem was found. Never raises for a
    misbehaving callback: exceptions are reported as violations too.
    """
    envs = list(probe_envs) if probe_envs is not None else _default_probe_envs(spec)
    problems: list[str] = []
    for t in range(1, spec.horizon + 1):
        bound = spec.payoff_bounds[t - 1]
        for s in spec.state_space.labels:
            for x in spec.action_space.labels:
                for k, mu in enumerate(envs):
                    try:
                        val = spec.payoff(t, s, x, mu)
                    except Exception as exc:  # totality check
                        problems.append(f"period {t}: payoff raised at ({s!r}, {x!r}): {exc}")
                        continue
                    if not np.isfinite(val):
                        problems.append(f"period {t}: payoff not finite at ({s!r}, {x!r})")
                    elif abs(val) > bound + _BOUND_SLACK:
                        problems.append(
                            f"period {t}: |payoff({s!r}, {x!r})| = {abs(val):.6g} "
                            f"exceeds bound {bound:.6g} (probe env {k})"
                        )
                    for i in spec.postshock_space.labels:
                        try:
                            out = spec.transition(t, s, x, mu, i)
                        except Exception as exc:
                            problems.append(
                                f"period {t}: transition raised at ({s!r}, {x!r}, {i!r}): {exc}"
                            )
                            continue
                        if out not in spec.state_space:
                            problems.append(
                                f"period {t}: transition({s!r}, {x!r}, {i!r}) -> {out!r} "
                                "is not a state"
                            )
    return problems


# ---------------------------------------------------------------------------
# Continuity probing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeRow:
    """One sampled input pair and its observed output gaps."""

    state_distance: float
    action_distance: float
    env_distance: float
    payoff_gap: float
    transition_gap: float  # iota-expected distance between the two next states

    @property
    def input_distance(self) -> float:
        return max(self.state_distance, self.action_distance, self.env_distance)


@dataclass(frozen=True)
class ModulusReport:
    """Raw probe pairs plus a cumulative empirical modulus of continuity."""

    rows: tuple[ProbeRow, ...]

    def binned(self, num_bins: int = 8):
        """Cumulative moduli at ``num_bins`` input-distance thresholds.

        Returns rows ``(threshold, payoff_modulus, transition_modulus,
        pairs_within)`` where each modulus is the max observed gap over all
        pairs whose input distance is <= the threshold. Cumulative maxima
        are nondecreasing by construction, as a modulus of continuity is.
        """
        if not self.rows:
            return []
        dists = np.array([r.input_distance for r in self.rows])
        top = float(dists.max()) or 1.0
        edges = np.linspace(top / num_bins, top, num_bins)
        out = []
        for edge in edges:
            mask = dists <= edge + 1e-15
            pg = max((r.payoff_gap for r, m in zip(self.rows, mask) if m), default=0.0)
            tg = max((r.transition_gap for r, m in zip(self.rows, mask) if m), default=0.0)
            out.append((float(edge), pg, tg, int(mask.sum())))
        return out


def continuity_probe(
    spec: GameSpec, num_env_pairs: int, rng: np.random.Generator
) -> ModulusReport:
    """Sample nearby inputs and report how far outputs move.

    For each of ``num_env_pairs`` draws: pick a period, a pair of states, a
    pair of actions, and a pair of Prohorov-close environments; record the
    payoff gap and the iota-expected distance between the transition
    outputs. This produces *evidence* about the smoothness the limit
    theorems assume -- finite samples cannot certify it for black-box
    callbacks.
    """
    S, X = spec.state_space, spec.action_space
    env_sp = spec.env_space
    iw = spec.iota.weights
    ilabels = spec.postshock_space.labels
    rows = []
    for _ in range(num_env_pairs):
        t = int(rng.integers(1, spec.horizon + 1))
        si, sj = rng.integers(len(S)), rng.integers(len(S))
        xi, xj = rng.integers(len(X)), rng.integers(len(X))
        w = rng.dirichlet(np.ones(len(env_sp)))
        lam = rng.uniform(0.0, 0.3)
        w2 = (1.0 - lam) * w + lam * rng.dirichlet(np.ones(len(env_sp)))
        mu, mu2 = Measure(env_sp, w), Measure(env_sp, w2)

        s, s2 = S.labels[si], S.labels[sj]
        x, x2 = X.labels[xi], X.labels[xj]
        pay_gap = abs(spec.payoff(t, s, x, mu) - spec.payoff(t, s2, x2, mu2))
        tr_gap = 0.0
        for i_lab, i_w in zip(ilabels, iw):
            if i_w == 0.0:
                continue
            out1 = spec.transition(t, s, x, mu, i_lab)
            out2 = spec.transition(t, s2, x2, mu2, i_lab)
            tr_gap += i_w * S.dist[S.index(out1), S.index(out2)]
        rows.append(
            ProbeRow(
                state_distance=float(S.dist[si, sj]),
                action_distance=float(X.dist[xi, xj]),
                env_distance=prohorov(mu, mu2),
                payoff_gap=float(pay_gap),
                transition_gap=float(tr_gap),
            )
        )
    return ModulusReport(rows=tuple(rows))
