"""Tests for the continuum-population engine.

The main oracle here is brute force: for tiny games we enumerate every
shock path (exact expectations, no sampling) and every deviation table,
with the environment law rebuilt by plain dict loops. The engine's
vectorized recursions must agree to float roundoff.
"""

import itertools

import numpy as np
import pytest

from crowdgames import (
    GameSpec,
    InvalidInputError,
    Measure,
    PolicyProfile,
    discrete_space,
    pushforward,
    uniform,
)
from crowdgames.nonatomic import (
    best_deviation,
    check_equilibrium,
    in_action_env,
    propagate,
    solve_equilibrium,
    step_env,
    value,
)


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------

def coupled_spec(horizon=3, coupling=0.5, seed=7):
    """2x2x2x2 game whose payoff depends on the share of players choosing
    action "b"; transitions are a seeded random lookup table."""
    states = discrete_space(["lo", "hi"])
    actions = discrete_space(["a", "b"])
    pres = discrete_space(["calm", "wild"])
    posts = discrete_space(["dn", "up"])
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.0, 0.6, size=(2, 2))
    nxt = rng.integers(0, 2, size=(2, 2, 2))  # indexed by (s, x, i)

    def payoff(t, s, x, mu):
        si, xi = states.index(s), actions.index(x)
        share_b = sum(w for (_, xx), w in mu.items() if xx == "b")
        sign = 1.0 if xi == 0 else -1.0
        return float(base[si, xi] + coupling * share_b * sign)

    def transition(t, s, x, mu, i):
        return states.labels[nxt[states.index(s), actions.index(x), posts.index(i)]]

    return GameSpec(
        horizon=horizon,
        state_space=states,
        action_space=actions,
        preshock_space=pres,
        postshock_space=posts,
        gamma=uniform(pres),
        iota=Measure(posts, [0.25, 0.75]),
        payoff=payoff,
        transition=transition,
        payoff_bounds=(0.6 + coupling,) * horizon,
    )


def flip_spec(flip_mass=0.3, horizon=2):
    """Two states; action is ignored; post-shock "storm" swaps the state."""
    states = discrete_space(["lo", "hi"])
    actions = discrete_space(["only"])
    pres = discrete_space(["g"])
    posts = discrete_space(["calm", "storm"])

    def transition(t, s, x, mu, i):
        if i == "storm":
            return "hi" if s == "lo" else "lo"
        return s

    return GameSpec(
        horizon=horizon,
        state_space=states,
        action_space=actions,
        preshock_space=pres,
        postshock_space=posts,
        gamma=uniform(pres),
        iota=Measure(posts, [1.0 - flip_mass, flip_mass]),
        payoff=lambda t, s, x, mu: 0.0,
        transition=transition,
        payoff_bounds=(1.0,) * horizon,
    )


def constant_payoff_spec(c=0.75, horizon=3):
    """Dyadic constant payoff and two-atom uniform shocks, so every
    backward sum is exact in binary floating point."""
    spec = coupled_spec(horizon=horizon, coupling=0.0)
    return GameSpec(
        horizon=horizon,
        state_space=spec.state_space,
        action_space=spec.action_space,
        preshock_space=spec.preshock_space,
        postshock_space=spec.postshock_space,
        gamma=uniform(spec.preshock_space),
        iota=uniform(spec.postshock_space),
        payoff=lambda t, s, x, mu: c,
        transition=spec.transition,
        payoff_bounds=(c,) * horizon,
    )


# ---------------------------------------------------------------------------
# Oracles: plain-loop environment law and exhaustive path enumeration
# ---------------------------------------------------------------------------

def mu_oracle(spec, sigma, table):
    """The joint state/action law, built point by point."""
    acc = {}
    for si, s in enumerate(spec.state_space.labels):
        for gj, g in enumerate(spec.preshock_space.labels):
            x = spec.action_space.labels[table[si, gj]]
            acc[(s, x)] = acc.get((s, x), 0.0) + sigma.weights[si] * spec.gamma.weights[gj]
    w = np.zeros(len(spec.env_space))
    for key, mass in acc.items():
        w[spec.env_space.index(key)] += mass
    return Measure(spec.env_space, w)


def path_value(spec, profile, trajectory, t_start, s_start, deviation=None):
    """Expected payoff from (t_start, s_start) by exhaustive recursion over
    every pre/post shock branch. Exponential in the horizon -- tiny games
    only."""
    mus = {
        t: mu_oracle(spec, trajectory.sigma(t), profile.period(t))
        for t in range(1, spec.horizon + 1)
    }

    def rec(t, s):
        if t > spec.horizon:
            return 0.0
        si = spec.state_space.index(s)
        table = profile.period(t)
        if deviation is not None and t == deviation[0]:
            table = deviation[1]
        total = 0.0
        for gj, g_mass in enumerate(spec.gamma.weights):
            x = spec.action_space.labels[table[si, gj]]
            branch = spec.payoff(t, s, x, mus[t])
            for ik, i_mass in enumerate(spec.iota.weights):
                nxt = spec.transition(t, s, x, mus[t], spec.postshock_space.labels[ik])
                branch += i_mass * rec(t + 1, nxt)
            total += g_mass * branch
        return total

    return rec(t_start, s_start)


def all_tables(spec):
    n_s, n_g = len(spec.state_space), len(spec.preshock_space)
    n_x = len(spec.action_space)
    for flat in itertools.product(range(n_x), repeat=n_s * n_g):
        yield np.asarray(flat, dtype=np.int64).reshape(n_s, n_g)


# ---------------------------------------------------------------------------
# Environment law
# ---------------------------------------------------------------------------

class TestInActionEnv:
    def test_matches_plain_loop_oracle(self):
        spec = coupled_spec()
        rng = np.random.default_rng(3)
        for _ in range(25):
            w = rng.dirichlet([1.0, 1.0])
            sigma = Measure(spec.state_space, w)
            table = rng.integers(0, 2, size=(2, 2))
            mu = in_action_env(spec, sigma, table)
            expected = mu_oracle(spec, sigma, table)
            assert np.abs(mu.weights - expected.weights).max() <= 1e-15

    def test_state_marginal_is_sigma(self):
        spec = coupled_spec()
        sigma = Measure(spec.state_space, [0.3, 0.7])
        table = np.array([[0, 1], [1, 1]])
        mu = in_action_env(spec, sigma, table)
        marginal = pushforward(mu, lambda lab: lab[0], spec.state_space)
        assert np.abs(marginal.weights - sigma.weights).max() <= 1e-12

    def test_constant_policy_gives_product_with_point_mass(self):
        spec = coupled_spec()
        sigma = Measure(spec.state_space, [0.25, 0.75])
        table = np.ones((2, 2), dtype=np.int64)
        mu = in_action_env(spec, sigma, table)
        assert mu.weights[spec.env_space.index(("lo", "b"))] == pytest.approx(0.25)
        assert mu.weights[spec.env_space.index(("hi", "b"))] == pytest.approx(0.75)
        assert mu.weights[spec.env_space.index(("lo", "a"))] == 0.0

    def test_rejects_sigma_on_wrong_space(self):
        spec = coupled_spec()
        with pytest.raises(InvalidInputError):
            in_action_env(spec, uniform(spec.action_space), np.zeros((2, 2), dtype=int))


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

class TestStepEnv:
    def test_flip_kernel_exact(self):
        spec = flip_spec(flip_mass=0.3)
        a = 0.25
        sigma = Measure(spec.state_space, [a, 1.0 - a])
        out = step_env(spec, sigma, np.zeros((2, 1), dtype=np.int64), t=1)
        assert out.weights[0] == a * 0.7 + (1.0 - a) * 0.3
        assert out.weights[1] == a * 0.3 + (1.0 - a) * 0.7

    def test_identity_transition_fixes_every_law(self):
        spec = coupled_spec()
        ident = GameSpec(
            horizon=spec.horizon,
            state_space=spec.state_space,
            action_space=spec.action_space,
            preshock_space=spec.preshock_space,
            postshock_space=spec.postshock_space,
            gamma=spec.gamma,
            iota=spec.iota,
            payoff=spec.payoff,
            transition=lambda t, s, x, mu, i: s,
            payoff_bounds=spec.payoff_bounds,
        )
        sigma = Measure(spec.state_space, [0.6, 0.4])
        out = step_env(ident, sigma, np.array([[0, 1], [1, 0]]), t=2)
        assert np.abs(out.weights - sigma.weights).max() <= 1e-15

    def test_mass_on_zero_weight_states_is_ignored(self):
        spec = flip_spec()
        sigma = Measure(spec.state_space, [1.0, 0.0])
        out = step_env(spec, sigma, np.zeros((2, 1), dtype=np.int64), t=1)
        assert out.weights[0] == 0.7
        assert out.weights[1] == 0.3


class TestPropagate:
    def test_two_periods_of_the_flip_kernel(self):
        spec = flip_spec(flip_mass=0.3, horizon=2)
        profile = PolicyProfile.constant(spec, "only")
        traj = propagate(spec, Measure(spec.state_space, [1.0, 0.0]), profile)
        assert traj.horizon == 2
        assert traj.sigma(1).weights[0] == 1.0
        assert traj.sigma(2).weights[0] == pytest.approx(0.7, abs=0)
        assert traj.sigma(3).weights[0] == pytest.approx(0.7 * 0.7 + 0.3 * 0.3, abs=0)

    def test_horizon_mismatch_rejected(self):
        spec = flip_spec(horizon=2)
        other = flip_spec(horizon=3)
        profile = PolicyProfile.constant(other, "only")
        with pytest.raises(InvalidInputError):
            propagate(spec, uniform(spec.state_space), profile)

    def test_sigma_accessor_bounds(self):
        spec = flip_spec(horizon=2)
        traj = propagate(spec, uniform(spec.state_space),
                         PolicyProfile.constant(spec, "only"))
        with pytest.raises(InvalidInputError):
            traj.sigma(0)
        with pytest.raises(InvalidInputError):
            traj.sigma(4)


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------

class TestValue:
    def test_constant_payoff_telescopes_exactly(self):
        spec = constant_payoff_spec(c=0.75, horizon=3)
        profile = PolicyProfile.constant(spec, "a")
        traj = propagate(spec, uniform(spec.state_space), profile)
        table = value(spec, profile, traj)
        assert table.v[0, 0] == 2.25
        assert table.v[1, 1] == 1.5
        assert np.all(table.v[3] == 0.0)
        assert table.average(1) == 2.25
        assert table.state_value(2, "hi") == 1.5

    def test_matches_path_enumeration(self):
        spec = coupled_spec(horizon=3, coupling=0.4, seed=11)
        profile = PolicyProfile.from_function(
            spec, lambda t, s, g: "b" if (t + len(s)) % 2 else "a"
        )
        sigma1 = Measure(spec.state_space, [0.35, 0.65])
        traj = propagate(spec, sigma1, profile)
        table = value(spec, profile, traj)
        for s in spec.state_space.labels:
            for t in (1, 2, 3):
                expected = path_value(spec, profile, traj, t, s)
                assert table.state_value(t, s) == pytest.approx(expected, abs=1e-12)
        u1 = sum(
            sigma1.weights[i] * path_value(spec, profile, traj, 1, s)
            for i, s in enumerate(spec.state_space.labels)
        )
        assert table.average(1) == pytest.approx(u1, abs=1e-12)

    def test_deviated_row_matches_enumeration_and_other_rows_untouched(self):
        spec = coupled_spec(horizon=3, coupling=0.4, seed=11)
        profile = PolicyProfile.constant(spec, "a")
        traj = propagate(spec, uniform(spec.state_space), profile)
        plain = value(spec, profile, traj)
        y = np.array([[1, 0], [0, 1]])
        deviated = value(spec, profile, traj, deviation=(2, y))
        for s in spec.state_space.labels:
            expected = path_value(spec, profile, traj, 2, s, deviation=(2, y))
            assert deviated.state_value(2, s) == pytest.approx(expected, abs=1e-12)
        # Rows other than the deviation period are exactly the undeviated ones.
        assert np.array_equal(deviated.v[0], plain.v[0])
        assert np.array_equal(deviated.v[2], plain.v[2])
        assert np.array_equal(deviated.v[3], plain.v[3])

    def test_deviating_to_the_profile_changes_nothing(self):
        spec = coupled_spec()
        profile = PolicyProfile.constant(spec, "b")
        traj = propagate(spec, uniform(spec.state_space), profile)
        plain = value(spec, profile, traj)
        same = value(spec, profile, traj, deviation=(1, profile.period(1)))
        assert np.array_equal(plain.v, same.v)
        assert np.array_equal(plain.u, same.u)

    def test_values_respect_payoff_bounds(self):
        for seed in range(6):
            spec = coupled_spec(horizon=4, coupling=0.3, seed=seed)
            rng = np.random.default_rng(seed + 100)
            profile = PolicyProfile(
                spec.state_space, spec.preshock_space, spec.action_space,
                rng.integers(0, 2, size=(4, 2, 2)),
            )
            traj = propagate(spec, uniform(spec.state_space), profile)
            table = value(spec, profile, traj)
            cap = sum(spec.payoff_bounds)
            assert np.abs(table.v).max() <= cap + 1e-12
            assert np.abs(table.u).max() <= cap + 1e-12

    def test_tampered_trajectory_rejected(self):
        spec = flip_spec(horizon=2)
        profile = PolicyProfile.constant(spec, "only")
        traj = propagate(spec, uniform(spec.state_space), profile)
        bad = traj.sigmas[:2] + (Measure(spec.state_space, [0.9, 0.1]),)
        from crowdgames.nonatomic import EnvironmentTrajectory

        with pytest.raises(InvalidInputError, match="inconsistent"):
            value(spec, profile, EnvironmentTrajectory(bad))

    def test_deviation_period_out_of_range(self):
        spec = flip_spec(horizon=2)
        profile = PolicyProfile.constant(spec, "only")
        traj = propagate(spec, uniform(spec.state_space), profile)
        with pytest.raises(InvalidInputError):
            value(spec, profile, traj, deviation=(3, profile.period(1)))


# ---------------------------------------------------------------------------
# Deviations
# ---------------------------------------------------------------------------

class TestBestDeviation:
    def test_one_period_game_picks_the_payoff_argmax(self):
        states = discrete_space(["s0", "s1"])
        actions = discrete_space(["x0", "x1"])
        pres = discrete_space(["g"])
        posts = discrete_space(["i"])
        pay = {("s0", "x0"): 1.0, ("s0", "x1"): 3.0,
               ("s1", "x0"): 2.0, ("s1", "x1"): 0.0}
        spec = GameSpec(
            horizon=1,
            state_space=states, action_space=actions,
            preshock_space=pres, postshock_space=posts,
            gamma=uniform(pres), iota=uniform(posts),
            payoff=lambda t, s, x, mu: pay[(s, x)],
            transition=lambda t, s, x, mu, i: s,
            payoff_bounds=(3.0,),
        )
        profile = PolicyProfile.constant(spec, "x0")
        traj = propagate(spec, uniform(states), profile)
        y, gain = best_deviation(spec, 1, profile, traj)
        assert y[0, 0] == 1 and y[1, 0] == 0
        assert gain == pytest.approx(0.5 * (3.0 - 1.0), abs=0)

    def test_beats_every_enumerated_table(self):
        spec = coupled_spec(horizon=3, coupling=0.45, seed=2)
        profile = PolicyProfile.from_function(
            spec, lambda t, s, g: "a" if g == "calm" else "b"
        )
        sigma1 = Measure(spec.state_space, [0.55, 0.45])
        traj = propagate(spec, sigma1, profile)

        def oracle_gain(t, y):
            sig = traj.sigma(t).weights
            total = 0.0
            for i, s in enumerate(spec.state_space.labels):
                dev = path_value(spec, profile, traj, t, s, deviation=(t, y))
                base = path_value(spec, profile, traj, t, s)
                total += sig[i] * (dev - base)
            return total

        for t in (1, 2, 3):
            best_gain = max(oracle_gain(t, y) for y in all_tables(spec))
            y_engine, engine_gain = best_deviation(spec, t, profile, traj)
            assert engine_gain == pytest.approx(max(best_gain, 0.0), abs=1e-12)
            assert oracle_gain(t, y_engine) == pytest.approx(best_gain, abs=1e-12)

    def test_gain_is_nonnegative_and_ties_break_low(self):
        spec = constant_payoff_spec()
        profile = PolicyProfile.constant(spec, "b")
        traj = propagate(spec, uniform(spec.state_space), profile)
        y, gain = best_deviation(spec, 1, profile, traj)
        assert gain == 0.0
        assert np.all(y == 0)  # all actions tie; smallest index wins


class TestCheckEquilibrium:
    def test_gaps_match_enumeration(self):
        spec = coupled_spec(horizon=2, coupling=0.5, seed=5)
        profile = PolicyProfile.constant(spec, "a")
        sigma1 = Measure(spec.state_space, [0.5, 0.5])
        report = check_equilibrium(spec, profile, sigma1, tol=1e-9)
        traj = propagate(spec, sigma1, profile)
        for t in (1, 2):
            gains = []
            for y in all_tables(spec):
                total = 0.0
                for i, s in enumerate(spec.state_space.labels):
                    dev = path_value(spec, profile, traj, t, s, deviation=(t, y))
                    base = path_value(spec, profile, traj, t, s)
                    total += traj.sigma(t).weights[i] * (dev - base)
                gains.append(total)
            assert report.gaps[t - 1] == pytest.approx(max(gains), abs=1e-12)
        assert report.max_gap == report.gaps.max()

    def test_pointwise_gap_dominates_average(self):
        spec = coupled_spec(horizon=3, coupling=0.5, seed=9)
        profile = PolicyProfile.constant(spec, "b")
        report = check_equilibrium(spec, profile, uniform(spec.state_space), tol=1e-9)
        assert np.all(report.pointwise_gaps >= report.gaps - 1e-15)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

class TestSolveEquilibrium:
    def test_dominant_action_found_immediately(self):
        spec = coupled_spec(coupling=0.0, seed=4)
        strong = GameSpec(
            horizon=spec.horizon,
            state_space=spec.state_space,
            action_space=spec.action_space,
            preshock_space=spec.preshock_space,
            postshock_space=spec.postshock_space,
            gamma=spec.gamma,
            iota=spec.iota,
            payoff=lambda t, s, x, mu: 1.0 if x == "b" else 0.0,
            transition=spec.transition,
            payoff_bounds=(1.0,) * spec.horizon,
        )
        result = solve_equilibrium(strong, uniform(spec.state_space), tol=1e-9)
        assert result.converged
        assert np.all(result.profile.actions == 1)
        assert result.report.max_gap == 0.0

    def test_decoupled_game_reaches_the_dp_optimum(self):
        spec = coupled_spec(coupling=0.0, seed=12)
        result = solve_equilibrium(spec, uniform(spec.state_space), tol=1e-10)
        assert result.converged
        assert result.report.certified
        # With no population coupling this is a single-agent control
        # problem: no enumerated table can beat the solved profile.
        traj = propagate(spec, uniform(spec.state_space), result.profile)
        for t in (1, 2, 3):
            for y in all_tables(spec):
                total = 0.0
                for i, s in enumerate(spec.state_space.labels):
                    dev = path_value(spec, result.profile, traj, t, s, deviation=(t, y))
                    base = path_value(spec, result.profile, traj, t, s)
                    total += traj.sigma(t).weights[i] * (dev - base)
                assert total <= 1e-10

    def test_coupled_game_certified_when_converged(self):
        spec = coupled_spec(coupling=0.35, seed=7)
        result = solve_equilibrium(spec, Measure(spec.state_space, [0.4, 0.6]))
        assert result.gap_history == tuple(sorted(result.gap_history, reverse=True))
        if result.converged:
            assert result.report.max_gap <= 1e-6
        else:
            assert result.report.max_gap > 1e-6

    def test_history_strictly_decreases(self):
        spec = coupled_spec(coupling=0.35, seed=1)
        result = solve_equilibrium(spec, uniform(spec.state_space))
        diffs = np.diff(result.gap_history)
        assert np.all(diffs < 0.0) or len(result.gap_history) == 1
