import math

import numpy as np
import pytest

from pgop.errors import ConfigError, DegenerateError, PositivityError, ProjectionError
from pgop.mdp import PolicyEval, build_random_mdp, evaluate_policy
from pgop.operators import (
    VALUE_FLOOR,
    AlphaSchedule,
    ImprovementSpec,
    ProjectionSpec,
    alpha_divergence,
    compose_step,
    geometric_mixture,
    improve,
    kl_divergence,
    line_search_alpha,
    minka_kl_iteration,
    project,
    project_with_trace,
    projection_gradient,
    projection_objective,
    train,
)
from pgop.operators.compose import read_curve_csv, write_curve_csv
from pgop.policy import SHARED, TABULAR, SoftmaxPolicy, policy_gradient


def one_state_target(q, pi, spec):
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    v = np.sum(pi * q, axis=1)
    ev = PolicyEval(v=v, q=q, occupancy=np.ones(1), j=float(v[0]))
    return improve(ev, pi, spec)


class TestImprove:
    def test_op_reinforce_normalization(self):
        mu = one_state_target([1.0, 3.0], [0.5, 0.5], ImprovementSpec.op_reinforce())
        np.testing.assert_allclose(mu.conditionals[0], [0.25, 0.75])
        np.testing.assert_allclose(mu.state_weights, [1.0])

    def test_polynomial_concentrates(self):
        mu = one_state_target([1.0, 3.0], [0.5, 0.5], ImprovementSpec.polynomial(64))
        assert mu.conditionals[0, 1] > 1 - 1e-8

    def test_polynomial_one_is_op_reinforce(self, small_mdp, rng):
        pi = rng.dirichlet(np.ones(3), size=4)
        ev = evaluate_policy(small_mdp, pi)
        a = improve(ev, pi, ImprovementSpec.polynomial(1.0))
        b = improve(ev, pi, ImprovementSpec.op_reinforce())
        np.testing.assert_array_equal(a.conditionals, b.conditionals)
        np.testing.assert_allclose(a.state_weights, b.state_weights, atol=1e-15)

    def test_state_weights(self, small_mdp, rng):
        pi = rng.dirichlet(np.ones(3), size=4)
        ev = evaluate_policy(small_mdp, pi)
        k = 3.0
        poly = improve(ev, pi, ImprovementSpec.polynomial(k))
        z = np.sum(pi * ev.q**k, axis=1)
        np.testing.assert_allclose(poly.state_weights, ev.occupancy * z / (ev.occupancy @ z), rtol=1e-12)
        np.testing.assert_allclose(poly.conditionals, pi * ev.q**k / z[:, None], rtol=1e-12)
        opr = improve(ev, pi, ImprovementSpec.op_reinforce())
        np.testing.assert_allclose(opr.state_weights, ev.occupancy * ev.v / (ev.occupancy @ ev.v), rtol=1e-12)
        for spec in (ImprovementSpec.ppo_exp(2.0), ImprovementSpec.mpo_exp(2.0)):
            np.testing.assert_allclose(improve(ev, pi, spec).state_weights, ev.occupancy / ev.occupancy.sum())

    def test_exponential_conditionals(self, small_mdp, rng):
        pi = rng.dirichlet(np.ones(3), size=4)
        ev = evaluate_policy(small_mdp, pi)
        ppo = improve(ev, pi, ImprovementSpec.ppo_exp(1.5)).conditionals
        mpo = improve(ev, pi, ImprovementSpec.mpo_exp(1.5)).conditionals
        e = np.exp(1.5 * ev.q)
        np.testing.assert_allclose(ppo, e / e.sum(axis=1, keepdims=True), rtol=1e-12)
        np.testing.assert_allclose(mpo, pi * e / np.sum(pi * e, axis=1, keepdims=True), rtol=1e-12)

    def test_mpo_equals_ppo_under_uniform(self, small_mdp):
        pi = np.full((4, 3), 1 / 3)
        ev = evaluate_policy(small_mdp, pi)
        np.testing.assert_allclose(improve(ev, pi, ImprovementSpec.mpo_exp(3.0)).conditionals,
                                   improve(ev, pi, ImprovementSpec.ppo_exp(3.0)).conditionals, atol=1e-15)

    def test_untouched_states_keep_policy(self, four_room):
        pi = np.full((104, 4), 0.25)
        ev = evaluate_policy(four_room, pi)
        mu = improve(ev, pi, ImprovementSpec.op_reinforce())
        untouched = ev.v <= VALUE_FLOOR
        assert untouched.any()
        np.testing.assert_allclose(mu.conditionals[untouched], pi[untouched])
        assert np.all(mu.state_weights[untouched] == 0)
        assert mu.state_weights.sum() == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(mu.conditionals.sum(axis=1), 1.0, atol=1e-10)

    def test_improved_distribution_beats_policy(self, four_room):
        policy = SoftmaxPolicy.uniform(TABULAR, 104, 4)
        ev = evaluate_policy(four_room, policy.probs())
        new = project(improve(ev, policy.probs(), ImprovementSpec.op_reinforce()), ProjectionSpec.weighted_kl(), policy)
        assert evaluate_policy(four_room, new.probs()).j > ev.j

    def test_positivity_error(self):
        with pytest.raises(PositivityError):
            one_state_target([-1.0, 3.0], [0.5, 0.5], ImprovementSpec.op_reinforce())

    def test_degenerate(self):
        with pytest.raises(DegenerateError):
            one_state_target([0.0, 0.0], [0.5, 0.5], ImprovementSpec.op_reinforce())

    def test_invalid_hyperparameters(self):
        with pytest.raises(ConfigError):
            ImprovementSpec.polynomial(0.0)
        with pytest.raises(ConfigError):
            ImprovementSpec.ppo_exp(-1.0)


class TestDivergences:
    def test_alpha_identity(self, rng):
        p = rng.dirichlet(np.ones(4))
        for a in (0.1, 0.5, 0.9, 1.0):
            assert alpha_divergence(p, p, a) == pytest.approx(0.0, abs=1e-12)

    def test_alpha_near_one_is_kl(self, rng):
        for _ in range(50):
            p, q = rng.dirichlet(np.full(4, 5.0), size=2)
            assert alpha_divergence(p, q, 0.999) == pytest.approx(kl_divergence(p, q), abs=1e-3)

    def test_alpha_to_kl_rate(self, rng):
        # the gap closes linearly in 1 - alpha, even for well-separated pairs
        for _ in range(50):
            p, q = rng.dirichlet(np.ones(4), size=2)
            kl = kl_divergence(p, q)
            gap_3 = abs(alpha_divergence(p, q, 1 - 1e-3) - kl)
            gap_4 = abs(alpha_divergence(p, q, 1 - 1e-4) - kl)
            assert gap_4 < 0.2 * gap_3 + 1e-12

    def test_alpha_nonnegative(self, rng):
        for a in (0.1, 0.5, 0.9):
            for _ in range(1000):
                p, q = rng.dirichlet(np.ones(3), size=2)
                assert alpha_divergence(p, q, a) >= 0

    def test_alpha_range(self):
        with pytest.raises(ConfigError):
            alpha_divergence([0.5, 0.5], [0.5, 0.5], 0.0)

    def test_geometric_mixture_half(self):
        p, q = np.array([0.2, 0.8]), np.array([0.6, 0.4])
        g = np.sqrt(p * q)
        np.testing.assert_allclose(geometric_mixture(p, q, 0.5), g / g.sum())


def random_target(mdp, rng, spec=None, mode=TABULAR):
    policy = SoftmaxPolicy(mode, mdp.n_states, mdp.n_actions,
                           rng.normal(size=mdp.n_states * mdp.n_actions if mode == TABULAR else mdp.n_actions))
    ev = evaluate_policy(mdp, policy.probs())
    return improve(ev, policy.probs(), spec or ImprovementSpec.op_reinforce()), policy, ev


class TestProjection:
    def test_representable_target_is_reproduced(self, small_mdp, rng):
        target, policy, _ = random_target(small_mdp, rng)
        new = project(target, ProjectionSpec.weighted_kl(), policy)
        np.testing.assert_allclose(new.probs(), target.conditionals, atol=1e-12)
        assert projection_objective(target, ProjectionSpec.weighted_kl(), new) == pytest.approx(0.0, abs=1e-12)

    def test_untouched_states_keep_init_logits(self, four_room):
        policy = SoftmaxPolicy(TABULAR, 104, 4, np.random.default_rng(0).normal(size=416))
        ev = evaluate_policy(four_room, policy.probs())
        target = improve(ev, policy.probs(), ImprovementSpec.op_reinforce())
        new = project(target, ProjectionSpec.weighted_kl(), policy)
        idle = target.state_weights == 0
        np.testing.assert_array_equal(new.logits()[idle], policy.logits()[idle])

    def test_alpha_one_matches_kl(self, small_mdp, rng):
        target, _, _ = random_target(small_mdp, rng)
        init = SoftmaxPolicy.uniform(SHARED, small_mdp.n_states, small_mdp.n_actions)
        kl = ProjectionSpec.weighted_kl(solver="gradient_descent")
        a1 = ProjectionSpec.alpha_divergence(1.0, solver="gradient_descent")
        v_kl = projection_objective(target, kl, project(target, kl, init))
        v_a1 = projection_objective(target, a1, project(target, a1, init))
        assert v_kl == pytest.approx(v_a1, abs=1e-8)

    def test_gradient_descent_monotone(self, small_mdp, rng):
        target, _, _ = random_target(small_mdp, rng, ImprovementSpec.polynomial(3.0))
        init = SoftmaxPolicy.uniform(SHARED, small_mdp.n_states, small_mdp.n_actions)
        for spec in (ProjectionSpec.weighted_kl(solver="gradient_descent", step_size=5.0),
                     ProjectionSpec.alpha_divergence(0.4, step_size=5.0),
                     ProjectionSpec.reverse_kl_clipped(2.0, step_size=5.0)):
            _, trace = project_with_trace(target, spec, init)
            assert np.all(np.diff(trace.values) <= 0)

    def test_shared_closed_form_matches_descent(self, four_room):
        policy = SoftmaxPolicy.uniform(SHARED, 104, 4)
        ev = evaluate_policy(four_room, policy.probs())
        target = improve(ev, policy.probs(), ImprovementSpec.polynomial(2.0))
        closed = project(target, ProjectionSpec.weighted_kl(), policy)
        descent = project(target, ProjectionSpec.weighted_kl(solver="gradient_descent", steps=3000, step_size=5.0), policy)
        np.testing.assert_allclose(closed.probs()[0], descent.probs()[0], atol=1e-6)

    def test_one_step_direction_is_policy_gradient(self, four_room):
        policy = SoftmaxPolicy(SHARED, 104, 4, np.array([0.3, -0.2, 0.1, 0.0]))
        ev = evaluate_policy(four_room, policy.probs())
        target = improve(ev, policy.probs(), ImprovementSpec.op_reinforce())
        spec = ProjectionSpec.weighted_kl(solver="gradient_descent", steps=1, step_size=1e-3)
        step = project(target, spec, policy).theta - policy.theta
        pg = policy_gradient(four_room, policy, ev)
        assert step @ pg / (np.linalg.norm(step) * np.linalg.norm(pg)) == pytest.approx(1.0, abs=1e-8)

    def test_reverse_kl_greedy_limit(self, small_mdp, rng):
        target, policy, ev = random_target(small_mdp, rng, ImprovementSpec.ppo_exp(1.0))
        best = np.argmax(target.advantages, axis=1)
        closed = project(target, ProjectionSpec.reverse_kl_clipped(1e9, clip_eps=None, solver="closed_form"), policy)
        np.testing.assert_allclose(closed.probs()[np.arange(4), best], 1.0, atol=1e-12)
        spec = ProjectionSpec.reverse_kl_clipped(math.inf, clip_eps=None, steps=2000, step_size=10.0)
        descent = project(target, spec, policy)
        np.testing.assert_array_equal(np.argmax(descent.probs(), axis=1), best)
        assert np.all(descent.probs()[np.arange(4), best] > policy.probs()[np.arange(4), best])

    def test_reverse_kl_closed_form_is_boltzmann(self, small_mdp, rng):
        target, policy, _ = random_target(small_mdp, rng, ImprovementSpec.ppo_exp(1.0))
        new = project(target, ProjectionSpec.reverse_kl_clipped(2.0, clip_eps=None, solver="closed_form"), policy)
        e = np.exp(2.0 * target.advantages)
        np.testing.assert_allclose(new.probs(), e / e.sum(axis=1, keepdims=True), rtol=1e-10)

    def test_clipping_limits_ratio_gain(self, small_mdp, rng):
        target, policy, _ = random_target(small_mdp, rng, ImprovementSpec.ppo_exp(1.0))
        clipped = project(target, ProjectionSpec.reverse_kl_clipped(math.inf, clip_eps=0.2), policy)
        free = project(target, ProjectionSpec.reverse_kl_clipped(math.inf, clip_eps=None), policy)
        moved = lambda z: 0.5 * np.abs(z.probs() - policy.probs()).sum(axis=1)
        assert np.all(moved(clipped) < moved(free))
        # pushing an action's ratio beyond the clip range earns nothing
        ratio = clipped.probs() / policy.probs()
        assert not np.all(ratio[target.advantages > 0] > 1.2)

    def test_closed_form_refusals(self, small_mdp, rng):
        target, _, _ = random_target(small_mdp, rng)
        shared = SoftmaxPolicy.uniform(SHARED, 4, 3)
        with pytest.raises(ProjectionError):
            project(target, ProjectionSpec.alpha_divergence(0.5, solver="closed_form"), shared)
        with pytest.raises(ProjectionError):
            project(target, ProjectionSpec.reverse_kl_clipped(1.0, clip_eps=0.2, solver="closed_form"), shared)


class TestMinka:
    def test_fixed_at_target(self, small_mdp, rng):
        target, policy, _ = random_target(small_mdp, rng, ImprovementSpec.polynomial(2.0))
        at_target = SoftmaxPolicy.from_probs(TABULAR, target.conditionals)
        out = minka_kl_iteration(target, at_target, 0.5)
        np.testing.assert_allclose(out.probs(), target.conditionals, atol=1e-12)

    def test_agrees_with_gradient_descent_shared(self, four_room):
        policy = SoftmaxPolicy.uniform(SHARED, 104, 4)
        ev = evaluate_policy(four_room, policy.probs())
        target = improve(ev, policy.probs(), ImprovementSpec.polynomial(4.0))
        minka = project(target, ProjectionSpec.alpha_divergence(0.25, solver="minka", steps=2000), policy)
        gd = project(target, ProjectionSpec.alpha_divergence(0.25, steps=5000, step_size=5.0), policy)
        np.testing.assert_allclose(minka.probs()[0], gd.probs()[0], atol=1e-6)

    def test_agrees_with_gradient_descent_tabular(self, small_mdp, rng):
        target, _, _ = random_target(small_mdp, rng, ImprovementSpec.polynomial(2.0))
        start = SoftmaxPolicy(TABULAR, 4, 3, rng.normal(size=12))
        minka = project(target, ProjectionSpec.alpha_divergence(0.5, solver="minka", steps=500), start)
        gd = project(target, ProjectionSpec.alpha_divergence(0.5, steps=5000, step_size=5.0), start)
        np.testing.assert_allclose(minka.probs(), gd.probs(), atol=1e-6)
        np.testing.assert_allclose(minka.probs(), target.conditionals, atol=1e-6)


class TestCompose:
    def test_tabular_op_reinforce_improves(self):
        for seed in range(100):
            mdp = build_random_mdp(4, 3, rng_seed=seed, discount=0.9)
            policy = SoftmaxPolicy(TABULAR, 4, 3, np.random.default_rng(seed).normal(size=12))
            new, diag = compose_step(mdp, policy, ImprovementSpec.op_reinforce(), ProjectionSpec.weighted_kl())
            assert diag.j_after > diag.j_before
            assert diag.bound_at_new >= diag.j_before - 1e-12
            assert diag.divergence_after <= diag.divergence_before

    def test_polynomial_product_formula(self, small_mdp, rng):
        k = 2.0
        pi0 = SoftmaxPolicy(TABULAR, 4, 3, rng.normal(size=12))
        policy, product = pi0, np.ones((4, 3))
        for _ in range(3):
            product = product * evaluate_policy(small_mdp, policy.probs()).q
            policy, _ = compose_step(small_mdp, policy, ImprovementSpec.polynomial(k),
                                     ProjectionSpec.alpha_divergence(1 / k, solver="minka", steps=50))
        expected = pi0.probs() * product**k
        np.testing.assert_allclose(policy.probs(), expected / expected.sum(axis=1, keepdims=True), atol=1e-10)

    def test_four_room_op_reinforce_monotone(self, four_room):
        result = train(four_room, SoftmaxPolicy.uniform(SHARED, 104, 4), ImprovementSpec.op_reinforce(),
                       ProjectionSpec.weighted_kl(), 60)
        assert np.all(np.diff(result.returns) >= -1e-12)

    def test_curve_csv_round_trip(self, tmp_path, small_mdp):
        result = train(small_mdp, SoftmaxPolicy.uniform(SHARED, 4, 3), ImprovementSpec.op_reinforce(),
                       ProjectionSpec.weighted_kl(), 5)
        path = tmp_path / "curve.csv"
        write_curve_csv(path, result.rows)
        rows = read_curve_csv(path)
        assert [r.iteration for r in rows] == list(range(6))
        np.testing.assert_array_equal([r.j for r in rows], result.returns)


class TestLineSearch:
    def test_fallback(self, four_room):
        policy = SoftmaxPolicy.uniform(SHARED, 104, 4)
        assert line_search_alpha(four_room, policy, [1.0], ProjectionSpec.weighted_kl()) == 1.0

    def test_candidates_validated(self, four_room):
        policy = SoftmaxPolicy.uniform(SHARED, 104, 4)
        with pytest.raises(ConfigError):
            line_search_alpha(four_room, policy, [0.5, 0.25], ProjectionSpec.weighted_kl())
        with pytest.raises(ConfigError):
            AlphaSchedule("line_search", (0.5,))

    def test_early_choice_below_one(self, four_room):
        policy = SoftmaxPolicy.uniform(SHARED, 104, 4)
        grid = [0.5 + 0.05 * k for k in range(11)]
        assert line_search_alpha(four_room, policy, grid, ProjectionSpec.weighted_kl()) < 1.0

    def test_chosen_alpha_meets_half_gain(self, four_room):
        from pgop import bounds
        from pgop.operators import with_alpha

        policy = SoftmaxPolicy.uniform(SHARED, 104, 4)
        ev = evaluate_policy(four_room, policy.probs())
        grid = [0.5 + 0.05 * k for k in range(11)]
        chosen = line_search_alpha(four_room, policy, grid, ProjectionSpec.weighted_kl())

        def gain(alpha):
            imp, proj = with_alpha(None, ProjectionSpec.weighted_kl(), alpha)
            new = project(improve(ev, policy.probs(), imp), proj, policy)
            return bounds.operator_lower_bound(ev, policy.probs(), new.probs()) - ev.j

        assert gain(chosen) >= 0.5 * gain(1.0)
        assert all(gain(a) < 0.5 * gain(1.0) for a in grid if a < chosen)


def test_spec_json_round_trip():
    for spec in (ProjectionSpec.weighted_kl(), ProjectionSpec.alpha_divergence(0.3, solver="minka"),
                 ProjectionSpec.reverse_kl_clipped(math.inf, clip_eps=None)):
        assert ProjectionSpec.from_dict(spec.to_dict()) == spec
    for spec in (ImprovementSpec.op_reinforce(), ImprovementSpec.polynomial(4.0), ImprovementSpec.mpo_exp(2.0)):
        assert ImprovementSpec.from_dict(spec.to_dict()) == spec
    assert ImprovementSpec.from_dict({"kind": "polynomial", "alpha": 0.25}).inv_alpha == 4.0
    with pytest.raises(ConfigError):
        ProjectionSpec.from_dict({"kind": "weighted_kl", "bogus": 1})
