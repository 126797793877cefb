"""Feedback policies trained through a model with the score penalty."""

import numpy as np
import pytest

from score_guided_planning import autodiff as ad
from score_guided_planning.environments import Box, make_env
from score_guided_planning.errors import ConfigError, NumericError
from score_guided_planning.policy_search import (
    closed_loop_rollout,
    closed_loop_value,
    policy_init,
    policy_search_step,
    start_sampler,
    train_policy,
    true_closed_loop_cost,
)
from score_guided_planning.score_model import ExactScore, make_schedule

from conftest import integrator_dataset


class NanModel:
    n = 2
    m = 2

    def predict(self, x, u, tape=None, *, params=None):
        return ad.mul(ad.add(x, u), np.nan)


@pytest.fixture
def box():
    return Box([-0.1, -0.1], [0.1, 0.1])


def test_actions_stay_in_the_box(box):
    policy = policy_init(2, box, hidden=[8], seed=1)
    x = np.random.default_rng(0).normal(scale=100.0, size=(50, 2))
    u = policy.act(x)
    assert u.shape == (50, 2) and np.all(np.abs(u) <= 0.1)


def test_closed_loop_rollout_shapes(integrator_model, box):
    policy = policy_init(2, box)
    xs, us = closed_loop_rollout(policy, integrator_model, np.zeros(2), 4)
    assert xs.shape == (5, 2) and us.shape == (4, 2)
    np.testing.assert_allclose(xs[1:], np.cumsum(us, axis=0))


def test_start_sampler():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(start_sampler([1.0, 2.0])(rng, 3), [[1.0, 2.0]] * 3)
    spread = start_sampler([1.0, 2.0], spread=0.5)(rng, 100)
    assert spread.shape == (100, 2) and spread.std(axis=0).min() > 0.3


@pytest.mark.parametrize("beta", [0.0, 0.5])
def test_gradient_matches_finite_differences(integrator_model, goal_reward, box, beta):
    oracle = ExactScore(integrator_dataset(N=80).point_set(), make_schedule(0.3, 0.1, 2))
    policy = policy_init(2, box, seed=2)
    x1 = np.array([0.3, 0.2])
    T = 3
    pg = policy_search_step(
        policy,
        integrator_model,
        oracle,
        goal_reward,
        start_sampler(x1),
        1,
        beta,
        2,
        T=T,
        rng=np.random.default_rng(0),
    )
    assert (pg.n_used, pg.n_dropped) == (1, 0)

    params = policy.parameters()

    def value(W):
        candidate = policy.with_parameters([W, *params[1:]])
        return closed_loop_value(
            candidate, integrator_model, x1, T, goal_reward, oracle, beta, 2
        ).total

    fd = ad.numerical_gradient(value, params[0], h=1e-6)
    assert ad.relative_error(pg.grads[0], fd) < 1e-5
    if beta == 0:
        expected = closed_loop_value(
            policy, integrator_model, x1, T, goal_reward, None, 0.0, 2
        ).total
        assert pg.objective == pytest.approx(expected)


def test_invalid_steps(integrator_model, goal_reward, box):
    policy = policy_init(2, box)
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        policy_search_step(
            policy,
            integrator_model,
            None,
            goal_reward,
            start_sampler(np.zeros(2)),
            0,
            0.0,
            1,
            T=2,
            rng=rng,
        )
    with pytest.raises(ConfigError):
        policy_search_step(
            policy,
            integrator_model,
            None,
            goal_reward,
            start_sampler(np.zeros(2)),
            1,
            1.0,
            1,
            T=2,
            rng=rng,
        )


def test_all_divergent_rollouts(goal_reward, box):
    policy = policy_init(2, box)
    with pytest.raises(NumericError, match="All policy-search rollouts diverged"):
        policy_search_step(
            policy,
            NanModel(),
            None,
            goal_reward,
            start_sampler(np.zeros(2)),
            3,
            0.0,
            1,
            T=2,
            rng=np.random.default_rng(0),
        )


def test_training_lowers_the_true_cost(integrator_model):
    env = make_env("integrator", {"episode_length": 8})
    policy = policy_init(2, env.latent_action_box, seed=0)
    result = train_policy(
        policy,
        integrator_model,
        None,
        env.reward,
        start_sampler(env.start, spread=0.05),
        T=8,
        steps=60,
        n_mc=4,
        lr=5e-2,
        env=env,
    )
    assert result.metrics["true_cost_after"] < result.metrics["true_cost_before"]
    assert list(result.log.columns) == ["step", "objective", "n_dropped"]
    assert result.step == 60 and (result.log["n_dropped"] == 0).all()
    after = result.metrics["true_cost_after"]
    assert true_closed_loop_cost(result.model, env) == pytest.approx(after)
