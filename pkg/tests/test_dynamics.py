"""Learned dynamics models, ensembles and ensemble variance."""

import dataclasses

import numpy as np
import pytest

from score_guided_planning import autodiff as ad
from score_guided_planning.config import NetConfig
from score_guided_planning.dynamics import (
    Ensemble,
    dynamics_init,
    ensemble_variance,
    ensemble_variance_descent,
    load_dynamics,
    load_dynamics_result,
    load_ensemble,
    predict,
    save_dynamics,
    save_ensemble,
    train_dynamics,
    train_ensemble,
)
from score_guided_planning.errors import ConfigError, ContractError, FormatError, ShapeError

from conftest import fast_train, integrator_dataset, random_points

NET = NetConfig(hidden=[32])


@pytest.fixture(scope="module")
def trained():
    return train_dynamics(
        integrator_dataset(N=400), NET, fast_train(steps=400, val_fraction=0.2), seed=0
    )


@pytest.fixture(scope="module")
def pair():
    ens, results = train_ensemble(integrator_dataset(N=200), 2, NET, fast_train(steps=60), seed=1)
    return ens, results


def test_single_integrator_is_exact(integrator_model):
    x = np.array([[0.1, 0.2], [0.3, 0.4]])
    u = np.array([[0.05, -0.05], [0.0, 0.1]])
    np.testing.assert_allclose(predict(integrator_model, x, u), x + u)
    assert integrator_model.parameters() == []


def test_untrained_delta_model_predicts_the_average_step():
    ds = integrator_dataset(N=50)
    model = dynamics_init(2, 2, NET, seed=0)
    zeroed = model.with_parameters([np.zeros_like(p) for p in model.parameters()])
    zeroed = dataclasses.replace(zeroed, target_mean=np.array([0.01, -0.02]))
    np.testing.assert_allclose(zeroed.predict(ds.states, ds.actions), ds.states + [0.01, -0.02])


def test_unknown_mode():
    with pytest.raises(ConfigError):
        dynamics_init(2, 2, NET, mode="residual")


def test_training_fits_the_integrator(trained):
    assert set(trained.metrics) == {"train_mse", "val_mse", "val_rmse"}
    assert trained.metrics["val_rmse"] < 0.3
    assert list(trained.log.columns) == ["step", "loss", "val_mse"]
    assert trained.log["step"].iloc[-1] == 400 and trained.step == 400
    ds = integrator_dataset(N=20, seed=9)
    pred = trained.model.predict(ds.states, ds.actions)
    assert np.max(np.abs(pred - ds.next_states)) < 0.05


def test_input_shape_is_checked(trained):
    with pytest.raises(ShapeError):
        trained.model.predict(np.zeros(3), np.zeros(2))


def test_tape_gradient_matches_finite_differences(trained):
    model = trained.model
    x0 = np.array([0.4, 0.6])
    u0 = np.array([0.05, -0.02])

    def f(u):
        return float(np.sum(model.predict(x0, u) ** 2))

    tape = ad.Tape()
    u = tape.leaf(u0)
    out = ad.sum(ad.square(model.predict(x0, u, tape)))
    grad = tape.backward(out).wrt(u)
    np.testing.assert_allclose(grad, ad.numerical_gradient(f, u0), rtol=1e-5, atol=1e-8)


def test_absolute_mode_trains_on_next_states():
    ds = integrator_dataset(N=200, seed=2)
    result = train_dynamics(ds, NET, fast_train(steps=50), mode="absolute", seed=0)
    assert result.model.mode == "absolute"
    np.testing.assert_allclose(result.model.target_mean, ds.next_states.mean(axis=0))
    assert np.isnan(result.metrics["val_mse"])


def test_checkpoint_round_trip(tmp_path, trained):
    save_dynamics(tmp_path / "dyn", trained)
    back = load_dynamics_result(tmp_path / "dyn")
    assert back.step == trained.step
    assert back.metrics["val_rmse"] == pytest.approx(trained.metrics["val_rmse"])
    x, u = random_points(0, 4, 2), random_points(1, 4, 2, scale=0.1)
    np.testing.assert_array_equal(
        load_dynamics(tmp_path / "dyn").predict(x, u), trained.model.predict(x, u)
    )


def test_resume_matches_an_uninterrupted_run():
    ds = integrator_dataset(N=100, seed=4)
    full = train_dynamics(ds, NET, fast_train(steps=30, batch_size=16), seed=2)
    half = train_dynamics(ds, NET, fast_train(steps=15, batch_size=16), seed=2)
    rest = train_dynamics(ds, NET, fast_train(steps=15, batch_size=16), seed=2, resume=half)
    assert rest.step == 30
    for a, b in zip(full.model.parameters(), rest.model.parameters()):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestEnsemble:
    def test_needs_two_members(self, trained):
        with pytest.raises(ConfigError):
            Ensemble((trained.model,))
        with pytest.raises(ConfigError):
            train_ensemble(integrator_dataset(N=20), 1, NET, fast_train(steps=1))

    def test_mean_prediction(self, pair):
        ens, _ = pair
        x, u = random_points(2, 3, 2), random_points(3, 3, 2, scale=0.1)
        members = ens.member_predictions(x, u)
        np.testing.assert_allclose(ens.predict(x, u), (members[0] + members[1]) / 2)

    def test_variance(self, pair, trained):
        ens, _ = pair
        x, u = random_points(4, 5, 2), random_points(5, 5, 2, scale=0.1)
        var = ensemble_variance(ens, x, u)
        assert var.shape == (5,) and np.all(var >= 0)
        assert np.all(ensemble_variance(ens, x, u, reduce="max") >= var)
        same = Ensemble((trained.model, trained.model))
        np.testing.assert_allclose(ensemble_variance(same, x, u), 0.0, atol=1e-24)

    def test_variance_reductions(self, pair):
        ens, _ = pair
        tape = ad.Tape()
        x = tape.leaf(np.zeros((1, 2)))
        with pytest.raises(ContractError):
            ensemble_variance(ens, x, np.zeros((1, 2)), tape, reduce="max")
        with pytest.raises(ConfigError):
            ensemble_variance(ens, np.zeros((1, 2)), np.zeros((1, 2)), reduce="median")

    def test_variance_descent_lowers_the_variance(self, pair):
        ens, _ = pair
        z0 = np.concatenate(
            [random_points(6, 8, 2, scale=2.0), random_points(7, 8, 2, scale=0.5)], axis=-1
        )
        z = ensemble_variance_descent(ens, z0, lr=1e-2, iters=100)
        before = ensemble_variance(ens, z0[:, :2], z0[:, 2:])
        after = ensemble_variance(ens, z[:, :2], z[:, 2:])
        assert np.mean(after) < np.mean(before)
        with pytest.raises(ShapeError):
            ensemble_variance_descent(ens, np.zeros((1, 3)))

    def test_bootstrap_member_depends_only_on_its_seed(self):
        ds = integrator_dataset(N=60, seed=5)
        a, _ = train_ensemble(ds, 2, NET, fast_train(steps=10), bootstrap=True, member_seeds=[5, 6])
        b, _ = train_ensemble(ds, 2, NET, fast_train(steps=10), bootstrap=True, member_seeds=[5, 7])
        for p, q in zip(a.members[0].parameters(), b.members[0].parameters()):
            np.testing.assert_array_equal(p, q)
        assert not np.array_equal(a.members[1].parameters()[0], b.members[1].parameters()[0])

    def test_save_and_load(self, tmp_path, pair):
        ens, results = pair
        manifest = save_ensemble(tmp_path, "ens", ens, results)
        assert manifest.name == "ens.ensemble.json"
        back = load_ensemble(tmp_path, "ens")
        assert back.M == 2
        x, u = random_points(8, 2, 2), random_points(9, 2, 2, scale=0.1)
        np.testing.assert_array_equal(back.predict(x, u), ens.predict(x, u))
        with pytest.raises(FormatError):
            load_ensemble(tmp_path, "missing")
