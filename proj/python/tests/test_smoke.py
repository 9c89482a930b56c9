import json
import math

import numpy as np
import pytest

import milo


def test_gridworld_optimal_value_matches_policy_value():
    env = milo.make_gridworld(width=4, height=4, horizon=12, slip=0.0)
    policy, optimum = milo.optimal_policy(env)
    assert env.transition.shape == (64, 16)
    assert optimum == pytest.approx(6.0)
    assert milo.value(env, policy) == pytest.approx(optimum, abs=1e-12)
    uniform = milo.TabularPolicy.uniform(16, 4)
    assert milo.value(env, uniform) > optimum


def test_occupancy_is_a_distribution():
    env = milo.make_random_mdp(5, 3, 7, seed=3)
    d = milo.occupancy(env, milo.TabularPolicy.uniform(5, 3))
    assert d.shape == (5, 3)
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
    assert (d >= 0).all()


def test_tabular_model_counts_and_sigma():
    model = milo.TabularModel.fit([0, 0, 1], [1, 1, 0], [1, 0, 1], n_states=2, n_actions=2, lam=1.0)
    assert model.counts[0, 1] == 2
    np.testing.assert_allclose(model.p_hat[1], [1 / 3, 1 / 3])
    expected = math.sqrt((2 * math.log(2) + math.log(2 * 2 * 2 / 0.1)) / (2 * 3)) + 1 / 3
    assert model.sigma_table(0.1)[0, 1] == pytest.approx(expected, rel=1e-12)
    assert milo.sigma_tabular(2, 2, 2.0, 1.0, 0.1) == pytest.approx(expected, rel=1e-12)


def test_one_hot_condition_number_equals_concentrability():
    rng = np.random.default_rng(0)
    de = rng.random((3, 2))
    de /= de.sum()
    rho = rng.random((3, 2))
    rho /= rho.sum()
    c = milo.concentrability(de, rho)
    r = milo.relative_condition_number(milo.one_hot_covariance(de), milo.one_hot_covariance(rho))
    assert c == pytest.approx((de / rho).max(), rel=1e-12)
    assert r == pytest.approx(c, rel=1e-9)
    rho[0, 0] = 0.0
    assert math.isinf(milo.concentrability(de, rho / rho.sum()))


def test_bad_inputs_raise_config_error():
    with pytest.raises(milo.ConfigError):
        milo.sigma_tabular(2, 2, 1.0, 1.0, 1.5)
    with pytest.raises(ValueError):
        milo.load_config({"name": "x", "env": {"kind": "nowhere"}})


def test_pipeline_round_trip(tmp_path):
    config = {
        "name": "py-smoke",
        "env": {"kind": "gridworld", "width": 3, "height": 3, "horizon": 8, "slip": 0.1},
        "expert": {"n_e": 10, "pool_trajectories": 10},
        "behavior": {"target_score": 0.5, "label": "50%"},
        "offline": {"n_o": 300},
        "solver": {"iterations": 5},
        "methods": ["milo", "bc-expert"],
        "seeds": [0, 1],
        "threads": 1,
        "out": str(tmp_path / "out"),
    }
    assert "milo" in milo.known_methods
    manifest = milo.generate(config)
    assert manifest
    summary = milo.run(config)
    assert set(summary["methods"]) == {"milo", "bc-expert"}
    assert len(summary["methods"]["milo"]["normalized_score"]["per_seed"]) == 2
    coverage = milo.diagnose(config)
    assert "concentrability" in coverage
    scores, tiers = milo.report(tmp_path / "out")
    assert "py-smoke" in scores
    assert "50%" in tiers
    saved = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert saved["name"] == "py-smoke"
    with pytest.raises(milo.DataError):
        milo.report(tmp_path / "nothing-here")
