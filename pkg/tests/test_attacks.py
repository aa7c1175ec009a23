import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbc.attacks import ThreatModel, budget_ok, eot_pgd, fgsm, pgd, project, score_query_attack
from bbc.data import moons2d, tinygrid
from bbc.ensemble import BbcEnsemble, BbcTrainConfig, loss_input_gradient, train
from bbc.errors import ConfigError, ContractError
from bbc.models import TrainConfig, VictimClassifier, freeze, train_standard
from bbc.numcore import LayerSpec
from bbc.samplers import SgldConfig

import oracles


def linear_model(W, b=None):
    W = np.asarray(W, dtype=float)
    b = np.zeros(W.shape[1]) if b is None else np.asarray(b, dtype=float)
    return freeze(VictimClassifier([W, b], [LayerSpec(W.shape[0], W.shape[1], "identity")]))


@pytest.fixture(scope="module")
def moons_setup():
    data = moons2d(300, 0.1, seed=2)
    victim = freeze(train_standard(data, TrainConfig(epochs=100, seed=0)))
    ens = BbcEnsemble.create(victim, 3, seed=4)
    train(ens, data, BbcTrainConfig(iterations=20, batch_pos=32, batch_neg=32, sgld_x=SgldConfig(0.05, 10),
                                    sgld_adv=SgldConfig(0.05, 5), seed=4))
    return data, victim, ens


def test_fgsm_zero_gradient():
    model = linear_model(np.zeros((3, 2)))
    x = np.array([[0.2, 0.5, 0.7]])
    res = fgsm(model, x, [0], ThreatModel(epsilon=0.1))
    assert np.array_equal(res.x_adv, x)


def test_fgsm_logistic_sign():
    for w in (0.5, 3.0):
        model = linear_model([[0.0, w]])
        x = np.array([[0.4]])
        res = fgsm(model, x, [0], ThreatModel(epsilon=0.05))
        assert np.sign(res.x_adv[0, 0] - x[0, 0]) == np.sign(w)


def test_zero_epsilon():
    model = linear_model([[1.0, -1.0], [0.5, 0.5]])
    x = np.array([[0.6, 0.2], [0.1, 0.9]])
    y = np.array([0, 0])
    res = fgsm(model, x, y, ThreatModel(epsilon=0.0))
    assert np.array_equal(res.x_adv, x)
    assert np.array_equal(res.success, model.predict(x) != y)


def test_l2_projection_radius():
    tm = ThreatModel(norm="l2", epsilon=0.3, box=None)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 5))
    d = rng.normal(size=(20, 5))
    d *= 2 * 0.3 / np.linalg.norm(d, axis=1, keepdims=True)
    out = project(x + d, x, tm)
    np.testing.assert_allclose(np.linalg.norm(out - x, axis=1), 0.3, rtol=1e-14)
    np.testing.assert_allclose((out - x) / np.linalg.norm(out - x, axis=1, keepdims=True),
                               d / np.linalg.norm(d, axis=1, keepdims=True), rtol=1e-12)


def test_pgd_one_step_is_fgsm(moons_setup):
    data, _, ens = moons_setup
    tm = ThreatModel(epsilon=0.15, step=0.15, iterations=1)
    a, b = pgd(ens, data.x, data.y, tm), fgsm(ens, data.x, data.y, tm)
    assert np.array_equal(a.x_adv, b.x_adv)


def test_eot_single_sample_is_pgd(moons_setup):
    data, _, ens = moons_setup
    tm = ThreatModel(epsilon=0.15, iterations=10, random_start=True, seed=3)
    a, b = eot_pgd(ens, data.x, data.y, tm), pgd(ens, data.x, data.y, tm)
    assert np.array_equal(a.x_adv, b.x_adv)


def test_eot_deterministic_model_ignores_k(moons_setup):
    data, _, ens = moons_setup
    one = eot_pgd(ens, data.x, data.y, ThreatModel(epsilon=0.1, iterations=5, eot_samples=1))
    ten = eot_pgd(ens, data.x, data.y, ThreatModel(epsilon=0.1, iterations=5, eot_samples=10))
    np.testing.assert_allclose(ten.x_adv, one.x_adv, rtol=0, atol=1e-12)


def test_pgd_beats_fgsm_on_linear_model():
    rng = np.random.default_rng(5)
    x = rng.uniform(0.2, 0.8, size=(200, 2))
    W = np.array([[2.0, -2.0], [-1.0, 1.0]])
    y = (x @ W).argmax(axis=1)
    model = linear_model(W)
    tm = ThreatModel(epsilon=0.1, iterations=20)
    assert pgd(model, x, y, tm).success_rate >= fgsm(model, x, y, tm).success_rate


def test_eot_budget_trend(moons_setup):
    data, _, ens = moons_setup
    r = data.data_range
    small = eot_pgd(ens, data.x, data.y, ThreatModel(epsilon=0.035 * r, iterations=20, eot_samples=4, eot_noise_std=0.01))
    large = eot_pgd(ens, data.x, data.y, ThreatModel(epsilon=0.07 * r, iterations=20, eot_samples=4, eot_noise_std=0.01))
    assert large.success_rate >= small.success_rate


def test_attack_input_gradient_fd(moons_setup):
    _, _, ens = moons_setup
    rng = np.random.default_rng(8)
    for _ in range(10):
        x, y = rng.uniform(size=2), int(rng.integers(2))
        fd = oracles.fd_params(lambda ps: float(loss_input_gradient(ens, ps[0], y)[0]), [x])[0]
        assert oracles.norm_rel_error(loss_input_gradient(ens, x, y)[1], fd) < 1e-4


@pytest.mark.parametrize("norm", ["linf", "l2"])
def test_attacks_stay_in_budget(moons_setup, norm):
    data, _, ens = moons_setup
    tm = ThreatModel(norm=norm, epsilon=0.15, iterations=10, random_start=True, query_budget=50)
    attacks = [pgd, eot_pgd, score_query_attack] + ([fgsm] if norm == "linf" else [])
    for attack in attacks:
        assert budget_ok(attack(ens, data.x, data.y, tm), data.x, tm)


def test_score_budget_zero():
    model = linear_model([[1.0, -1.0]])
    x = np.array([[0.3], [0.9]])
    res = score_query_attack(model, x, [0, 0], ThreatModel(query_budget=0))
    assert np.array_equal(res.x_adv, x) and np.all(res.queries == 0)


def test_score_already_misclassified():
    model = linear_model([[1.0, -1.0]])
    res = score_query_attack(model, np.array([[0.5]]), [1], ThreatModel(query_budget=100))
    assert res.success[0] and res.queries[0] == 1


def test_score_budget_trend():
    data = tinygrid(400, seed=3)
    victim = freeze(train_standard(data, TrainConfig(epochs=30, seed=0, hidden=(32,))))
    ev = data.subset(np.arange(100))
    low = score_query_attack(victim, ev.x, ev.y, ThreatModel(epsilon=0.2, query_budget=100, seed=1))
    high = score_query_attack(victim, ev.x, ev.y, ThreatModel(epsilon=0.2, query_budget=2500, seed=1))
    assert high.success_rate > low.success_rate


def test_threat_model_validation():
    with pytest.raises(ConfigError):
        ThreatModel(norm="l1")
    with pytest.raises(ConfigError):
        ThreatModel(epsilon=-0.1)
    with pytest.warns(UserWarning):
        ThreatModel(epsilon=0.1, step=0.5)
    with pytest.raises(ContractError):
        fgsm(linear_model([[1.0, 0.0]]), np.zeros((2, 1)), [0], ThreatModel())
    with pytest.raises(ContractError):
        fgsm(linear_model([[1.0, 0.0]]), np.zeros((1, 1)), [0], ThreatModel(norm="l2"))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.5), st.integers(0, 10**6))
def test_linf_projection_properties(eps, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(4, 3))
    tm = ThreatModel(epsilon=eps)
    out = project(x + rng.normal(size=x.shape), x, tm)
    assert np.all(np.abs(out - x) <= eps + 1e-15)
    assert np.all((out >= 0) & (out <= 1))
    # projecting twice changes nothing
    assert np.array_equal(project(out, x, tm), out)
