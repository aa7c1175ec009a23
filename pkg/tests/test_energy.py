import numpy as np
import pytest

from bbc.energy import EnergyView
from bbc.errors import ConfigError, ContractError
from bbc.numcore import LayerSpec, Tensor, forward_mlp, grad_of, init_params

import oracles


def const_logits(values):
    v = np.asarray(values, dtype=float)
    return lambda x: x.sum(axis=-1, keepdims=True) * 0.0 + v


def test_data_energy_values():
    x = np.zeros(2)
    assert EnergyView(const_logits([0.0, 0.0])).data_energy(x).data == pytest.approx(-np.log(2), abs=1e-15)
    assert EnergyView(const_logits([1.7])).data_energy(x).data == pytest.approx(-1.7, abs=1e-15)
    assert EnergyView(const_logits([2.0, 0.0])).data_energy(x).data == pytest.approx(-oracles.LSE_2_0, abs=1e-14)


def test_class_conditional_values():
    x = np.zeros(2)
    np.testing.assert_allclose(EnergyView(const_logits([0, 0, 0, 0])).class_conditional(x), [0.25] * 4)
    for t in (-40.0, 0.3, 55.0):
        np.testing.assert_allclose(EnergyView(const_logits([t, t])).class_conditional(x), [0.5, 0.5])
    p = EnergyView(const_logits([1.0, 0.0])).class_conditional(x)
    np.testing.assert_allclose(p, [oracles.SIGMOID_1, 1 - oracles.SIGMOID_1], rtol=1e-15)


def _random_view(seed=0, lam=1.0):
    spec = [LayerSpec(3, 5, "tanh"), LayerSpec(5, 4, "identity")]
    params = init_params(spec, np.random.default_rng(seed))
    return EnergyView(lambda x: forward_mlp(params, x, spec), lam), params, spec


def test_joint_identities():
    view, _, _ = _random_view()
    rng = np.random.default_rng(1)
    x, xa = rng.normal(size=3), rng.normal(size=3)
    gy = view.logits(x).data[2]
    assert view.joint_logdensity_unnorm(x, x, 2).data == pytest.approx(2 * gy, rel=1e-14)
    assert view.adv_conditional_logdensity(x, x, 2).data == pytest.approx(gy, rel=1e-14)
    lam0 = EnergyView(view.model, 0.0)
    assert lam0.joint_logdensity_unnorm(x, xa, 2).data == pytest.approx(gy + view.logits(xa).data[2], rel=1e-14)
    gap = view.joint_logdensity_unnorm(x, xa, 2).data - view.adv_conditional_logdensity(x, xa, 2).data
    assert gap == pytest.approx(gy, rel=1e-13, abs=1e-14)


def test_joint_formula_example():
    view = EnergyView(const_logits([0.0, 0.0]), lam=2.0)
    assert view.joint_logdensity_unnorm(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 0).data == -2.0


def test_adv_gradient_fd():
    view, _, _ = _random_view(lam=0.7)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, xa = rng.normal(size=3), rng.normal(size=3)
        _, (g,) = grad_of(lambda t: view.adv_conditional_logdensity(x, t, 1), xa)
        fd = oracles.fd_params(lambda ps: float(view.adv_conditional_logdensity(x, ps[0], 1).data), [xa])[0]
        assert oracles.norm_rel_error(g, fd) < 1e-4


def test_batched_matches_single():
    view, _, _ = _random_view()
    rng = np.random.default_rng(3)
    x, xa, y = rng.normal(size=(6, 3)), rng.normal(size=(6, 3)), rng.integers(4, size=6)
    batch = view.joint_logdensity_unnorm(x, xa, y).data
    single = [view.joint_logdensity_unnorm(x[i], xa[i], y[i]).data for i in range(6)]
    np.testing.assert_allclose(batch, single, rtol=1e-14)


def test_label_out_of_range():
    view, _, _ = _random_view()
    with pytest.raises(ContractError):
        view.adv_conditional_logdensity(np.zeros(3), np.zeros(3), 4)


def test_negative_lambda():
    with pytest.raises(ConfigError):
        EnergyView(const_logits([0.0]), lam=-1.0)
