"""Flow-matching draws, loss and Euler integration."""

import numpy as np
import pytest

from conveyor_vla.action import action_loss, euler_sample, make_flow_sample, sample_tau
from conveyor_vla.errors import InvalidDrawError, NonFiniteError, ShapeMismatchError
from conveyor_vla.network import Linear, Module
from conveyor_vla.network.layers import sinusoidal_features
from conveyor_vla.numerics import AdamW, GradTape, Parameter, Tensor, ops


def test_tau_inverse_cdf():
    assert sample_tau(0.0) == 0.0
    assert sample_tau(1.0) == 1.0
    assert sample_tau(0.125) == pytest.approx(0.25)
    np.testing.assert_allclose(sample_tau(np.array([0.0, 0.125, 1.0])), [0.0, 0.25, 1.0])


@pytest.mark.parametrize("u", [-0.1, 1.5, float("nan")])
def test_tau_rejects_draws_outside_unit_interval(u):
    with pytest.raises(InvalidDrawError):
        sample_tau(u)


def test_tau_distribution_matches_beta_mean():
    draws = sample_tau(np.random.default_rng(0).random(1_000_000))
    # Beta(1.5, 1) has mean 0.6 and CDF x**1.5
    assert draws.mean() == pytest.approx(0.6, abs=2e-3)
    assert np.mean(draws <= 0.5) == pytest.approx(0.5**1.5, abs=2e-3)


def test_flow_sample_interpolates(rng):
    actions = rng.standard_normal((4, 3))
    sample = make_flow_sample(actions, rng, tau=0.25)
    np.testing.assert_allclose(sample.a_tau, 0.75 * sample.noise + 0.25 * actions)
    np.testing.assert_allclose(sample.v_target, actions - sample.noise)


def test_flow_sample_endpoints(rng):
    actions = rng.standard_normal((2, 4, 3))
    at_noise = make_flow_sample(actions, np.random.default_rng(1), tau=np.zeros(2))
    at_data = make_flow_sample(actions, np.random.default_rng(1), tau=np.ones(2))
    np.testing.assert_allclose(at_noise.a_tau, at_noise.noise)
    np.testing.assert_allclose(at_data.a_tau, actions)


def test_flow_sample_batched_tau_shape(rng):
    sample = make_flow_sample(rng.standard_normal((5, 4, 3)), rng)
    assert sample.tau.shape == (5,)
    assert np.all((sample.tau >= 0) & (sample.tau <= 1))


def test_flow_sample_rejects_nan(rng):
    with pytest.raises(NonFiniteError):
        make_flow_sample(np.full((4, 3), np.nan), rng)


def test_action_loss_zero_at_target_and_gradient(rng):
    sample = make_flow_sample(rng.standard_normal((2, 4, 3)), rng)
    exact = Parameter(sample.v_target.copy())
    assert action_loss(exact, sample).item() == pytest.approx(0.0)
    off = Parameter(sample.v_target + 1.0)
    with GradTape() as tape:
        loss = action_loss(off, sample)
    assert loss.item() == pytest.approx(1.0)
    grads = tape.backward(loss)
    np.testing.assert_allclose(grads[off.id].data, np.full(off.shape, 2.0 / off.size))


def test_action_loss_shape_mismatch(rng):
    sample = make_flow_sample(rng.standard_normal((4, 3)), rng)
    with pytest.raises(ShapeMismatchError):
        action_loss(Parameter(np.zeros((3, 4))), sample)


def test_euler_with_exact_field_recovers_target(rng):
    target = rng.standard_normal((4, 3))
    noise = rng.standard_normal((4, 3))
    # straight-line field of the interpolation path
    result = euler_sample(lambda tau, a: target - noise, noise, steps=10)
    np.testing.assert_allclose(result, target, atol=1e-12)


def test_euler_single_step_uses_tau_zero():
    seen = []

    def field(tau, a):
        seen.append(tau)
        return np.ones_like(a)

    out = euler_sample(field, np.zeros((2, 3)), steps=1)
    assert seen == [0.0]
    np.testing.assert_allclose(out, 1.0)


def test_euler_tau_grid():
    seen = []
    euler_sample(lambda tau, a: seen.append(tau) or np.zeros_like(a), np.zeros((1, 1)), steps=4)
    assert seen == [0.0, 0.25, 0.5, 0.75]


def test_euler_rejects_zero_steps():
    with pytest.raises(ValueError):
        euler_sample(lambda tau, a: a, np.zeros((1, 1)), steps=0)


def test_euler_divergence_reports_step():
    with pytest.raises(NonFiniteError, match="step 1/"):
        euler_sample(lambda tau, a: np.full_like(a, np.inf), np.zeros((1, 1)), steps=3)


def test_euler_linear_field_converges(rng):
    noise = rng.standard_normal((2, 4, 3))
    out = euler_sample(lambda tau, a: -a, noise, steps=1000)
    np.testing.assert_allclose(out, noise * np.exp(-1.0), atol=1e-3)


class _VelocityNet(Module):
    """Context-free MLP v(tau, a) over scalar actions."""

    def __init__(self, rng: np.random.Generator, width: int = 64, time_dim: int = 16) -> None:
        self._time_dim = time_dim
        self.l1 = Linear(1 + time_dim, width, rng=rng, std=0.3, dtype="float64")
        self.l2 = Linear(width, width, rng=rng, std=1 / np.sqrt(width), dtype="float64")
        self.l3 = Linear(width, 1, rng=rng, std=0.01, dtype="float64")

    def __call__(self, a_tau: np.ndarray, tau: np.ndarray) -> Tensor:
        tau = np.broadcast_to(np.atleast_1d(tau), (len(a_tau),))
        x = np.concatenate([a_tau, sinusoidal_features(tau, self._time_dim)], axis=1)
        return self.l3(ops.silu(self.l2(ops.silu(self.l1(Tensor(x))))))


BIMODAL_STEPS = 2000


def _fit(net: _VelocityNet, objective, rng: np.random.Generator, decay: bool = False) -> None:
    params = net.named_parameters()
    opt = AdamW(params, weight_decay=0.0)
    for step in range(BIMODAL_STEPS):
        with GradTape() as tape:
            loss = objective(rng.choice([-1.0, 1.0], size=(256, 1, 1)))
        grads = tape.backward(loss)
        lr = 3e-3 * (1 - step / BIMODAL_STEPS) if decay else 3e-3
        opt.step({n: grads[p.id].data for n, p in params.items() if p.id in grads}, lr)


@pytest.fixture(scope="module")
def bimodal_flow() -> _VelocityNet:
    rng = np.random.default_rng(0)
    net = _VelocityNet(rng)

    def flow_objective(targets):
        sample = make_flow_sample(targets, rng)
        return ops.mse(net(sample.a_tau[:, 0], sample.tau), sample.v_target[:, 0])

    _fit(net, flow_objective, rng)
    return net


def _sample_flow(net: _VelocityNet, noise: np.ndarray, steps: int) -> np.ndarray:
    return euler_sample(lambda tau, a: net(a, tau).data, noise, steps=steps)


@pytest.mark.slow
def test_flow_policy_covers_both_modes(bimodal_flow):
    out = _sample_flow(bimodal_flow, np.random.default_rng(1).standard_normal((1000, 1)), 20)
    assert np.mean(np.abs(out) < 0.2) < 0.02
    assert 0.35 <= np.mean(out > 0) <= 0.65
    assert 0.35 <= np.mean(out < 0) <= 0.65


@pytest.mark.slow
def test_direct_regression_collapses_to_the_mean():
    rng = np.random.default_rng(0)
    net = _VelocityNet(rng)

    def regression_objective(targets):
        # same network fed noise, regressed straight onto the actions
        z = rng.standard_normal((len(targets), 1))
        return ops.mse(net(z, np.zeros(len(targets))), targets[:, 0])

    _fit(net, regression_objective, rng, decay=True)
    out = net(np.random.default_rng(1).standard_normal((1000, 1)), np.zeros(1000)).data
    assert np.mean(np.abs(out) < 0.2) > 0.8
    assert np.mean(np.abs(out) > 0.5) < 0.1


@pytest.mark.slow
def test_mode_split_is_stable_in_euler_steps(bimodal_flow):
    noise = np.random.default_rng(2).standard_normal((1000, 1))
    coarse = _sample_flow(bimodal_flow, noise, 10)
    fine = _sample_flow(bimodal_flow, noise, 20)
    assert abs(np.mean(coarse > 0) - np.mean(fine > 0)) <= 0.05
    assert np.mean(np.abs(coarse) < 0.2) < 0.05
