import numpy as np
import pytest

from swarm.core import DynamicsConfig, NeighborSnapshot, ParticleState, SnapshotEntry
from swarm.dynamics import (
    StepInput,
    apply_dynamic,
    dynamic1_step,
    dynamic2_step,
    individual_gd_step,
    learning_rate_regime,
    wild_learning_rate,
)
from swarm.protocol import ProtocolError

NAN = np.nan
PAIR = [[NAN, 0.2], [0.2, NAN]]


def vec(*values):
    return np.array(values, dtype=np.float64)


def state(pid, x, lr=0.1, pbest=None, nbest=None, epoch=0):
    x = np.asarray(x, dtype=np.float64)
    return ParticleState(pid, x, np.zeros_like(x),
                         x.copy() if pbest is None else np.asarray(pbest, dtype=np.float64), 1.0,
                         x.copy() if nbest is None else np.asarray(nbest, dtype=np.float64), 1.0,
                         lr, epoch)


def entry(pid, x, gradient, lr=0.1, loss=1.0):
    x = np.asarray(x, dtype=np.float64)
    return SnapshotEntry(pid, x, np.asarray(gradient, dtype=np.float64), loss, x.copy(), loss, lr)


def step_input(self_state, entries, config, gradient, neighborhood, seed=0, epoch=0):
    return StepInput(self_state, NeighborSnapshot(epoch, tuple(entries)), config,
                     np.asarray(gradient, dtype=np.float64), frozenset(neighborhood),
                     np.random.default_rng(seed))


def test_individual_step_is_plain_gradient_descent():
    config = DynamicsConfig.for_swarm(1, dynamic='individual')
    s = state(0, [1.0, 2.0])
    out = individual_gd_step(step_input(s, [entry(0, s.position, [0.5, -1.0])], config, [0.5, -1.0], {0}))
    np.testing.assert_allclose(out.new_position, [0.95, 2.1])
    np.testing.assert_allclose(out.new_velocity, [-0.05, 0.1])


def test_dynamic1_without_neighbours_or_attraction_is_sgd():
    config = DynamicsConfig(weights=[[NAN]], c1=0.0, c2=0.0, k=0, dynamic='dynamic1', warmup_epochs=0)
    s = state(0, [1.0, -3.0], lr=0.01)
    g = vec(4.0, 2.0)
    out = dynamic1_step(step_input(s, [entry(0, s.position, g, lr=0.01)], config, g, {0}))
    np.testing.assert_array_equal(out.new_position, s.position + (-0.01 * g))


def test_dynamic1_mixes_neighbour_velocity_with_distance_weight():
    config = DynamicsConfig(weights=PAIR, c1=0.0, c2=0.0, beta=1.0, k=1, dynamic='dynamic1')
    s = state(0, [0.0, 0.0])
    g0, g1 = vec(2.0, 0.0), vec(1.0, 1.0)
    entries = [entry(0, [0.0, 0.0], g0), entry(1, [3.0, 4.0], g1)]
    out = dynamic1_step(step_input(s, entries, config, g0, {0, 1}))
    weight = 0.2 / (1.0 + 5.0)
    expected = -0.1 * g0 + weight * (-0.1 * g1)
    np.testing.assert_allclose(out.new_velocity, expected)
    np.testing.assert_allclose(out.new_position, expected)
    np.testing.assert_allclose(out.psi, -0.1 * g0)


def test_dynamic1_attraction_uses_the_random_draws():
    config = DynamicsConfig(weights=[[NAN]], c1=1.0, c2=0.5, k=0, dynamic='dynamic1')
    s = state(0, [0.0, 0.0], pbest=[1.0, 1.0], nbest=[-2.0, 0.0])
    out = dynamic1_step(step_input(s, [entry(0, s.position, [0.0, 0.0])], config, [0.0, 0.0], {0}, seed=7))
    rng = np.random.default_rng(7)
    r1, r2 = rng.random(), rng.random()
    np.testing.assert_allclose(out.new_position, r1 * vec(1.0, 1.0) + 0.5 * r2 * vec(-2.0, 0.0))


def test_dynamic1_per_dimension_draws():
    config = DynamicsConfig(weights=[[NAN]], c1=1.0, c2=0.0, k=0, dynamic='dynamic1', r_mode='per-dimension')
    s = state(0, [0.0, 0.0, 0.0], pbest=[1.0, 1.0, 1.0])
    out = dynamic1_step(step_input(s, [entry(0, s.position, [0.0] * 3)], config, [0.0] * 3, {0}, seed=3))
    r1 = np.random.default_rng(3).random(3)
    np.testing.assert_allclose(out.new_position, r1)


def test_zero_weight_entries_drop_the_pair():
    config = DynamicsConfig(weights=[[NAN, 0.0], [0.2, NAN]], c1=0.0, c2=0.0, k=1, dynamic='dynamic1')
    s = state(0, [0.0])
    entries = [entry(0, [0.0], [1.0]), entry(1, [1.0], [50.0])]
    out = dynamic1_step(step_input(s, entries, config, [1.0], {0, 1}))
    np.testing.assert_allclose(out.new_position, [-0.1])


def test_dynamic2_normalized_pull():
    config = DynamicsConfig(weights=PAIR, c=0.0, k=1, dynamic='dynamic2')
    s = state(0, [0.0])
    entries = [entry(0, [0.0], [0.0]), entry(1, [1.0], [0.0])]
    out = dynamic2_step(step_input(s, entries, config, [0.0], {0, 1}))
    weight = 0.2 / (1.0 + 1.0)
    np.testing.assert_allclose(out.new_position, [weight / (1.0 + weight)])


def test_dynamic2_literal_form():
    config = DynamicsConfig(weights=PAIR, c=0.0, k=1, dynamic='dynamic2', dynamic2_form='literal')
    s = state(0, [0.0])
    entries = [entry(0, [0.0], [0.0]), entry(1, [1.0], [0.0])]
    out = dynamic2_step(step_input(s, entries, config, [0.0], {0, 1}))
    np.testing.assert_allclose(out.new_position, [0.1])


def test_dynamic2_scales_neighbour_gradient_by_its_own_rate():
    config = DynamicsConfig(weights=PAIR, c=0.0, k=1, dynamic='dynamic2')
    s = state(0, [0.0], lr=0.001)
    entries = [entry(0, [0.0], [0.0], lr=0.001), entry(1, [1.0], [1.0], lr=0.5)]
    out = dynamic2_step(step_input(s, entries, config, [0.0], {0, 1}))
    weight = 0.1
    np.testing.assert_allclose(out.new_position, [weight / (1.0 + weight) * 0.5])


def test_dynamic2_consensus_is_a_fixed_point():
    x = vec(0.5, -1.0, 2.0)
    config = DynamicsConfig.for_swarm(3, dynamic='dynamic2')
    entries = [entry(pid, x, [0.0, 0.0, 0.0]) for pid in range(3)]
    out = dynamic2_step(step_input(state(0, x), entries, config, np.zeros(3), {0, 1, 2}))
    np.testing.assert_array_equal(out.new_position, x)


def test_warmup_epochs_use_gradient_descent():
    config = DynamicsConfig(weights=PAIR, c1=1.0, c2=1.0, k=1, dynamic='dynamic1', warmup_epochs=2)
    s = state(0, [0.0], pbest=[5.0], nbest=[5.0], epoch=1)
    entries = [entry(0, [0.0], [1.0]), entry(1, [1.0], [1.0])]
    out = apply_dynamic(step_input(s, entries, config, [1.0], {0, 1}, epoch=1))
    np.testing.assert_allclose(out.new_position, [-0.1])


def test_apply_dynamic_dispatches_on_selector():
    entries = [entry(0, [0.0], [0.0]), entry(1, [1.0], [0.0])]
    for name, expected in (('individual', 0.0), ('dynamic2', 0.1 / 1.1)):
        config = DynamicsConfig(weights=PAIR, c=0.0, k=1, dynamic=name, warmup_epochs=0)
        out = apply_dynamic(step_input(state(0, [0.0]), entries, config, [0.0], {0, 1}))
        assert out.new_position[0] == pytest.approx(expected)


def test_epoch_mismatch_is_a_protocol_error():
    config = DynamicsConfig.for_swarm(1)
    s = state(0, [0.0], epoch=2)
    with pytest.raises(ProtocolError) as info:
        dynamic1_step(step_input(s, [entry(0, [0.0], [0.0])], config, [0.0], {0}, epoch=1))
    assert info.value.expected_epoch == 2


def test_missing_neighbour_is_a_protocol_error():
    config = DynamicsConfig(weights=PAIR, k=1, dynamic='dynamic1')
    with pytest.raises(ProtocolError):
        dynamic1_step(step_input(state(0, [0.0]), [entry(0, [0.0], [0.0])], config, [0.0], {0, 1}))


def test_gradient_shape_mismatch():
    config = DynamicsConfig.for_swarm(1)
    with pytest.raises(ValueError):
        individual_gd_step(step_input(state(0, [0.0, 1.0]), [entry(0, [0.0, 1.0], [0.0, 0.0])], config,
                                      [1.0], {0}))


def test_learning_rate_regime():
    rng = np.random.default_rng(0)
    assert [learning_rate_regime(pid, rng) for pid in range(3)] == [1e-2, 1e-3, 1e-4]
    draws = [learning_rate_regime(3, rng) for _ in range(200)]
    assert all(1e-5 <= r <= 1e-1 for r in draws)
    assert min(draws) < 1e-4 and max(draws) > 1e-2
    assert wild_learning_rate(np.random.default_rng(5)) == wild_learning_rate(np.random.default_rng(5))


def test_dynamic2_pull_counts_every_particle_outside_the_neighbourhood():
    uniform = [[NAN, 1.0, 1.0], [1.0, NAN, 1.0], [1.0, 1.0, NAN]]
    config = DynamicsConfig(weights=uniform, c=0.0, beta=1.0, k=1, dynamic='dynamic2')
    entries = [entry(pid, [float(pid)], [0.0]) for pid in range(3)]
    out = dynamic2_step(step_input(state(0, [0.0]), entries, config, [0.0], {0, 1}))
    near, far = 1.0 / 2.0, 1.0 / 5.0
    assert out.new_position[0] == pytest.approx((near * 1.0 + far * 2.0) / (1.0 + near + far), abs=1e-12)


def test_dynamic2_two_particle_example():
    config = DynamicsConfig(weights=[[NAN, 1.0], [1.0, NAN]], c=0.0, beta=1.0, k=1, dynamic='dynamic2')
    entries = [entry(0, [0.0], [0.0]), entry(1, [2.0], [0.0])]
    out = dynamic2_step(step_input(state(0, [0.0], lr=0.37), entries, config, [0.0], {0, 1}))
    assert out.new_position[0] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_scalar_draws_are_uniform_and_independent():
    config = DynamicsConfig(weights=[[NAN]], c1=1.0, c2=1.0, k=0, dynamic='dynamic1')
    s = state(0, [0.0, 0.0], pbest=[1.0, 0.0], nbest=[0.0, 1.0])
    inp = step_input(s, [entry(0, s.position, [0.0, 0.0])], config, [0.0, 0.0], {0}, seed=11)
    draws = np.array([dynamic1_step(inp).new_position for _ in range(100_000)])
    assert abs(draws[:, 0].mean() - 0.5) < 0.01
    assert abs(draws[:, 1].mean() - 0.5) < 0.01
    assert draws.min() >= 0.0 and draws.max() < 1.0
    assert abs(np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]) < 0.02


@pytest.mark.parametrize('with_neighbour', [False, True])
def test_quadratic_loss_never_increases_without_attraction(with_neighbour):
    rng = np.random.default_rng(4)
    curvature = rng.uniform(0.1, 5.0, 6)
    lr = 0.9 / curvature.max()

    def loss(x):
        return 0.5 * float(np.sum(curvature * x * x))

    n = 2 if with_neighbour else 1
    config = DynamicsConfig.for_swarm(n, c1=0.0, c2=0.0, k=n - 1, dynamic='dynamic1', warmup_epochs=0)
    x = rng.normal(0.0, 3.0, 6)
    losses = [loss(x)]
    for epoch in range(40):
        g = curvature * x
        entries = [entry(pid, x, g, lr=lr) for pid in range(n)]
        s = ParticleState(0, x, np.zeros_like(x), x.copy(), losses[-1], x.copy(), losses[-1], lr, epoch)
        x = dynamic1_step(step_input(s, entries, config, g, set(range(n)), epoch=epoch)).new_position
        losses.append(loss(x))
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]
