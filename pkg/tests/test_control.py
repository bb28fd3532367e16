"""Controllers: temporal encoding, sensors, sinusoids, MLP policy + autodiff."""

import math

import numpy as np
import pytest

from aquadesign.control import (ENCODING_DIM, MlpController,
                                OpenLoopController, SensorReading, init_mlp,
                                load_controller, make_controller,
                                policy_input_dim, read_sensors, save_controller,
                                sensor_nodes, temporal_encoding)


def reading2d(rng):
    return SensorReading(positions=rng.normal(size=(3, 2)),
                         velocities=rng.normal(size=(3, 2)),
                         offsets=rng.normal(size=(2, 2)))


# ---------------------------------------------------------------------------
# temporal encoding

def test_encoding_at_zero():
    enc = temporal_encoding(0.0, 1.0)
    assert enc.shape == (20,)
    assert np.array_equal(enc, np.concatenate([np.zeros(10), np.ones(10)]))


def test_encoding_exactly_periodic_on_step_multiples():
    h = 2.0 ** -8           # dyadic step so t + T is exactly representable
    period = 25 * h
    for k in range(0, 200, 7):
        t = k * h
        assert np.array_equal(temporal_encoding(t + period, period),
                              temporal_encoding(t, period))


def test_encoding_half_period_direct_evaluation():
    period = 25 * 2.0 ** -8
    enc = temporal_encoding(period / 2, period)
    for k in range(10):
        arg = (2.0 ** k * math.pi) * 0.5
        assert enc[k] == math.sin(arg)
        assert enc[10 + k] == math.cos(arg)


def test_encoding_rejects_nonpositive_period():
    with pytest.raises(ValueError):
        temporal_encoding(0.1, 0.0)


# ---------------------------------------------------------------------------
# sensors

def test_sensor_nodes_pick_extremes_and_center():
    rest = np.array([[-0.4, 0.0], [-0.1, 0.0], [0.1, 0.0], [0.3, 0.0]])
    spine = np.array([0, 1, 2, 3])
    head, center, tail = sensor_nodes(rest, spine)
    assert (head, tail) == (3, 0)
    assert center == 1      # |x| ties at 0.1; lowest node id wins


def test_read_sensors_at_rest():
    q = np.array([[0.5, 0.0], [0.0, 0.1], [-0.5, 0.0]])
    v = np.zeros((3, 2))
    r = read_sensors(q, v, (0, 1, 2))
    assert np.all(r.velocities == 0)
    assert np.array_equal(r.offsets[0], q[0] - q[1])
    assert np.array_equal(r.offsets[1], q[2] - q[1])


def test_sensor_offsets_are_translation_invariant(rng):
    q = rng.normal(size=(5, 3))
    v = rng.normal(size=(5, 3))
    shifted = q + np.array([10.0, -3.0, 0.5])
    a = read_sensors(q, v, (4, 2, 0))
    b = read_sensors(shifted, v, (4, 2, 0))
    assert np.allclose(a.offsets, b.offsets, atol=1e-12)
    assert np.array_equal(a.velocities, b.velocities)


def test_policy_input_sizes():
    assert policy_input_dim(3) == 35
    assert policy_input_dim(2) == 30


def test_sensor_nodes_reject_empty_spine():
    with pytest.raises(ValueError):
        sensor_nodes(np.zeros((4, 2)), np.array([], dtype=int))


# ---------------------------------------------------------------------------
# open-loop controller

def test_open_loop_zero_phase_starts_at_zero():
    ctl = OpenLoopController([[1.0, 5.0, 0.0]])
    out, _ = ctl.activations(0.0)
    assert out[0] == 0.0


def test_open_loop_quarter_period_peaks():
    h = 0.01
    ctl = OpenLoopController([[1.0, math.pi / (6 * h), 0.0]])
    out, _ = ctl.activations(3 * h)
    assert out[0] == pytest.approx(1.0, abs=1e-12)


def test_open_loop_amplitude_bounds_signal():
    ctl = OpenLoopController([[0.5, 2.0, 0.0]])
    ts = np.linspace(0.0, 10.0, 2000)
    vals = np.array([ctl.activations(t)[0][0] for t in ts])
    assert np.abs(vals).max() <= 0.5
    peak, _ = ctl.activations(math.pi / 4)   # omega * t = pi/2
    assert peak[0] == pytest.approx(0.5, abs=1e-12)


def test_open_loop_clamps_and_gates_gradient():
    ctl = OpenLoopController([[2.0, 1.0, 0.0]])
    t = math.pi / 2                 # raw signal = 2, clamped to 1
    out, tape = ctl.activations(t)
    assert out[0] == 1.0
    grad, _ = ctl.vjp(tape, np.ones(1))
    assert np.all(grad == 0)


def test_open_loop_vjp_matches_finite_differences(rng):
    params = np.array([[0.4, 3.0, 0.2], [0.7, 1.5, -1.0]])
    ctl = OpenLoopController(params)
    t = 0.37
    upstream = rng.normal(size=2)
    _, tape = ctl.activations(t)
    grad, _ = ctl.vjp(tape, upstream)

    flat = ctl.flatten()
    delta = 1e-6
    for i in range(flat.size):
        probe = OpenLoopController(params)
        bumped = flat.copy(); bumped[i] += delta
        probe.set_flat(bumped)
        hi = float(upstream @ probe.activations(t)[0])
        bumped[i] -= 2 * delta
        probe.set_flat(bumped)
        lo = float(upstream @ probe.activations(t)[0])
        assert grad[i] == pytest.approx((hi - lo) / (2 * delta), rel=1e-5,
                                        abs=1e-9)


# ---------------------------------------------------------------------------
# MLP policy

def test_mlp_parameter_count_for_three_actuators():
    ctl = init_mlp(3, 3, period=0.1)
    assert ctl.sizes == (35, 64, 64, 3)
    assert ctl.n_params == 35 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3  # 6659
    assert ctl.flatten().shape == (6659,)


def test_mlp_zero_parameters_give_zero_activations(rng):
    ctl = init_mlp(2, 3, period=0.1)
    ctl.set_flat(np.zeros(ctl.n_params))
    out, _ = ctl.activations(0.123, reading2d(rng))
    assert np.all(out == 0)


def test_mlp_outputs_stay_inside_unit_interval(rng):
    ctl = init_mlp(2, 3, period=0.1, seed=7)
    for _ in range(10):
        out, _ = ctl.activations(rng.uniform(0, 1), reading2d(rng))
        assert np.all(np.abs(out) < 1)
    # even saturated tanh only ever rounds to +-1.0, never beyond
    ctl.set_flat(ctl.flatten() * 50)
    out, _ = ctl.activations(0.5, reading2d(rng))
    assert np.all(np.abs(out) <= 1)


def test_mlp_weight_gradient_matches_finite_differences(rng):
    ctl = init_mlp(2, 2, period=0.1, seed=3)
    reading = reading2d(rng)
    t = 0.07
    upstream = rng.normal(size=2)
    _, tape = ctl.activations(t, reading)
    grad, _ = ctl.vjp(tape, upstream)

    delta = 1e-5
    for i in rng.choice(ctl.n_params, size=12, replace=False):
        flat = ctl.flatten()
        flat[i] += delta; ctl.set_flat(flat)
        hi = float(upstream @ ctl.activations(t, reading)[0])
        flat[i] -= 2 * delta; ctl.set_flat(flat)
        lo = float(upstream @ ctl.activations(t, reading)[0])
        flat[i] += delta; ctl.set_flat(flat)
        fd = (hi - lo) / (2 * delta)
        assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_mlp_vjp_zero_upstream(rng):
    ctl = init_mlp(2, 3, period=0.1)
    _, tape = ctl.activations(0.0, reading2d(rng))
    grad, dread = ctl.vjp(tape, np.zeros(3))
    assert np.all(grad == 0)
    assert np.all(dread.velocities == 0) and np.all(dread.offsets == 0)


def test_single_neuron_bias_gradient_is_tanh_prime(rng):
    # one output neuron straight from the input: d(out)/d(bias) = tanh'(z)
    d_in = policy_input_dim(2)
    w = rng.normal(size=(1, d_in)) * 0.3
    b = np.array([0.4])
    ctl = MlpController([w], [b], period=0.1)
    reading = reading2d(rng)
    out, tape = ctl.activations(0.02, reading)
    grad, _ = ctl.vjp(tape, np.ones(1))
    z = float((w @ tape[0] + b)[0])
    assert grad[-1] == pytest.approx(1.0 - math.tanh(z) ** 2, abs=1e-14)
    assert out[0] == pytest.approx(math.tanh(z), abs=1e-14)


def test_mlp_vjp_is_linear_in_upstream(rng):
    ctl = init_mlp(2, 3, period=0.1, seed=5)
    _, tape = ctl.activations(0.3, reading2d(rng))
    upstream = rng.normal(size=3)
    g1, r1 = ctl.vjp(tape, upstream)
    g2, r2 = ctl.vjp(tape, 2.0 * upstream)
    assert np.allclose(g2, 2.0 * g1, atol=1e-12)
    assert np.allclose(r2.velocities, 2.0 * r1.velocities, atol=1e-12)


def test_disabling_encoding_freezes_the_clock(rng):
    reading = reading2d(rng)
    on = init_mlp(2, 3, period=0.1, seed=2, use_encoding=True)
    off = init_mlp(2, 3, period=0.1, seed=2, use_encoding=False)
    out_a, _ = off.activations(0.01, reading)
    out_b, _ = off.activations(0.07, reading)
    assert np.array_equal(out_a, out_b)      # no clock input
    out_on, _ = on.activations(0.01, reading)
    assert not np.allclose(out_on, out_a)


# ---------------------------------------------------------------------------
# construction and checkpoints

def test_make_controller_validates_open_loop_shape():
    with pytest.raises(ValueError, match=r"\(3, 3\)"):
        make_controller({"type": "open_loop", "params": [[1.0, 2.0, 3.0]]},
                        ndim=2, n_signals=3, h=0.01)
    with pytest.raises(ValueError, match="unknown controller"):
        make_controller({"type": "rnn"}, ndim=2, n_signals=3, h=0.01)


def test_make_controller_jitter_is_seeded():
    spec = {"type": "open_loop", "params": [[0.5, 18.0, 0.0]] * 2,
            "jitter": 0.1, "seed": 11}
    a = make_controller(spec, 2, 2, 0.01)
    b = make_controller(spec, 2, 2, 0.01)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, [[0.5, 18.0, 0.0]] * 2)


def test_controller_checkpoint_round_trip(tmp_path, rng):
    mlp = init_mlp(2, 3, period=0.25, seed=9, use_encoding=False)
    path = tmp_path / "policy.txt"
    save_controller(path, mlp)
    back = load_controller(path)
    assert back.kind == "mlp"
    assert back.sizes == mlp.sizes
    assert back.period == mlp.period
    assert back.use_encoding is False
    assert np.array_equal(back.flatten(), mlp.flatten())
    reading = reading2d(rng)
    assert np.array_equal(back.activations(0.3, reading)[0],
                          mlp.activations(0.3, reading)[0])

    ol = OpenLoopController([[0.6, 18.0, -1.6], [0.7, 18.0, 0.0]])
    path2 = tmp_path / "gait.txt"
    save_controller(path2, ol)
    back2 = load_controller(path2)
    assert back2.kind == "open_loop"
    assert np.array_equal(back2.params, ol.params)


def test_set_flat_rejects_wrong_length():
    ctl = init_mlp(2, 2, period=0.1)
    with pytest.raises(ValueError, match="parameters"):
        ctl.set_flat(np.zeros(10))
