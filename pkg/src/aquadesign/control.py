"""Controllers: open-loop sinusoids and a tanh MLP policy with manual autodiff.

The closed-loop policy reads three body sensors (head, center, tail of the
spine), a periodic temporal encoding, and emits one activation per actuator
in fixed category order.  Forward passes record a small tape; gradients are
propagated by hand-written vector-Jacobian products so the whole pipeline
stays inside NumPy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ENCODING_HALF = 10                      # sin and cos banks of this many octaves
ENCODING_DIM = 2 * ENCODING_HALF
DEFAULT_PERIOD_STEPS = 25               # encoding period, in time steps
HIDDEN = (64, 64)


def temporal_encoding(t: float, period: float) -> np.ndarray:
    """Periodic clock features: ``sin(2^k pi tau)`` and ``cos(2^k pi tau)``.

    ``tau`` is the phase ``(t mod period) / period``; k runs over ten
    octaves, giving twenty features.  ``fmod`` keeps the reduction exact in
    floating point, so the encoding is periodic bit for bit whenever
    ``t + period`` is exactly representable.
    """
    if not (period > 0):
        raise ValueError("encoding period must be positive")
    tau = math.fmod(t, period) / period
    freqs = (2.0 ** np.arange(ENCODING_HALF)) * math.pi * tau
    return np.concatenate([np.sin(freqs), np.cos(freqs)])


@dataclass
class SensorReading:
    """State of the three spine sensors (head, center, tail).

    Only the velocities and the two relative offsets feed the policy input;
    absolute positions are kept for inspection and logging.
    """

    positions: np.ndarray    # (3, d): head, center, tail
    velocities: np.ndarray   # (3, d)
    offsets: np.ndarray      # (2, d): head - center, tail - center


def sensor_nodes(rest_positions: np.ndarray, spine: np.ndarray):
    """Pick (head, center, tail) node ids from a spine node set.

    Head is the spine node with the largest rest x, tail the smallest, and
    center the one closest to x = 0; ties resolve to the lowest node id.
    """
    spine = np.asarray(spine)
    if spine.size == 0:
        raise ValueError("empty spine set")
    x = rest_positions[spine, 0]
    head = int(spine[np.argmax(x)])
    tail = int(spine[np.argmin(x)])
    center = int(spine[np.argmin(np.abs(x))])
    return head, center, tail


def read_sensors(q: np.ndarray, v: np.ndarray, nodes) -> SensorReading:
    head, center, tail = nodes
    positions = np.stack([q[head], q[center], q[tail]])
    velocities = np.stack([v[head], v[center], v[tail]])
    offsets = np.stack([q[head] - q[center], q[tail] - q[center]])
    return SensorReading(positions=positions, velocities=velocities, offsets=offsets)


def policy_input_dim(ndim: int) -> int:
    """Three sensor velocities, two offsets, and the temporal encoding."""
    return 5 * ndim + ENCODING_DIM


class OpenLoopController:
    """Per-actuator sinusoid ``a * sin(omega * t + phi)`` clamped to [-1, 1]."""

    kind = "open_loop"

    def __init__(self, params):
        self.params = np.asarray(params, dtype=float).reshape(-1, 3)

    @property
    def n_signals(self):
        return self.params.shape[0]

    def flatten(self):
        return self.params.ravel().copy()

    def set_flat(self, flat):
        self.params = np.asarray(flat, dtype=float).reshape(-1, 3).copy()

    def activations(self, t, reading=None):
        a, omega, phi = self.params.T
        raw = a * np.sin(omega * t + phi)
        out = np.clip(raw, -1.0, 1.0)
        tape = (t, raw)
        return out, tape

    def vjp(self, tape, upstream):
        """Gradient of the activations with respect to (a, omega, phi).

        Returns a flat gradient aligned with :meth:`flatten`; saturated
        signals pass no gradient.  Sensor readings are unused.
        """
        t, raw = tape
        a, omega, phi = self.params.T
        live = (np.abs(raw) < 1.0) * np.asarray(upstream, dtype=float)
        phase = omega * t + phi
        grad = np.stack([live * np.sin(phase),
                         live * a * t * np.cos(phase),
                         live * a * np.cos(phase)], axis=1)
        return grad.ravel(), None


class MlpController:
    """tanh MLP policy: sensors + clock in, one activation per actuator out."""

    kind = "mlp"

    def __init__(self, weights, biases, period, use_encoding=True):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.period = float(period)
        self.use_encoding = bool(use_encoding)
        sizes = [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]
        self.sizes = tuple(sizes)
        self.ndim = (sizes[0] - ENCODING_DIM) // 5

    @property
    def n_signals(self):
        return self.sizes[-1]

    @property
    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def flatten(self):
        chunks = []
        for w, b in zip(self.weights, self.biases):
            chunks.append(w.ravel())
            chunks.append(b.ravel())
        return np.concatenate(chunks)

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos:pos + b.size].copy()
            pos += b.size

    def _input(self, t, reading):
        enc = temporal_encoding(t, self.period)
        if not self.use_encoding:
            enc = np.zeros_like(enc)
        return np.concatenate([reading.velocities.ravel(),
                               reading.offsets.ravel(), enc])

    def activations(self, t, reading):
        x = self._input(t, reading)
        acts = [x]
        h = x
        for w, b in zip(self.weights, self.biases):
            h = np.tanh(w @ h + b)
            acts.append(h)
        return h, acts

    def vjp(self, tape, upstream):
        """Backpropagate through the MLP.

        Returns ``(flat parameter gradient, SensorReading gradient)``.  The
        temporal-encoding slice of the input gradient is discarded since the
        clock is not a differentiable state.
        """
        acts = tape
        delta = np.asarray(upstream, dtype=float)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            out = acts[layer + 1]
            dz = delta * (1.0 - out * out)
            grads_w[layer] = np.outer(dz, acts[layer])
            grads_b[layer] = dz
            delta = self.weights[layer].T @ dz
        chunks = []
        for gw, gb in zip(grads_w, grads_b):
            chunks.append(gw.ravel())
            chunks.append(gb.ravel())
        d = self.ndim
        reading_grad = SensorReading(
            positions=np.zeros((3, d)),
            velocities=delta[:3 * d].reshape(3, d).copy(),
            offsets=delta[3 * d:5 * d].reshape(2, d).copy())
        return np.concatenate(chunks), reading_grad


def init_mlp(ndim, n_signals, period, seed=0, hidden=HIDDEN, use_encoding=True):
    """Fresh policy with uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` init."""
    rng = np.random.default_rng(seed)
    sizes = [policy_input_dim(ndim)] + list(hidden) + [int(n_signals)]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpController(weights, biases, period, use_encoding=use_encoding)


def make_controller(spec: dict, ndim: int, n_signals: int, h: float):
    """Build a controller from a config-style spec dict.

    ``{"type": "open_loop", "params": [[a, omega, phi], ...]}`` optionally
    with ``"jitter"`` and ``"seed"`` for randomized restarts;
    ``{"type": "mlp", "seed": 0, "period_steps": 25, "use_encoding": true}``.
    """
    kind = spec.get("type", "open_loop")
    if kind == "open_loop":
        params = np.asarray(spec.get("params", np.zeros((n_signals, 3))),
                            dtype=float)
        if params.shape != (n_signals, 3):
            raise ValueError(
                f"open-loop params must be ({n_signals}, 3), got {params.shape}")
        jitter = float(spec.get("jitter", 0.0))
        if jitter:
            rng = np.random.default_rng(spec.get("seed", 0))
            params = params + rng.uniform(-jitter, jitter, size=params.shape)
        return OpenLoopController(params)
    if kind == "mlp":
        period = float(spec.get("period_steps", DEFAULT_PERIOD_STEPS)) * h
        return init_mlp(ndim, n_signals, period,
                        seed=int(spec.get("seed", 0)),
                        use_encoding=bool(spec.get("use_encoding", True)))
    raise ValueError(f"unknown controller type {kind!r}")


def save_controller(path, controller) -> None:
    """Text checkpoint: a header line with the architecture, then parameters."""
    flat = controller.flatten()
    with open(path, "w") as fh:
        if controller.kind == "mlp":
            sizes = " ".join(str(s) for s in controller.sizes)
            fh.write(f"mlp {sizes} period {float(controller.period)!r} "
                     f"encoding {int(controller.use_encoding)}\n")
        else:
            fh.write(f"open_loop {controller.n_signals}\n")
        for x in flat:
            fh.write(repr(float(x)) + "\n")


def load_controller(path):
    with open(path) as fh:
        header = fh.readline().split()
        values = np.array([float(line) for line in fh if line.strip()])
    if not header:
        raise ValueError(f"{path}: empty controller file")
    if header[0] == "open_loop":
        n = int(header[1])
        if values.size != 3 * n:
            raise ValueError(f"{path}: expected {3 * n} parameters, got {values.size}")
        return OpenLoopController(values.reshape(n, 3))
    if header[0] == "mlp":
        ip = header.index("period")
        sizes = [int(s) for s in header[1:ip]]
        period = float(header[ip + 1])
        use_enc = bool(int(header[header.index("encoding") + 1]))
        weights, biases = [], []
        pos = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(values[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in))
            pos += fan_out * fan_in
            biases.append(values[pos:pos + fan_out])
            pos += fan_out
        if pos != values.size:
            raise ValueError(f"{path}: parameter count mismatch")
        return MlpController(weights, biases, period, use_encoding=use_enc)
    raise ValueError(f"{path}: unknown controller kind {header[0]!r}")
