"""Quantized two-layer perceptron whose weights live on jump-table crossbar devices.

Weights map affinely onto device conductances, w = a*G + b, with g_min and
g_max landing on -w_max and +w_max. Training converts every averaged
gradient entry into a signed number of SET/RESET pulses and applies them one
at a time through the jump tables.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from jumptable.device import JumpTablePair, norm_ppf, open_uniform

N_INPUTS = 400
N_HIDDEN = 50
N_CLASSES = 10
# k per layer; weights are initialized uniformly on [-sqrt(k), sqrt(k)]
LAYER_K = (1.0 / 400.0, 1.0 / 10.0)
P_MAX_CAP = 100_000


@dataclass(frozen=True)
class QuantSpec:
    """Signed fixed point with a per-tensor power-of-two step.

    The step is the smallest power of two for which the tensor's largest
    magnitude fits in word_bits - 1 magnitude bits; rounding is half-to-even.
    """

    word_bits: int = 6
    enabled: bool = True

    def __post_init__(self):
        if self.word_bits < 2:
            raise ValueError("word_bits must be at least 2")

    @property
    def max_code(self) -> int:
        return 2 ** (self.word_bits - 1) - 1

    def step(self, x) -> float:
        m = float(np.max(np.abs(x))) if np.size(x) else 0.0
        if m == 0.0 or not math.isfinite(m):
            return 0.0
        e = math.ceil(math.log2(m / self.max_code))
        while m > self.max_code * 2.0**e:
            e += 1
        while m <= self.max_code * 2.0 ** (e - 1):
            e -= 1
        return 2.0**e

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not self.enabled:
            return x
        step = self.step(x)
        if step == 0.0:
            return np.zeros_like(x)
        return np.clip(np.rint(x / step), -self.max_code - 1, self.max_code) * step


NO_QUANT = QuantSpec(enabled=False)


@dataclass(frozen=True)
class PMax:
    p_max: int
    set_count: int
    reset_count: int
    cap_hit: bool


def _pulses_to_cross(profile, start: float, stop: float, tol: float, cap: int):
    g, count = start, 0
    up = stop > start
    while (stop - g > tol) if up else (g - stop > tol):
        mu = float(np.interp(g, profile.knots, profile.mu))
        if (mu <= 0) if up else (mu >= 0):
            return cap, True
        g = min(g + mu, stop) if up else max(g + mu, stop)
        count += 1
        if count >= cap:
            return cap, True
    return count, False


def compute_p_max(tables: JumpTablePair, cap: int = P_MAX_CAP) -> PMax:
    """Mean-profile pulses to SET g_min -> g_max and RESET g_max -> g_min; p_max is the larger."""
    b = tables.bounds
    tol = 1e-6 * b.span
    n_set, hit_set = _pulses_to_cross(tables.set_table, b.g_min, b.g_max, tol, cap)
    n_reset, hit_reset = _pulses_to_cross(tables.reset_table, b.g_max, b.g_min, tol, cap)
    return PMax(max(n_set, n_reset), n_set, n_reset, hit_set or hit_reset)


def pulses_from_gradient(grad, lr: float, w_max: float, p_max: int):
    """Signed pulse counts for gradient entries: positive means SET.

    p = trunc(p_max * lr * (-grad) / (2 * w_max)), capped at +-p_max.
    """
    raw = np.trunc(p_max * lr * (-np.asarray(grad, dtype=np.float64)) / (2.0 * w_max))
    out = np.clip(raw, -p_max, p_max).astype(np.int64)
    return int(out) if out.ndim == 0 else out


class CrossbarLayer:
    """Weight matrix stored as device conductances, shape (inputs, outputs)."""

    def __init__(self, conductances: np.ndarray, tables: JumpTablePair, w_max: float, p_max: int):
        b = tables.bounds
        conductances = np.array(conductances, dtype=np.float64)
        if not b.contains(conductances):
            raise ValueError("conductances outside the device bounds")
        self.conductances = conductances
        self.tables = tables
        self.w_max = float(w_max)
        self.p_max = int(p_max)
        self.map_scale = 2.0 * self.w_max / b.span
        self.map_offset = -self.w_max - self.map_scale * b.g_min

    @classmethod
    def initialize(cls, shape, tables: JumpTablePair, k: float, p_max: int, rng: np.random.Generator):
        w_max = math.sqrt(k)
        w = rng.uniform(-w_max, w_max, shape)
        layer = cls(np.full(shape, tables.bounds.g_min), tables, w_max, p_max)
        layer.conductances = tables.bounds.clip((w - layer.map_offset) / layer.map_scale)
        return layer

    @property
    def weights(self) -> np.ndarray:
        return self.map_scale * self.conductances + self.map_offset

    def update(self, grad, lr: float, rng: np.random.Generator):
        apply_update(self, pulses_from_gradient(grad, lr, self.w_max, self.p_max), rng)


class FloatLayer:
    """Ideal floating-point weights updated by plain gradient descent."""

    def __init__(self, weights: np.ndarray):
        self.weights = np.array(weights, dtype=np.float64)

    @classmethod
    def initialize(cls, shape, k: float, rng: np.random.Generator):
        w_max = math.sqrt(k)
        return cls(rng.uniform(-w_max, w_max, shape))

    def update(self, grad, lr: float, rng=None):
        self.weights -= lr * grad


def apply_update(layer: CrossbarLayer, pulses, rng: np.random.Generator) -> CrossbarLayer:
    """Apply |p| sequential pulses to every device, SET for p > 0 and RESET for p < 0.

    Every pulse draws a fresh uniform variate and moves the device by the
    inverse CDF of its current state's distribution, clipped to the bounds.
    """
    pulses = np.asarray(pulses)
    if pulses.shape != layer.conductances.shape:
        raise ValueError("pulse matrix shape does not match the layer")
    if np.any(np.abs(pulses) > layer.p_max):
        raise ValueError("pulse counts exceed p_max")
    bounds = layer.tables.bounds
    g = layer.conductances.reshape(-1)
    flat = pulses.reshape(-1)
    idx = np.flatnonzero(flat)
    remaining = np.abs(flat[idx])
    is_set = flat[idx] > 0
    set_table, reset_table = layer.tables.set_table, layer.tables.reset_table
    while idx.size:
        z = norm_ppf(open_uniform(rng, idx.size))
        cur = g[idx]
        mu_s, sd_s = set_table.evaluate(cur)
        mu_r, sd_r = reset_table.evaluate(cur)
        mu = np.where(is_set, mu_s, mu_r)
        sd = np.where(is_set, sd_s, sd_r)
        g[idx] = bounds.clip(cur + mu + sd * z)
        remaining -= 1
        keep = remaining > 0
        idx, remaining, is_set = idx[keep], remaining[keep], is_set[keep]
    layer.conductances = g.reshape(layer.conductances.shape)
    return layer


Layer = Union[CrossbarLayer, FloatLayer]


@dataclass
class Network:
    layers: list
    quant: QuantSpec = field(default_factory=QuantSpec)

    def weights(self) -> list:
        return [self.quant(layer.weights) for layer in self.layers]


@dataclass
class Activations:
    x: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    output: np.ndarray
    weights: list


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(net: Network, x) -> Activations:
    """Sigmoid hidden layer, softmax output, no biases; activations quantized per stage."""
    q = net.quant
    x = q(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    w1, w2 = net.weights()
    if x.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise ValueError(f"shape mismatch: input {x.shape}, weights {w1.shape} and {w2.shape}")
    hidden = q(sigmoid(x @ w1))
    logits = hidden @ w2
    output = q(softmax(logits))
    return Activations(x, hidden, logits, output, [w1, w2])


def mse_loss(output, targets) -> float:
    """0.5 * squared error summed over classes, averaged over the batch."""
    return float(0.5 * np.sum((output - targets) ** 2) / output.shape[0])


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def backward(net: Network, acts: Activations, targets) -> list:
    """Batch-averaged gradients of `mse_loss` with respect to both weight matrices.

    `targets` is either a label vector or a one-hot matrix.
    """
    q = net.quant
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = one_hot(targets, acts.output.shape[1])
    if targets.shape != acts.output.shape:
        raise ValueError(f"targets {targets.shape} do not match outputs {acts.output.shape}")
    y = acts.output
    batch = y.shape[0]
    dy = (y - targets) / batch
    dz2 = q(y * (dy - np.sum(dy * y, axis=1, keepdims=True)))
    w1, w2 = acts.weights
    g2 = q(acts.hidden.T @ dz2)
    dz1 = q((dz2 @ w2.T) * acts.hidden * (1.0 - acts.hidden))
    g1 = q(acts.x.T @ dz1)
    return [g1, g2]


def predict(net: Network, x) -> np.ndarray:
    return np.argmax(forward(net, x).logits, axis=1)


def accuracy(net: Network, x, labels) -> float:
    return float(np.mean(predict(net, x) == np.asarray(labels)))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 4096
    epochs: int = 100
    seed: int = 0
    quant: QuantSpec = field(default_factory=QuantSpec)
    hidden: int = N_HIDDEN

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["quant"] = {"word_bits": self.quant.word_bits, "enabled": self.quant.enabled}
        return d


@dataclass
class RunRecord:
    train_acc: list
    test_acc: list
    config: dict
    provenance: str
    seed: int
    initial_test_acc: float = float("nan")

    def __post_init__(self):
        if len(self.train_acc) != len(self.test_acc):
            raise ValueError("train and test traces must have equal length")
        for a in list(self.train_acc) + list(self.test_acc):
            if not 0.0 <= a <= 1.0:
                raise ValueError("accuracies must lie in [0, 1]")

    @property
    def epochs(self) -> int:
        return len(self.test_acc)


def build_network(source: Optional[JumpTablePair], cfg: TrainConfig, rng: np.random.Generator,
                  p_max: Optional[int] = None, n_inputs: int = N_INPUTS) -> Network:
    shapes = [(n_inputs, cfg.hidden), (cfg.hidden, N_CLASSES)]
    if source is None:
        return Network([FloatLayer.initialize(s, k, rng) for s, k in zip(shapes, LAYER_K)], NO_QUANT)
    if p_max is None:
        pm = compute_p_max(source)
        if pm.cap_hit:
            raise ValueError("mean profile never traverses the conductance range; pass p_max explicitly")
        p_max = pm.p_max
    layers = [CrossbarLayer.initialize(s, source, k, p_max, rng) for s, k in zip(shapes, LAYER_K)]
    return Network(layers, cfg.quant)


def train(source: Optional[JumpTablePair], cfg: TrainConfig, data, provenance: str = "target",
          p_max: Optional[int] = None) -> RunRecord:
    """Mini-batch training; `source=None` selects the ideal floating-point baseline.

    `data` needs train_x, train_y, test_x, test_y attributes.
    """
    if source is None:
        provenance = "ideal-float"
    ss = np.random.SeedSequence(cfg.seed)
    init_rng, shuffle_rng, pulse_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    net = build_network(source, cfg, init_rng, p_max, n_inputs=data.train_x.shape[1])
    n = data.train_x.shape[0]
    initial = accuracy(net, data.test_x, data.test_y)
    train_acc, test_acc = [], []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acts = forward(net, data.train_x[batch])
            grads = backward(net, acts, data.train_y[batch])
            for layer, grad in zip(net.layers, grads):
                layer.update(grad, cfg.learning_rate, pulse_rng)
        train_acc.append(accuracy(net, data.train_x, data.train_y))
        test_acc.append(accuracy(net, data.test_x, data.test_y))
    config = cfg.snapshot()
    if source is not None:
        config["p_max"] = net.layers[0].p_max
    return RunRecord(train_acc, test_acc, config, provenance, cfg.seed, initial)
