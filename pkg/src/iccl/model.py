"""Small fully-connected networks with hand-written reverse-mode gradients."""

import math
from dataclasses import dataclass, field

import numpy as np

STANDARDIZE_EPS = 1e-5
ACTIVATIONS = ("relu", "identity")


class StaleCacheError(RuntimeError):
    """Raised when backward is given a cache from an older parameter state."""


@dataclass
class Layer:
    """``y = act(standardize?(x @ weight + bias))``."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"
    standardize: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError("weight must be (in, out) and bias (out,)")


@dataclass
class MlpNetwork:
    layers: list
    rng_seed: int = 0
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError(
                    f"layer dimensions do not chain: {a.weight.shape} -> {b.weight.shape}"
                )

    @classmethod
    def build(cls, dims, activations=None, standardize=None, seed=0):
        """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, zero biases.

        ``activations`` defaults to relu everywhere except the last layer.
        """
        n = len(dims) - 1
        if n < 1:
            raise ValueError("need at least an input and an output dimension")
        activations = activations or ["relu"] * (n - 1) + ["identity"]
        standardize = standardize or [False] * n
        rng = np.random.default_rng(seed)
        layers = []
        for i in range(n):
            bound = 1.0 / math.sqrt(dims[i])
            w = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
            layers.append(Layer(w, np.zeros(dims[i + 1]), activations[i], standardize[i]))
        return cls(layers, seed)

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[1]

    def params(self):
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def set_params(self, new_params):
        new_params = list(new_params)
        if len(new_params) != 2 * len(self.layers):
            raise ValueError("parameter count mismatch")
        for i, layer in enumerate(self.layers):
            w, b = new_params[2 * i], new_params[2 * i + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ValueError("parameter shape mismatch")
            layer.weight, layer.bias = w, b
        self.version += 1

    def copy(self):
        layers = [
            Layer(l.weight.copy(), l.bias.copy(), l.activation, l.standardize) for l in self.layers
        ]
        return MlpNetwork(layers, self.rng_seed)


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list
    pre: list
    xc: list
    std: list
    post_std: list


def forward(net, x_batch):
    """Returns ``(cache, output)``."""
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"expected input of shape (N, {net.in_dim}), got {x.shape}")
    inputs, pre, xcs, stds, post_std = [], [], [], [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        a = h @ layer.weight + layer.bias
        pre.append(a)
        if layer.standardize:
            xc = a - a.mean(axis=0)
            s = np.sqrt(np.mean(xc * xc, axis=0))
            a = xc / (s + STANDARDIZE_EPS)
            xcs.append(xc)
            stds.append(s)
        else:
            xcs.append(None)
            stds.append(None)
        post_std.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
    return ForwardCache(id(net), net.version, inputs, pre, xcs, stds, post_std), h


def backward(net, cache, grad_output):
    """Returns ``(param_grads, grad_input)``; ``param_grads`` mirrors ``net.params()``."""
    if cache.net_id != id(net) or cache.version != net.version:
        raise StaleCacheError("forward cache does not match the network's current parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    grads = [None] * (2 * len(net.layers))
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        if layer.activation == "relu":
            g = g * (cache.post_std[i] > 0)
        if layer.standardize:
            xc, s = cache.xc[i], cache.std[i]
            n = xc.shape[0]
            denom = s + STANDARDIZE_EPS
            safe_s = np.where(s > 0, s, 1.0)
            g = (g - g.mean(axis=0)) / denom - xc * (np.sum(g * xc, axis=0) / (n * safe_s * denom**2))
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weight.T
    return grads, g


@dataclass
class MomentumEncoder:
    """EMA copy of an online network; never touched by the optimizer."""

    net: MlpNetwork
    momentum: float = 0.99

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def from_online(cls, online, momentum=0.99):
        return cls(online.copy(), momentum)


def ema_update(target, online_params, m=None):
    m = target.momentum if m is None else m
    if not 0 <= m < 1:
        raise ValueError(f"momentum must lie in [0, 1), got {m}")
    cur = target.net.params()
    online_params = list(online_params)
    if len(cur) != len(online_params) or any(a.shape != b.shape for a, b in zip(cur, online_params)):
        raise ValueError("online and target parameter shapes differ")
    target.net.set_params([m * t + (1.0 - m) * o for t, o in zip(cur, online_params)])
    return target


def cosine_lr(step, total_steps, lr_base, warmup_steps=0):
    """Linear warmup to ``lr_base`` followed by half-cosine decay to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup_steps = min(warmup_steps, total_steps)
    if step < warmup_steps:
        return lr_base * step / warmup_steps
    if total_steps == warmup_steps:
        return lr_base if step < total_steps else 0.0
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_base * 0.5 * (1.0 + math.cos(math.pi * progress))


LARS_MAX_RATIO = 10.0


@dataclass
class OptimizerState:
    kind: str = "sgd_momentum"
    lr_base: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 1e-6
    velocity: list | None = None

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "lars"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def lars_trust_ratio(param, update):
    ratio = np.linalg.norm(param) / (np.linalg.norm(update) + 1e-9)
    return float(np.clip(ratio, 0.0, LARS_MAX_RATIO))


def optimizer_step(state, params, grads, lr):
    """One update; returns the new parameter list and mutates ``state.velocity``.

    LARS scales every weight matrix's step by its trust ratio; bias vectors
    keep the plain step so zero-initialized biases can move.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("params and grads do not line up")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    if state.velocity is None:
        state.velocity = [np.zeros_like(p) for p in params]
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        d = g + state.weight_decay * p
        v = state.momentum * state.velocity[i] + d
        state.velocity[i] = v
        scale = lars_trust_ratio(p, d) if state.kind == "lars" and p.ndim > 1 else 1.0
        new.append(p - lr * scale * v)
    return new
