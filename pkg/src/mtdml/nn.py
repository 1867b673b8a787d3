"""Dense multilayer perceptrons with hand-rolled reverse-mode gradients.

Everything downstream (the treatment, outcome and sensitivity heads, the
baselines) is built from the `Mlp` here: float64 matrices, samples as rows,
explicit gradient buffers, and a bias-corrected Adam step. Gradients
accumulate across backward calls so several heads can share one bottom
network; `adam_step` zeroes the buffers after applying the update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ConfigError, NumericError, StateError

ACTIVATIONS = ("relu", "tanh", "identity", "softplus")


def softplus(z: np.ndarray) -> np.ndarray:
    """Overflow-safe softplus: log1p(exp(-|z|)) + max(z, 0)."""
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    if name == "softplus":
        return softplus(z)
    raise ConfigError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation w.r.t. its pre-activation z."""
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "identity":
        return np.ones_like(z)
    if name == "softplus":
        return sigmoid(z)
    raise ConfigError(f"unknown activation {name!r}")


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite values."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite values")
    return a


@dataclass
class MlpSpec:
    """Layer widths (input first) and one activation name per weight layer."""

    layer_widths: list[int]
    activations: list[str]

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ConfigError("need at least one layer (two widths)")
        if any(w < 1 for w in self.layer_widths):
            raise ConfigError("layer widths must be >= 1")
        if len(self.activations) != len(self.layer_widths) - 1:
            raise ConfigError("need exactly one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


class Mlp:
    """A fully connected network with per-parameter gradient buffers.

    Weights have shape (fan_in, fan_out) so a batch (rows = samples) flows
    through plain `x @ w + b`.
    """

    def __init__(self, spec: MlpSpec, rng: np.random.Generator):
        self.spec = spec
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.grad_weights = [np.zeros_like(w) for w in self.weights]
        self.grad_biases = [np.zeros_like(b) for b in self.biases]

    @property
    def input_width(self) -> int:
        return self.spec.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.spec.layer_widths[-1]

    def zero_grad(self) -> None:
        for g in self.grad_weights:
            g[:] = 0.0
        for g in self.grad_biases:
            g[:] = 0.0

    def param_arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def grad_arrays(self) -> list[np.ndarray]:
        return [*self.grad_weights, *self.grad_biases]


def mlp_forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run the net on a batch; the cache holds what backward needs."""
    x = as_matrix(x)
    if x.shape[1] != net.input_width:
        raise DimensionError(
            f"input has {x.shape[1]} columns, net expects {net.input_width}"
        )
    cache = []
    h = x
    for w, b, act in zip(net.weights, net.biases, net.spec.activations):
        z = h @ w + b
        cache.append((h, z))
        h = _activate(act, z)
    return h, cache


def mlp_backward(net: Mlp, cache: list, d_out: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients; return the gradient w.r.t. the input.

    The input gradient is what lets several heads backpropagate into a
    shared upstream network.
    """
    if cache is None or len(cache) != net.spec.n_layers:
        raise StateError("backward called without a matching forward cache")
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != (cache[-1][1].shape[0], net.output_width):
        raise DimensionError(
            f"d_out shape {d_out.shape} does not match forward output"
        )
    da = d_out
    for i in range(net.spec.n_layers - 1, -1, -1):
        h_in, z = cache[i]
        dz = da * _activate_grad(net.spec.activations[i], z)
        net.grad_weights[i] += h_in.T @ dz
        net.grad_biases[i] += dz.sum(axis=0)
        da = dz @ net.weights[i].T
    return da


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one Mlp's parameters."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, learning_rate: float) -> "AdamState":
        state = cls(learning_rate=learning_rate)
        state.m = [np.zeros_like(p) for p in net.param_arrays()]
        state.v = [np.zeros_like(p) for p in net.param_arrays()]
        return state


def adam_step(net: Mlp, state: AdamState) -> None:
    """Apply one Adam update from the accumulated gradients, then zero them."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(
        net.param_arrays(), net.grad_arrays(), state.m, state.v
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    net.zero_grad()


def finite_diff_grad(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    The test-side oracle for every analytic gradient in the package.
    """
    if h <= 0:
        raise ConfigError("step size h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump.flat[i] = h
        f_plus = f(theta + bump)
        f_minus = f(theta - bump)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("objective returned a non-finite value")
        grad.flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def params_to_vector(nets: list[Mlp]) -> np.ndarray:
    """Flatten all parameters of several nets into one vector."""
    return np.concatenate([p.ravel() for net in nets for p in net.param_arrays()])


def vector_to_params(nets: list[Mlp], theta: np.ndarray) -> None:
    """Write a flat parameter vector back into the nets, in the same order."""
    theta = np.asarray(theta, dtype=np.float64)
    offset = 0
    for net in nets:
        for p in net.param_arrays():
            p[:] = theta[offset : offset + p.size].reshape(p.shape)
            offset += p.size
    if offset != theta.size:
        raise DimensionError("parameter vector length does not match the nets")


def grads_to_vector(nets: list[Mlp]) -> np.ndarray:
    return np.concatenate([g.ravel() for net in nets for g in net.grad_arrays()])
