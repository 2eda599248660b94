"""Minimal multilayer perceptron with reverse- and forward-mode differentiation.

Layers compute a_k = h_{k-1} W_k^T + b_k and h_k = act(a_k); the output layer
is affine. Inputs carry a leading batch axis. Forward-mode tangents are
propagated alongside the primal pass (``jvp``) and can themselves be
differentiated with respect to the parameters (``jvp_backward``), which is
what a loss on dT/dx(x) f(x) needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import InputError

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


def silu(u: np.ndarray) -> np.ndarray:
    """u * sigmoid(u)."""
    return u * expit(u)


def silu_derivative(u: np.ndarray) -> np.ndarray:
    s = expit(u)
    return s * (1.0 + u * (1.0 - s))


def silu_second_derivative(u: np.ndarray) -> np.ndarray:
    s = expit(u)
    return s * (1.0 - s) * (2.0 + u * (1.0 - 2.0 * s))


def _tanh_derivative(u: np.ndarray) -> np.ndarray:
    return 1.0 - np.tanh(u) ** 2


def _tanh_second_derivative(u: np.ndarray) -> np.ndarray:
    t = np.tanh(u)
    return -2.0 * t * (1.0 - t**2)


Activation = Tuple[
    Callable[[np.ndarray], np.ndarray],
    Callable[[np.ndarray], np.ndarray],
    Callable[[np.ndarray], np.ndarray],
]

ACTIVATIONS: Dict[str, Activation] = {
    "silu": (silu, silu_derivative, silu_second_derivative),
    "tanh": (np.tanh, _tanh_derivative, _tanh_second_derivative),
}


@dataclass
class Normalizer:
    """Componentwise standardization u = (v - mean) / scale."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=float))
        if np.any(self.scale <= 0):
            raise InputError("normalizer scale must be positive")

    @classmethod
    def fit(cls, data: np.ndarray, name: str = "data") -> "Normalizer":
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if len(data) == 0:
            raise InputError(f"cannot fit normalizer on empty {name}")
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        flat = std < SCALE_FLOOR
        if flat.any():
            logger.warning(
                f"Zero-variance column(s) {np.flatnonzero(flat).tolist()} in {name}; "
                f"scale floored at {SCALE_FLOOR:g}"
            )
        return cls(mean=mean, scale=np.maximum(std, SCALE_FLOOR))

    @classmethod
    def identity(cls, size: int) -> "Normalizer":
        return cls(mean=np.zeros(size), scale=np.ones(size))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.scale

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(values, dtype=float) * self.scale

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Normalizer":
        return cls(mean=np.asarray(data["mean"]), scale=np.asarray(data["scale"]))


@dataclass
class MlpParams:
    """Weights and biases of one network; weights[k] is (sizes[k+1], sizes[k])."""

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "silu"

    def __post_init__(self) -> None:
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise InputError(f"invalid layer sizes {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation '{self.activation}'")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise InputError("number of weight/bias arrays does not match layer sizes")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if W.shape != expected or b.shape != (expected[0],):
                raise InputError(f"layer {k}: got W{W.shape}, b{b.shape}, expected W{expected}")

    @classmethod
    def init(cls, layer_sizes: Sequence[int], seed: int, activation: str = "silu") -> "MlpParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_sizes), weights, biases, activation)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        """Arrays in a fixed order (W0, b0, W1, b1, ...); updates act in place."""
        out: List[np.ndarray] = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layer_sizes": self.layer_sizes,
            "activation": self.activation,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MlpParams":
        return cls(
            layer_sizes=data["layer_sizes"],
            weights=[np.asarray(W, dtype=float).reshape(len(W), -1) for W in data["weights"]],
            biases=[np.asarray(b, dtype=float) for b in data["biases"]],
            activation=data.get("activation", "silu"),
        )


@dataclass
class _Tape:
    """Values recorded by a forward pass for the reverse pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre: List[np.ndarray] = field(default_factory=list)
    tangent_inputs: List[np.ndarray] = field(default_factory=list)
    tangent_pre: List[np.ndarray] = field(default_factory=list)


def _as_batch(params: MlpParams, inputs: np.ndarray) -> Tuple[np.ndarray, bool]:
    inputs = np.asarray(inputs, dtype=float)
    single = inputs.ndim == 1
    batch = inputs[None, :] if single else inputs
    if batch.ndim != 2 or batch.shape[1] != params.n_inputs:
        raise InputError(f"expected input width {params.n_inputs}, got shape {inputs.shape}")
    return batch, single


def _run(
    params: MlpParams, h: np.ndarray, tangent: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, Optional[np.ndarray], _Tape]:
    act, act_d, _ = ACTIVATIONS[params.activation]
    tape = _Tape()
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        a = h @ W.T + b
        tape.pre.append(a)
        if tangent is not None:
            tape.tangent_inputs.append(tangent)
            a_dot = tangent @ W.T
            tape.tangent_pre.append(a_dot)
        if k < last:
            h = act(a)
            if tangent is not None:
                tangent = act_d(a) * a_dot
        else:
            h = a
            if tangent is not None:
                tangent = a_dot
    return h, tangent, tape


def forward(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    batch, single = _as_batch(params, inputs)
    out, _, _ = _run(params, batch)
    return out[0] if single else out


def forward_with_tape(params: MlpParams, inputs: np.ndarray) -> Tuple[np.ndarray, _Tape]:
    """Batch output plus the tape ``backward`` consumes."""
    batch, _ = _as_batch(params, inputs)
    out, _, tape = _run(params, batch)
    return out, tape


def backward(
    params: MlpParams, tape: _Tape, grad_out: np.ndarray
) -> Tuple[List[np.ndarray], np.ndarray]:
    """Reverse pass: parameter gradients (parameters() order) and input gradient."""
    _, act_d, _ = ACTIVATIONS[params.activation]
    grads: List[np.ndarray] = [np.empty(0)] * (2 * len(params.weights))
    g = grad_out
    last = len(params.weights) - 1
    for k in range(last, -1, -1):
        if k < last:
            g = g * act_d(tape.pre[k])
        grads[2 * k] = g.T @ tape.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params.weights[k]
    return grads, g


def grad_params(
    params: MlpParams, inputs: np.ndarray, targets: np.ndarray
) -> Tuple[float, List[np.ndarray]]:
    """Mean-squared-error loss 0.5 * mean ||out - target||^2 and its gradients."""
    batch, _ = _as_batch(params, inputs)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(batch) == 0:
        raise InputError("empty batch")
    out, _, tape = _run(params, batch)
    residual = out - targets
    loss = 0.5 * float(np.mean(np.sum(residual**2, axis=1)))
    grads, _ = backward(params, tape, residual / len(batch))
    return loss, grads


def input_jacobian(params: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """d output / d input by forward-mode accumulation of all input directions.

    Returns (n_out, n_in) for a single input, (batch, n_out, n_in) for a batch.
    """
    act, act_d, _ = ACTIVATIONS[params.activation]
    batch, single = _as_batch(params, inputs)
    h = batch
    J = np.broadcast_to(np.eye(params.n_inputs), (len(batch), params.n_inputs, params.n_inputs))
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ W.T + b
        J = np.matmul(W, J)
        if k < last:
            J = act_d(a)[:, :, None] * J
            h = act(a)
    return J[0] if single else J


def jvp(
    params: MlpParams, inputs: np.ndarray, tangents: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, _Tape]:
    """Outputs and directional derivatives (d out/d in) @ tangent, with tape."""
    batch, _ = _as_batch(params, inputs)
    tangents = np.atleast_2d(np.asarray(tangents, dtype=float))
    if tangents.shape != batch.shape:
        raise InputError(f"tangent shape {tangents.shape} does not match inputs {batch.shape}")
    out, out_dot, tape = _run(params, batch, tangents)
    assert out_dot is not None
    return out, out_dot, tape


def jvp_backward(
    params: MlpParams, tape: _Tape, grad_out: np.ndarray, grad_tangent: np.ndarray
) -> List[np.ndarray]:
    """Parameter gradients of a loss depending on both jvp outputs."""
    _, act_d, act_dd = ACTIVATIONS[params.activation]
    grads: List[np.ndarray] = [np.empty(0)] * (2 * len(params.weights))
    g, g_dot = grad_out, grad_tangent
    last = len(params.weights) - 1
    for k in range(last, -1, -1):
        if k < last:
            a, a_dot = tape.pre[k], tape.tangent_pre[k]
            g, g_dot = g * act_d(a) + g_dot * act_dd(a) * a_dot, g_dot * act_d(a)
        grads[2 * k] = g.T @ tape.inputs[k] + g_dot.T @ tape.tangent_inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        W = params.weights[k]
        g, g_dot = g @ W, g_dot @ W
    return grads


@dataclass
class Adam:
    """Adaptive moment estimation over a fixed list of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": [a.tolist() for a in self.m],
            "v": [a.tolist() for a in self.v],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Adam":
        return cls(
            lr=float(data["lr"]),
            beta1=float(data["beta1"]),
            beta2=float(data["beta2"]),
            eps=float(data["eps"]),
            t=int(data["t"]),
            m=[np.asarray(a, dtype=float) for a in data["m"]],
            v=[np.asarray(a, dtype=float) for a in data["v"]],
        )
