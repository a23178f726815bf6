"""Reverse-mode differentiable layer stack used by every network in genmix.

A ``NetworkModel`` is an ordered list of layers whose tensors live in one
``ParameterSet``. A recorded forward pass returns a ``Tape``; ``backward``
walks the tape in reverse and returns the gradient with respect to the input
together with one gradient per trainable parameter. Gradients are returned,
never stored on the model, so concurrent recorded passes over one immutable
model are safe.
"""
import copy
import hashlib
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from genmix.internal.errors import GraphError, NumericalError, ShapeError

TRAIN = "train"
EVAL = "eval"
MODES = (TRAIN, EVAL)

BN_MOMENTUM = 0.1
BN_EPSILON = 1e-5
PROB_EPSILON = 1e-7


class ParameterSet:
    """Ordered name -> array map; running statistics are flagged non-trainable."""

    def __init__(self):
        self._tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._trainable: Dict[str, bool] = {}

    def add(self, name: str, array: np.ndarray, trainable: bool = True):
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name '{name}'")
        self._tensors[name] = np.ascontiguousarray(array)
        self._trainable[name] = trainable

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray):
        current = self._tensors[name]
        if value.shape != current.shape:
            raise ShapeError(name, current.shape, value.shape)
        self._tensors[name] = np.ascontiguousarray(value, dtype=current.dtype)

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self, trainable_only: bool = False) -> List[str]:
        return [n for n in self._tensors if self._trainable[n] or not trainable_only]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def copy(self) -> "ParameterSet":
        return self.astype(None)

    def astype(self, dtype) -> "ParameterSet":
        clone = ParameterSet()
        for name, array in self._tensors.items():
            clone.add(name, array.astype(dtype or array.dtype, copy=True),
                      self._trainable[name])
        return clone

    def element_count(self, trainable_only: bool = True) -> int:
        return sum(int(self._tensors[n].size) for n in self.names(trainable_only))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, array in self._tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()

    def equals(self, other: "ParameterSet") -> bool:
        if list(self._tensors) != list(other._tensors):
            return False
        return all(np.array_equal(a, other[n]) and a.dtype == other[n].dtype
                   for n, a in self._tensors.items())


def param_count(params: ParameterSet, trainable_only: bool = True) -> int:
    return params.element_count(trainable_only)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    init: str = "zeros"
    trainable: bool = True
    fan_in: int = 1


def _initial_value(spec: ParamSpec, rng: np.random.Generator, dtype) -> np.ndarray:
    if spec.init == "fan_in_uniform":
        bound = 1.0 / np.sqrt(spec.fan_in)
        return rng.uniform(-bound, bound, size=spec.shape).astype(dtype)
    if spec.init == "ones":
        return np.ones(spec.shape, dtype=dtype)
    return np.zeros(spec.shape, dtype=dtype)


class Layer(ABC):

    def __init__(self, name: str):
        self.name = name

    def key(self, suffix: str) -> str:
        return f"{self.name}.{suffix}"

    def param_specs(self) -> List[ParamSpec]:
        return []

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return input_shape

    def running_stat_update(self, cache) -> Dict[str, np.ndarray]:
        return {}

    def _expect(self, actual: Tuple[int, ...], expected: Tuple[int, ...]):
        if tuple(actual) != tuple(expected):
            raise ShapeError(self.name, tuple(expected), tuple(actual))

    @abstractmethod
    def forward(self, x: np.ndarray, params: ParameterSet, mode: str) -> Tuple[np.ndarray, Any]:
        pass

    @abstractmethod
    def backward(self, cache, grad: np.ndarray,
                 params: ParameterSet) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        pass


class Conv2D(Layer):
    """Stride-1 convolution, NCHW, weights (out, in, k, k)."""

    def __init__(self, name, in_channels, out_channels, kernel_size, padding=0):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding

    def param_specs(self):
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        return [
            ParamSpec(self.key("weight"), (self.out_channels, self.in_channels, k, k),
                      "fan_in_uniform", fan_in=fan_in),
            ParamSpec(self.key("bias"), (self.out_channels,), "zeros"),
        ]

    def output_shape(self, input_shape):
        channels, height, width = input_shape
        if channels != self.in_channels:
            raise ShapeError(self.name, (self.in_channels, height, width), input_shape)
        span = 2 * self.padding - self.kernel_size + 1
        if height + span < 1 or width + span < 1:
            raise ShapeError(self.name, f"spatial size >= {self.kernel_size - 2 * self.padding}",
                             input_shape)
        return (self.out_channels, height + span, width + span)

    def forward(self, x, params, mode):
        if x.ndim != 4:
            raise ShapeError(self.name, ("batch", self.in_channels, "H", "W"), x.shape)
        _, out_h, out_w = self.output_shape(x.shape[1:])
        weight = params[self.key("weight")]
        bias = params[self.key("bias")]
        p = self.padding
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x

        out = np.zeros((self.out_channels, x.shape[0], out_h, out_w), dtype=x.dtype)
        for i in range(self.kernel_size):
            for j in range(self.kernel_size):
                window = padded[:, :, i:i + out_h, j:j + out_w]
                out += np.tensordot(weight[:, :, i, j], window, axes=([1], [1]))
        out = out.transpose(1, 0, 2, 3) + bias[None, :, None, None]
        return np.ascontiguousarray(out), (padded, x.shape)

    def backward(self, cache, grad, params):
        padded, input_shape = cache
        weight = params[self.key("weight")]
        out_h, out_w = grad.shape[2:]
        grad_weight = np.empty_like(weight)
        grad_padded = np.zeros_like(padded)
        for i in range(self.kernel_size):
            for j in range(self.kernel_size):
                window = padded[:, :, i:i + out_h, j:j + out_w]
                grad_weight[:, :, i, j] = np.tensordot(grad, window,
                                                       axes=([0, 2, 3], [0, 2, 3]))
                grad_padded[:, :, i:i + out_h, j:j + out_w] += np.tensordot(
                    weight[:, :, i, j], grad, axes=([0], [1])).transpose(1, 0, 2, 3)
        p = self.padding
        grad_input = grad_padded[:, :, p:p + input_shape[2], p:p + input_shape[3]]
        return np.ascontiguousarray(grad_input), {
            self.key("weight"): grad_weight,
            self.key("bias"): grad.sum(axis=(0, 2, 3)),
        }


class BatchNorm2D(Layer):

    def __init__(self, name, channels, momentum=BN_MOMENTUM, eps=BN_EPSILON):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps

    def param_specs(self):
        shape = (self.channels,)
        return [
            ParamSpec(self.key("gamma"), shape, "ones"),
            ParamSpec(self.key("beta"), shape, "zeros"),
            ParamSpec(self.key("running_mean"), shape, "zeros", trainable=False),
            ParamSpec(self.key("running_var"), shape, "ones", trainable=False),
        ]

    def output_shape(self, input_shape):
        if input_shape[0] != self.channels:
            raise ShapeError(self.name, (self.channels, *input_shape[1:]), input_shape)
        return input_shape

    def forward(self, x, params, mode):
        if x.ndim != 4:
            raise ShapeError(self.name, ("batch", self.channels, "H", "W"), x.shape)
        self.output_shape(x.shape[1:])
        gamma = params[self.key("gamma")][None, :, None, None]
        beta = params[self.key("beta")][None, :, None, None]
        axes = (0, 2, 3)

        if mode == TRAIN:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (count / (count - 1)) if count > 1 else var
            running_mean = params[self.key("running_mean")]
            running_var = params[self.key("running_var")]
            stats = {
                self.key("running_mean"):
                    ((1 - self.momentum) * running_mean + self.momentum * mean).astype(x.dtype),
                self.key("running_var"):
                    ((1 - self.momentum) * running_var + self.momentum * unbiased).astype(x.dtype),
            }
        else:
            mean = params[self.key("running_mean")]
            var = params[self.key("running_var")]
            stats = {}

        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        return gamma * x_hat + beta, (mode, x_hat, inv_std, stats)

    def running_stat_update(self, cache):
        return cache[3]

    def backward(self, cache, grad, params):
        mode, x_hat, inv_std, _ = cache
        gamma = params[self.key("gamma")]
        axes = (0, 2, 3)
        grads = {
            self.key("gamma"): (grad * x_hat).sum(axis=axes),
            self.key("beta"): grad.sum(axis=axes),
        }
        grad_hat = grad * gamma[None, :, None, None]
        scale = inv_std[None, :, None, None]
        if mode != TRAIN:
            return grad_hat * scale, grads

        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        grad_input = (scale / count) * (
            count * grad_hat
            - grad_hat.sum(axis=axes, keepdims=True)
            - x_hat * (grad_hat * x_hat).sum(axis=axes, keepdims=True))
        return grad_input, grads


class ELU(Layer):

    def __init__(self, name, alpha=1.0):
        super().__init__(name)
        self.alpha = alpha

    def forward(self, x, params, mode):
        positive = x > 0
        out = np.where(positive, x, self.alpha * np.expm1(np.minimum(x, 0)))
        return out.astype(x.dtype, copy=False), (positive, out)

    def backward(self, cache, grad, params):
        positive, out = cache
        return grad * np.where(positive, 1, out + self.alpha).astype(grad.dtype), {}


class ReLU(Layer):

    def forward(self, x, params, mode):
        positive = x > 0
        return x * positive, positive

    def backward(self, cache, grad, params):
        return grad * cache, {}


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


class Sigmoid(Layer):

    def forward(self, x, params, mode):
        out = sigmoid(x)
        return out, out

    def backward(self, cache, grad, params):
        return grad * cache * (1 - cache), {}


class _Pool2D(Layer):
    size = 2

    def output_shape(self, input_shape):
        channels, height, width = input_shape
        # odd sizes are floored: 7 -> 3
        return (channels, height // self.size, width // self.size)

    def _windows(self, x):
        batch, channels, height, width = x.shape
        out_h, out_w = height // 2, width // 2
        cropped = x[:, :, :out_h * 2, :out_w * 2]
        return cropped.reshape(batch, channels, out_h, 2, out_w, 2), (out_h, out_w)


class AvgPool2D(_Pool2D):

    def forward(self, x, params, mode):
        if x.ndim != 4:
            raise ShapeError(self.name, ("batch", "C", "H", "W"), x.shape)
        windows, _ = self._windows(x)
        return windows.mean(axis=(3, 5)), x.shape

    def backward(self, cache, grad, params):
        input_shape = cache
        grad_input = np.zeros(input_shape, dtype=grad.dtype)
        out_h, out_w = grad.shape[2:]
        spread = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) * 0.25
        grad_input[:, :, :out_h * 2, :out_w * 2] = spread
        return grad_input, {}


class MaxPool2D(_Pool2D):

    def forward(self, x, params, mode):
        if x.ndim != 4:
            raise ShapeError(self.name, ("batch", "C", "H", "W"), x.shape)
        windows, (out_h, out_w) = self._windows(x)
        batch, channels = x.shape[:2]
        flat = windows.transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, out_h, out_w, 4)
        winner = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]
        return out, (winner, x.shape)

    def backward(self, cache, grad, params):
        winner, input_shape = cache
        batch, channels, out_h, out_w = grad.shape
        routed = np.zeros((batch, channels, out_h, out_w, 4), dtype=grad.dtype)
        np.put_along_axis(routed, winner[..., None], grad[..., None], axis=-1)
        routed = routed.reshape(batch, channels, out_h, out_w, 2, 2)
        routed = routed.transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, out_h * 2, out_w * 2)
        grad_input = np.zeros(input_shape, dtype=grad.dtype)
        grad_input[:, :, :out_h * 2, :out_w * 2] = routed
        return grad_input, {}


class Flatten(Layer):

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, params, mode):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, grad, params):
        return grad.reshape(cache), {}


class Dense(Layer):
    """Fully connected layer, weights (out, in); accepts flattened-equivalent input."""

    def __init__(self, name, in_features, out_features):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features

    def param_specs(self):
        return [
            ParamSpec(self.key("weight"), (self.out_features, self.in_features),
                      "fan_in_uniform", fan_in=self.in_features),
            ParamSpec(self.key("bias"), (self.out_features,), "zeros"),
        ]

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != self.in_features:
            raise ShapeError(self.name, (self.in_features,), input_shape)
        return (self.out_features,)

    def forward(self, x, params, mode):
        self.output_shape(x.shape[1:])
        flat = x.reshape(x.shape[0], -1)
        weight = params[self.key("weight")]
        out = flat @ weight.T + params[self.key("bias")]
        return out, (flat, x.shape)

    def backward(self, cache, grad, params):
        flat, input_shape = cache
        weight = params[self.key("weight")]
        return (grad @ weight).reshape(input_shape), {
            self.key("weight"): grad.T @ flat,
            self.key("bias"): grad.sum(axis=0),
        }


@dataclass
class Tape:
    mode: str
    caches: List[Any]
    stat_updates: Dict[str, np.ndarray]
    consumed: bool = False


class NetworkModel:

    def __init__(self, role: str, layers: Sequence[Layer], params: ParameterSet,
                 input_shape: Tuple[int, ...] = (1, 28, 28)):
        self.role = role
        self.layers = list(layers)
        self.params = params
        self.input_shape = tuple(input_shape)
        for layer in self.layers:
            for spec in layer.param_specs():
                if spec.name not in params:
                    raise ShapeError(layer.name, spec.shape, "missing parameter")
                if params[spec.name].shape != spec.shape:
                    raise ShapeError(spec.name, spec.shape, params[spec.name].shape)

    @classmethod
    def build(cls, role: str, layers: Sequence[Layer], rng: np.random.Generator,
              input_shape=(1, 28, 28), dtype=np.float32) -> "NetworkModel":
        params = ParameterSet()
        for layer in layers:
            for spec in layer.param_specs():
                params.add(spec.name, _initial_value(spec, rng, dtype), spec.trainable)
        return cls(role, layers, params, input_shape)

    def layer_shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        shape = self.input_shape
        trace = []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            trace.append((layer.name, shape))
        return trace

    def layer_param_counts(self) -> List[Tuple[str, int]]:
        counts = []
        for layer in self.layers:
            size = sum(int(np.prod(s.shape)) for s in layer.param_specs() if s.trainable)
            if size:
                counts.append((layer.name, size))
        return counts

    def _check_input(self, x: np.ndarray):
        if x.ndim < 2 or x.shape[1:] != self.input_shape:
            flat_ok = (x.ndim == 2 and x.shape[1] == int(np.prod(self.input_shape)))
            if not flat_ok:
                raise ShapeError(f"{self.role}.input", ("batch", *self.input_shape), x.shape)
            x = x.reshape(x.shape[0], *self.input_shape)
        return x

    def _run(self, x, mode, record):
        if mode not in MODES:
            raise ValueError(f"unknown mode '{mode}', expected one of {MODES}")
        x = self._check_input(x)
        caches, updates = [], {}
        for layer in self.layers:
            x, cache = layer.forward(x, self.params, mode)
            if mode == TRAIN:
                updates.update(layer.running_stat_update(cache))
            caches.append(cache if record else None)
        return x, Tape(mode, caches if record else [], updates)

    def forward(self, x: np.ndarray, mode: str = EVAL) -> np.ndarray:
        out, tape = self._run(x, mode, record=False)
        self.apply_stat_updates(tape)
        return out

    def forward_recorded(self, x: np.ndarray, mode: str = TRAIN,
                         track_stats: bool = True) -> Tuple[np.ndarray, Tape]:
        """Forward pass that keeps what ``backward`` needs.

        With ``track_stats=False`` the batch-norm running statistics are left
        untouched until ``apply_stat_updates(tape)`` is called.
        """
        out, tape = self._run(x, mode, record=True)
        if track_stats:
            self.apply_stat_updates(tape)
        return out, tape

    def apply_stat_updates(self, tape: Tape):
        for name, value in tape.stat_updates.items():
            self.params[name] = value
        tape.stat_updates = {}

    def backward(self, tape: Optional[Tape],
                 grad_output: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        if tape is None or not tape.caches:
            raise GraphError(f"{self.role}: backward called without a recorded forward pass")
        if tape.consumed:
            raise GraphError(f"{self.role}: tape already consumed by a previous backward")
        grads: Dict[str, np.ndarray] = {}
        grad = grad_output
        for layer, cache in zip(reversed(self.layers), reversed(tape.caches)):
            grad, layer_grads = layer.backward(cache, grad, self.params)
            grads.update(layer_grads)
        tape.consumed = True
        return grad, grads

    def param_count(self, trainable_only: bool = True) -> int:
        return param_count(self.params, trainable_only)

    def checksum(self) -> str:
        return self.params.checksum()

    def astype(self, dtype) -> "NetworkModel":
        return NetworkModel(self.role, copy.deepcopy(self.layers),
                            self.params.astype(dtype), self.input_shape)

    def copy(self) -> "NetworkModel":
        return self.astype(None)


# losses return (value accumulated in float64, gradient w.r.t. the prediction)

def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    wide = logits.astype(np.float64)
    shifted = wide - wide.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    batch = len(labels)
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return float(loss), (grad / batch).astype(logits.dtype)


def mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = np.mean(diff * diff)
    return float(loss), (2.0 * diff / diff.size).astype(pred.dtype)


def binary_cross_entropy(probs: np.ndarray, target: float) -> Tuple[float, np.ndarray]:
    """-mean(log p) for target 1, -mean(log(1 - p)) for target 0."""
    p = np.clip(probs.astype(np.float64), PROB_EPSILON, 1.0 - PROB_EPSILON)
    count = p.size
    if target >= 0.5:
        return float(-np.log(p).mean()), (-1.0 / (p * count)).astype(probs.dtype)
    return float(-np.log1p(-p).mean()), (1.0 / ((1.0 - p) * count)).astype(probs.dtype)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, lr: float = 1e-3) -> "AdamState":
        state = cls(lr=lr)
        for name in params.names(trainable_only=True):
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        return state

    def copy(self) -> "AdamState":
        return copy.deepcopy(self)


def adam_step(params: ParameterSet, grads: Dict[str, np.ndarray],
              state: AdamState) -> ParameterSet:
    for name, grad in grads.items():
        if name not in state.m:
            raise ValueError(f"no optimizer moments for parameter '{name}'")
        if grad.shape != params[name].shape:
            raise ShapeError(name, params[name].shape, grad.shape)
        if np.isnan(grad).any():
            raise NumericalError(f"NaN gradient in parameter '{name}', Adam step aborted")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        params[name] = params[name] - update
    return params


def gradient_check(model: NetworkModel, x: np.ndarray,
                   loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
                   h: float = 1e-3, mode: str = TRAIN, dtype=np.float64,
                   max_entries: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """Relative error between analytic and central-difference gradients.

    Returns one entry per trainable parameter plus ``"input"``. The error of a
    tensor is the norm ratio ``‖a - n‖ / max(‖a‖ + ‖n‖, 1e-12)`` taken over its
    checked entries, not a per-entry maximum. Runs on a copy of the model cast
    to ``dtype``.
    """
    rng = rng or np.random.default_rng(0)
    subject = model.astype(dtype)
    subject_x = np.array(x, dtype=dtype)

    out, tape = subject.forward_recorded(subject_x, mode, track_stats=False)
    _, grad_out = loss_fn(out)
    grad_input, grads = subject.backward(tape, grad_out)

    def evaluate():
        return loss_fn(subject._run(subject_x, mode, record=False)[0])[0]

    def compare(target: np.ndarray, analytic: np.ndarray) -> float:
        flat = target.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(entries))
        for slot, i in enumerate(entries):
            original = flat[i]
            flat[i] = original + h
            plus = evaluate()
            flat[i] = original - h
            minus = evaluate()
            flat[i] = original
            numeric[slot] = (plus - minus) / (2 * h)
        exact = analytic.reshape(-1)[entries]
        return float(np.linalg.norm(exact - numeric)
                     / max(np.linalg.norm(exact) + np.linalg.norm(numeric), 1e-12))

    errors = {name: compare(subject.params[name], grads[name])
              for name in subject.params.names(trainable_only=True)}
    errors["input"] = compare(subject_x, grad_input)
    return errors
