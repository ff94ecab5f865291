"""Minimal layer set with explicit reverse-mode gradients.

Layers cache what they need on ``forward`` and accumulate parameter
gradients on ``backward``, which returns the gradient w.r.t. the input.
Everything runs in float64; checkpoints store float32.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np
from scipy import sparse

from . import _kernels

LEAKY_SLOPE = 0.01
BCE_CLAMP = 1e-7
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
CHECKPOINT_VERSION = 1


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, value, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Module:
    training = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = name
                yield name, val
            else:
                yield from val.named_parameters(name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", val
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def train(self, mode: bool = True) -> "Module":
        for mod in self.modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Parameter(kaiming_uniform(rng, in_dim, (in_dim, out_dim)))
        if bias:
            bound = 1.0 / np.sqrt(in_dim)
            self.bias = Parameter(rng.uniform(-bound, bound, size=out_dim))
        else:
            self.bias = None
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected (*, {self.in_dim}) input, got {x.shape}")
        self._x = x
        out = x @ self.weight.value
        if self.bias is not None:
            out += self.bias.value
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        self.weight.grad += self._x.T @ g
        if self.bias is not None:
            self.bias.grad += g.sum(axis=0)
        return g @ self.weight.value.T


class BatchNorm(Module):
    """Per-channel normalisation over rows; running statistics for eval mode."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.momentum, self.eps = momentum, eps
        self._buffers = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        buf = self._buffers
        if not self.training:
            inv = 1.0 / np.sqrt(buf["running_var"] + self.eps)
            xhat = (x - buf["running_mean"]) * inv
            self._cache = ("eval", xhat, inv)
            return xhat * self.gamma.value + self.beta.value
        n = x.shape[0]
        if n < 2:
            raise ValueError("train-mode batch norm needs at least 2 rows")
        mu = x.mean(axis=0)
        xhat = x - mu
        var = np.einsum("ij,ij->j", xhat, xhat) / n
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat *= inv
        m = self.momentum
        buf["running_mean"] = (1 - m) * buf["running_mean"] + m * mu
        buf["running_var"] = (1 - m) * buf["running_var"] + m * var * (n / (n - 1))
        self._cache = ("train", xhat, inv)
        out = xhat * self.gamma.value
        out += self.beta.value
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        mode, xhat, inv = self._cache
        if mode == "eval":
            # running statistics are constants, so this is a plain affine map
            self.gamma.grad += np.einsum("ij,ij->j", g, xhat)
            self.beta.grad += g.sum(axis=0)
            return g * (self.gamma.value * inv)
        n = g.shape[0]
        self.gamma.grad += np.einsum("ij,ij->j", g, xhat)
        gsum = g.sum(axis=0)
        self.beta.grad += gsum
        gamma = self.gamma.value
        dxhat_sum = gamma * gsum
        dxhat_dot = gamma * np.einsum("ij,ij->j", g, xhat)
        dx = g * (gamma * inv)
        dx -= (inv / n) * dxhat_sum
        dx -= xhat * ((inv / n) * dxhat_dot)
        return dx


class BNReLU(BatchNorm):
    """``BatchNorm`` followed by ReLU, fused into two passes each way."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        buf = self._buffers
        x = np.ascontiguousarray(x)
        if not self.training:
            scale = self.gamma.value / np.sqrt(buf["running_var"] + self.eps)
            shift = self.beta.value - buf["running_mean"] * scale
            out = _kernels.affine_relu_forward(x, scale, shift)
            self._cache = ("eval", x, out, scale)
            return out
        n = x.shape[0]
        if n < 2:
            raise ValueError("train-mode batch norm needs at least 2 rows")
        out, mu, var, inv = _kernels.bn_relu_train_forward(x, self.gamma.value, self.beta.value, self.eps)
        m = self.momentum
        buf["running_mean"] = (1 - m) * buf["running_mean"] + m * mu
        buf["running_var"] = (1 - m) * buf["running_var"] + m * var * (n / (n - 1))
        self._cache = ("train", x, out, mu, inv)
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = np.ascontiguousarray(g)
        if self._cache[0] == "eval":
            _, x, out, scale = self._cache
            gate = np.where(out > 0, g, 0.0)
            inv = 1.0 / np.sqrt(self._buffers["running_var"] + self.eps)
            self.gamma.grad += np.einsum("ij,ij->j", gate, x - self._buffers["running_mean"]) * inv
            self.beta.grad += gate.sum(axis=0)
            return gate * scale
        _, x, out, mu, inv = self._cache
        dx, dgamma, dbeta = _kernels.bn_relu_train_backward(g, x, out, mu, inv, self.gamma.value)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class Activation(Module):
    KINDS = ("relu", "leaky_relu", "sigmoid")

    def __init__(self, kind: str):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            mask = x > 0
            self._cache = mask
            return np.where(mask, x, 0.0)
        if self.kind == "leaky_relu":
            slope = np.where(x > 0, 1.0, LEAKY_SLOPE)
            self._cache = slope
            return x * slope
        out = 0.5 * (1.0 + np.tanh(0.5 * x))  # overflow-free logistic
        self._cache = out
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.where(self._cache, g, 0.0)
        if self.kind == "leaky_relu":
            return g * self._cache
        s = self._cache
        return g * s * (1.0 - s)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def shared_mlp(widths: Iterable[int], rng: np.random.Generator, batch_norm: bool = True) -> Sequential:
    """Per-point MLP: (Linear -> BatchNorm -> ReLU) for every consecutive width pair.

    With batch norm the linear bias is dropped (the norm's shift replaces it).
    """
    widths = list(widths)
    if len(widths) < 2:
        raise ValueError("an MLP needs an input width and at least one layer")
    layers: list[Module] = []
    for a, b in zip(widths[:-1], widths[1:]):
        if batch_norm:
            layers += [Linear(a, b, rng, bias=False), BNReLU(b)]
        else:
            layers += [Linear(a, b, rng), Activation("relu")]
    return Sequential(*layers)


def group_max(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max over axis 1 of a ``(groups, size, channels)`` array.

    Returns ``(pooled, argmax)``; ties resolve to the lowest index.
    """
    G, S, C = x.shape
    if S == 0:
        raise ValueError("cannot pool an empty group")
    return _kernels.group_max_forward(np.ascontiguousarray(x).reshape(G * S, C), G, S)


def group_max_backward(g: np.ndarray, arg: np.ndarray, size: int) -> np.ndarray:
    g = np.ascontiguousarray(g)
    return _kernels.group_max_backward(g, arg, size).reshape(g.shape[0], size, g.shape[1])


def max_pool_points(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Channel-wise max over the rows of an ``(m, C)`` feature map."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("max pooling needs a non-empty (m, C) input")
    pooled, arg = group_max(x[None])
    return pooled[0], arg[0]


def max_pool_points_backward(g: np.ndarray, arg: np.ndarray, m: int) -> np.ndarray:
    return group_max_backward(g[None], arg[None], m)[0]


def bce_loss(pred, label) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy and its gradient w.r.t. ``pred``.

    Predictions are clamped to [1e-7, 1 - 1e-7]; the gradient is evaluated
    at the clamped value so saturated outputs still receive a signal.
    """
    y = np.asarray(label, dtype=np.float64)
    p = np.clip(np.asarray(pred, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (-(y / p) + (1.0 - y) / (1.0 - p)) / n
    return float(loss), grad


def segment_sum(index: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """``out[index[i]] += values[i]``, the adjoint of ``values = out[index]``."""
    mat = sparse.csr_matrix(
        (np.ones(len(index)), (index, np.arange(len(index)))), shape=(n_rows, len(index))
    )
    return mat @ values


class Adam:
    """Adam with a step-wise learning-rate decay; zeroes gradients after each step."""

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        decay_factor: float = 0.9,
        decay_every: int = 5000,
    ):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.decay_factor, self.decay_every = decay_factor, decay_every
        self.steps = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def effective_lr(self) -> float:
        return self.lr * self.decay_factor ** (self.steps // self.decay_every)

    def step(self) -> None:
        lr = self.effective_lr()
        self.steps += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.steps
        c2 = 1.0 - b2**self.steps
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g[...] = 0.0


def grad_check(
    forward: Callable[[], float],
    backward: Callable[[], None],
    params: list[Parameter],
    eps: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-7,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``forward`` evaluates the scalar loss; ``backward`` (called right after a
    forward) accumulates parameter gradients.  ``max_entries`` caps how many
    entries per parameter are probed.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad[...] = 0.0
    forward()
    backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, max_entries, replace=False)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            lp = forward()
            flat[i] = orig - eps
            lm = forward()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            ana = a.reshape(-1)[i]
            err = abs(num - ana) / max(abs(num), abs(ana), floor)
            worst = max(worst, err)
    for p in params:
        p.grad[...] = 0.0
    return worst


def save_checkpoint(path, module: Module, header: dict) -> None:
    """One ``.npz`` file: a JSON header plus every parameter/buffer as float32."""
    arrays = {}
    table = []
    for name, p in module.named_parameters():
        arrays[name] = p.value.astype(np.float32)
        table.append([name, list(p.shape)])
    for name, b in module.named_buffers():
        arrays[name] = np.asarray(b, dtype=np.float32)
        table.append([name, list(np.shape(b))])
    meta = {"format": "objaff-checkpoint", "version": CHECKPOINT_VERSION, **header, "tensors": table}
    arrays["__header__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint_header(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__header__" not in data:
            raise ValueError(f"{path}: missing checkpoint header")
        meta = json.loads(str(data["__header__"]))
    if meta.get("format") != "objaff-checkpoint":
        raise ValueError(f"{path}: not a checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return meta


def load_checkpoint_into(path, module: Module) -> dict:
    meta = read_checkpoint_header(path)
    params = dict(module.named_parameters())
    buffers = {name: None for name, _ in module.named_buffers()}
    expected = {name: list(p.shape) for name, p in params.items()}
    expected.update({name: list(np.shape(b)) for name, b in module.named_buffers()})
    stored = {name: shape for name, shape in meta["tensors"]}
    if stored != expected:
        missing = sorted(set(expected) ^ set(stored))
        mismatched = sorted(k for k in set(expected) & set(stored) if expected[k] != stored[k])
        raise ValueError(f"{path}: tensor table mismatch (names {missing}, shapes {mismatched})")
    with np.load(Path(path), allow_pickle=False) as data:
        for name, p in params.items():
            arr = data[name]
            if list(arr.shape) != expected[name]:
                raise ValueError(f"{path}: bad shape for {name}")
            p.value[...] = arr.astype(np.float64)
        for mod_name, mod in _buffer_owners(module):
            for key in mod._buffers:
                full = f"{mod_name}{key}"
                if full in buffers:
                    mod._buffers[key] = data[full].astype(np.float64)
    return meta


def _buffer_owners(module: Module, prefix: str = ""):
    if getattr(module, "_buffers", None):
        yield prefix, module
    for key, val in module._children():
        if isinstance(val, Module):
            yield from _buffer_owners(val, f"{prefix}{key}.")
