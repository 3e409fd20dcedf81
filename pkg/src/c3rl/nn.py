"""Trainable layers, normalizers, decomposition and the Adam optimizer."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

__all__ = [
    "Parameter",
    "Module",
    "Linear",
    "LayerNorm",
    "MultiHeadAttention",
    "FeedForward",
    "EncoderBlock",
    "Encoder",
    "RevIN",
    "RevinStats",
    "moving_average_matrix",
    "series_decompose",
    "Adam",
    "linear",
    "layer_norm",
    "export_parameters",
    "import_parameters",
    "save_parameters",
    "load_parameters",
]


class Parameter(Tensor):
    """A leaf tensor that always requires grad. Its name is its attribute path."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Parameter container. Attribute order fixes parameter naming and order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unknown = set(state) - set(params)
        if missing or unknown:
            raise ContractError(f"state mismatch: missing {sorted(missing)}, unknown {sorted(unknown)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def linear(x, weight, bias=None, name: str = "linear") -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"{name}: input trailing dim {x.shape[-1]} != weight input dim {weight.shape[0]} "
            f"(input {x.shape}, weight {weight.shape})"
        )
    out = T.matmul(x, weight) if x.ndim >= 2 else T.reshape(T.matmul(T.reshape(x, (1, -1)), weight), (-1,))
    if bias is not None:
        out = out + bias
    return out


class Linear(Module):
    """Affine map along the last axis; weights uniform in +-1/sqrt(d_in), bias zero."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, name: str = "linear"):
        self.weight = Parameter(_uniform(rng, 1.0 / np.sqrt(d_in), (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out
        self._name = name

    def forward(self, x) -> Tensor:
        return linear(x, self.weight, self.bias, self._name)


def layer_norm(x, gain=None, shift=None, eps: float = 1e-5) -> Tensor:
    """Population-variance normalization over the last axis, then optional affine."""
    x = T.as_tensor(x)
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    out = centered / T.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if shift is not None:
        out = out + shift
    return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x) -> Tensor:
        return layer_norm(x, self.gain, self.shift, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product self/cross attention over tokens of width ``dim``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads < 1 or dim % heads:
            raise ConfigError(f"heads: embed dim {dim} is not divisible by {heads} heads")
        self.q = Linear(dim, dim, rng, name="attention.q")
        self.k = Linear(dim, dim, rng, name="attention.k")
        self.v = Linear(dim, dim, rng, name="attention.v")
        self.out = Linear(dim, dim, rng, name="attention.out")
        self.heads = heads
        self.dim = dim
        self.last_weights: np.ndarray | None = None

    def _split(self, t: Tensor) -> Tensor:
        b, n, _ = t.shape
        return T.permute(T.reshape(t, (b, n, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def forward(self, q, k=None, v=None) -> Tensor:
        q = T.as_tensor(q)
        k = q if k is None else T.as_tensor(k)
        v = k if v is None else T.as_tensor(v)
        if q.ndim != 3:
            raise DimensionError(f"attention expects [B, T, D] input, got {q.shape}")
        b, n, _ = q.shape
        qh, kh, vh = self._split(self.q(q)), self._split(self.k(k)), self._split(self.v(v))
        scores = T.matmul(qh, T.transpose_last_two(kh)) * (1.0 / np.sqrt(self.dim // self.heads))
        attn = T.softmax_last(scores)
        self.last_weights = attn.data
        mixed = T.permute(T.matmul(attn, vh), (0, 2, 1, 3))
        return self.out(T.reshape(mixed, (b, n, self.dim)))


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng, name="ff.fc1")
        self.fc2 = Linear(hidden, dim, rng, name="ff.fc2")

    def forward(self, x) -> Tensor:
        return self.fc2(T.gelu_approx(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm transformer block: ``x + attn(ln(x))`` then ``x + ff(ln(x))``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ff_mult: int = 4):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult * dim, rng)

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 3:
            raise DimensionError(f"encoder block expects [B, T, D], got {x.shape}")
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class Encoder(Module):
    """Stack of encoder blocks followed by a final layer norm."""

    def __init__(self, dim: int, heads: int, layers: int, rng: np.random.Generator):
        self.blocks = [EncoderBlock(dim, heads, rng) for _ in range(layers)]
        self.norm = LayerNorm(dim)

    def forward(self, x) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


@dataclass(frozen=True)
class RevinStats:
    mean: np.ndarray  # [B, 1, N]
    std: np.ndarray  # [B, 1, N]
    generation: int


class RevIN(Module):
    """Reversible instance normalization over the time axis of ``[B, L, N]``.

    Statistics are treated as constants (no gradient flows through them).
    ``denormalize`` refuses stats from any call but the most recent
    ``normalize``.
    """

    def __init__(self, channels: int, affine: bool = True, eps: float = 1e-5):
        self.channels = channels
        self.eps = eps
        if affine:
            self.affine_weight = Parameter(np.ones(channels))
            self.affine_bias = Parameter(np.zeros(channels))
        else:
            self.affine_weight = self.affine_bias = None
        self._generation = 0

    def normalize(self, x) -> tuple[Tensor, RevinStats]:
        x = T.as_tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.channels:
            raise DimensionError(f"RevIN expects [B, L, {self.channels}], got {x.shape}")
        mean = x.data.mean(axis=1, keepdims=True)
        std = np.maximum(x.data.std(axis=1, keepdims=True), self.eps)
        self._generation += 1
        out = (x - mean) / std
        if self.affine_weight is not None:
            out = out * self.affine_weight + self.affine_bias
        return out, RevinStats(mean, std, self._generation)

    def denormalize(self, pred, stats: RevinStats) -> Tensor:
        if stats.generation != self._generation:
            raise ContractError(
                f"stale RevIN stats: generation {stats.generation}, current {self._generation}"
            )
        pred = T.as_tensor(pred)
        if self.affine_weight is not None:
            pred = (pred - self.affine_bias) / self.affine_weight
        return pred * stats.std + stats.mean


def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """``[length, length]`` matrix whose rows average a replicate-padded window."""
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"kernel: moving-average window must be odd and positive, got {kernel}")
    half = (kernel - 1) // 2
    m = np.zeros((length, length))
    for t in range(length):
        for j in range(t - half, t + half + 1):
            m[t, min(max(j, 0), length - 1)] += 1.0 / kernel
    return m


def series_decompose(x, kernel: int, matrix: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Split ``[B, L, N]`` into (seasonal, trend) with a replicate-padded moving average."""
    x = T.as_tensor(x)
    length = x.shape[-2]
    if kernel > length:
        raise ConfigError(f"kernel: window {kernel} exceeds series length {length}")
    if matrix is None:
        matrix = moving_average_matrix(length, kernel)
    trend = T.matmul(matrix, x)
    return x - trend, trend


class Adam:
    """Adam with bias correction. Gradients are read, never cleared."""

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, allow_missing: bool = False) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                if not allow_missing:
                    raise ContractError(f"parameter {k} has no gradient")
                g = np.zeros_like(p.data)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def export_parameters(module: Module) -> dict[str, np.ndarray]:
    return module.state_dict()


def import_parameters(module: Module, state: dict[str, np.ndarray]) -> None:
    module.load_state_dict(state)


def save_parameters(module: Module, path) -> Path:
    """Write a flat name -> array map.

    ``.npz`` files hold one array per parameter name. ``.json`` files hold
    ``{name: {"shape": [...], "data": [flat row-major floats]}}``.
    """
    path = Path(path)
    state = module.state_dict()
    if path.suffix == ".json":
        doc = {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in state.items()}
        path.write_text(json.dumps(doc))
    else:
        np.savez(path, **state)
    return path


def load_parameters(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc.items()}
    with np.load(path) as z:
        return {k: z[k] for k in z.files}
