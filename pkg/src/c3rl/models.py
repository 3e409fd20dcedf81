"""Base forecasters: DLinear, RLinear, a small iTransformer and a small PatchTST.

Every model maps ``x: [B, L, N]`` to ``(prediction [B, P, N], feature)``.
The feature is the internal tensor a siamese branch aligns against:

============  ===========================================
kind          feature
============  ===========================================
DLinear       summed branch output before transpose ``[B, N, P]``
RLinear       normalized-domain output ``[B, N, P]``
iTransformer  encoder output over variable tokens ``[B, N, D]``
PatchTST      encoder output per patch ``[B, N, n, D]``
============  ===========================================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import CapabilityError, ConfigError, DimensionError
from .nn import Encoder, Linear, Module, Parameter, RevIN, moving_average_matrix, series_decompose
from .tensor import Tensor

__all__ = [
    "KINDS",
    "ModelConfig",
    "ForecastModel",
    "DLinear",
    "RLinear",
    "ITransformerToy",
    "PatchTSTToy",
    "build_model",
    "patch_indices",
]

KINDS = ("DLinear", "RLinear", "ITransformerToy", "PatchTSTToy")

_ALIASES = {
    "dlinear": "DLinear",
    "rlinear": "RLinear",
    "itransformer": "ITransformerToy",
    "itransformertoy": "ITransformerToy",
    "patchtst": "PatchTSTToy",
    "patchtsttoy": "PatchTSTToy",
}


def canonical_kind(kind: str) -> str:
    try:
        return _ALIASES[kind.lower()]
    except KeyError:
        raise CapabilityError(f"unsupported model kind {kind!r}; choose from {KINDS}") from None


@dataclass
class ModelConfig:
    kind: str
    lookback: int
    horizon: int
    channels: int
    d_model: int = 128
    layers: int = 2
    heads: int = 8
    kernel: int = 25
    patch_len: int = 16
    stride: int = 8
    revin_affine: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = canonical_kind(self.kind)
        for name in ("lookback", "horizon", "channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.kind == "DLinear":
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ConfigError(f"kernel: must be odd, got {self.kernel}")
            if self.kernel > self.lookback:
                raise ConfigError(f"kernel: {self.kernel} exceeds lookback {self.lookback}")
        if self.kind in ("ITransformerToy", "PatchTSTToy"):
            if self.d_model < 1 or self.heads < 1 or self.d_model % self.heads:
                raise ConfigError(f"heads: d_model {self.d_model} not divisible by heads {self.heads}")
            if self.layers < 0:
                raise ConfigError("layers: must be >= 0")
        if self.kind == "PatchTSTToy":
            if self.patch_len < 1 or self.patch_len > self.lookback:
                raise ConfigError(f"patch_len: must be in [1, lookback], got {self.patch_len}")
            if self.stride < 1:
                raise ConfigError(f"stride: must be >= 1, got {self.stride}")

    @property
    def num_patches(self) -> int:
        return (self.lookback - self.patch_len) // self.stride + 1

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


class ForecastModel(Module):
    config: ModelConfig

    def forward(self, x) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def predict(self, x) -> Tensor:
        return self.forward(x)[0]

    def _check_input(self, x) -> Tensor:
        x = T.as_tensor(x)
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.lookback, c.channels):
            raise DimensionError(
                f"{c.kind} expects input [B, {c.lookback}, {c.channels}], got {x.shape}"
            )
        return x


class DLinear(ForecastModel):
    """Decomposition linear model with time maps shared across channels."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.seasonal = Linear(config.lookback, config.horizon, rng, name="dlinear.seasonal")
        self.trend = Linear(config.lookback, config.horizon, rng, name="dlinear.trend")
        self._avg = moving_average_matrix(config.lookback, config.kernel)

    def forward(self, x):
        x = self._check_input(x)
        seasonal, trend = series_decompose(x, self.config.kernel, self._avg)
        # [B, L, N] -> [B, N, L] so the time map runs along the last axis
        out = self.seasonal(T.transpose_last_two(seasonal)) + self.trend(T.transpose_last_two(trend))
        return T.transpose_last_two(out), out


class RLinear(ForecastModel):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.revin = RevIN(config.channels, affine=config.revin_affine)
        self.proj = Linear(config.lookback, config.horizon, rng, name="rlinear.proj")

    def forward(self, x):
        x = self._check_input(x)
        z, stats = self.revin.normalize(x)
        out = self.proj(T.transpose_last_two(z))  # [B, N, P]
        return self.revin.denormalize(T.transpose_last_two(out), stats), out


class ITransformerToy(ForecastModel):
    """Variables as tokens: embed each length-L series, attend across variables."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.embed = Linear(config.lookback, config.d_model, rng, name="itransformer.embed")
        self.encoder = Encoder(config.d_model, config.heads, config.layers, rng)
        self.proj = Linear(config.d_model, config.horizon, rng, name="itransformer.proj")

    def forward(self, x):
        x = self._check_input(x)
        tokens = self.embed(T.transpose_last_two(x))  # [B, N, D]
        feature = self.encoder(tokens)
        return T.transpose_last_two(self.proj(feature)), feature


def patch_indices(length: int, patch_len: int, stride: int) -> np.ndarray:
    """``[n, patch_len]`` index grid of sliding patches over ``range(length)``."""
    n = (length - patch_len) // stride + 1
    if n < 1:
        raise ConfigError(f"patch_len: {patch_len} leaves no patch in length {length}")
    return np.arange(n)[:, None] * stride + np.arange(patch_len)[None, :]


class PatchTSTToy(ForecastModel):
    """Each channel runs alone through a shared patch encoder."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        n, l, d = config.num_patches, config.patch_len, config.d_model
        self.embed = Linear(l, d, rng, name="patchtst.embed")
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(n, d)))
        self.encoder = Encoder(d, config.heads, config.layers, rng)
        self.head = Linear(n * d, config.horizon, rng, name="patchtst.head")
        self._idx = patch_indices(config.lookback, l, config.stride)

    def patches(self, x) -> Tensor:
        """``[B, L, N]`` -> ``[(B*N), n, l]``."""
        b, length, ch = x.shape
        series = T.reshape(T.transpose_last_two(x), (b * ch, length))
        return T.take(series, self._idx, axis=1)

    def forward(self, x):
        x = self._check_input(x)
        b, _, ch = x.shape
        c = self.config
        n, d = c.num_patches, c.d_model
        enc = self.encoder(self.embed(self.patches(x)) + self.pos)  # [(B*N), n, D]
        out = self.head(T.reshape(enc, (b, ch, n * d)))  # [B, N, P]
        return T.transpose_last_two(out), T.reshape(enc, (b, ch, n, d))


_REGISTRY = {
    "DLinear": DLinear,
    "RLinear": RLinear,
    "ITransformerToy": ITransformerToy,
    "PatchTSTToy": PatchTSTToy,
}


def build_model(config: ModelConfig, rng: np.random.Generator | int | None = None) -> ForecastModel:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return _REGISTRY[config.kind](config, rng)
