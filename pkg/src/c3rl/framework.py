"""Siamese channel-view training for a base forecaster.

The backbone ``f`` sees the series in its native layout. A mirrored branch
``g`` sees the transposed view, so channel-independent and channel-mixing
readings of the same window form a positive pair. A bottleneck prediction
head maps either branch's output onto the other's view, and the two
directions are scored with a stop-gradient negative cosine::

    l_simsia = 1/2 * D(head(f(x)), sg(g(x))) + 1/2 * D(sg(f(x)), head(g(x)))
    l_total  = lambda_simsia * l_simsia + lambda_pred * mse(f(x), y)

Only ``f`` is used at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CapabilityError, ConfigError, ContractError, DimensionError
from .models import ForecastModel, ModelConfig, patch_indices
from .nn import Encoder, Linear, Module, Parameter, RevIN, moving_average_matrix, series_decompose
from .tensor import Tensor

__all__ = [
    "LossWeights",
    "HeadConfig",
    "LossReport",
    "PredictionHead",
    "SiameseProjection",
    "ITransformerSiamese",
    "DLinearSiamese",
    "RLinearSiamese",
    "PatchTSTSiamese",
    "SiameseBundle",
    "build_siamese",
    "neg_cosine",
    "simsiam_terms",
    "simsiam_loss",
    "prediction_loss",
    "total_loss",
    "collapse_metric",
    "forward_train",
    "forward_infer",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_simsia: float = 0.1
    lambda_pred: float = 0.9

    def __post_init__(self):
        if self.lambda_simsia < 0 or self.lambda_pred < 0:
            raise ConfigError(
                f"lambda: weights must be non-negative, got ({self.lambda_simsia}, {self.lambda_pred})"
            )
        if self.lambda_simsia == 0 and self.lambda_pred == 0:
            raise ConfigError("lambda: weights cannot both be zero")

    @classmethod
    def from_simsia(cls, lambda_simsia: float) -> "LossWeights":
        """Point on the ``lambda_simsia + lambda_pred = 1`` line."""
        if not 0.0 <= lambda_simsia <= 1.0:
            raise ConfigError(f"lambda_simsia: sweep value {lambda_simsia} outside [0, 1]")
        return cls(lambda_simsia, 1.0 - lambda_simsia)

    def as_tuple(self) -> tuple[float, float]:
        return (self.lambda_simsia, self.lambda_pred)


@dataclass(frozen=True)
class HeadConfig:
    """Widths of the siamese-side heads.

    ``d_sia`` is the hidden width of the linear siamese branches (defaults to
    the lookback). ``bottleneck`` divides the channel count for the prediction
    head's hidden layer.
    """

    d_sia: int | None = None
    bottleneck: int = 4
    share_head: bool = True


@dataclass
class LossReport:
    l_simsia: float
    l_pred: float
    l_total: float
    collapse_std: float
    weights: LossWeights
    total: Tensor = field(repr=False)
    intermediates: dict = field(default_factory=dict, repr=False)


class PredictionHead(Module):
    """``N -> max(1, N // bottleneck) -> N`` along the channel axis with a ReLU between."""

    def __init__(self, channels: int, rng: np.random.Generator, bottleneck: int = 4):
        hidden = max(1, channels // bottleneck)
        self.fc1 = Linear(channels, hidden, rng, name="head.fc1")
        self.fc2 = Linear(hidden, channels, rng, name="head.fc2")

    def forward(self, x) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class SiameseProjection(Module):
    """Map a ``[B, L, D]`` siamese feature to ``[B, P, N]``: time map first, then feature map."""

    def __init__(self, lookback: int, horizon: int, width: int, channels: int, rng: np.random.Generator):
        self.time = Linear(lookback, horizon, rng, name="siamese_projection.time")
        self.feature = Linear(width, channels, rng, name="siamese_projection.feature")

    def forward(self, h) -> Tensor:
        h = T.transpose_last_two(self.time(T.transpose_last_two(h)))  # [B, P, D]
        return self.feature(h)


class ITransformerSiamese(Module):
    """Time steps as tokens: embed each N-vector, attend across time."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c = config
        self.embed = Linear(c.channels, c.d_model, rng, name="siamese.embed")
        self.encoder = Encoder(c.d_model, c.heads, c.layers, rng)
        self.projection = SiameseProjection(c.lookback, c.horizon, c.d_model, c.channels, rng)

    def forward(self, x) -> Tensor:
        return self.projection(self.encoder(self.embed(x)))


class DLinearSiamese(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator, d_sia: int):
        c = config
        self.kernel = c.kernel
        self.seasonal = Linear(c.channels, d_sia, rng, name="siamese.seasonal")
        self.trend = Linear(c.channels, d_sia, rng, name="siamese.trend")
        self.projection = SiameseProjection(c.lookback, c.horizon, d_sia, c.channels, rng)
        self._avg = moving_average_matrix(c.lookback, c.kernel)

    def forward(self, x) -> Tensor:
        seasonal, trend = series_decompose(x, self.kernel, self._avg)
        return self.projection(self.seasonal(seasonal) + self.trend(trend))


class RLinearSiamese(Module):
    """Own RevIN around a channel-mixing linear map, mirroring the backbone's layout."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, d_sia: int):
        c = config
        self.revin = RevIN(c.channels, affine=c.revin_affine)
        self.mix = Linear(c.channels, d_sia, rng, name="siamese.mix")
        self.projection = SiameseProjection(c.lookback, c.horizon, d_sia, c.channels, rng)

    def forward(self, x) -> Tensor:
        z, stats = self.revin.normalize(x)
        return self.revin.denormalize(self.projection(self.mix(z)), stats)


class PatchTSTSiamese(Module):
    """Tokens are within-patch positions; each token embeds the n values at that offset."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c = config
        n, l, d = c.num_patches, c.patch_len, c.d_model
        self.embed = Linear(n, d, rng, name="siamese.embed")
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(l, d)))
        self.encoder = Encoder(d, c.heads, c.layers, rng)
        self.head = Linear(l * d, c.horizon, rng, name="siamese.flatten_head")
        self._idx = patch_indices(c.lookback, l, c.stride)
        self._dims = (l, d)

    def forward(self, x) -> Tensor:
        b, length, ch = x.shape
        l, d = self._dims
        series = T.reshape(T.transpose_last_two(x), (b * ch, length))
        patches = T.transpose_last_two(T.take(series, self._idx, axis=1))  # [(B*N), l, n]
        enc = self.encoder(self.embed(patches) + self.pos)  # [(B*N), l, D]
        out = self.head(T.reshape(enc, (b, ch, l * d)))
        return T.transpose_last_two(out)


class SiameseBundle(Module):
    """Backbone ``f``, mirrored branch ``g``, prediction head(s) and loss weights.

    ``stop_grad`` exists only so tests can disable the stop-gradient and
    watch representations collapse.
    """

    def __init__(self, backbone: ForecastModel, siamese: Module, head: PredictionHead,
                 weights: LossWeights, head_g: PredictionHead | None = None):
        self.backbone = backbone
        self.siamese = siamese
        self.head = head
        if head_g is not None:
            self.head_g = head_g
        self.weights = weights
        self.stop_grad = True

    @property
    def config(self) -> ModelConfig:
        return self.backbone.config

    @property
    def head_for_siamese(self) -> PredictionHead:
        return getattr(self, "head_g", self.head)

    def forward(self, x):
        return self.backbone(x)


def build_siamese(base: ForecastModel, head_config: HeadConfig | None = None,
                  weights: LossWeights | None = None,
                  rng: np.random.Generator | int | None = None) -> SiameseBundle:
    head_config = head_config or HeadConfig()
    weights = weights or LossWeights()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    c = base.config
    d_sia = head_config.d_sia or c.lookback
    if c.kind == "ITransformerToy":
        siamese = ITransformerSiamese(c, rng)
    elif c.kind == "DLinear":
        siamese = DLinearSiamese(c, rng, d_sia)
    elif c.kind == "RLinear":
        siamese = RLinearSiamese(c, rng, d_sia)
    elif c.kind == "PatchTSTToy":
        siamese = PatchTSTSiamese(c, rng)
    else:
        raise CapabilityError(f"no siamese construction for backbone {c.kind!r}")
    head = PredictionHead(c.channels, rng, head_config.bottleneck)
    head_g = None if head_config.share_head else PredictionHead(c.channels, rng, head_config.bottleneck)
    return SiameseBundle(base, siamese, head, weights, head_g)


def _flatten(a: Tensor) -> Tensor:
    return T.reshape(a, (a.shape[0], -1))


def neg_cosine(a, b) -> Tensor:
    """Batch mean of per-sample negative cosine similarity over flattened samples."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"neg_cosine operands differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = T.reshape(a, (1, -1)), T.reshape(b, (1, -1))
    an = T.l2_normalize_last(_flatten(a))
    bn = T.l2_normalize_last(_flatten(b))
    return -((an * bn).sum(axis=-1).mean())


def simsiam_terms(bundle: SiameseBundle, x) -> tuple[Tensor, Tensor, dict]:
    """Both symmetrized directions, returned separately.

    Term 1 carries gradient into the backbone and head, term 2 into the
    siamese branch and head.
    """
    x = T.as_tensor(x)
    x_pro, _ = bundle.backbone(x)
    x_siapro = bundle.siamese(x)
    if x_siapro.shape != x_pro.shape:
        raise DimensionError(f"siamese output {x_siapro.shape} != backbone output {x_pro.shape}")
    x_pre = bundle.head(x_pro)
    x_siapre = bundle.head_for_siamese(x_siapro)
    sg = T.detach if bundle.stop_grad else (lambda t: t)
    term1 = neg_cosine(x_pre, sg(x_siapro))
    term2 = neg_cosine(sg(x_pro), x_siapre)
    parts = {"x_pro": x_pro, "x_siapro": x_siapro, "x_pre": x_pre, "x_siapre": x_siapre}
    return term1, term2, parts


def simsiam_loss(bundle: SiameseBundle, x) -> tuple[Tensor, dict]:
    term1, term2, parts = simsiam_terms(bundle, x)
    return 0.5 * term1 + 0.5 * term2, parts


def prediction_loss(pred, target) -> Tensor:
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return (diff * diff).mean()


def total_loss(l_simsia, l_pred, weights: LossWeights):
    return weights.lambda_simsia * l_simsia + weights.lambda_pred * l_pred


def collapse_metric(representations) -> float:
    """Mean per-dimension std of L2-normalized rows.

    About ``1/sqrt(dim)`` for well-spread representations, 0 when every row
    points the same way.
    """
    z = np.asarray(getattr(representations, "data", representations), dtype=np.float64)
    if z.ndim != 2:
        z = z.reshape(z.shape[0], -1)
    if z.shape[0] < 2:
        raise ContractError(f"collapse_metric needs at least 2 rows, got {z.shape[0]}")
    norm = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), T.NORM_EPS)
    return float((z / norm).std(axis=0).mean())


def forward_train(bundle: SiameseBundle, x, y) -> LossReport:
    """Compute all losses with the graph recorded, ready for :func:`tensor.backward`."""
    l_simsia, parts = simsiam_loss(bundle, x)
    l_pred = prediction_loss(parts["x_pro"], y)
    total = total_loss(l_simsia, l_pred, bundle.weights)
    return LossReport(
        l_simsia=l_simsia.item(),
        l_pred=l_pred.item(),
        l_total=total.item(),
        # a single-row batch has no spread to measure
        collapse_std=collapse_metric(parts["x_pro"].data) if len(x) > 1 else float("nan"),
        weights=bundle.weights,
        total=total,
        intermediates=parts,
    )


def forward_infer(bundle: SiameseBundle, x) -> Tensor:
    """Backbone-only prediction; the siamese branch is never evaluated."""
    return bundle.backbone.predict(x)
