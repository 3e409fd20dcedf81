"""Tuned (lambda_simsia, lambda_pred) pairs per model, dataset and horizon.

Values are the published selections for each backbone. Informer/Autoformer
rows are keyed by their own horizon (Autoformer's differs on Weather).
Entries that reported out-of-memory are absent.
"""

from __future__ import annotations

from .framework import LossWeights

__all__ = ["LAMBDA_TABLE", "lookup_lambdas", "default_lambdas", "FALLBACK"]

FALLBACK = LossWeights(0.1, 0.9)

_CI_MODELS = ("S-Mamba", "DLinear", "PatchTST", "iTransformer", "RLinear")

# dataset -> horizon -> one (simsia, pred) pair per model in _CI_MODELS order
_CI_ROWS = {
    "ETTh1": {
        96: [(0.1, 0.9), (0.4, 0.6), (0.05, 0.95), (0.1, 0.9), (0.05, 0.95)],
        192: [(0.2, 0.8), (0.3, 0.7), (0.05, 0.95), (0.3, 0.7), (0.01, 0.99)],
        336: [(0.3, 0.7), (0.4, 0.6), (0.4, 0.6), (0.4, 0.6), (0.1, 0.9)],
        720: [(0.5, 0.5), (0.5, 0.5), (0.4, 0.6), (0.5, 0.5), (0.2, 0.8)],
    },
    "ETTh2": {
        96: [(0.1, 0.9), (0.4, 0.6), (0.2, 0.8), (0.2, 0.8), (0.2, 0.8)],
        192: [(0.2, 0.8), (0.4, 0.6), (0.2, 0.8), (0.2, 0.8), (0.2, 0.8)],
        336: [(0.2, 0.8), (0.4, 0.6), (0.4, 0.6), (0.2, 0.8), (0.2, 0.8)],
        720: [(0.05, 0.95), (0.4, 0.6), (0.4, 0.6), (0.1, 0.9), (0.2, 0.8)],
    },
    "ETTm1": {
        96: [(0.05, 0.95), (0.4, 0.6), (0.2, 0.8), (0.2, 0.8), (0.1, 0.9)],
        192: [(0.05, 0.95), (0.2, 0.8), (0.2, 0.8), (0.2, 0.8), (0.1, 0.9)],
        336: [(0.05, 0.95), (0.1, 0.9), (0.4, 0.6), (0.1, 0.9), (0.1, 0.9)],
        720: [(0.05, 0.95), (0.1, 0.9), (0.4, 0.6), (0.1, 0.9), (0.1, 0.9)],
    },
    "ETTm2": {
        96: [(0.05, 0.95), (0.1, 0.9), (0.1, 0.9), (0.3, 0.7), (0.1, 0.9)],
        192: [(0.05, 0.95), (0.1, 0.9), (0.1, 0.9), (0.2, 0.8), (0.01, 0.99)],
        336: [(0.01, 0.99), (0.8, 0.2), (0.1, 0.9), (0.1, 0.9), (0.1, 0.9)],
        720: [(0.01, 0.99), (0.4, 0.6), (0.1, 0.9), (0.1, 0.9), (0.1, 0.9)],
    },
    "Exchange": {
        96: [(0.01, 0.99), (0.1, 0.9), (0.01, 0.99), (0.01, 0.99), (0.01, 0.99)],
        192: [(0.01, 0.99), (0.1, 0.9), (0.01, 0.99), (0.01, 0.99), (0.01, 0.99)],
        336: [(0.05, 0.95), (0.1, 0.9), (0.01, 0.99), (0.01, 0.99), (0.01, 0.99)],
        720: [(0.05, 0.95), (0.1, 0.9), (0.01, 0.99), (0.01, 0.99), (0.1, 0.9)],
    },
    "Weather": {
        96: [(0.2, 0.8), (0.2, 0.8), (0.01, 0.99), (0.2, 0.8), (0.01, 0.99)],
        192: [(0.1, 0.9), (0.2, 0.8), (0.01, 0.99), (0.2, 0.8), (0.01, 0.99)],
        336: [(0.1, 1.0), (0.2, 0.8), (0.01, 0.99), (0.1, 0.9), (0.2, 0.8)],
        720: [(0.1, 1.0), (0.2, 0.8), (0.1, 0.9), (0.05, 0.95), (0.1, 0.9)],
    },
    "Electricity": {
        96: [(0.1, 0.9), (0.2, 0.8), None, (0.2, 0.8), (0.1, 0.9)],
        192: [(0.2, 0.8), (0.2, 0.8), None, (0.2, 0.8), (0.1, 0.9)],
        336: [(0.3, 0.7), (0.4, 0.6), None, (0.2, 0.8), (0.1, 0.9)],
        720: [(0.4, 0.6), (0.2, 0.8), None, (0.1, 0.9), (0.1, 0.9)],
    },
    "Traffic": {
        96: [(0.2, 0.8), (0.4, 0.6), None, (0.05, 0.95), (0.1, 0.9)],
        192: [(0.2, 0.8), (0.4, 0.6), None, (0.05, 0.95), (0.1, 0.9)],
        336: [(0.2, 0.8), (0.4, 0.6), None, (0.1, 0.9), (0.1, 0.9)],
        720: [(0.1, 0.9), (0.5, 0.5), None, (0.05, 0.95), (0.1, 0.9)],
    },
    "Illness": {
        24: [(0.05, 0.95), (0.01, 0.99), (0.01, 0.99), (0.1, 0.9), (0.1, 0.9)],
        36: [(0.05, 0.95), (0.01, 0.99), (0.5, 0.5), (0.1, 0.9), (0.1, 0.9)],
        48: [(0.05, 0.95), (0.4, 0.6), (0.7, 0.3), (0.01, 0.99), (0.1, 0.9)],
        60: [(0.05, 0.95), (0.4, 0.6), (0.4, 0.6), (0.1, 0.9), (0.1, 0.9)],
    },
}

# dataset -> [(informer horizon, autoformer horizon, informer pair, autoformer pair)]
_CM_ROWS = {
    "ETTh1": [
        (24, 24, (0.1, 0.9), (0.1, 0.9)),
        (48, 48, (0.6, 0.4), (0.2, 0.8)),
        (168, 168, (0.6, 0.4), (0.5, 0.5)),
        (336, 336, (0.6, 0.4), (0.2, 0.8)),
        (720, 720, (0.6, 0.4), (0.4, 0.6)),
    ],
    "ETTh2": [
        (24, 24, (0.2, 0.8), (0.3, 0.7)),
        (48, 48, (0.9, 0.1), (0.3, 0.7)),
        (168, 168, (0.8, 0.2), (0.4, 0.6)),
        (336, 336, (0.6, 0.4), (0.4, 0.6)),
        (720, 720, (0.9, 0.1), (0.9, 0.1)),
    ],
    "ETTm1": [
        (24, 24, (0.4, 0.6), (0.2, 0.8)),
        (48, 48, (0.1, 0.9), (0.2, 0.8)),
        (96, 96, (0.6, 0.4), (0.2, 0.8)),
        (288, 288, (0.1, 0.9), (0.1, 0.9)),
        (672, 672, (0.7, 0.3), (0.4, 0.6)),
    ],
    "Weather": [
        (24, 48, (0.3, 0.7), (0.1, 0.9)),
        (48, 96, (0.9, 0.1), (0.1, 0.9)),
        (168, 192, (0.7, 0.3), (0.2, 0.8)),
        (336, 336, (0.8, 0.2), (0.2, 0.8)),
        (720, 720, (0.7, 0.3), (0.2, 0.8)),
    ],
}


def _build_table() -> dict:
    table = {}
    for dataset, rows in _CI_ROWS.items():
        for horizon, pairs in rows.items():
            for model, pair in zip(_CI_MODELS, pairs):
                if pair is not None:
                    table[(model, dataset, horizon)] = pair
    for dataset, rows in _CM_ROWS.items():
        for h_inf, h_auto, p_inf, p_auto in rows:
            table[("Informer", dataset, h_inf)] = p_inf
            table[("Autoformer", dataset, h_auto)] = p_auto
    return table


LAMBDA_TABLE: dict[tuple[str, str, int], tuple[float, float]] = _build_table()

_MODEL_NAMES = {
    "smamba": "S-Mamba",
    "dlinear": "DLinear",
    "patchtst": "PatchTST",
    "patchtsttoy": "PatchTST",
    "itransformer": "iTransformer",
    "itransformertoy": "iTransformer",
    "rlinear": "RLinear",
    "informer": "Informer",
    "autoformer": "Autoformer",
}
_DATASET_NAMES = {name.lower(): name for name in {*_CI_ROWS, *_CM_ROWS}}


def _norm(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def lookup_lambdas(model: str, dataset: str, horizon: int) -> LossWeights | None:
    """Tuned weights for the triple, or ``None`` when the table has no entry."""
    m = _MODEL_NAMES.get(_norm(model))
    d = _DATASET_NAMES.get(dataset.lower())
    if m is None or d is None:
        return None
    pair = LAMBDA_TABLE.get((m, d, int(horizon)))
    return None if pair is None else LossWeights(*pair)


def default_lambdas(model: str, dataset: str, horizon: int) -> LossWeights:
    """Like :func:`lookup_lambdas` but falls back to ``(0.1, 0.9)``."""
    return lookup_lambdas(model, dataset, horizon) or FALLBACK
