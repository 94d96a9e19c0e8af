"""Two-level weighted mean/variance pooling of per-view value vectors.

Encoders are injected callables (the learned ones are out of scope here);
the default identity encoder makes the aggregation topology testable on its
own. Accumulation order is fixed by sorting on a canonical content key
(weight, then value components), so simultaneously permuting views and
weights reproduces every moment bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Encoder = Callable[[np.ndarray], np.ndarray]


def identity_encoder(x: np.ndarray) -> np.ndarray:
    return x


@dataclass
class FeatureSet:
    """K per-view value vectors with probability weights and a target view."""

    values: np.ndarray   # (K, D)
    weights: np.ndarray  # (K,), nonnegative, sums to 1
    target_index: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a (K, D) array")
        k = self.values.shape[0]
        if self.weights.shape != (k,):
            raise ValueError("weights must be a (K,) vector")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        if not (0 <= self.target_index < k):
            raise ValueError("target_index out of range")


def _canonical_order(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Index order sorted by (weight, value components), lexicographically.

    The key is content-based, so any permutation of the rows sorts back to
    the identical sequence, making downstream accumulation bitwise stable.
    """
    keys = [values[:, c] for c in range(values.shape[1] - 1, -1, -1)]
    keys.append(weights)  # primary key last, per lexsort convention
    return np.lexsort(tuple(keys))


def weighted_moments(values: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and biased variance of row vectors under ``weights``.

    The mean is accumulated as anchor + sum w_k (q_k - anchor) with the
    anchor at the largest canonical key, which makes one-hot weights return
    the selected row exactly and identical rows produce exactly zero
    variance, for any weights.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.ndim != 2 or weights.shape != (values.shape[0],):
        raise ValueError("values must be (K, D) with a matching (K,) weight vector")
    order = _canonical_order(values, weights)
    v = values[order]
    w = weights[order]
    anchor = v[-1]
    mean = anchor + (w[:, None] * (v - anchor)).sum(axis=0)
    var = (w[:, None] * np.square(v - mean)).sum(axis=0)
    return mean, var


def aggregate(features: FeatureSet, level1: Encoder = identity_encoder,
              level2: Encoder = identity_encoder) -> np.ndarray:
    """Two-level aggregation producing the target-view feature.

    Level 1 encodes each view, pools weighted moments, and re-encodes each
    view's (value, mean, variance) concatenation. Level 2 pools moments of
    the level-1 outputs and encodes only the target view's output together
    with them.
    """
    w = features.weights
    encoded = np.stack([np.asarray(level1(x), dtype=np.float64)
                        for x in features.values])
    mean1, var1 = weighted_moments(encoded, w)
    level1_out = np.stack([
        np.asarray(level1(np.concatenate([q, mean1, var1])), dtype=np.float64)
        for q in encoded])
    mean2, var2 = weighted_moments(level1_out, w)
    target = level1_out[features.target_index]
    return np.asarray(level2(np.concatenate([target, mean2, var2])),
                      dtype=np.float64)
