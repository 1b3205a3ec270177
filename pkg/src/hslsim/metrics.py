"""Consensus distance, its ratio across a mixing step, and the pairwise identity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RoundMetrics",
    "consensus_distance",
    "pairwise_consensus_distance",
    "consensus_distance_ratio",
    "variance_identity_gap",
]


@dataclass(frozen=True)
class RoundMetrics:
    """Per-round record of a training run.

    ``cdr`` is ``None`` when ``cd_pre`` is exactly zero (already at consensus);
    ``accuracy`` and ``spectral_gap`` are ``None`` when not measured.
    """

    round: int
    cd_pre: float
    cd_post: float
    cdr: float | None
    mean_loss: float
    mean_grad_norm_sq: float
    accuracy: float | None = None
    spectral_gap: float | None = None


def _as_model_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"model matrix must be (n, d) with n ≥ 1, got shape {X.shape}")
    return X


def consensus_distance(X) -> float:
    """Mean squared distance of the rows of ``X`` to their average.

    Identical rows give exactly 0; the floating-point mean of equal values
    need not reproduce the value, so that case is detected directly.
    """
    X = _as_model_matrix(X)
    if np.all(X == X[0]):
        return 0.0
    dev = X - X.mean(axis=0)
    return float(np.einsum("ij,ij->", dev, dev) / X.shape[0])


def pairwise_consensus_distance(X, block: int = 256) -> float:
    """``(1/2n²) Σ_{i≠j} ‖x_i − x_j‖²``, summed directly over row pairs.

    Equal to :func:`consensus_distance` in exact arithmetic; kept as an
    independent route. Pairs are accumulated per block of rows with
    ``math.fsum`` so the result does not depend on blocking.
    """
    X = _as_model_matrix(X)
    n = X.shape[0]
    partial = []
    for start in range(0, n, block):
        diff = X[start:start + block, None, :] - X[None, :, :]
        partial.extend(np.einsum("ijk,ijk->i", diff, diff).tolist())
    return math.fsum(partial) / (2.0 * n * n)


def consensus_distance_ratio(cd_pre: float, cd_post: float) -> float | None:
    """``cd_post / cd_pre``; ``None`` when ``cd_pre`` is zero."""
    if cd_pre < 0:
        raise ValueError(f"cd_pre must be non-negative, got {cd_pre}")
    if cd_pre == 0:
        return None
    return cd_post / cd_pre


def variance_identity_gap(X) -> float:
    """Absolute difference between the centred and pairwise forms of the spread."""
    X = _as_model_matrix(X)
    n = X.shape[0]
    dev = X - X.mean(axis=0)
    centred = math.fsum((dev * dev).ravel().tolist()) / n
    return abs(centred - pairwise_consensus_distance(X))
