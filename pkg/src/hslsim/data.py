"""Synthetic workloads and non-iid partitioning."""

from __future__ import annotations

import numpy as np

from hslsim.errors import ConfigError
from hslsim.learning import LogisticShard, Objective, QuadraticShard

__all__ = ["partition_dirichlet", "make_quadratic_objective", "make_logistic_objective"]


def partition_dirichlet(labels, n_s: int, alpha: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Split sample indices across ``n_s`` nodes with Dirichlet(α) class proportions.

    For every class a proportion vector over nodes is drawn from
    ``Dirichlet(alpha * ones(n_s))`` and that class's shuffled samples are cut
    at the cumulative proportions. Nodes left empty then take one sample from
    the currently largest node, so every shard is nonempty.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ConfigError("cannot partition an empty dataset")
    if n_s < 1:
        raise ConfigError(f"n_s must be ≥ 1, got {n_s}")
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    if labels.size < n_s:
        raise ConfigError(f"{labels.size} samples cannot fill {n_s} nonempty shards")

    buckets: list[list[int]] = [[] for _ in range(n_s)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(n_s, float(alpha)))
        cuts = np.floor(np.cumsum(props)[:-1] * idx.size).astype(np.int64)
        for node, chunk in enumerate(np.split(idx, cuts)):
            buckets[node].extend(chunk.tolist())

    for node in range(n_s):
        if not buckets[node]:
            donor = max(range(n_s), key=lambda j: (len(buckets[j]), -j))
            buckets[node].append(buckets[donor].pop())
    return [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]


def make_quadratic_objective(n_s: int, dim: int, rows: int, rng: np.random.Generator,
                             heterogeneity: float = 1.0, shared_matrix: bool = True,
                             condition: float = 2.0) -> Objective:
    """Least-squares nodes ``½‖A_i x − b_i‖²``.

    With ``shared_matrix`` every node gets the same ``A`` whose ``AᵀA`` has
    eigenvalues spread over ``[1, condition]``; nodes then differ only
    through ``b_i = A x* + heterogeneity * noise_i``, which makes the
    heterogeneity constant in ``x``. ``heterogeneity = 0`` gives identical
    nodes.
    """
    if rows < dim:
        raise ConfigError(f"need rows ≥ dim for a strongly convex quadratic, got {rows} < {dim}")

    def draw_matrix():
        U, _ = np.linalg.qr(rng.standard_normal((rows, dim)))
        V, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        s = np.sqrt(np.linspace(1.0, condition, dim))
        return (U * s) @ V.T

    x_star = rng.standard_normal(dim)
    A = draw_matrix() if shared_matrix else None
    shards = []
    for _ in range(n_s):
        Ai = A if shared_matrix else draw_matrix()
        bi = Ai @ x_star + heterogeneity * rng.standard_normal(rows)
        shards.append(QuadraticShard(Ai, bi))
    return Objective("quadratic", shards)


def make_logistic_objective(n_s: int, n_samples: int, dim: int, rng: np.random.Generator,
                            alpha: float = 1.0, separation: float = 1.0, n_test: int = 2000,
                            l2: float = 0.0) -> Objective:
    """Two-class Gaussian mixture split across nodes by :func:`partition_dirichlet`.

    Class means sit at ``±separation/2`` along a random unit direction with
    identity covariance. A constant feature is appended for the bias, so the
    model dimension is ``dim + 1``.
    """
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)

    def draw(m):
        y = rng.integers(0, 2, size=m).astype(np.float64)
        X = rng.standard_normal((m, dim)) + np.outer(2 * y - 1, direction) * (separation / 2)
        return np.hstack([X, np.ones((m, 1))]), y

    X, y = draw(n_samples)
    X_test, y_test = draw(n_test)
    parts = partition_dirichlet(y, n_s, alpha, rng)
    shards = [LogisticShard(X[p], y[p], l2) for p in parts]
    return Objective("logistic", shards, X_test, y_test)
