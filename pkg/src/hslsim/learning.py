"""Decentralized SGD over HSL and baseline topologies.

One round: every node runs ``local_steps`` mini-batch SGD steps on its own
shard, then the stacked models are mixed, either through the three HSL
stages (push, gossip, pull) or through one baseline matrix.

Node ``i``'s SGD in round ``t`` draws from the stream ``(t, SGD, i)`` and
the mixing matrices from ``(t, PUSH|GOSSIP|PULL|BASELINE)``, so a run is a
pure function of its config, objective and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import expit, log_expit

from hslsim.bounds import ProblemConstants, beta_bounds, theorem1_step_size
from hslsim.errors import ConfigError, DivergenceError
from hslsim.metrics import RoundMetrics, consensus_distance, consensus_distance_ratio
from hslsim.rng import Stage, stream
from hslsim.spectral import spectral_gap
from hslsim.topology import (
    Kind,
    TopologyConfig,
    compose_effective,
    sample_baseline,
    sample_hsl_round,
)

__all__ = [
    "QuadraticShard",
    "LogisticShard",
    "Objective",
    "GradientSample",
    "TrainConfig",
    "ExperimentResult",
    "PAPER_PRESETS",
    "local_sgd",
    "evaluate",
    "quadratic_constants",
    "run_experiment",
]

# Hyperparameters of the two full-scale workloads, kept for reference runs.
PAPER_PRESETS = {
    "cifar10": {"step_size": 0.01, "batch_size": 128, "local_steps": 3},
    "agnews": {"step_size": 0.05, "batch_size": 64, "local_steps": 5},
}


@dataclass(frozen=True)
class QuadraticShard:
    """``f(x) = ½‖A x − b‖²`` over the rows of ``A``."""

    A: np.ndarray
    b: np.ndarray

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def loss(self, x: np.ndarray) -> float:
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)

    def grad(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        if rows is None:
            return self.A.T @ (self.A @ x - self.b)
        A, b = self.A[rows], self.b[rows]
        # rescaled so the mini-batch gradient is unbiased for the full sum
        return (self.size / len(rows)) * (A.T @ (A @ x - b))


@dataclass(frozen=True)
class LogisticShard:
    """Mean logistic loss over ``(X, y)`` with labels in {0, 1}, plus ``½ l2 ‖x‖²``."""

    X: np.ndarray
    y: np.ndarray
    l2: float = 0.0

    @property
    def size(self) -> int:
        return self.X.shape[0]

    def loss(self, x: np.ndarray) -> float:
        z = self.X @ x
        nll = -np.mean(self.y * log_expit(z) + (1 - self.y) * log_expit(-z))
        return float(nll) + 0.5 * self.l2 * float(x @ x)

    def grad(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        X, y = (self.X, self.y) if rows is None else (self.X[rows], self.y[rows])
        return X.T @ (expit(X @ x) - y) / X.shape[0] + self.l2 * x


Shard = Union[QuadraticShard, LogisticShard]


@dataclass
class Objective:
    """Per-node local objectives; the global objective is their plain mean."""

    kind: str
    shards: list
    test_X: np.ndarray | None = None
    test_y: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "logistic"):
            raise ConfigError(f"objective kind must be 'quadratic' or 'logistic', got {self.kind!r}")
        if not self.shards:
            raise ConfigError("objective needs at least one shard")
        dims = {s.A.shape[1] if self.kind == "quadratic" else s.X.shape[1] for s in self.shards}
        if len(dims) != 1:
            raise ConfigError(f"feature dimensions disagree across nodes: {sorted(dims)}")
        if any(s.size == 0 for s in self.shards):
            raise ConfigError("every node needs a nonempty shard")
        self._cache: dict = {}

    @property
    def n_nodes(self) -> int:
        return len(self.shards)

    @property
    def dim(self) -> int:
        s = self.shards[0]
        return s.A.shape[1] if self.kind == "quadratic" else s.X.shape[1]

    # quadratics: ∇F(x) = Q x − c with Q, c the node means of AᵀA and Aᵀb
    def _quad_terms(self):
        if "quad" not in self._cache:
            Q = np.mean([s.A.T @ s.A for s in self.shards], axis=0)
            c = np.mean([s.A.T @ s.b for s in self.shards], axis=0)
            k = np.mean([0.5 * float(s.b @ s.b) for s in self.shards])
            self._cache["quad"] = (Q, c, k)
        return self._cache["quad"]

    def _logistic_terms(self):
        if "logit" not in self._cache:
            X = np.concatenate([s.X for s in self.shards])
            y = np.concatenate([s.y for s in self.shards])
            w = np.concatenate([np.full(s.size, 1.0 / (s.size * self.n_nodes)) for s in self.shards])
            self._cache["logit"] = (X, y, w, self.shards[0].l2)
        return self._cache["logit"]

    def global_loss(self, x: np.ndarray) -> float:
        if self.kind == "quadratic":
            Q, c, k = self._quad_terms()
            return 0.5 * float(x @ Q @ x) - float(c @ x) + k
        return float(np.mean([s.loss(x) for s in self.shards]))

    def global_grads(self, X: np.ndarray) -> np.ndarray:
        """``∇F`` at every row of ``X``."""
        X = np.atleast_2d(X)
        if self.kind == "quadratic":
            Q, c, _ = self._quad_terms()
            return X @ Q - c
        A, y, w, l2 = self._logistic_terms()
        resid = (expit(X @ A.T) - y) * w
        return resid @ A + l2 * X

    def local_grads(self, x: np.ndarray) -> np.ndarray:
        """Full gradients of every node's objective at one point, shape ``(n, d)``."""
        return np.stack([s.grad(x) for s in self.shards])

    def heterogeneity_sq(self, x: np.ndarray) -> float:
        """``(1/n) Σ ‖∇f_i(x) − ∇F(x)‖²``."""
        G = self.local_grads(x)
        dev = G - G.mean(axis=0)
        return float(np.einsum("ij,ij->", dev, dev) / len(G))

    def accuracies(self, X: np.ndarray) -> np.ndarray | None:
        """Test accuracy of each row of ``X``; ``None`` without a test set.

        A score of exactly zero predicts the majority class of the pooled
        training labels, so an all-zero model scores the majority share.
        """
        if self.kind != "logistic" or self.test_X is None:
            return None
        _, y, _, _ = self._logistic_terms()
        tie_class = float(y.mean()) >= 0.5
        z = np.atleast_2d(X) @ self.test_X.T
        pred = np.where(z == 0, tie_class, z > 0)
        return np.mean(pred == (self.test_y[None, :] > 0.5), axis=1)


@dataclass(frozen=True)
class GradientSample:
    node: int
    vector: np.ndarray
    is_stochastic: bool


@dataclass(frozen=True)
class TrainConfig:
    """``step_size`` is a positive float or the string ``"theorem1"``."""

    topology: TopologyConfig
    rounds: int
    local_steps: int = 1
    batch_size: int = 1
    step_size: float | str = 0.01
    seed: int = 0
    eval_every: int = 1
    x0: tuple | None = None
    log_spectral_gap: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be ≥ 1, got {self.rounds}")
        if self.local_steps < 1:
            raise ConfigError(f"local_steps must be ≥ 1, got {self.local_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be ≥ 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be ≥ 1, got {self.eval_every}")
        if isinstance(self.step_size, str):
            if self.step_size != "theorem1":
                raise ConfigError(f"step_size must be a positive number or 'theorem1', got {self.step_size!r}")
        elif not (self.step_size >= 0 and math.isfinite(self.step_size)):
            raise ConfigError(f"step_size must be non-negative, got {self.step_size}")


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    models: np.ndarray
    step_size: float
    max_heterogeneity_sq: float | None = None
    extras: dict = field(default_factory=dict)


def local_sgd(x: np.ndarray, shard: Shard, l: int, eta: float, batch: int,
              rng: np.random.Generator, node: int = 0) -> tuple[np.ndarray, GradientSample]:
    """Run ``l`` SGD steps; return the new point and the first step's gradient.

    Batches are drawn uniformly with replacement; a batch at least as large as
    the shard uses the full shard and is deterministic.
    """
    if l < 1:
        raise ConfigError(f"local steps must be ≥ 1, got {l}")
    if shard.size == 0:
        raise ConfigError(f"node {node} has an empty shard")
    full = batch >= shard.size
    x = np.array(x, dtype=np.float64, copy=True)
    first = None
    for _ in range(l):
        rows = None if full else rng.integers(0, shard.size, size=batch)
        g = shard.grad(x, rows)
        if first is None:
            first = g
        x = x - eta * g
    return x, GradientSample(node, first, not full)


def evaluate(X: np.ndarray, obj: Objective, with_accuracy: bool = True) -> dict:
    """Loss at the average model, mean squared global-gradient norm, mean test accuracy."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != obj.dim:
        raise ConfigError(f"model dimension {X.shape[1]} does not match objective dimension {obj.dim}")
    G = obj.global_grads(X)
    acc = obj.accuracies(X) if with_accuracy else None
    return {
        "mean_loss": obj.global_loss(X.mean(axis=0)),
        "mean_grad_norm_sq": float(np.einsum("ij,ij->", G, G) / X.shape[0]),
        "accuracy": None if acc is None else float(acc.mean()),
    }


def quadratic_constants(obj: Objective, x0: np.ndarray, T: int) -> ProblemConstants:
    """Analytic constants of a full-batch quadratic objective.

    ``L`` is the largest eigenvalue over the nodes' ``AᵀA``; ``sigma_sq`` is 0
    (full-batch gradients); ``H_sq`` is the heterogeneity at ``x0``, which is
    its exact supremum when all nodes share the same ``A``.
    """
    if obj.kind != "quadratic":
        raise ConfigError("analytic constants are only available for quadratic objectives")
    L = max(float(np.linalg.eigvalsh(s.A.T @ s.A)[-1]) for s in obj.shards)
    Q, c, _ = obj._quad_terms()
    x_star = np.linalg.lstsq(Q, c, rcond=None)[0]
    delta0 = max(obj.global_loss(x0) - obj.global_loss(x_star), 0.0)
    return ProblemConstants(L=L, sigma_sq=0.0, H_sq=obj.heterogeneity_sq(x0), delta0=delta0,
                            T=T, n_s=obj.n_nodes)


def _resolve_step(cfg: TrainConfig, obj: Objective, x0: np.ndarray) -> float:
    if not isinstance(cfg.step_size, str):
        return float(cfg.step_size)
    topo = cfg.topology
    if topo.kind is not Kind.HSL:
        raise ConfigError("step_size 'theorem1' requires an HSL topology")
    if obj.kind != "quadratic" or cfg.batch_size < max(s.size for s in obj.shards):
        raise ConfigError("step_size 'theorem1' needs a full-batch quadratic objective")
    consts = quadratic_constants(obj, x0, cfg.rounds)
    betas = beta_bounds(topo.n_s, topo.n_h, topo.b_hs, topo.b_hh, topo.b_sh)
    return theorem1_step_size(consts, betas)


def _mix(X: np.ndarray, topo: TopologyConfig, seed: int, t: int, want_matrix: bool):
    if topo.kind is Kind.HSL:
        push, gossip, pull = sample_hsl_round(
            topo, stream(seed, t, Stage.PUSH), stream(seed, t, Stage.GOSSIP), stream(seed, t, Stage.PULL)
        )
        mixed = pull @ (gossip @ (push @ X))
        W = compose_effective(pull, gossip, push) if want_matrix else None
        return mixed, W
    W = sample_baseline(topo, stream(seed, t, Stage.BASELINE))
    if topo.kind is Kind.FEDAVG_STAR:
        # the uniform matrix applied exactly: every row receives the same mean
        return np.tile(X.mean(axis=0), (X.shape[0], 1)), W
    return W @ X, W


def run_experiment(cfg: TrainConfig, obj: Objective) -> ExperimentResult:
    """Train for ``cfg.rounds`` rounds and record per-round metrics.

    Raises :class:`DivergenceError` naming the round in which a model entry
    became non-finite.
    """
    topo = cfg.topology
    n, d = topo.n_s, obj.dim
    if obj.n_nodes != n:
        raise ConfigError(f"objective has {obj.n_nodes} shards but topology has n_s = {n}")
    x0 = np.zeros(d) if cfg.x0 is None else np.asarray(cfg.x0, dtype=np.float64)
    if x0.shape != (d,):
        raise ConfigError(f"x0 must have dimension {d}, got shape {x0.shape}")
    eta = _resolve_step(cfg, obj, x0)
    track_h = obj.kind == "quadratic"
    max_h = obj.heterogeneity_sq(x0) if track_h else None

    X = np.tile(x0, (n, 1))
    history: list[RoundMetrics] = []
    # overflow on the way to divergence is reported by DivergenceError, not warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.rounds):
            X_local = np.empty_like(X)
            for i, shard in enumerate(obj.shards):
                X_local[i], _ = local_sgd(X[i], shard, cfg.local_steps, eta, cfg.batch_size,
                                          stream(cfg.seed, t, Stage.SGD, i), node=i)
            if not np.all(np.isfinite(X_local)):
                raise DivergenceError(t)
            cd_pre = consensus_distance(X_local)
            X, W = _mix(X_local, topo, cfg.seed, t, cfg.log_spectral_gap)
            cd_post = consensus_distance(X)
            last = t == cfg.rounds - 1
            ev = evaluate(X, obj, with_accuracy=(t + 1) % cfg.eval_every == 0 or last)
            if track_h:
                max_h = max(max_h, obj.heterogeneity_sq(X.mean(axis=0)))
            history.append(RoundMetrics(
                round=t,
                cd_pre=cd_pre,
                cd_post=cd_post,
                cdr=consensus_distance_ratio(cd_pre, cd_post),
                mean_loss=ev["mean_loss"],
                mean_grad_norm_sq=ev["mean_grad_norm_sq"],
                accuracy=ev["accuracy"],
                spectral_gap=spectral_gap(W) if W is not None else None,
            ))
    return ExperimentResult(history, X, eta, max_h)
