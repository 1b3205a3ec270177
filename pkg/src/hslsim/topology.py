"""Random communication graphs as row-stochastic mixing matrices.

A mixing matrix ``W`` acts on stacked node states as ``X <- W @ X``: row ``i``
holds the weights receiver ``i`` puts on each sender. Matrices are dense
``float64`` numpy arrays.

HSL rounds are three stages:

* push, ``(n_h, n_s)``: every hub averages ``b_hs`` distinct spokes;
* gossip, ``(n_h, n_h)``: every hub sends to ``b_hh`` distinct other hubs and
  each receiver averages itself with whatever arrived;
* pull, ``(n_s, n_h)``: every spoke averages ``b_sh`` distinct hubs.

The batched samplers (``push_indices``, ``gossip_weights``, ...) accept a
``size`` argument and are what the Monte Carlo code uses; the ``sample_*``
functions return a single matrix.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from hslsim.errors import ConfigError, ContractError
from hslsim.rng import Stage, stream

__all__ = [
    "Kind",
    "TopologyConfig",
    "BASELINE_KINDS",
    "check_mixing",
    "sample_without_replacement",
    "push_indices",
    "pull_indices",
    "gossip_weights",
    "indices_to_matrix",
    "sample_push_matrix",
    "sample_gossip_matrix",
    "sample_pull_matrix",
    "sample_k_regular",
    "sample_erdos_renyi",
    "torus_matrix",
    "star_matrix",
    "sample_baseline",
    "sample_hsl_round",
    "compose_effective",
    "sample_effective",
    "total_edges",
]


class Kind(str, enum.Enum):
    HSL = "hsl"
    EL_LOCAL = "el_local"
    EL_ORACLE = "el_oracle"
    ERDOS_RENYI = "erdos_renyi"
    TORUS = "torus"
    FEDAVG_STAR = "fedavg_star"


BASELINE_KINDS = frozenset(k for k in Kind if k is not Kind.HSL)


@dataclass(frozen=True)
class TopologyConfig:
    """Identity of a communication-graph family.

    HSL uses ``n_s, n_h, b_hs, b_hh, b_sh``; the flat baselines use ``n_s``
    plus ``k`` (EL variants, torus) or ``p`` (Erdős–Rényi). Unused fields stay
    at zero. Validation happens on construction.
    """

    kind: Kind
    n_s: int
    n_h: int = 0
    b_hs: int = 0
    b_hh: int = 0
    b_sh: int = 0
    k: int = 0
    p: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.TORUS and self.k == 0:
            object.__setattr__(self, "k", 4)
        _validate(self)

    @classmethod
    def hsl(cls, n_s: int, n_h: int, b_hs: int, b_hh: int, b_sh: int) -> TopologyConfig:
        return cls(Kind.HSL, n_s, n_h=n_h, b_hs=b_hs, b_hh=b_hh, b_sh=b_sh)

    @classmethod
    def el_local(cls, n_s: int, k: int) -> TopologyConfig:
        return cls(Kind.EL_LOCAL, n_s, k=k)

    @classmethod
    def el_oracle(cls, n_s: int, k: int) -> TopologyConfig:
        return cls(Kind.EL_ORACLE, n_s, k=k)

    @classmethod
    def erdos_renyi(cls, n_s: int, p: float) -> TopologyConfig:
        return cls(Kind.ERDOS_RENYI, n_s, p=p)

    @classmethod
    def torus(cls, n_s: int) -> TopologyConfig:
        return cls(Kind.TORUS, n_s, k=4)

    @classmethod
    def fedavg_star(cls, n_s: int) -> TopologyConfig:
        return cls(Kind.FEDAVG_STAR, n_s)

    @property
    def edges(self) -> int:
        return total_edges(self)


def _validate(c: TopologyConfig) -> None:
    def need(ok: bool, msg: str) -> None:
        if not ok:
            raise ConfigError(msg)

    for name in ("n_s", "n_h", "b_hs", "b_hh", "b_sh", "k"):
        value = getattr(c, name)
        need(isinstance(value, (int, np.integer)) and not isinstance(value, bool),
             f"{name} must be an integer, got {value!r}")
        need(value >= 0, f"{name} must be non-negative, got {value}")
    need(c.n_s >= 2, f"n_s must be ≥ 2, got {c.n_s}")
    if c.kind is Kind.HSL:
        need(c.n_h >= 2, f"n_h must be ≥ 2, got {c.n_h}")
        need(1 <= c.b_hs <= c.n_s, f"b_hs must satisfy 1 ≤ b_hs ≤ n_s = {c.n_s}, got {c.b_hs}")
        need(1 <= c.b_hh <= c.n_h - 1, f"b_hh must be ≤ n_h − 1 = {c.n_h - 1} and ≥ 1, got {c.b_hh}")
        need(1 <= c.b_sh <= c.n_h, f"b_sh must satisfy 1 ≤ b_sh ≤ n_h = {c.n_h}, got {c.b_sh}")
    elif c.kind in (Kind.EL_LOCAL, Kind.EL_ORACLE):
        need(1 <= c.k <= c.n_s - 1, f"k must satisfy 1 ≤ k ≤ n_s − 1 = {c.n_s - 1}, got {c.k}")
    elif c.kind is Kind.ERDOS_RENYI:
        need(0.0 < c.p <= 1.0, f"p must lie in (0, 1], got {c.p}")
    elif c.kind is Kind.TORUS:
        side = math.isqrt(c.n_s)
        need(side * side == c.n_s, f"torus needs a perfect-square n_s, got {c.n_s}")
        need(side >= 3, f"torus needs a grid side ≥ 3, got {side}")
        need(c.k == 4, f"torus neighbour count is fixed at 4, got k={c.k}")


def check_mixing(W: np.ndarray, shape: tuple[int, int] | None = None, atol: float = 1e-12) -> np.ndarray:
    """Validate a mixing matrix and return it as a float array."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ContractError(f"mixing matrix must be 2-d, got shape {W.shape}")
    if shape is not None and W.shape != tuple(shape):
        raise ContractError(f"expected mixing matrix of shape {tuple(shape)}, got {W.shape}")
    if not np.all(np.isfinite(W)) or np.any(W < 0):
        raise ContractError("mixing matrix entries must be finite and non-negative")
    if np.max(np.abs(W.sum(axis=1) - 1.0)) > atol:
        raise ContractError("mixing matrix is not row-stochastic")
    return W


# -- batched primitives -------------------------------------------------------


def sample_without_replacement(rng: np.random.Generator, n: int, b: int,
                               shape: tuple[int, ...]) -> np.ndarray:
    """Draw ``shape`` independent uniform ``b``-subsets of ``range(n)``.

    Returns an int array of shape ``shape + (b,)``. Subset order is arbitrary.
    """
    if not 1 <= b <= n:
        raise ConfigError(f"cannot draw {b} distinct items from {n}")
    keys = rng.random(shape + (n,))
    if b == n:
        return np.broadcast_to(np.arange(n), shape + (n,)).copy()
    return np.argpartition(keys, b - 1, axis=-1)[..., :b]


def _size_shape(size: int | None) -> tuple[int, ...]:
    return () if size is None else (int(size),)


def push_indices(n_s: int, n_h: int, b_hs: int, rng: np.random.Generator,
                 size: int | None = None) -> np.ndarray:
    """Spokes polled by each hub: int array ``(..., n_h, b_hs)``."""
    if not 1 <= b_hs <= n_s:
        raise ConfigError(f"b_hs must satisfy 1 ≤ b_hs ≤ n_s = {n_s}, got {b_hs}")
    if n_h < 1:
        raise ConfigError(f"n_h must be ≥ 1, got {n_h}")
    return sample_without_replacement(rng, n_s, b_hs, _size_shape(size) + (n_h,))


def pull_indices(n_s: int, n_h: int, b_sh: int, rng: np.random.Generator,
                 size: int | None = None) -> np.ndarray:
    """Hubs queried by each spoke: int array ``(..., n_s, b_sh)``."""
    if not 1 <= b_sh <= n_h:
        raise ConfigError(f"b_sh must satisfy 1 ≤ b_sh ≤ n_h = {n_h}, got {b_sh}")
    return sample_without_replacement(rng, n_h, b_sh, _size_shape(size) + (n_s,))


def gossip_targets(n: int, b: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Targets chosen by each sender, never itself: int array ``(..., n, b)``."""
    if n < 2:
        raise ConfigError(f"gossip needs at least 2 nodes, got {n}")
    if not 1 <= b <= n - 1:
        raise ConfigError(f"gossip out-degree must satisfy 1 ≤ b ≤ n − 1 = {n - 1}, got {b}")
    shape = _size_shape(size)
    picks = sample_without_replacement(rng, n - 1, b, shape + (n,))
    senders = np.arange(n).reshape((1,) * len(shape) + (n, 1))
    # skip over the sender's own index
    return picks + (picks >= senders)


def gossip_weights(n: int, b: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Gossip mixing matrices, shape ``(..., n, n)``."""
    targets = gossip_targets(n, b, rng, size)
    return _receiver_average(_adjacency_from_targets(targets, n))


def _adjacency_from_targets(targets: np.ndarray, n: int) -> np.ndarray:
    """``adj[..., r, s] = 1`` when sender ``s`` sent to receiver ``r``."""
    batch = targets.shape[:-2]
    adj = np.zeros(batch + (n, n), dtype=np.float64)
    flat = adj.reshape(-1, n, n)
    t = targets.reshape(-1, n, targets.shape[-1])
    m = flat.shape[0]
    rows = t.reshape(m, -1)
    senders = np.broadcast_to(np.arange(n)[:, None], t.shape[1:]).reshape(-1)
    flat[np.arange(m)[:, None], rows, senders[None, :]] = 1.0
    return adj


def _receiver_average(adj: np.ndarray) -> np.ndarray:
    """Row ``r`` averages ``r`` itself with every sender in ``adj[..., r, :]``."""
    n = adj.shape[-1]
    W = adj + np.eye(n)
    return W / W.sum(axis=-1, keepdims=True)


def indices_to_matrix(idx: np.ndarray, n_cols: int) -> np.ndarray:
    """Turn per-row index sets ``(..., rows, b)`` into uniform-average rows."""
    b = idx.shape[-1]
    W = np.zeros(idx.shape[:-1] + (n_cols,), dtype=np.float64)
    np.put_along_axis(W, idx, 1.0 / b, axis=-1)
    return W


# -- single-matrix samplers ---------------------------------------------------


def sample_push_matrix(n_s: int, n_h: int, b_hs: int, rng: np.random.Generator) -> np.ndarray:
    """Spoke-to-hub matrix ``(n_h, n_s)``: each row holds ``b_hs`` entries of ``1/b_hs``."""
    return indices_to_matrix(push_indices(n_s, n_h, b_hs, rng), n_s)


def sample_gossip_matrix(n: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """Hub gossip (and EL Local) matrix ``(n, n)`` with sender out-degree ``b``."""
    return gossip_weights(n, b, rng)


def sample_pull_matrix(n_s: int, n_h: int, b_sh: int, rng: np.random.Generator) -> np.ndarray:
    """Hub-to-spoke matrix ``(n_s, n_h)``: each row holds ``b_sh`` entries of ``1/b_sh``."""
    return indices_to_matrix(pull_indices(n_s, n_h, b_sh, rng), n_h)


def sample_k_regular(n: int, k: int, rng: np.random.Generator, sweeps: int = 2) -> np.ndarray:
    """Random directed graph with every in- and out-degree equal to ``k``, no self-loops.

    Returns the adjacency ``adj[r, s]`` (receiver, sender). Starts from a
    randomly relabelled circulant graph, then runs ``sweeps * n * k``
    degree-preserving edge switches (``a→b, c→d`` becomes ``a→d, c→b``
    whenever that keeps the graph simple and loop-free).
    """
    if not 1 <= k <= n - 1:
        raise ConfigError(f"k must satisfy 1 ≤ k ≤ n − 1 = {n - 1}, got {k}")
    perm = rng.permutation(n)
    src = np.repeat(np.arange(n), k)
    dst = (src + np.tile(np.arange(1, k + 1), n)) % n
    src, dst = perm[src], perm[dst]
    m = src.size
    adj = np.zeros((n, n), dtype=bool)
    adj[dst, src] = True
    # complete graph minus loops admits no switches
    if k < n - 1:
        pairs = rng.integers(0, m, size=(sweeps * m, 2))
        src_l, dst_l = src.tolist(), dst.tolist()
        for e, f in pairs.tolist():
            a, b_ = src_l[e], dst_l[e]
            c, d = src_l[f], dst_l[f]
            if a == d or c == b_ or adj[d, a] or adj[b_, c]:
                continue
            adj[b_, a] = adj[d, c] = False
            adj[d, a] = adj[b_, c] = True
            dst_l[e], dst_l[f] = d, b_
    return adj.astype(np.float64)


def sample_erdos_renyi(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Directed Erdős–Rényi mixing: each ordered pair present with probability ``p``.

    Receivers with no in-neighbours keep their own model.
    """
    adj = (rng.random((n, n)) < p).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return _receiver_average(adj)


def torus_matrix(n: int) -> np.ndarray:
    """Static 2-d wraparound grid; every node averages itself and 4 neighbours."""
    side = math.isqrt(n)
    if side * side != n or side < 3:
        raise ConfigError(f"torus needs a perfect-square n_s with side ≥ 3, got {n}")
    W = np.zeros((n, n))
    for a in range(side):
        for b in range(side):
            i = a * side + b
            W[i, i] = 0.2
            for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                W[i, ((a + da) % side) * side + (b + db) % side] = 0.2
    return W


def star_matrix(n: int) -> np.ndarray:
    """FedAvg client→server→client composite: every row is uniform."""
    return np.full((n, n), 1.0 / n)


def sample_baseline(config: TopologyConfig, rng: np.random.Generator) -> np.ndarray:
    """One round's ``(n_s, n_s)`` mixing matrix for a flat baseline topology."""
    n = config.n_s
    kind = config.kind
    if kind is Kind.EL_LOCAL:
        return sample_gossip_matrix(n, config.k, rng)
    if kind is Kind.EL_ORACLE:
        return _receiver_average(sample_k_regular(n, config.k, rng))
    if kind is Kind.ERDOS_RENYI:
        return sample_erdos_renyi(n, config.p, rng)
    if kind is Kind.TORUS:
        return torus_matrix(n)
    if kind is Kind.FEDAVG_STAR:
        return star_matrix(n)
    raise ConfigError(f"{kind.value} is not a baseline topology")


def sample_hsl_round(config: TopologyConfig, push_rng: np.random.Generator,
                     gossip_rng: np.random.Generator,
                     pull_rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The ``(push, gossip, pull)`` matrices of one HSL round."""
    c = config
    if c.kind is not Kind.HSL:
        raise ConfigError(f"expected an HSL config, got {c.kind.value}")
    return (
        sample_push_matrix(c.n_s, c.n_h, c.b_hs, push_rng),
        sample_gossip_matrix(c.n_h, c.b_hh, gossip_rng),
        sample_pull_matrix(c.n_s, c.n_h, c.b_sh, pull_rng),
    )


def compose_effective(pull: np.ndarray, gossip: np.ndarray, push: np.ndarray) -> np.ndarray:
    """End-to-end spoke mixing ``pull @ gossip @ push`` of shape ``(n_s, n_s)``."""
    pull, gossip, push = (np.asarray(m, dtype=np.float64) for m in (pull, gossip, push))
    if pull.ndim != 2 or gossip.ndim != 2 or push.ndim != 2:
        raise ContractError("compose_effective expects 2-d matrices")
    n_s, n_h = pull.shape
    if gossip.shape != (n_h, n_h) or push.shape != (n_h, n_s):
        raise ContractError(
            f"dimension mismatch: pull {pull.shape}, gossip {gossip.shape}, push {push.shape}"
        )
    return pull @ (gossip @ push)


def sample_effective(config: TopologyConfig, seed: int, round_index: int) -> np.ndarray:
    """The ``(n_s, n_s)`` mixing matrix of round ``round_index`` under ``seed``."""
    if config.kind is Kind.HSL:
        push, gossip, pull = sample_hsl_round(
            config,
            stream(seed, round_index, Stage.PUSH),
            stream(seed, round_index, Stage.GOSSIP),
            stream(seed, round_index, Stage.PULL),
        )
        return compose_effective(pull, gossip, push)
    return sample_baseline(config, stream(seed, round_index, Stage.BASELINE))


def total_edges(config: TopologyConfig) -> int:
    """Directed edges used per round."""
    c = config
    if c.kind is Kind.HSL:
        return c.n_h * c.b_hs + c.n_h * c.b_hh + c.n_s * c.b_sh
    if c.kind in (Kind.EL_LOCAL, Kind.EL_ORACLE):
        return c.n_s * c.k
    if c.kind is Kind.TORUS:
        return 4 * c.n_s
    if c.kind is Kind.ERDOS_RENYI:
        return round(c.p * c.n_s * (c.n_s - 1))
    return 2 * c.n_s
