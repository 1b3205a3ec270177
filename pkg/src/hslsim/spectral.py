"""Spectral gap of mixing matrices and its Monte Carlo average over rounds."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from hslsim.errors import ContractError
from hslsim.topology import TopologyConfig, sample_effective, total_edges

__all__ = ["SpectralReport", "spectral_gap", "gaps_for_rounds", "average_spectral_gap", "worker_count"]

WORKERS_ENV = "HSL_SIM_WORKERS"


@dataclass(frozen=True)
class SpectralReport:
    config: TopologyConfig
    edges: int
    samples: int
    mean_gap: float
    std_gap: float


def worker_count() -> int:
    """Thread cap from ``HSL_SIM_WORKERS``; defaults to 1."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def spectral_gap(W) -> float:
    """``1 − |λ₂|`` where ``λ₂`` has the second-largest modulus.

    Uses a dense nonsymmetric eigensolver; complex eigenvalues count by
    modulus. A repeated unit eigenvalue gives a gap of 0.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ContractError(f"spectral gap needs a square matrix, got shape {W.shape}")
    if W.shape[0] == 1:
        return 1.0
    mods = np.sort(np.abs(np.linalg.eigvals(W)))[::-1]
    return float(np.clip(1.0 - mods[1], 0.0, 1.0))


def gaps_for_rounds(config: TopologyConfig, seed: int, rounds: range) -> np.ndarray:
    """Spectral gap of each round's effective matrix, ordered by round index."""
    def one(t: int) -> float:
        return spectral_gap(sample_effective(config, seed, t))

    workers = worker_count()
    if workers == 1:
        return np.array([one(t) for t in rounds])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, rounds)))


def average_spectral_gap(config: TopologyConfig, rounds: int, seed: int) -> SpectralReport:
    """Mean and standard deviation of the gap over ``rounds`` fresh samples.

    Round ``t`` draws from the child streams ``(t, stage)`` of ``seed``.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be ≥ 1, got {rounds}")
    gaps = gaps_for_rounds(config, seed, range(rounds))
    std = float(gaps.std(ddof=1)) if rounds > 1 else 0.0
    return SpectralReport(config, total_edges(config), rounds, float(gaps.mean()), std)
