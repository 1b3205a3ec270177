"""Closed-form mixing bounds and the step-size rule for HSL.

``beta_*`` are upper bounds on the expected consensus-distance ratio of each
mixing stage; their product bounds a whole round. The step size and the
long-run consensus-distance bound use the explicit constants from the
convergence analysis (663, 250, 20 and the factor 20(1+3β)/(1−β)²).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from hslsim.errors import ConfigError

__all__ = [
    "BetaBounds",
    "ProblemConstants",
    "RemarkCheck",
    "ONE_MINUS_INV_E",
    "beta_push",
    "beta_gossip",
    "beta_pull",
    "beta_bounds",
    "theorem1_step_size",
    "step_size_branches",
    "lemma2_cd_bound",
    "check_beta_hsl_remark",
]

ONE_MINUS_INV_E = -math.expm1(-1.0)


@dataclass(frozen=True)
class BetaBounds:
    beta_hs: float
    beta_hh: float
    beta_sh: float
    beta_hsl: float
    beta_prime: float


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness ``L``, noise ``sigma_sq``, heterogeneity ``H_sq``, gap ``delta0``."""

    L: float
    sigma_sq: float
    H_sq: float
    delta0: float
    T: int
    n_s: int

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigError(f"L must be positive, got {self.L}")
        if self.T < 1:
            raise ConfigError(f"T must be ≥ 1, got {self.T}")
        if self.n_s < 1:
            raise ConfigError(f"n_s must be ≥ 1, got {self.n_s}")
        for name in ("sigma_sq", "H_sq", "delta0"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True)
class RemarkCheck:
    premise_holds: bool
    bound: float
    satisfied: bool


def _sampling_beta(n: int, b: int) -> float:
    # variance factor of a b-sample mean drawn without replacement from n
    return (n - b) / (b * (n - 1))


def beta_push(n_s: int, b_hs: int) -> float:
    if n_s < 2:
        raise ConfigError(f"n_s must be ≥ 2, got {n_s}")
    if not 1 <= b_hs <= n_s:
        raise ConfigError(f"b_hs must satisfy 1 ≤ b_hs ≤ n_s = {n_s}, got {b_hs}")
    return _sampling_beta(n_s, b_hs)


def beta_pull(n_h: int, b_sh: int) -> float:
    if n_h < 2:
        raise ConfigError(f"n_h must be ≥ 2, got {n_h}")
    if not 1 <= b_sh <= n_h:
        raise ConfigError(f"b_sh must satisfy 1 ≤ b_sh ≤ n_h = {n_h}, got {b_sh}")
    return _sampling_beta(n_h, b_sh)


def beta_gossip(n_h: int, b_hh: int) -> float:
    """``(1/b)(1 − (1 − b/(n−1))^n) − 1/(n−1)``, stable for very large ``n``."""
    if n_h < 2:
        raise ConfigError(f"n_h must be ≥ 2, got {n_h}")
    if not 1 <= b_hh <= n_h - 1:
        raise ConfigError(f"b_hh must be ≤ n_h − 1 = {n_h - 1} and ≥ 1, got {b_hh}")
    m = n_h - 1
    if b_hh == m:
        reach = 1.0
    else:
        reach = -math.expm1(n_h * math.log1p(-b_hh / m))
    return max(reach / b_hh - 1.0 / m, 0.0)


def beta_bounds(n_s: int, n_h: int, b_hs: int, b_hh: int, b_sh: int) -> BetaBounds:
    hs = beta_push(n_s, b_hs)
    hh = beta_gossip(n_h, b_hh)
    sh = beta_pull(n_h, b_sh)
    hsl = hs * hh * sh
    prime = 0.5 * (hsl + (n_s / n_h) * hs * (1.0 + hh))
    return BetaBounds(hs, hh, sh, hsl, prime)


def step_size_branches(c: ProblemConstants, b: BetaBounds) -> tuple[float, float, float]:
    """The three candidates whose minimum is the step size; zero denominators give ``inf``."""
    noise = (1.0 + 663.0 * b.beta_prime) * c.sigma_sq + 663.0 * b.beta_prime * c.H_sq
    den1 = 2.0 * c.T * c.L * noise
    first = math.sqrt(c.n_s * c.delta0 / den1) if den1 > 0 else math.inf
    den2 = 250.0 * c.T * c.L ** 2 * b.beta_hsl * (c.sigma_sq + c.H_sq)
    second = (c.delta0 / den2) ** (1.0 / 3.0) if den2 > 0 else math.inf
    return first, second, 1.0 / (20.0 * c.L)


def theorem1_step_size(c: ProblemConstants, b: BetaBounds) -> float:
    """Step size ``γ`` from the convergence theorem (constants 663, 250, 1/20)."""
    gamma = min(step_size_branches(c, b))
    if not gamma > 0:
        raise ConfigError("step size is zero; Δ0 must be positive when noise or heterogeneity is present")
    return gamma


def lemma2_cd_bound(b: BetaBounds, gamma: float, sigma_sq: float, H_sq: float) -> float:
    """Long-run bound on the pairwise spread ``(1/n²) Σ_{i,j} ‖x_i − x_j‖²``.

    The pairwise spread is twice :func:`hslsim.metrics.consensus_distance`.
    """
    beta = b.beta_hsl
    if not 0 <= beta < 1:
        raise ConfigError(f"β_HSL must lie in [0, 1), got {beta}")
    if gamma < 0:
        raise ConfigError(f"step size must be non-negative, got {gamma}")
    return 20.0 * (1.0 + 3.0 * beta) / (1.0 - beta) ** 2 * beta * gamma ** 2 * (sigma_sq + H_sq)


def check_beta_hsl_remark(n_s: int, n_h: int, b_hs: int, b_sh: int, beta_hsl: float) -> RemarkCheck:
    """When hubs poll at least as many spokes as spokes poll hubs, β_HSL ≤ (n_h/n_s)(1 − 1/e)."""
    premise = n_h * b_hs >= n_s * b_sh
    bound = (n_h / n_s) * ONE_MINUS_INV_E
    satisfied = (beta_hsl <= bound + 1e-12) if premise else True
    return RemarkCheck(premise, bound, satisfied)
