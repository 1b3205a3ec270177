"""Monte Carlo checks of the per-stage mixing bounds.

Every check holds the input model matrix fixed, draws ``trials`` independent
stage matrices, and compares a sample mean against a closed form. Bound
claims pass when ``empirical ≤ bound + 3·SE``; equality claims pass when
``|empirical − target| ≤ 3·SE``. Ratios are ratios of expectations:
``mean(CD_after) / CD_before``.

Trials are processed in fixed-size chunks drawn in order from the supplied
generator, so results depend only on that generator's state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats

from hslsim.bounds import beta_bounds, beta_gossip, beta_pull, beta_push
from hslsim.errors import ConfigError, ContractError
from hslsim.metrics import consensus_distance
from hslsim.rng import Stage as StreamStage
from hslsim.rng import stream
from hslsim.topology import (
    Kind,
    TopologyConfig,
    gossip_targets,
    gossip_weights,
    pull_indices,
    push_indices,
    sample_baseline,
)

__all__ = [
    "MixStage",
    "VerificationReport",
    "verify_stage_cdr",
    "verify_average_preservation",
    "verify_mean_shift",
    "verify_indegree_binomial",
    "input_families",
    "DEFAULT_GRID",
    "lemma_grid",
]

CHUNK = 500
SIGMAS = 3.0
# absolute slack for claims whose Monte Carlo variance is exactly zero
EXACT_TOL = 1e-10


class MixStage(str, enum.Enum):
    PUSH = "push"
    GOSSIP = "gossip"
    PULL = "pull"
    FULL_HSL = "full_hsl"
    BASELINE = "baseline"


@dataclass(frozen=True)
class VerificationReport:
    claim: str
    trials: int
    empirical: float
    bound_or_target: float
    standard_error: float
    passed: bool


def _bound_report(claim, trials, empirical, bound, se) -> VerificationReport:
    ok = empirical <= bound + SIGMAS * se + EXACT_TOL * max(1.0, abs(bound))
    return VerificationReport(claim, trials, float(empirical), float(bound), float(se), bool(ok))


def _equality_report(claim, trials, empirical, target, se) -> VerificationReport:
    ok = abs(empirical - target) <= SIGMAS * se + EXACT_TOL * max(1.0, abs(target))
    return VerificationReport(claim, trials, float(empirical), float(target), float(se), bool(ok))


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    n = samples.shape[0]
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(samples.mean()), se


# -- batched stage application -----------------------------------------------


def _gather_mean(Xb: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """``out[t, r] = mean_j Xb[t, idx[t, r, j]]`` for ``Xb`` of shape (T, n, d)."""
    T = idx.shape[0]
    return Xb[np.arange(T)[:, None, None], idx].mean(axis=-2)


def _input_rows(stage: MixStage, cfg: TopologyConfig) -> int:
    if stage in (MixStage.GOSSIP, MixStage.PULL):
        return cfg.n_h
    return cfg.n_s


def _stage_chunk(stage: MixStage, cfg: TopologyConfig, X: np.ndarray, size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Outputs of ``size`` independent draws of one stage applied to ``X``: (size, m, d)."""
    Xb = np.broadcast_to(X, (size,) + X.shape)
    if stage is MixStage.PUSH:
        return _gather_mean(Xb, push_indices(cfg.n_s, cfg.n_h, cfg.b_hs, rng, size))
    if stage is MixStage.GOSSIP:
        return gossip_weights(cfg.n_h, cfg.b_hh, rng, size) @ Xb
    if stage is MixStage.PULL:
        return _gather_mean(Xb, pull_indices(cfg.n_s, cfg.n_h, cfg.b_sh, rng, size))
    if stage is MixStage.FULL_HSL:
        hubs = _gather_mean(Xb, push_indices(cfg.n_s, cfg.n_h, cfg.b_hs, rng, size))
        hubs = gossip_weights(cfg.n_h, cfg.b_hh, rng, size) @ hubs
        return _gather_mean(hubs, pull_indices(cfg.n_s, cfg.n_h, cfg.b_sh, rng, size))
    W = np.stack([sample_baseline(cfg, rng) for _ in range(size)])
    return W @ Xb


def _check_inputs(stage: MixStage, cfg: TopologyConfig, X, trials: int) -> np.ndarray:
    stage = MixStage(stage)
    if trials < 100:
        raise ConfigError(f"verification needs at least 100 trials, got {trials}")
    if stage is MixStage.BASELINE:
        if cfg.kind is Kind.HSL:
            raise ConfigError("BASELINE stage needs a flat baseline topology")
    elif cfg.kind is not Kind.HSL:
        raise ConfigError(f"{stage.value} stage needs an HSL topology")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != _input_rows(stage, cfg):
        raise ContractError(
            f"{stage.value} expects {_input_rows(stage, cfg)} input rows, got shape {X.shape}"
        )
    return X


def _collect(stage, cfg, X, trials, rng, reducer) -> np.ndarray:
    """Apply ``reducer`` to each chunk of stage outputs and concatenate per-trial values."""
    out = []
    done = 0
    while done < trials:
        size = min(CHUNK, trials - done)
        out.append(reducer(_stage_chunk(stage, cfg, X, size, rng)))
        done += size
    return np.concatenate(out)


def _batch_cd(Y: np.ndarray) -> np.ndarray:
    dev = Y - Y.mean(axis=1, keepdims=True)
    return np.einsum("tij,tij->t", dev, dev) / Y.shape[1]


def _stage_beta(stage: MixStage, cfg: TopologyConfig) -> float:
    if stage is MixStage.PUSH:
        return beta_push(cfg.n_s, cfg.b_hs)
    if stage is MixStage.GOSSIP:
        return beta_gossip(cfg.n_h, cfg.b_hh)
    if stage is MixStage.PULL:
        return beta_pull(cfg.n_h, cfg.b_sh)
    return beta_bounds(cfg.n_s, cfg.n_h, cfg.b_hs, cfg.b_hh, cfg.b_sh).beta_hsl


# -- checks --------------------------------------------------------------------


def verify_stage_cdr(stage, cfg: TopologyConfig, X, trials: int,
                     rng: np.random.Generator, label: str = "") -> list[VerificationReport]:
    """Expected consensus-distance ratio of one stage against its β.

    Returns the one-sided ratio check and, for the single stages, the
    two-sided check that the mean squared distance of the outputs to the
    *input* mean equals ``β · CD(X)`` exactly in expectation.
    """
    stage = MixStage(stage)
    X = _check_inputs(stage, cfg, X, trials)
    if stage is MixStage.BASELINE:
        raise ConfigError("stage CDR bounds are defined for HSL stages only")
    cd0 = consensus_distance(X)
    if cd0 == 0:
        raise ContractError("input matrix is already at consensus; the ratio is undefined")
    old_mean = X.mean(axis=0)

    def reduce(Y):
        dev = Y - old_mean
        return np.stack([_batch_cd(Y), np.einsum("tij,tij->t", dev, dev) / Y.shape[1]], axis=1)

    vals = _collect(stage, cfg, X, trials, rng, reduce)
    beta = _stage_beta(stage, cfg)
    suffix = f"|{label}" if label else ""
    mean, se = _mean_se(vals[:, 0])
    reports = [_bound_report(f"{stage.value}.cdr_bound{suffix}", trials, mean / cd0, beta, se / cd0)]
    if stage is not MixStage.FULL_HSL:
        mean, se = _mean_se(vals[:, 1])
        reports.append(_equality_report(f"{stage.value}.old_mean_distance{suffix}", trials,
                                        mean / cd0, beta, se / cd0))
    return reports


def verify_average_preservation(stage, cfg: TopologyConfig, X, trials: int,
                                rng: np.random.Generator, label: str = "") -> VerificationReport:
    """Expected post-stage average equals the input average, coordinatewise at 3σ.

    The report carries the coordinate with the largest standardised deviation.
    """
    stage = MixStage(stage)
    X = _check_inputs(stage, cfg, X, trials)
    target = X.mean(axis=0)
    avgs = _collect(stage, cfg, X, trials, rng, lambda Y: Y.mean(axis=1))
    mean = avgs.mean(axis=0)
    se = avgs.std(axis=0, ddof=1) / np.sqrt(trials)
    dev = np.abs(mean - target)
    slack = SIGMAS * se + EXACT_TOL * np.maximum(1.0, np.abs(target))
    worst = int(np.argmax(dev / np.where(slack > 0, slack, 1.0)))
    suffix = f"|{label}" if label else ""
    return VerificationReport(
        f"{stage.value}.average_preservation{suffix}", trials, float(mean[worst]),
        float(target[worst]), float(se[worst]), bool(np.all(dev <= slack)),
    )


def verify_mean_shift(stage, cfg: TopologyConfig, X, trials: int,
                      rng: np.random.Generator, label: str = "") -> VerificationReport:
    """Expected squared movement of the average model during one stage.

    Push and pull are equalities (``β_hs CD/n_h`` and ``β_sh CD/n_s``);
    gossip is the one-sided bound ``β_hh CD/n_h``.
    """
    stage = MixStage(stage)
    if stage not in (MixStage.PUSH, MixStage.GOSSIP, MixStage.PULL):
        raise ConfigError(f"mean-shift claims exist for push, gossip and pull, not {stage.value}")
    X = _check_inputs(stage, cfg, X, trials)
    cd0 = consensus_distance(X)
    old_mean = X.mean(axis=0)

    def reduce(Y):
        shift = Y.mean(axis=1) - old_mean
        return np.einsum("td,td->t", shift, shift)

    mean, se = _mean_se(_collect(stage, cfg, X, trials, rng, reduce))
    beta = _stage_beta(stage, cfg)
    suffix = f"|{label}" if label else ""
    claim = f"{stage.value}.mean_shift{suffix}"
    if stage is MixStage.PUSH:
        return _equality_report(claim, trials, mean, beta * cd0 / cfg.n_h, se)
    if stage is MixStage.PULL:
        return _equality_report(claim, trials, mean, beta * cd0 / cfg.n_s, se)
    return _bound_report(claim, trials, mean, beta * cd0 / cfg.n_h, se)


def verify_indegree_binomial(n: int, b: int, trials: int, rng: np.random.Generator,
                             alpha: float = 0.01) -> VerificationReport:
    """Chi-square test of node 0's gossip in-degree against Binomial(n−1, b/(n−1)).

    Bins with expected count below 5 are pooled with their neighbours. The
    report's ``empirical`` is the statistic and ``bound_or_target`` the
    critical value at significance ``alpha``.
    """
    if trials < 100:
        raise ConfigError(f"verification needs at least 100 trials, got {trials}")
    counts = np.zeros(n, dtype=np.int64)
    done = 0
    while done < trials:
        size = min(CHUNK * 10, trials - done)
        targets = gossip_targets(n, b, rng, size)
        indeg = np.count_nonzero(targets == 0, axis=(1, 2))
        counts += np.bincount(indeg, minlength=n)[:n]
        done += size
    probs = stats.binom.pmf(np.arange(n), n - 1, b / (n - 1))
    obs, exp = _pool_bins(counts.astype(np.float64), probs * trials)
    if len(obs) < 2:
        stat, crit = 0.0, 0.0
    else:
        stat = float(stats.chisquare(obs, exp).statistic)
        crit = float(stats.chi2.ppf(1 - alpha, len(obs) - 1))
    return VerificationReport("gossip.indegree_binomial", trials, stat, crit, 0.0, stat <= crit)


def _pool_bins(obs: np.ndarray, exp: np.ndarray, minimum: float = 5.0):
    """Merge adjacent bins until every expected count reaches ``minimum``."""
    keep = exp > 0
    if np.any(obs[~keep] > 0):
        raise AssertionError("observed counts in a zero-probability bin")
    obs, exp = obs[keep].tolist(), exp[keep].tolist()
    out_o, out_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= minimum:
            out_o.append(acc_o)
            out_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if out_e:
            out_o[-1] += acc_o
            out_e[-1] += acc_e
        else:
            out_o.append(acc_o)
            out_e.append(acc_e)
    return np.array(out_o), np.array(out_e)


# -- the grid ------------------------------------------------------------------


def input_families(n: int, rng: np.random.Generator, d: int = 8) -> dict[str, np.ndarray]:
    """Fixed input matrices with ``n`` rows: Gaussian, one-hot rows, rank one."""
    return {
        "gaussian": rng.standard_normal((n, d)),
        "onehot": np.eye(n),
        "rank1": np.outer(rng.standard_normal(n), rng.standard_normal(d)),
    }


DEFAULT_GRID = (
    TopologyConfig.hsl(10, 2, 1, 1, 1),
    TopologyConfig.hsl(10, 3, 2, 1, 2),
    TopologyConfig.hsl(12, 4, 12, 3, 4),
    TopologyConfig.hsl(20, 4, 4, 2, 1),
    TopologyConfig.hsl(20, 6, 4, 3, 2),
    TopologyConfig.hsl(30, 5, 3, 1, 2),
    TopologyConfig.hsl(30, 6, 10, 2, 3),
    TopologyConfig.hsl(50, 5, 5, 2, 2),
    TopologyConfig.hsl(50, 10, 5, 4, 3),
    TopologyConfig.hsl(100, 5, 2, 2, 2),
    TopologyConfig.hsl(100, 10, 10, 2, 2),
    TopologyConfig.hsl(100, 5, 40, 1, 1),
)


def _cfg_label(c: TopologyConfig) -> str:
    return f"hsl({c.n_s},{c.n_h},{c.b_hs},{c.b_hh},{c.b_sh})"


def lemma_grid(seed: int, trials: int = 10_000, grid=DEFAULT_GRID) -> list[VerificationReport]:
    """Run every stage claim over ``grid`` × three input families.

    Per config and family: CDR bounds for all four stages, the three
    distance-to-input-mean equalities, and the three mean-shift claims.
    Average preservation runs per config on the Gaussian family, and the
    gossip in-degree test runs once at ``(n, b) = (10, 2)``. Each check gets
    its own child stream of ``seed``.
    """
    reports: list[VerificationReport] = []
    counter = 0

    def next_rng():
        nonlocal counter
        counter += 1
        return stream(seed, StreamStage.VERIFY, counter)

    for ci, cfg in enumerate(grid):
        spokes = input_families(cfg.n_s, stream(seed, StreamStage.INIT, ci, 0))
        hubs = input_families(cfg.n_h, stream(seed, StreamStage.INIT, ci, 1))
        for family in spokes:
            label = f"{_cfg_label(cfg)}|{family}"
            inputs = {
                MixStage.PUSH: spokes[family],
                MixStage.GOSSIP: hubs[family],
                MixStage.PULL: hubs[family],
                MixStage.FULL_HSL: spokes[family],
            }
            for stage, X in inputs.items():
                reports += verify_stage_cdr(stage, cfg, X, trials, next_rng(), label)
            for stage in (MixStage.PUSH, MixStage.GOSSIP, MixStage.PULL):
                reports.append(verify_mean_shift(stage, cfg, inputs[stage], trials, next_rng(), label))
        reports.append(verify_average_preservation(
            MixStage.FULL_HSL, cfg, spokes["gaussian"], trials, next_rng(), f"{_cfg_label(cfg)}|gaussian"))
    reports.append(verify_indegree_binomial(10, 2, max(trials, 50_000), next_rng()))
    return reports
