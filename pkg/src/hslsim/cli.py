"""Command-line runner: INI configs in, CSVs plus a manifest out.

    hsl-sim run|spectral|bounds|verify --config <path> [--out <dir>] [--seed <u64>]

A config has an ``[experiment]`` section (``name``, ``command``, ``seed``),
one ``[topology]`` section or several ``[topology.<label>]`` sections, and
optional ``[training]``, ``[objective]``, ``[output]``, ``[spectral]`` and
``[verify]`` sections. Unknown sections or keys are rejected by name.

Every run writes ``config.ini`` (the normalised config), the command's CSVs,
and finally ``manifest.txt``, whose presence marks a completed run.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import enum
import hashlib
import io
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from hslsim import __version__
from hslsim.bounds import beta_bounds, check_beta_hsl_remark
from hslsim.data import make_logistic_objective, make_quadratic_objective
from hslsim.errors import ConfigError, DivergenceError
from hslsim.learning import Objective, TrainConfig, run_experiment
from hslsim.rng import Stage, stream
from hslsim.spectral import average_spectral_gap
from hslsim.topology import Kind, TopologyConfig, total_edges
from hslsim.verify import lemma_grid

__all__ = [
    "Command",
    "TrainingSpec",
    "ObjectiveSpec",
    "ExperimentSpec",
    "RunManifest",
    "METRICS_HEADER",
    "SPECTRAL_HEADER",
    "REPORTS_HEADER",
    "BOUNDS_HEADER",
    "NODES_HEADER",
    "parse_config",
    "dump_config",
    "build_objective",
    "execute",
    "main",
]

U64_MAX = 2**64 - 1

METRICS_HEADER = ("round", "cd_pre", "cd_post", "cdr", "mean_loss", "mean_grad_norm_sq", "accuracy")
SPECTRAL_HEADER = ("kind", "n_s", "n_h", "b_hs", "b_hh", "b_sh", "k", "p", "edges", "samples",
                   "mean_gap", "std_gap")
REPORTS_HEADER = ("claim", "trials", "empirical", "bound_or_target", "standard_error", "passed")
BOUNDS_HEADER = ("label", "kind", "n_s", "n_h", "b_hs", "b_hh", "b_sh", "k", "p", "edges",
                 "beta_hs", "beta_hh", "beta_sh", "beta_hsl", "beta_prime",
                 "remark_premise", "remark_bound")
NODES_HEADER = ("quantity", "min", "p25", "p50", "p75", "max")


class Command(str, enum.Enum):
    RUN = "run"
    SPECTRAL = "spectral"
    BOUNDS = "bounds"
    VERIFY = "verify"


@dataclass(frozen=True)
class TrainingSpec:
    rounds: int = 100
    local_steps: int = 1
    batch_size: int = 1
    step_size: float | str = 0.01
    eval_every: int = 1
    log_spectral_gap: bool = False
    x0: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "logistic"
    dim: int = 20
    samples: int = 20000
    alpha: float = 1.0
    separation: float = 1.0
    n_test: int = 2000
    l2: float = 0.0
    rows: int = 40
    heterogeneity: float = 1.0
    condition: float = 2.0
    shared_matrix: bool = True


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    command: Command
    seed: int
    topologies: tuple[tuple[str, TopologyConfig], ...]
    training: TrainingSpec = field(default_factory=TrainingSpec)
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    output_dir: str = "results"
    spectral_rounds: int = 1000
    verify_trials: int = 10_000

    @property
    def topology(self) -> TopologyConfig:
        """The single topology of a RUN spec."""
        return self.topologies[0][1]

    def train_config(self, dim: int | None = None) -> TrainConfig:
        """Training config; a one-element ``x0`` is broadcast to ``dim``."""
        t = self.training
        x0 = t.x0
        if x0 is not None and len(x0) == 1 and dim is not None:
            x0 = x0 * dim
        return TrainConfig(topology=self.topology, rounds=t.rounds, local_steps=t.local_steps,
                           batch_size=t.batch_size, step_size=t.step_size, seed=self.seed,
                           eval_every=t.eval_every, x0=x0, log_spectral_gap=t.log_spectral_gap)


@dataclass(frozen=True)
class RunManifest:
    spec: ExperimentSpec
    version: str
    timestamp: str
    files: tuple[str, ...]
    digests: dict
    status: str = "ok"
    diverged_round: int | None = None
    failed_claims: int = 0

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "ok" else 1


# -- parsing -------------------------------------------------------------------

_TOPOLOGY_KEYS = {
    Kind.HSL: ("n_s", "n_h", "b_hs", "b_hh", "b_sh"),
    Kind.EL_LOCAL: ("n_s", "k"),
    Kind.EL_ORACLE: ("n_s", "k"),
    Kind.ERDOS_RENYI: ("n_s", "p"),
    Kind.TORUS: ("n_s",),
    Kind.FEDAVG_STAR: ("n_s",),
}
_OBJECTIVE_KEYS = {
    "logistic": ("dim", "samples", "alpha", "separation", "n_test", "l2"),
    "quadratic": ("dim", "rows", "heterogeneity", "condition", "shared_matrix"),
}
_SECTION_KEYS = {
    "experiment": {"name", "command", "seed"},
    "training": {f.name for f in fields(TrainingSpec)},
    "objective": {f.name for f in fields(ObjectiveSpec)},
    "output": {"dir"},
    "spectral": {"rounds"},
    "verify": {"trials"},
}


def _where(section: str, key: str) -> str:
    return f"[{section}] {key}"


def _int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise ConfigError(f"{_where(section, key)} must be an integer, got {raw!r}") from None


def _float(section: str, key: str, raw: str) -> float:
    try:
        value = float(raw.strip())
    except ValueError:
        raise ConfigError(f"{_where(section, key)} must be a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{_where(section, key)} must be finite, got {raw!r}")
    return value


def _bool(section: str, key: str, raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{_where(section, key)} must be true or false, got {raw!r}")


def _coerce(section: str, key: str, raw: str, annotation) -> object:
    ann = str(annotation)
    if ann == "int":
        return _int(section, key, raw)
    if ann == "float":
        return _float(section, key, raw)
    if ann == "bool":
        return _bool(section, key, raw)
    return raw.strip()


def _reject_unknown(section: str, keys, allowed) -> None:
    for key in keys:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]; allowed: {', '.join(sorted(allowed))}")


def _parse_topology(section: str, body) -> TopologyConfig:
    if "kind" not in body:
        raise ConfigError(f"[{section}] needs a 'kind' key")
    try:
        kind = Kind(body["kind"].strip())
    except ValueError:
        raise ConfigError(
            f"{_where(section, 'kind')} must be one of {', '.join(k.value for k in Kind)}, got {body['kind']!r}"
        ) from None
    allowed = ("kind",) + _TOPOLOGY_KEYS[kind]
    _reject_unknown(section, body.keys(), allowed)
    values = {}
    for key in _TOPOLOGY_KEYS[kind]:
        if key not in body:
            raise ConfigError(f"[{section}] kind={kind.value} needs key {key!r}")
        values[key] = _float(section, key, body[key]) if key == "p" else _int(section, key, body[key])
    if kind is Kind.TORUS:
        values["k"] = 4
    return TopologyConfig(kind=kind, **values)


def _parse_block(section: str, body, cls):
    _reject_unknown(section, body.keys(), {f.name for f in fields(cls)})
    values = {}
    for f in fields(cls):
        if f.name in body:
            raw = body[f.name]
            if f.name == "x0":
                values[f.name] = tuple(_float(section, f.name, v) for v in raw.split(","))
            elif f.name == "step_size":
                values[f.name] = raw.strip() if raw.strip() == "theorem1" else _float(section, f.name, raw)
            else:
                values[f.name] = _coerce(section, f.name, raw, f.type)
    return cls(**values)


def _check_seed(raw, where: str = "[experiment] seed") -> int:
    try:
        seed = int(str(raw).strip())
    except ValueError:
        raise ConfigError(f"{where} must be an integer, got {raw!r}") from None
    if not 0 <= seed <= U64_MAX:
        raise ConfigError(f"{where} must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def parse_config(text: str) -> ExperimentSpec:
    """Parse and fully validate an INI config document."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__unused_default__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    topologies: list[tuple[str, TopologyConfig]] = []
    for section in cp.sections():
        if section == "topology" or section.startswith("topology."):
            label = section.partition(".")[2]
            if section != "topology" and not label:
                raise ConfigError(f"[{section}] needs a label after 'topology.'")
            topologies.append((label, _parse_topology(section, cp[section])))
        elif section in _SECTION_KEYS:
            _reject_unknown(section, cp[section].keys(), _SECTION_KEYS[section])
        else:
            raise ConfigError(f"unknown section [{section}]")

    if not cp.has_section("experiment"):
        raise ConfigError("config needs an [experiment] section")
    exp = cp["experiment"]
    name = exp.get("name", "").strip()
    if not name:
        raise ConfigError("[experiment] name must be nonempty")
    if "command" not in exp:
        raise ConfigError("[experiment] command is required (run, spectral, bounds or verify)")
    try:
        command = Command(exp["command"].strip())
    except ValueError:
        raise ConfigError(f"[experiment] command must be run, spectral, bounds or verify, got {exp['command']!r}") from None
    if "seed" not in exp:
        raise ConfigError("[experiment] seed is required; runs never fall back to a clock-based seed")
    seed = _check_seed(exp["seed"])

    if "topology" in cp and len(topologies) > 1:
        raise ConfigError("use either one [topology] section or labelled [topology.<label>] sections, not both")
    labels = [lab for lab, _ in topologies]
    if command in (Command.RUN, Command.SPECTRAL, Command.BOUNDS) and not topologies:
        raise ConfigError(f"command {command.value} needs a [topology] section")
    if command is Command.RUN and len(topologies) != 1:
        raise ConfigError("command run takes exactly one topology section")

    training = _parse_block("training", cp["training"], TrainingSpec) if cp.has_section("training") else TrainingSpec()
    objective = _parse_block("objective", cp["objective"], ObjectiveSpec) if cp.has_section("objective") else ObjectiveSpec()
    if objective.kind not in _OBJECTIVE_KEYS:
        raise ConfigError(f"[objective] kind must be logistic or quadratic, got {objective.kind!r}")
    if cp.has_section("objective"):
        _reject_unknown("objective", cp["objective"].keys(), ("kind",) + _OBJECTIVE_KEYS[objective.kind])

    output_dir = cp["output"].get("dir", "results").strip() if cp.has_section("output") else "results"
    if not output_dir:
        raise ConfigError("[output] dir must be nonempty")
    spectral_rounds = _int("spectral", "rounds", cp["spectral"]["rounds"]) if cp.has_section("spectral") and "rounds" in cp["spectral"] else 1000
    verify_trials = _int("verify", "trials", cp["verify"]["trials"]) if cp.has_section("verify") and "trials" in cp["verify"] else 10_000
    if spectral_rounds < 1:
        raise ConfigError(f"[spectral] rounds must be ≥ 1, got {spectral_rounds}")
    if verify_trials < 100:
        raise ConfigError(f"[verify] trials must be ≥ 100, got {verify_trials}")

    spec = ExperimentSpec(name=name, command=command, seed=seed, topologies=tuple(topologies),
                          training=training, objective=objective, output_dir=output_dir,
                          spectral_rounds=spectral_rounds, verify_trials=verify_trials)
    if len(set(labels)) != len(labels):
        raise ConfigError("topology labels must be unique")
    if command is Command.RUN:
        spec.train_config()  # enforces the training invariants at parse time
        _check_objective(objective)
    return spec


def _check_objective(o: ObjectiveSpec) -> None:
    if o.dim < 1:
        raise ConfigError(f"[objective] dim must be ≥ 1, got {o.dim}")
    if o.kind == "logistic":
        if o.samples < 1 or o.n_test < 1:
            raise ConfigError("[objective] samples and n_test must be ≥ 1")
        if not o.alpha > 0:
            raise ConfigError(f"[objective] alpha must be positive, got {o.alpha}")
        if o.l2 < 0:
            raise ConfigError(f"[objective] l2 must be non-negative, got {o.l2}")
    else:
        if o.rows < o.dim:
            raise ConfigError(f"[objective] rows must be ≥ dim = {o.dim}, got {o.rows}")
        if o.condition < 1:
            raise ConfigError(f"[objective] condition must be ≥ 1, got {o.condition}")


def _fmt_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(spec: ExperimentSpec) -> str:
    """Serialise a spec so that ``parse_config(dump_config(s)) == s``."""
    out = io.StringIO()

    def section(name, pairs):
        out.write(f"[{name}]\n")
        for key, value in pairs:
            out.write(f"{key} = {_fmt_value(value)}\n")
        out.write("\n")

    section("experiment", [("name", spec.name), ("command", spec.command.value), ("seed", spec.seed)])
    for label, topo in spec.topologies:
        keys = _TOPOLOGY_KEYS[topo.kind]
        section(f"topology.{label}" if label else "topology",
                [("kind", topo.kind.value)] + [(k, getattr(topo, k)) for k in keys])
    section("training", [(f.name, getattr(spec.training, f.name)) for f in fields(TrainingSpec)
                         if getattr(spec.training, f.name) is not None])
    obj = spec.objective
    section("objective", [("kind", obj.kind)] + [(k, getattr(obj, k)) for k in _OBJECTIVE_KEYS[obj.kind]])
    section("output", [("dir", spec.output_dir)])
    section("spectral", [("rounds", spec.spectral_rounds)])
    section("verify", [("trials", spec.verify_trials)])
    return out.getvalue()


# -- execution -----------------------------------------------------------------


def build_objective(o: ObjectiveSpec, n_s: int, seed: int) -> Objective:
    """Synthetic objective for ``n_s`` nodes drawn from the data stream of ``seed``."""
    rng = stream(seed, Stage.DATA)
    if o.kind == "logistic":
        return make_logistic_objective(n_s, o.samples, o.dim, rng, alpha=o.alpha,
                                       separation=o.separation, n_test=o.n_test, l2=o.l2)
    return make_quadratic_objective(n_s, o.dim, o.rows, rng, heterogeneity=o.heterogeneity,
                                    shared_matrix=o.shared_matrix, condition=o.condition)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _quantiles(values: np.ndarray) -> list[float]:
    return [float(v) for v in np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])]


def _run(spec: ExperimentSpec, out: Path) -> tuple[list[str], dict]:
    obj = build_objective(spec.objective, spec.topology.n_s, spec.seed)
    cfg = spec.train_config(obj.dim)
    try:
        result = run_experiment(cfg, obj)
    except DivergenceError as exc:
        return [], {"status": "diverged", "diverged_round": exc.round}
    _write_csv(out / "metrics.csv", METRICS_HEADER, [
        (m.round, m.cd_pre, m.cd_post, m.cdr, m.mean_loss, m.mean_grad_norm_sq, m.accuracy)
        for m in result.metrics
    ])
    losses = np.array([obj.global_loss(x) for x in result.models])
    rows = [("node_loss", *_quantiles(losses))]
    acc = obj.accuracies(result.models)
    if acc is not None:
        rows.append(("node_accuracy", *_quantiles(acc)))
    _write_csv(out / "nodes.csv", NODES_HEADER, rows)
    files = ["metrics.csv", "nodes.csv"]
    if cfg.log_spectral_gap:
        _write_csv(out / "round_gaps.csv", ("round", "spectral_gap"),
                   [(m.round, m.spectral_gap) for m in result.metrics])
        files.append("round_gaps.csv")
    return files, {"step_size": result.step_size}


def _spectral(spec: ExperimentSpec, out: Path) -> tuple[list[str], dict]:
    rows = []
    for _, topo in spec.topologies:
        r = average_spectral_gap(topo, spec.spectral_rounds, spec.seed)
        rows.append((topo.kind.value, topo.n_s, topo.n_h, topo.b_hs, topo.b_hh, topo.b_sh,
                     topo.k, topo.p, r.edges, r.samples, r.mean_gap, r.std_gap))
    _write_csv(out / "spectral.csv", SPECTRAL_HEADER, rows)
    return ["spectral.csv"], {}


def _bounds(spec: ExperimentSpec, out: Path) -> tuple[list[str], dict]:
    rows = []
    for label, topo in spec.topologies:
        row = [label, topo.kind.value, topo.n_s, topo.n_h, topo.b_hs, topo.b_hh, topo.b_sh,
               topo.k, topo.p, total_edges(topo)]
        if topo.kind is Kind.HSL:
            b = beta_bounds(topo.n_s, topo.n_h, topo.b_hs, topo.b_hh, topo.b_sh)
            remark = check_beta_hsl_remark(topo.n_s, topo.n_h, topo.b_hs, topo.b_sh, b.beta_hsl)
            row += [b.beta_hs, b.beta_hh, b.beta_sh, b.beta_hsl, b.beta_prime,
                    remark.premise_holds, remark.bound]
        else:
            row += [None] * 7
        rows.append(row)
    _write_csv(out / "bounds.csv", BOUNDS_HEADER, rows)
    return ["bounds.csv"], {}


def _verify(spec: ExperimentSpec, out: Path) -> tuple[list[str], dict]:
    reports = lemma_grid(spec.seed, spec.verify_trials)
    _write_csv(out / "reports.csv", REPORTS_HEADER, [
        (r.claim, r.trials, r.empirical, r.bound_or_target, r.standard_error, r.passed) for r in reports
    ])
    failed = sum(not r.passed for r in reports)
    extra = {"failed_claims": failed}
    if failed:
        extra["status"] = "failed"
    return ["reports.csv"], extra


_DISPATCH = {Command.RUN: _run, Command.SPECTRAL: _spectral, Command.BOUNDS: _bounds, Command.VERIFY: _verify}


def execute(spec: ExperimentSpec) -> RunManifest:
    """Run ``spec``, write its outputs into ``spec.output_dir`` and the manifest last.

    A stale manifest is removed before any work starts, so an aborted run
    leaves none behind.
    """
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.txt"
    manifest_path.unlink(missing_ok=True)

    (out / "config.ini").write_text(dump_config(spec), encoding="utf-8")
    files, extra = _DISPATCH[spec.command](spec, out)
    files = ["config.ini"] + files
    digests = {f: _sha256(out / f) for f in files}
    manifest = RunManifest(
        spec=spec,
        version=__version__,
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        files=tuple(files),
        digests=digests,
        status=extra.get("status", "ok"),
        diverged_round=extra.get("diverged_round"),
        failed_claims=extra.get("failed_claims", 0),
    )
    lines = [
        f"name={spec.name}",
        f"command={spec.command.value}",
        f"seed={spec.seed}",
        f"artifact_version={manifest.version}",
        f"timestamp={manifest.timestamp}",
        f"status={manifest.status}",
    ]
    if manifest.diverged_round is not None:
        lines.append(f"diverged_round={manifest.diverged_round}")
    if spec.command is Command.VERIFY:
        lines.append(f"failed_claims={manifest.failed_claims}")
    if "step_size" in extra:
        lines.append(f"step_size={_cell(extra['step_size'])}")
    lines.append(f"files={','.join(files)}")
    lines += [f"sha256.{f}={d}" for f, d in digests.items()]
    tmp = out / "manifest.txt.tmp"
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, manifest_path)
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="hsl-sim", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", required=True, type=Path, help="INI experiment config")
    parser.add_argument("--out", help="output directory, overrides [output] dir")
    parser.add_argument("--seed", help="unsigned 64-bit seed, overrides [experiment] seed")
    args = parser.parse_args(argv)

    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"hsl-sim: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        spec = parse_config(text)
        if spec.command.value != args.command:
            raise ConfigError(f"config declares command {spec.command.value!r} but {args.command!r} was requested")
        overrides = {}
        if args.out is not None:
            overrides["output_dir"] = args.out
        if args.seed is not None:
            overrides["seed"] = _check_seed(args.seed, "--seed")
        if overrides:
            spec = parse_config(dump_config(ExperimentSpec(**{**spec.__dict__, **overrides})))
        manifest = execute(spec)
    except ConfigError as exc:
        print(f"hsl-sim: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hsl-sim: I/O failure, no manifest written: {exc}", file=sys.stderr)
        return 3

    if manifest.status == "diverged":
        print(f"hsl-sim: diverged in round {manifest.diverged_round}", file=sys.stderr)
    elif manifest.status == "failed":
        print(f"hsl-sim: {manifest.failed_claims} verification claims failed", file=sys.stderr)
    else:
        print(f"hsl-sim: wrote {', '.join(manifest.files)} and manifest.txt to {spec.output_dir}")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
