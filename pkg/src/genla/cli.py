"""Command-line entry points: ``train``, ``eval``, ``pareto`` and ``baseline``.

Every command writes ``manifest.json`` into its output directory before doing
any work and refuses to reuse a non-empty directory unless ``--force`` is
given. Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import linkadapt as la
from .evaluation import EvaluationError, evaluate, pareto, pareto_grid
from .morl.checkpoint import CheckpointError, load_checkpoint
from .morl.envelope import TrainingError
from .perf import tune_allocator
from .rle.engine import TrainConfig, train, write_reference
from .rle.learner import LearnerConfig
from .rle.snapshot import SchemaMismatch
from .scenario import BENCHMARK_IDS, RandomizationSpace, ScenarioError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CONFIG_SCHEMA_VERSION = 1
CSV_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# -- config file ---------------------------------------------------------------

def _section(data, name, cls, exclude=()):
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    unknown = sorted(set(sec) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {unknown}; allowed: {sorted(allowed)}")
    out = {}
    for k, v in sec.items():
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


def load_train_config(path=None, overrides=None):
    """Build a :class:`TrainConfig` from a JSON file plus CLI overrides.

    The file holds ``schema_version`` and optional ``training``, ``learner``
    and ``randomization`` objects whose keys mirror :class:`TrainConfig`,
    :class:`LearnerConfig` and :class:`RandomizationSpace`.
    """
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}, "
                              f"got {data.get('schema_version')!r}")
        unknown = sorted(set(data) - {"schema_version", "training", "learner", "randomization"})
        if unknown:
            raise ConfigError(f"unknown top-level keys: {unknown}")
    training = _section(data, "training", TrainConfig, exclude=("learner", "space"))
    training.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        learner = LearnerConfig(**_section(data, "learner", LearnerConfig))
        space = RandomizationSpace(**_section(data, "randomization", RandomizationSpace))
        cfg = TrainConfig(learner=learner, space=space, **training)
        cfg.ingestion_policy()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg


def config_dict(cfg):
    d = dataclasses.asdict(cfg)
    space, learner = d.pop("space"), d.pop("learner")
    return {"schema_version": CONFIG_SCHEMA_VERSION, "training": d, "learner": learner,
            "randomization": space}


# -- run bookkeeping -----------------------------------------------------------

def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def build_id():
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Run:
    """Output directory with a manifest that lists every file written."""

    def __init__(self, args, deterministic):
        self.out = Path(args.out)
        if self.out.exists() and any(self.out.iterdir()) and not args.force:
            raise ConfigError(f"output directory {self.out} is not empty (use --force)")
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": args.command,
            "argv": sys.argv[1:],
            "config": getattr(args, "config", None),
            "seed": args.seed,
            "build_id": build_id(),
            "output_dir": str(self.out),
            "deterministic": deterministic,
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "started_at": _now(),
            "finished_at": None,
            "status": "running",
            "outputs": [],
        }
        self._write()

    def path(self, name):
        self.manifest["outputs"].append(name)
        self._write()
        return self.out / name

    def finish(self, status="ok"):
        self.manifest["status"] = status
        self.manifest["finished_at"] = _now()
        self._write()

    def _write(self):
        (self.out / "manifest.json").write_text(json.dumps(self.manifest, indent=1) + "\n")


def write_csv(path, rows, columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# -- commands -------------------------------------------------------------------

def cmd_train(args):
    if args.trace:
        raise ConfigError("--trace applies to eval, pareto and baseline, not train")
    cfg = load_train_config(args.config, {"actors": args.actors, "env_steps": args.steps,
                                          "seed": args.seed})
    run = Run(args, args.deterministic)
    run.path("train_config.json").write_text(json.dumps(config_dict(cfg), indent=1) + "\n")
    ckpt_dir = run.out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    run.manifest["outputs"].append("checkpoints/")
    with open(run.path("stats.jsonl"), "w") as stats, \
            open(run.path("scenarios.jsonl"), "w") as scen:
        result = train(cfg, deterministic=args.deterministic, stats_sink=stats,
                       checkpoint_dir=ckpt_dir, scenario_sink=scen)
    learner = result.learner
    with open(run.path("loss_trace.csv"), "w") as f:
        f.write("step,loss\n")
        for i, loss in enumerate(learner.stats.loss_trace, 1):
            f.write(f"{i},{loss!r}\n")
    summary = {"env_steps": result.env_steps, "transitions": result.transitions,
               "learner_steps": learner.stats.steps,
               "snapshots_published": learner.stats.snapshots_published,
               "accepted": learner.stats.accepted, "ingested": learner.stats.ingested,
               "dropped_batches": result.dropped_batches}
    if not args.deterministic:
        summary["wall_s"] = result.wall_s
    run.path("train_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    if learner.stats.steps > 0:
        learner.save(run.path("model.bin"), metadata={"env_steps": result.env_steps,
                                                      "seed": cfg.seed})
        write_reference(learner, run.path("reference_stats.json"))
    run.finish()
    print(json.dumps(summary))
    return EXIT_OK


def _load_model(path):
    if path is None:
        raise ConfigError("--checkpoint is required")
    try:
        net, _, _, header = load_checkpoint(path, expect_schema=la.STATE_SCHEMA_VERSION)
    except FileNotFoundError as e:
        raise ConfigError(f"checkpoint not found: {path}") from e
    return net, header


def _omega(values):
    if len(values) != 1:
        raise ConfigError("--omega takes one value w in [0, 1] for eval")
    w = values[0]
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"--omega must lie in [0, 1], got {w}")
    return (w, 1.0 - w)


def _check_common(args):
    if args.benchmark not in BENCHMARK_IDS:
        raise ConfigError(f"unknown benchmark '{args.benchmark}', expected one of {BENCHMARK_IDS}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")


def _seed_list(args):
    return list(range(args.seed, args.seed + args.seeds))


def _write_eval(run, res, args):
    write_csv(run.path("kpis.csv"), res.rows)
    write_csv(run.path("per_seed.csv"), res.per_seed)
    summary = {"benchmark": res.benchmark, "omega": list(res.omega), "seeds": res.seeds,
               **res.summary}
    run.path("summary.json").write_text(json.dumps(summary, indent=1, default=_json_default)
                                        + "\n")
    return summary


def _trace_file(args, run):
    return open(run.path("trace.jsonl"), "w") if args.trace else None


def cmd_eval(args):
    _check_common(args)
    omega = _omega(args.omega or [0.5])
    net, _ = _load_model(args.checkpoint)
    run = Run(args, True)
    run.manifest["checkpoint"] = str(args.checkpoint)
    rank_control = not args.mcs_only
    trace = _trace_file(args, run)
    try:
        res = evaluate(net, args.benchmark, _seed_list(args), omega, rank_control,
                       args.duration, trace=trace)
    finally:
        if trace is not None:
            trace.close()
    summary = _write_eval(run, res, args)
    run.finish()
    print(json.dumps({k: summary[k] for k in summary if k.startswith(("agent_throughput",
                                                                      "olla_throughput",
                                                                      "throughput"))}))
    return EXIT_OK


def cmd_baseline(args):
    _check_common(args)
    run = Run(args, True)
    trace = _trace_file(args, run)
    try:
        res = evaluate(None, args.benchmark, _seed_list(args), (0.5, 0.5),
                       duration_ttis=args.duration, baseline=False, agent="olla", trace=trace)
    finally:
        if trace is not None:
            trace.close()
    summary = _write_eval(run, res, args)
    run.finish()
    print(json.dumps({"throughput_bps_mean": summary["agent_throughput_bps_mean"],
                      "bler_first_tx_mean": summary["agent_bler_first_tx_mean"]}))
    return EXIT_OK


def cmd_pareto(args):
    _check_common(args)
    if not args.omega:
        raise ConfigError("--omega needs at least one grid value")
    try:
        grid = pareto_grid(args.omega)
    except EvaluationError as e:
        raise ConfigError(str(e)) from e
    net, _ = _load_model(args.checkpoint)
    run = Run(args, True)
    trace = _trace_file(args, run)
    try:
        rows = pareto(net, args.benchmark, grid, _seed_list(args), not args.mcs_only,
                      args.duration, trace=trace)
    finally:
        if trace is not None:
            trace.close()
    write_csv(run.path("pareto.csv"), rows,
              ["omega", "throughput_bps", "spectral_efficiency_bps_hz", "bler_first_tx",
               "mean_latency_ttis"])
    run.finish()
    for r in rows:
        print(json.dumps(r))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "pareto": cmd_pareto, "baseline": cmd_baseline}


def build_parser():
    p = argparse.ArgumentParser(prog="genla", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"genla {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--deterministic", action="store_true",
                        help="single-threaded, reproducible run")
        sp.add_argument("--trace", action="store_true",
                        help="write a per-transmission JSON-lines trace")
        sp.add_argument("--force", action="store_true", help="reuse a non-empty output directory")

    t = sub.add_parser("train", help="train an agent with the actor/learner engine")
    common(t)
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--actors", type=int)
    t.add_argument("--steps", type=int, help="environment-step (TTI) budget over all actors")

    for name, helptext in (("eval", "evaluate a checkpoint on a benchmark"),
                           ("pareto", "sweep the preference over a grid"),
                           ("baseline", "run the OLLA baseline on a benchmark")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--benchmark", required=True, help=f"one of {', '.join(BENCHMARK_IDS)}")
        sp.add_argument("--seeds", type=int, default=20, help="number of evaluation seeds")
        sp.add_argument("--duration", type=int, help="TTIs per evaluation run")
        if name != "baseline":
            sp.add_argument("--checkpoint", required=True)
            sp.add_argument("--omega", type=float, nargs="+",
                            help="preference w for (w, 1-w); a grid for pareto")
            sp.add_argument("--mcs-only", action="store_true",
                            help="use the UE-reported rank instead of the agent's choice")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    tune_allocator()
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScenarioError, EvaluationError, CheckpointError, SchemaMismatch) as e:
        print(f"genla {args.command}: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, RuntimeError, OSError) as e:
        print(f"genla {args.command}: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
