"""Command-line entry point: ``aar run``, ``aar sweep``, ``aar theory``.

Exit codes: 0 success, 1 runtime failure, 2 user error (bad config, missing
dataset, invalid arguments). Errors are also printed to stderr as one JSON
object so scripts can parse them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema

from aar import __version__
from aar.data.tabular import DatasetError, dataset_paths
from aar.errors import InvalidInput, NoRoot
from aar.evaluation import (
    TRACE_KEYS,
    ExperimentConfig,
    ExperimentFailed,
    RunReport,
    run_experiment,
    summary_row,
    write_summary_csv,
)
from aar.theory import (
    MixtureSpec,
    argmax_agrees,
    curve_argmax,
    mixture_robustness_curve,
    optimal_quantile,
    write_curve,
)

logger = logging.getLogger("aar")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

SWEEP_AXES = {"gamma0": "gamma0", "z": "z", "t_s": "soft_weight", "rejection_q": "gamma"}
# axes that only mean something for some methods
AXIS_METHODS = {"z": {"aar"}, "t_s": {"aar"}, "rejection_q": {"quantile"}}

_OPT_NUM = {"type": ["number", "null"]}
_INT_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset"],
    "properties": {
        "dataset": {"type": "string", "minLength": 1},
        "method": {"enum": ["aar", "mz", "quantile", "iqr", "huber", "mse"]},
        "gamma0": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "seeds": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "model": {"enum": ["autoencoder", "dsvdd"]},
        "hidden": {"oneOf": [_INT_LIST, {"type": "null"}]},
        "batch_norm": {"type": "boolean"},
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": ["integer", "null"], "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "warmup_epochs": {"type": "integer", "minimum": 0},
        "z": {"type": "number", "exclusiveMinimum": 0},
        "soft_weight": {"type": "number", "minimum": 0, "maximum": 1},
        "gamma": _OPT_NUM,
        "huber_delta": {"type": "number", "exclusiveMinimum": 0},
        "dsvdd_pretrain_epochs": {"type": "integer", "minimum": 0},
        "noise": {"enum": ["none", "gaussian_from_test_anomalies"]},
        "data_dir": {"type": ["string", "null"]},
        "synthetic": {"type": ["object", "null"]},
        "allow_failed_seeds": {"type": "boolean"},
        "output_dir": {"type": "string"},
    },
}
CLI_ONLY_KEYS = ("output_dir",)


class UsageError(Exception):
    """Bad input from the user; maps to exit code 2."""

    def __init__(self, message: str, **extra: Any):
        super().__init__(message)
        self.extra = extra


# ---------------------------------------------------------------- helpers


def build_id() -> str:
    """``<version>+<git describe>`` when run from a checkout, else the version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--abbrev=12"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    rev = out.stdout.strip()
    return f"{__version__}+{rev}" if out.returncode == 0 and rev else __version__


def _clean(obj: Any) -> Any:
    """Replace NaN/inf floats by None so output is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dump_json(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(tokens: Sequence[str]) -> dict:
    """``--key value`` pairs (``--key=value`` also accepted); values parsed as JSON when possible."""
    allowed = {f.name for f in fields(ExperimentConfig)} | set(CLI_ONLY_KEYS)
    out: dict = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        key = key.replace("-", "_")
        if not eq:
            if i + 1 >= len(tokens):
                raise UsageError(f"override --{key} needs a value")
            val = tokens[i + 1]
            i += 1
        if key not in allowed:
            raise UsageError(f"unknown config key {key!r}")
        out[key] = _parse_value(val)
        i += 1
    return out


def load_config(path: Optional[str], overrides: dict) -> tuple[ExperimentConfig, dict]:
    """Read, override, schema-check and build the experiment config.

    Returns the config and the CLI-only settings (``output_dir``).
    """
    raw: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {p}", path=str(p))
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {p} is not valid JSON: {exc}", path=str(p)) from None
        if not isinstance(raw, dict):
            raise UsageError(f"config file {p} must hold a JSON object", path=str(p))
    raw = {**raw, **overrides}
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise UsageError(f"config invalid at {where}: {exc.message}") from None
    extra = {k: raw.pop(k) for k in CLI_ONLY_KEYS if k in raw}
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except (InvalidInput, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return cfg, extra


def check_dataset(cfg: ExperimentConfig) -> None:
    if cfg.dataset.startswith("synthetic:"):
        if cfg.dataset not in ("synthetic:manifold", "synthetic:blob"):
            raise UsageError(f"unknown synthetic dataset {cfg.dataset!r}")
        return
    csv_path, _ = dataset_paths(cfg.dataset, cfg.data_dir)
    if not csv_path.exists():
        raise UsageError(f"dataset file not found: {csv_path}", path=str(csv_path))


def _header_lines(config: dict, build: str) -> list[str]:
    return [f"# build: {build}", f"# config: {json.dumps(config, sort_keys=True)}"]


def write_with_header(path: Path, body: str, config: dict, build: str) -> None:
    path.write_text("\n".join(_header_lines(config, build)) + "\n" + body)


def trace_tsv(report: RunReport) -> str:
    lines = ["\t".join(("seed", "epoch") + TRACE_KEYS)]
    for s in report.seeds:
        if not s.trace:
            continue
        for e in range(len(s.trace["loss"])):
            vals = ["" if s.trace[k][e] is None else f"{s.trace[k][e]:.10g}" for k in TRACE_KEYS]
            lines.append("\t".join([str(s.seed), str(e + 1)] + vals))
    return "\n".join(lines) + "\n"


def _csv_text(rows: list[dict], tmp: Path) -> str:
    write_summary_csv(rows, tmp)
    text = tmp.read_text()
    tmp.unlink()
    return text


def emit_run(report: RunReport, out_root: Path, build: str) -> Path:
    """Write ``report.json``, ``summary.csv`` and ``trace.tsv`` under a config-hash directory."""
    c = report.config
    run_dir = out_root / f"{c['dataset'].replace(':', '-')}-{summary_row(report)['method']}-{config_hash(c)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    doc = {"build": build, "payload": report.payload(), "timing": report.timing}
    (run_dir / "report.json").write_text(dump_json(doc))
    write_with_header(run_dir / "summary.csv", _csv_text([summary_row(report)], run_dir / ".summary.tmp"), c, build)
    write_with_header(run_dir / "trace.tsv", trace_tsv(report), c, build)
    return run_dir


def _fail(code: int, kind: str, message: str, **extra: Any) -> int:
    sys.stderr.write(json.dumps({"status": "error", "kind": kind, "message": message, **extra}) + "\n")
    return code


def _failed_seed_paths(exc: ExperimentFailed) -> list[str]:
    return sorted({s.error for s in exc.report.seeds if s.error and s.error.startswith("DatasetError")})


# ---------------------------------------------------------------- commands


def cmd_run(args: argparse.Namespace, overrides: dict) -> int:
    cfg, extra = load_config(args.config, overrides)
    check_dataset(cfg)
    out_root = Path(args.out or extra.get("output_dir") or "runs")
    build = build_id()
    try:
        report = run_experiment(cfg, jobs=args.jobs)
    except ExperimentFailed as exc:
        emit_run(exc.report, out_root, build)
        dataset_errors = _failed_seed_paths(exc)
        if dataset_errors:
            return _fail(EXIT_USAGE, "dataset", "; ".join(dataset_errors))
        return _fail(EXIT_RUNTIME, "experiment", str(exc))
    run_dir = emit_run(report, out_root, build)
    print(json.dumps({"status": "ok", "run_dir": str(run_dir), "mean_auroc": report.mean, "std_auroc": report.std}))
    return EXIT_OK


def _sweep_worker(cfg: ExperimentConfig) -> RunReport:
    return run_experiment(cfg)


def cmd_sweep(args: argparse.Namespace, overrides: dict) -> int:
    base, extra = load_config(args.config, overrides)
    field_name = SWEEP_AXES[args.axis]
    methods = args.methods or [base.method]
    allowed = AXIS_METHODS.get(args.axis)
    if allowed:
        bad = [m for m in methods if m not in allowed]
        if bad:
            raise UsageError(f"axis {args.axis!r} does not apply to method(s) {bad}; allowed: {sorted(allowed)}")
    check_dataset(base)
    configs = []
    for method in methods:
        for value in args.values:
            changes = {"method": method, field_name: value}
            if method == "quantile" and field_name != "gamma" and base.gamma is None:
                raise UsageError("method 'quantile' needs gamma in the config")
            try:
                configs.append(base.replace(**changes))
            except InvalidInput as exc:
                raise UsageError(f"{args.axis}={value}: {exc}") from None

    out_root = Path(args.out or extra.get("output_dir") or "runs")
    build = build_id()
    try:
        if args.jobs > 1 and len(configs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                reports = list(pool.map(_sweep_worker, configs))
        else:
            reports = [_sweep_worker(c) for c in configs]
    except ExperimentFailed as exc:
        dataset_errors = _failed_seed_paths(exc)
        if dataset_errors:
            return _fail(EXIT_USAGE, "dataset", "; ".join(dataset_errors))
        return _fail(EXIT_RUNTIME, "experiment", str(exc))

    rows = []
    for cfg, rep in zip(configs, reports):
        emit_run(rep, out_root, build)
        rows.append({"axis": args.axis, "value": getattr(cfg, field_name), **summary_row(rep)})
    sweep_cfg = {"base": base.to_dict(), "axis": args.axis, "values": list(args.values), "methods": methods}
    sweep_dir = out_root / f"sweep-{args.axis}-{config_hash(sweep_cfg)}"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    path = sweep_dir / "sweep.csv"
    write_with_header(path, _csv_text(rows, sweep_dir / ".sweep.tmp"), sweep_cfg, build)
    print(json.dumps({"status": "ok", "sweep_csv": str(path), "rows": len(rows)}))
    return EXIT_OK


def cmd_theory(args: argparse.Namespace) -> int:
    try:
        mix = MixtureSpec(
            alpha=args.alpha,
            normal=tuple(args.normal),
            abnormal=tuple(args.abnormal),
            truncate=args.truncate,
        )
        if args.grid < 16:
            raise InvalidInput("grid must be >= 16")
    except InvalidInput as exc:
        raise UsageError(str(exc)) from None
    config = {
        "alpha": mix.alpha,
        "normal": list(mix.normal),
        "abnormal": list(mix.abnormal),
        "truncate": mix.truncate,
        "grid": args.grid,
    }
    build = build_id()
    out = Path(args.out or "runs") / f"theory-{config_hash(config)}"
    out.mkdir(parents=True, exist_ok=True)
    points = mixture_robustness_curve(mix, args.grid)
    header = "\n".join(line[2:] for line in _header_lines(config, build))
    write_curve(points, out / "curve.tsv", header=header)
    best = curve_argmax(points)
    result: dict = {"build": build, "config": config, "argmax_q": best.q, "argmax_r": best.r}
    try:
        tau_star, q_star = optimal_quantile(mix)
    except NoRoot as exc:
        result.update(status="no_root", message=str(exc), tau_star=None, q_star=None, verdict=None)
        (out / "result.json").write_text(dump_json(result))
        return _fail(EXIT_RUNTIME, "no_root", str(exc), result=str(out / "result.json"))
    agrees = argmax_agrees(points, q_star)
    result.update(
        status="ok",
        tau_star=tau_star,
        q_star=q_star,
        agrees=agrees,
        verdict="argmax within one grid cell of q*" if agrees else "argmax outside one grid cell of q*",
    )
    (out / "result.json").write_text(dump_json(result))
    print(json.dumps({k: result[k] for k in ("status", "tau_star", "q_star", "verdict")} | {"dir": str(out)}))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aar", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--log-level", default="WARNING", help="logging level (default: WARNING)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", allow_abbrev=False, help="run one experiment config over its seeds",
                         description="Extra --key value flags override config fields.")
    run.add_argument("config", nargs="?", help="experiment config JSON")
    run.add_argument("--out", help="output root (default: config output_dir or ./runs)")
    run.add_argument("--jobs", type=int, default=1, help="parallel seeds")

    sweep = sub.add_parser("sweep", allow_abbrev=False, help="repeat a config along one axis",
                           description="Extra --key value flags override config fields.")
    sweep.add_argument("config", nargs="?", help="experiment config JSON")
    sweep.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sweep.add_argument("--values", required=True, type=float, nargs="+")
    sweep.add_argument("--methods", nargs="+", choices=["aar", "mz", "quantile", "iqr", "huber", "mse"])
    sweep.add_argument("--out", help="output root (default: config output_dir or ./runs)")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")

    theory = sub.add_parser("theory", allow_abbrev=False, help="robustness curve and optimal quantile for a score mixture")
    theory.add_argument("--alpha", type=float, default=0.8, help="normal fraction, in (0, 1)")
    theory.add_argument("--normal", type=float, nargs=2, default=[2.0, 0.5], metavar=("MU", "SIGMA"))
    theory.add_argument("--abnormal", type=float, nargs=2, default=[5.0, 1.0], metavar=("MU", "SIGMA"))
    theory.add_argument("--grid", type=int, default=256)
    theory.add_argument("--truncate", action="store_true", help="truncate both components at 0")
    theory.add_argument("--out", help="output root (default: ./runs)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "theory":
            if rest:
                parser.error(f"unrecognized arguments: {' '.join(rest)}")
            return cmd_theory(args)
        overrides = parse_overrides(rest)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.command == "run":
            return cmd_run(args, overrides)
        return cmd_sweep(args, overrides)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc), **exc.extra)
    except DatasetError as exc:
        return _fail(EXIT_USAGE, "dataset", str(exc), path=exc.path)
    except InvalidInput as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except Exception as exc:  # last-resort mapping to the runtime exit code
        logger.exception("unexpected failure")
        return _fail(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
