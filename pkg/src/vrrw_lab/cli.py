"""Command-line front end: ``vrrw-lab {run,couple,urn,report}``.

Every command writes a CSV whose leading ``#`` lines carry the tool version,
the randomness-derivation version and the full configuration, plus a JSON
summary next to it.  Replicate ``r`` always uses ``replicate_seed(seed, r)``,
and rows are emitted in replicate order, so outputs do not depend on the
thread count.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .coupling import ModifiedWalkParams, diagnostic_series, run_coupled, verify_partial_order
from .ledger import PRESETS
from .localization import CSV_COLUMNS, CheckpointRow, aggregate, replicate_rows
from .rng import DERIVATION_VERSION, UniformTable, parse_seed, replicate_seed, table_key
from .urns import _urn_batch, beta_limit_test
from .walk import VRRW, __version__, parse_schedule, run, with_window_starts

COMMANDS = ("run", "couple", "urn", "report")
MAX_STEPS = 10 ** 10


class CliError(Exception):
    """Validation or I/O failure; ``name`` is the machine-readable error tag."""

    name = "CliError"
    exit_code = 2

    def payload(self) -> dict:
        return {"error": self.name, "message": str(self)}


class InvalidValue(CliError):
    name = "InvalidValue"
    exit_code = 3


class InvalidCombination(CliError):
    name = "InvalidCombination"
    exit_code = 4


class ConfigConflict(CliError):
    name = "ConfigConflict"
    exit_code = 5


class UnwritableOutput(CliError):
    name = "UnwritableOutput"
    exit_code = 6


class BadInput(CliError):
    name = "BadInput"
    exit_code = 7


@dataclass
class RunConfig:
    command: str
    steps: int = 10 ** 6
    replicates: int = 1
    seed: int = 0
    v0: int = 0
    weights: dict | None = None
    checkpoints: str = "geometric:10"
    window: float = 0.1
    upsilon_threshold: float = 1e-2
    x: int | None = None
    M: float | None = None
    g: float | None = None
    k: int | None = None
    V: int | None = None
    preset: str | None = None
    kind: str | None = None
    a: int | None = None
    b: int | None = None
    alpha: float | None = None
    input: str | None = None
    out: str | None = None
    threads: int = 1

    def echo(self) -> dict:
        """Configuration as written into headers.

        ``out`` and ``threads`` are left out: neither changes the content.
        """
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        if d["weights"] is not None:
            d["weights"] = {str(k): v for k, v in sorted(d["weights"].items())}
        return d


# flags owned by one command; anything else is shared
_COUPLING_FLAGS = {"x", "M", "g", "k", "V", "preset"}
_URN_FLAGS = {"kind", "a", "b", "alpha"}
# flags that never change output content; allowed next to --config
_EXECUTION_FLAGS = {"out", "threads"}
_WALK_FLAGS = {"v0", "weights", "checkpoints", "window", "upsilon_threshold"}
_ALLOWED = {
    "run": {"steps", "replicates", "seed", "out", "threads"} | _WALK_FLAGS,
    "couple": {"steps", "replicates", "seed", "out", "threads", "v0"} | _COUPLING_FLAGS,
    "urn": {"steps", "replicates", "seed", "out", "threads"} | _URN_FLAGS,
    "report": {"input", "out"},
}


def _parse_weights(text) -> dict:
    if isinstance(text, dict):
        items = text.items()
    else:
        items = []
        for part in str(text).split(","):
            site, sep, w = part.partition(":")
            if not sep:
                raise InvalidValue(f"weight entry {part!r} is not SITE:WEIGHT")
            items.append((site, w))
    try:
        out = {int(s): int(w) for s, w in items}
    except ValueError as exc:
        raise InvalidValue(f"bad weights: {exc}") from None
    if any(w < 1 for w in out.values()):
        raise InvalidValue("initial weights must be >= 1")
    return out


def _coerce(cfg: RunConfig) -> RunConfig:
    types = {"steps": int, "replicates": int, "v0": int, "x": int, "k": int, "V": int, "a": int,
             "b": int, "threads": int, "window": float, "upsilon_threshold": float, "M": float,
             "g": float, "alpha": float}
    for name, t in types.items():
        v = getattr(cfg, name)
        if v is None:
            continue
        if t is int and isinstance(v, float) and not v.is_integer():
            raise InvalidValue(f"{name} must be an integer")
        try:
            setattr(cfg, name, t(v))
        except (TypeError, ValueError):
            raise InvalidValue(f"{name}: cannot read {v!r}") from None
    try:
        cfg.seed = parse_seed(cfg.seed)
    except (TypeError, ValueError) as exc:
        raise InvalidValue(f"seed: {exc}") from None
    if cfg.weights is not None:
        cfg.weights = _parse_weights(cfg.weights)
    return cfg


def validate(cfg: RunConfig, given: set) -> RunConfig:
    if cfg.command not in COMMANDS:
        raise InvalidValue(f"unknown command {cfg.command!r}")
    stray = sorted(given - _ALLOWED[cfg.command])
    if stray:
        raise InvalidCombination(f"{', '.join(stray)} not accepted by {cfg.command!r}")
    cfg = _coerce(cfg)
    if cfg.command == "report":
        if not cfg.input:
            raise InvalidValue("report needs --input")
        return cfg
    if not 1 <= cfg.steps <= MAX_STEPS:
        raise InvalidValue(f"steps must lie in [1, {MAX_STEPS}]")
    if cfg.replicates < 1:
        raise InvalidValue("replicates must be >= 1")
    if cfg.threads < 1:
        raise InvalidValue("threads must be >= 1")
    if not 0.0 < cfg.window <= 1.0:
        raise InvalidValue("window must lie in (0, 1]")
    if cfg.upsilon_threshold <= 0.0:
        raise InvalidValue("upsilon threshold must be > 0")
    if cfg.command == "run":
        try:
            parse_schedule(cfg.checkpoints, cfg.steps)
        except ValueError as exc:
            raise InvalidValue(str(exc)) from None
    if cfg.command == "couple":
        cfg.x = 2 if cfg.x is None else cfg.x
        cfg.M = 2.0 if cfg.M is None else cfg.M
        cfg.g = 1.0 if cfg.g is None else cfg.g
        cfg.k = 100 if cfg.k is None else cfg.k
        cfg.V = cfg.steps if cfg.V is None else cfg.V
        cfg.preset = cfg.preset or "s51"
        if cfg.preset not in PRESETS:
            raise InvalidValue(f"preset must be one of {sorted(PRESETS)}")
        try:
            ModifiedWalkParams(cfg.x, cfg.M, cfg.g, cfg.k, cfg.V)
        except ValueError as exc:
            raise InvalidValue(str(exc)) from None
    if cfg.command == "urn":
        cfg.kind = cfg.kind or "polya"
        if cfg.kind not in ("polya", "friedman"):
            raise InvalidValue("kind must be polya or friedman")
        cfg.a = 1 if cfg.a is None else cfg.a
        cfg.b = 1 if cfg.b is None else cfg.b
        if cfg.a < 1 or cfg.b < 1:
            raise InvalidValue("urn counts must be >= 1")
        if cfg.kind == "polya":
            if cfg.alpha is not None:
                raise InvalidCombination("alpha only applies to the friedman urn")
        else:
            cfg.alpha = 0.5 if cfg.alpha is None else cfg.alpha
            if not 0.0 < cfg.alpha <= 1.0:
                raise InvalidValue("alpha must lie in (0, 1]")
    return cfg


# --------------------------------------------------------------------------
# emission


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def header_lines(cfg: RunConfig) -> list:
    return [
        f"# tool_version: {__version__}",
        f"# rng: {DERIVATION_VERSION}",
        "# config: " + json.dumps(cfg.echo(), sort_keys=True),
    ]


def render_csv(cfg: RunConfig, columns, rows) -> str:
    buf = io.StringIO()
    buf.write("\n".join(header_lines(cfg)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def render_json(cfg: RunConfig, summary: dict) -> str:
    doc = {"tool_version": __version__, "rng": DERIVATION_VERSION, "config": cfg.echo(),
           "summary": summary}
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


def summary_path(out: str) -> str:
    root, _ = os.path.splitext(out)
    return root + ".summary.json"


def _write(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise UnwritableOutput(f"{path}: {exc.strerror}") from None


def _map(cfg: RunConfig, fn, items):
    if cfg.threads == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# commands


def run_rows(cfg: RunConfig) -> list:
    steps = parse_schedule(cfg.checkpoints, cfg.steps)
    if cfg.steps not in steps:
        steps.append(cfg.steps)
    sched = with_window_starts(steps, cfg.window)

    def one(r):
        rec = run(VRRW(), cfg.steps, UniformTable(replicate_seed(cfg.seed, r)), sched,
                  v0=cfg.v0, weights=cfg.weights, ledger=False)
        return replicate_rows(r, rec, cfg.window, steps)

    return [row for rows in _map(cfg, one, range(cfg.replicates)) for row in rows]


def cmd_run(cfg: RunConfig) -> tuple:
    rows = run_rows(cfg)
    table = [[getattr(r, c) for c in CSV_COLUMNS] for r in rows]
    return render_csv(cfg, CSV_COLUMNS, table), aggregate(rows).to_dict()


COUPLE_COLUMNS = ("replicate", "n", "t_n", "t_n_primed", "z", "z_primed", "y", "y_primed")


def cmd_couple(cfg: RunConfig) -> tuple:
    params = ModifiedWalkParams(cfg.x, cfg.M, cfg.g, cfg.k, cfg.V)

    def one(r):
        base, primed = run_coupled(cfg.steps, replicate_seed(cfg.seed, r), params, v0=cfg.v0)
        audit = verify_partial_order(base, primed)
        sa = diagnostic_series(base, cfg.preset)
        sb = diagnostic_series(primed, cfg.preset)
        rows = []
        for (n, t, z, y), (_, t2, z2, y2) in zip(sa.rows(), sb.rows()):
            rows.append((r, n, t, t2, z, z2, y, y2))
        return rows, audit, primed.modifier

    results = _map(cfg, one, range(cfg.replicates))
    table = [row for rows, _, _ in results for row in rows]
    audits = [a for _, a, _ in results]
    summary = {
        "cells_checked": sum(a.cells_checked for a in audits),
        "vacuous": sum(1 for a in audits if a.vacuous),
        "violations": sum(len(a.violations) for a in audits),
        "verdict": all(a.verdict for a in audits),
        "replicates": [dict(replicate=r, **a.to_dict(), modifier=m)
                       for r, (_, a, m) in enumerate(results)],
    }
    return render_csv(cfg, COUPLE_COLUMNS, table), summary


URN_COLUMNS = ("replicate", "draws", "a", "b", "fraction")


def cmd_urn(cfg: RunConfig) -> tuple:
    alpha = 1.0 if cfg.kind == "polya" else cfg.alpha
    keys = np.array([table_key(replicate_seed(cfg.seed, r)) for r in range(cfg.replicates)],
                    np.uint64)
    chunks = np.array_split(np.arange(cfg.replicates), cfg.threads)
    parts = _map(cfg, lambda idx: _urn_batch(keys[idx], cfg.a, cfg.b, cfg.steps, float(alpha)),
                 [c for c in chunks if len(c)])
    ab = np.concatenate(parts)
    a, b = ab[:, 0], ab[:, 1]
    frac = a / (a + b)
    table = [(r, cfg.steps, int(a[r]), int(b[r]), float(frac[r])) for r in range(cfg.replicates)]
    summary = {"kind": cfg.kind, "replicates": cfg.replicates,
               "mean_fraction": float(frac.mean())}
    if cfg.kind == "polya":
        try:
            summary["ks_beta"] = beta_limit_test(frac, cfg.a, cfg.b)
        except ValueError as exc:
            summary["ks_beta"] = None
            summary["ks_note"] = str(exc)
    else:
        ratio = np.log(a) / np.log(b)
        summary["median_log_ratio"] = float(np.median(ratio))
        summary["median_abs_exponent_error"] = float(np.median(np.abs(ratio - alpha)))
    return render_csv(cfg, URN_COLUMNS, table), summary


def read_run_csv(path: str) -> list:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise BadInput(f"{path}: {exc.strerror}") from None
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise BadInput(f"{path} is not a run summary CSV")
    conv = {f.name: f.type for f in fields(CheckpointRow)}
    rows = []
    for rec in reader:
        try:
            rows.append(CheckpointRow(**{
                k: (rec[k] == "1" if conv[k] == "bool" else
                    int(rec[k]) if conv[k] == "int" else float(rec[k]))
                for k in CSV_COLUMNS}))
        except (KeyError, ValueError) as exc:
            raise BadInput(f"{path}: malformed row ({exc})") from None
    if not rows:
        raise BadInput(f"{path} has no rows")
    return rows


def cmd_report(cfg: RunConfig) -> str:
    rows = read_run_csv(cfg.input)
    return render_json(cfg, aggregate(rows).to_dict())


def execute(cfg: RunConfig) -> int:
    if cfg.command == "report":
        text = cmd_report(cfg)
        if cfg.out:
            _write(cfg.out, text)
        else:
            sys.stdout.write(text)
        return 0
    out = cfg.out or f"{cfg.command}.csv"
    csv_text, summary = {"run": cmd_run, "couple": cmd_couple, "urn": cmd_urn}[cfg.command](cfg)
    _write(out, csv_text)
    _write(summary_path(out), render_json(cfg, summary))
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", metavar="FILE.json", help="read every setting from a JSON file")
    common.add_argument("--steps", help="walk steps or urn draws per replicate")
    common.add_argument("--replicates")
    common.add_argument("--seed", help="master seed, decimal or 0x-hex")
    common.add_argument("--v0", help="start site")
    common.add_argument("--weights", help="initial weight overrides, SITE:W[,SITE:W...]")
    common.add_argument("--checkpoints", help="geometric:F, log:N or list:a,b,...")
    common.add_argument("--window", help="trailing window fraction for trap detection")
    common.add_argument("--upsilon-threshold", dest="upsilon_threshold")
    common.add_argument("--out", help="CSV path (JSON summary goes next to it)")
    common.add_argument("--threads")
    common.add_argument("--x", help="perturbed site")
    common.add_argument("--g")
    common.add_argument("--cap-M", dest="M")
    common.add_argument("--k", help="activation step")
    common.add_argument("--v-cap", dest="V", help="deactivation step")
    common.add_argument("--preset", help="diagnostic series: s51, s52 or s53")
    common.add_argument("--kind", help="polya or friedman")
    common.add_argument("--a")
    common.add_argument("--b")
    common.add_argument("--alpha")
    common.add_argument("--input", help="run CSV to summarise")

    parser = argparse.ArgumentParser(prog="vrrw-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="VRRW replicates and trap estimates")
    sub.add_parser("couple", parents=[common], help="coupled VRRW / modified walk with audit")
    sub.add_parser("urn", parents=[common], help="Polya or Friedman urn replicates")
    sub.add_parser("report", parents=[common], help="summarise a run CSV")
    return parser


def config_from_args(ns: argparse.Namespace) -> tuple:
    given = {k for k in vars(ns) if k not in ("command", "config")}
    if hasattr(ns, "config"):
        clash = given - _EXECUTION_FLAGS
        if clash:
            raise ConfigConflict(f"--config cannot be combined with {', '.join(sorted(clash))}")
        try:
            with open(ns.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise BadInput(f"{ns.config}: {exc}") from None
        if not isinstance(data, dict):
            raise BadInput("config file must hold a JSON object")
        data.setdefault("command", ns.command)
        if data["command"] != ns.command:
            raise ConfigConflict(f"config is for {data['command']!r}, not {ns.command!r}")
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidValue(f"unknown config keys: {', '.join(unknown)}")
        for k in given:
            data[k] = getattr(ns, k)
        given = {k for k, v in data.items() if k != "command" and v is not None}
        return RunConfig(**data), given
    return RunConfig(command=ns.command, **{k: getattr(ns, k) for k in given}), given


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg, given = config_from_args(ns)
        return execute(validate(cfg, given))
    except CliError as exc:
        sys.stderr.write(json.dumps(exc.payload()) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
