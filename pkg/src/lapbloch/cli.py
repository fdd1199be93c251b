"""Command-line driver: ``lapbloch {bands,fermi,solve,verify,converge} --config run.json``.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures (including failed verification checks).  Errors are reported as a
single JSON object on stderr.
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
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from .bands import _fmt, sample_grid
from .errors import ConfigError, LapBlochError
from .fermi import complex_csv
from .lap import LapConfig, damped_solve, lap_solve, prepare, solution_csv
from .lattice import build_frame
from .medium import MediumSpec, SourceSpec, medium_from_dict, source_from_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "lapbloch run configuration",
    "type": "object",
    "required": ["dimension", "medium"],
    "additionalProperties": False,
    "properties": {
        "dimension": {"type": "integer", "enum": [1, 2]},
        "medium": {"type": ["string", "object"]},
        "source": {"type": ["string", "object"]},
        "lambda": {"type": "number"},
        "direction": _VEC,
        "J_max": _POS_INT,
        "N": {"type": "integer", "minimum": 8},
        "num_bands": _POS_INT,
        "contour": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma1": _POS, "sigma2": _POS, "halo": _POS,
                "slices": _POS_INT, "nodes_per_slice": _POS_INT,
            },
        },
        "eval_points": {"type": "array", "items": _VEC},
        "epsilon_ladder": {"type": "array", "items": _POS},
        "N_alpha": _POS_INT,
        "checks": {"type": "array", "items": {"type": "string"}},
        "output": {"type": "string"},
        "format": {"type": "string", "enum": ["csv", "json"]},
    },
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

class RunConfig:
    """Validated run configuration with media and sources resolved."""

    def __init__(self, raw: dict, base_dir: Path):
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path)
            raise ConfigError(f"config invalid at '{path}': {exc.message}") from exc
        self.raw = raw
        self.dim = int(raw["dimension"])
        self.medium: MediumSpec = medium_from_dict(_resolve(raw["medium"], base_dir))
        if self.medium.dim != self.dim:
            raise ConfigError("medium dimension does not match the config dimension")
        src = raw.get("source", {"type": "delta"})
        self.source: SourceSpec = source_from_dict(_resolve(src, base_dir), self.dim)
        self.lam = float(raw.get("lambda", 0.0))
        self.direction = None
        if "direction" in raw:
            d = np.asarray(raw["direction"], dtype=float)
            if d.size != self.dim or not np.any(d):
                raise ConfigError("direction must be a nonzero vector of the config dimension")
            self.direction = d / np.linalg.norm(d)
        self.J_max = int(raw.get("J_max", 16))
        self.N = int(raw.get("N", 64))
        self.num_bands = int(raw.get("num_bands", 4))
        c = raw.get("contour", {})
        self.lap = LapConfig(sigma1=c.get("sigma1", 0.05), sigma2=c.get("sigma2", 0.002), halo=c.get("halo", 0.05),
                             slices=c.get("slices", 64), nodes_per_slice=c.get("nodes_per_slice", 256),
                             N=self.N, J_max=self.J_max, num_bands=self.num_bands)
        pts = raw.get("eval_points", [])
        if any(len(p) != self.dim for p in pts):
            raise ConfigError("eval_points entries must match the dimension")
        self.points = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        self.ladder = [float(e) for e in raw.get("epsilon_ladder", [])]
        self.N_alpha = raw.get("N_alpha")
        self.checks = raw.get("checks")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls(raw, path.parent)

    def frame(self):
        if self.direction is None:
            if self.dim == 1:
                return build_frame([1.0])
            raise ConfigError("this command needs an explicit direction")
        return build_frame(self.direction)


def _resolve(entry, base_dir: Path) -> dict:
    if isinstance(entry, dict):
        return entry
    p = Path(entry)
    if not p.is_absolute():
        p = base_dir / p
    try:
        return json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _csv_to_json(text: str) -> str:
    rows = list(csv.DictReader(io.StringIO(text)))
    return json.dumps(rows, indent=1) + "\n"


def _write_table(out: Path, stem: str, text: str, fmt: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / f"{stem}.json"
        path.write_text(_csv_to_json(text), newline="\n")
    else:
        path = out / f"{stem}.csv"
        path.write_text(text, newline="\n")
    return path


def _write_json(out: Path, name: str, obj) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n", newline="\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_bands(cfg: RunConfig, out: Path, fmt: str, executor=None) -> List[Path]:
    grid = sample_grid(cfg.medium, cfg.N, cfg.num_bands, cfg.J_max, executor)
    return [_write_table(out, "bands", grid.to_csv(), fmt)]


def cmd_fermi(cfg: RunConfig, out: Path, fmt: str, executor=None) -> List[Path]:
    frame = cfg.frame()
    prep = prepare(cfg.medium, cfg.lam, frame, cfg.lap, executor)
    if prep.level is None:
        header = "band,segment,point," + ",".join(f"alpha{k + 1}" for k in range(cfg.dim)) + "," + \
                 ",".join(f"grad{k + 1}" for k in range(cfg.dim)) + ",grad_dot_n,tag\n"
        text = header
    else:
        text = prep.level.to_csv()
    paths = [_write_table(out, "fermi", text, fmt)]
    paths.append(_write_table(out, "fermi_complex", complex_csv(prep.branches), fmt))
    return paths


def cmd_solve(cfg: RunConfig, out: Path, fmt: str, executor=None) -> List[Path]:
    if cfg.points.shape[0] == 0:
        raise ConfigError("solve needs eval_points")
    frame = build_frame(cfg.direction) if cfg.direction is not None else \
        (build_frame([1.0]) if cfg.dim == 1 else None)
    results = lap_solve(cfg.medium, cfg.source, cfg.lam, frame, cfg.points, cfg.lap, executor)
    diag = {"lambda": cfg.lam, "J_max": cfg.J_max, "N": cfg.N,
            "points": [dict(x=r.x, **r.diagnostics) for r in results]}
    return [_write_table(out, "solution", solution_csv(results), fmt), _write_json(out, "diagnostics.json", diag)]


def cmd_converge(cfg: RunConfig, out: Path, fmt: str, executor=None) -> List[Path]:
    ladder = cfg.ladder
    if not ladder:
        raise ConfigError("epsilon_ladder must not be empty")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("epsilon_ladder must be strictly decreasing")
    if cfg.points.shape[0] == 0:
        raise ConfigError("converge needs eval_points")
    frame = build_frame(cfg.direction) if cfg.direction is not None else \
        (build_frame([1.0]) if cfg.dim == 1 else None)
    ref = np.array([r.total for r in lap_solve(cfg.medium, cfg.source, cfg.lam, frame, cfg.points, cfg.lap,
                                               executor)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "max_abs_error"])
    for eps in ladder:
        u = damped_solve(cfg.medium, cfg.source, cfg.lam, eps, cfg.points, cfg.N_alpha, cfg.J_max)
        w.writerow([_fmt(eps), _fmt(np.max(np.abs(u - ref)))])
    return [_write_table(out, "convergence", buf.getvalue(), fmt)]


def cmd_verify(cfg: RunConfig, out: Path, fmt: str, executor=None, checks: Optional[List[str]] = None):
    from . import verify

    names = checks or cfg.checks or verify.DEFAULT_CHECKS
    unknown = [n for n in names if n not in verify.CHECKS]
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; available: {sorted(verify.CHECKS)}")
    reports = [verify.CHECKS[n]() for n in names]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "value", "tolerance", "passed"])
    for r in reports:
        w.writerow([r.name, _fmt(r.value), _fmt(r.tolerance), int(r.passed)])
    path = _write_table(out, "verify", buf.getvalue(), fmt)
    failed = [r.name for r in reports if not r.passed]
    return [path], failed


COMMANDS = {"bands": cmd_bands, "fermi": cmd_fermi, "solve": cmd_solve, "converge": cmd_converge}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lapbloch", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["bands", "fermi", "solve", "verify", "converge"])
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default="./out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (0 = one per CPU)")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--seed", type=int, default=None, help="accepted for compatibility; nothing is random")
    p.add_argument("--checks", default=None, help="comma-separated verification checks")
    return p


def _fail(code: int, exc: BaseException) -> int:
    json.dump({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = RunConfig.load(args.config)
        if args.threads < 0:
            raise ConfigError("--threads must be >= 0")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except LapBlochError as exc:
        return _fail(EXIT_CONFIG, exc)
    fmt = args.format or cfg.raw.get("format", "csv")
    out = Path(args.out if args.out != "./out" or "output" not in cfg.raw else cfg.raw["output"])
    workers = (os.cpu_count() or 1) if args.threads == 0 else args.threads
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        if args.command == "verify":
            checks = args.checks.split(",") if args.checks else None
            paths, failed = cmd_verify(cfg, out, fmt, executor, checks)
            if failed:
                return _fail(EXIT_NUMERICAL, LapBlochError(f"verification failed: {failed}"))
        else:
            paths = COMMANDS[args.command](cfg, out, fmt, executor)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (LapBlochError, np.linalg.LinAlgError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    finally:
        if executor is not None:
            executor.shutdown()
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
