"""Command line entry point: ``fdx run <experiment> [--config PATH] --out DIR [--seed N]``.

Exit status: 0 when every assertion of the experiment holds, 1 for usage or
configuration errors, 2 when an assertion fails, 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import REGISTRY, ExperimentConfig, ExperimentResult, Lab
from .io import write_csv, write_json

__all__ = ["ConfigError", "parse_config", "load_config", "run", "main", "EXPERIMENTS"]

log = logging.getLogger("fdx")

EXPERIMENTS = tuple(REGISTRY) + ("all",)
EXIT_OK, EXIT_USAGE, EXIT_ASSERT, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _defaults() -> dict:
    return {f.name: getattr(ExperimentConfig(), f.name) for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            items = [x for x in raw.replace(",", " ").split() if x]
            if not items:
                raise ValueError("empty list")
            return tuple(float(x) for x in items)
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        kind = "list of numbers" if isinstance(default, tuple) else type(default).__name__
        raise ConfigError(f"{where}: value {raw!r} for '{key}' is not a valid {kind} ({exc})") from None


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    defaults = _defaults()
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        where = f"{source}:{lineno}"
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value', got {body!r}")
        key, value = (p.strip() for p in body.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{where}: unknown key '{key}' (known: {', '.join(sorted(defaults))})")
        if key in out:
            raise ConfigError(f"{where}: duplicate key '{key}'")
        out[key] = _coerce(key, value, defaults[key], where)
    return out


def load_config(path: str | None, seed: int | None = None, environ=None) -> ExperimentConfig:
    """Defaults, then the config file, then ``FDX_<KEY>`` variables, then ``--seed``."""
    environ = os.environ if environ is None else environ
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(parse_config(text, str(path)))
    defaults = _defaults()
    for key, default in defaults.items():
        env = f"FDX_{key.upper()}"
        if env in environ:
            values[key] = _coerce(key, environ[env], default, f"environment {env}")
    if seed is not None:
        values["seed"] = seed
    try:
        return replace(ExperimentConfig(), **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_outputs(result: ExperimentResult, out: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_json(out / "report.json", {"experiment": result.name, "passed": result.passed,
                                              "report": result.report})]
    for name, (header, rows) in sorted(result.curves.items()):
        paths.append(write_csv(out / f"{name}.csv", header, rows))
    return [str(p) for p in paths]


def _run_one(name: str, cfg: ExperimentConfig, lab: Lab, out: Path) -> tuple[int, dict]:
    t0 = time.perf_counter()
    try:
        result = REGISTRY[name](cfg, lab)
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        log.error("%s: numerical failure: %s", name, exc)
        entry = {"experiment": name, "status": "numerical-failure", "error": str(exc),
                 "outputs": [], "wall_time": time.perf_counter() - t0}
        return EXIT_NUMERIC, entry
    outputs = _write_outputs(result, out)
    status = EXIT_OK if result.passed else EXIT_ASSERT
    log.info("%s: %s", name, "pass" if result.passed else "FAIL")
    return status, {"experiment": name, "status": "pass" if result.passed else "assertion-failure",
                    "outputs": outputs, "wall_time": time.perf_counter() - t0}


def run(experiment: str, config_path: str | None, out_dir, seed: int | None = None) -> int:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{experiment}' (choose from: {', '.join(EXPERIMENTS)})")
    cfg = load_config(config_path, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    lab = Lab(cfg)
    names = list(REGISTRY) if experiment == "all" else [experiment]
    codes, runs = [], []
    for name in names:
        target = out / name if experiment == "all" else out
        code, entry = _run_one(name, cfg, lab, target)
        codes.append(code)
        runs.append(entry)
    manifest = {
        "experiment": experiment,
        "config": cfg.to_json(),
        "seed": cfg.seed,
        "version": __version__,
        "runs": runs,
        "outputs": [p for r in runs for p in r["outputs"]],
        "wall_time": time.perf_counter() - t0,
    }
    manifest_path = write_json(out / "manifest.json", manifest)
    missing = [p for p in manifest["outputs"] if not Path(p).exists()]
    if missing:
        raise RuntimeError(f"manifest lists missing outputs: {missing}")
    log.info("manifest written to %s", manifest_path)
    return max(codes)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdx", description="Fast-diffusion convergence-rate experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment and write CSV/JSON outputs")
    r.add_argument("experiment", help=f"one of: {', '.join(EXPERIMENTS)}")
    r.add_argument("--config", default=None, help="flat 'key = value' config file (defaults if omitted)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args.experiment, args.config, args.out, args.seed)
    except ConfigError as exc:
        print(f"fdx: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
