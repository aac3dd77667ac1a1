"""Batch entry point.

``jumpbsde run <config.toml | manifest.json>`` runs a single solve or a
convergence study; ``jumpbsde models`` lists the built-in models.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .backward import BackwardConfig, check_admissible, initial_estimates, solve
from .condexp import DEFAULT_RIDGE
from .errors import ConfigError, JumpBSDEError
from .forward import dump_paths, euler_x0, simulate_increments
from .harness import convergence_study, write_errors_csv, write_slopes_csv
from .model import BUILTIN_MODELS, builtin_model
from .timegrid import uniform_grid

# section -> {key: (type, default)}; None default means required
_SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {"n": (int, None)},
    "study": {"n_list": (list, None), "reference_n": (int, 0)},
    "mc": {
        "paths": (int, 10_000), "seed": (int, 0), "refine_factor": (int, 8),
        "budget": (float, 0.0), "dump_paths": (str, ""),
    },
    "regress": {"degree": (int, 3), "ridge": (float, DEFAULT_RIDGE)},
    "backward": {"mode": (str, "lsmc"), "picard_tol": (float, 1e-12), "picard_max": (int, 50)},
    "oracle": {"gh_nodes": (int, 16), "mesh_nodes": (int, 401)},
    "output": {"dir": (str, "."), "wall_time": (bool, False)},
}
_MODES = ("solve", "study")


@dataclass(frozen=True)
class RunConfig:
    mode: str
    model: str
    params: dict
    settings: dict

    def get(self, section: str, key: str):
        return self.settings[section][key]

    def as_dict(self) -> dict:
        out: dict[str, Any] = {"mode": self.mode, "model": {"name": self.model, **self.params}}
        out.update({s: dict(v) for s, v in self.settings.items()})
        return out


def _coerce(section: str, key: str, value, kind):
    where = f"{section}.{key}"
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not bool and isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError("cli.run", f"{where} must be of type {kind.__name__}")
    return value


def parse_config(raw: dict) -> RunConfig:
    """Validate a parsed config document; unknown keys are errors."""
    raw = dict(raw)
    unknown = sorted(set(raw) - {"mode", "model"} - set(_SCHEMA))
    if unknown:
        raise ConfigError("cli.run", f"unknown key {unknown[0]}")
    mode = raw.pop("mode", None)
    if mode not in _MODES:
        raise ConfigError("cli.run", f"mode must be one of {_MODES}, got {mode!r}")
    model_tab = raw.pop("model", None)
    if not isinstance(model_tab, dict) or "name" not in model_tab:
        raise ConfigError("cli.run", "missing model.name")
    model_tab = dict(model_tab)
    name = model_tab.pop("name")
    if name not in BUILTIN_MODELS:
        raise ConfigError("cli.run", f"unknown model {name!r}; known: {sorted(BUILTIN_MODELS)}")
    defaults = BUILTIN_MODELS[name].defaults
    params = {}
    for key, value in model_tab.items():
        if key not in defaults:
            raise ConfigError("cli.run", f"unknown key model.{key}")
        params[key] = _coerce("model", key, value, float)

    settings = {}
    for section, keys in _SCHEMA.items():
        table = raw.pop(section, {})
        if not isinstance(table, dict):
            raise ConfigError("cli.run", f"{section} must be a table")
        unknown = set(table) - set(keys)
        if unknown:
            raise ConfigError("cli.run", f"unknown key {section}.{sorted(unknown)[0]}")
        settings[section] = {}
        for key, (kind, default) in keys.items():
            if key in table:
                settings[section][key] = _coerce(section, key, table[key], kind)
            else:
                settings[section][key] = default

    if mode == "solve":
        if settings["grid"]["n"] is None:
            raise ConfigError("cli.run", "mode = solve requires grid.n")
        settings.pop("study")
    else:
        n_list = settings["study"]["n_list"]
        if n_list is None:
            raise ConfigError("cli.run", "mode = study requires study.n_list")
        if not all(isinstance(n, int) and not isinstance(n, bool) for n in n_list):
            raise ConfigError("cli.run", "study.n_list must hold integers")
        settings.pop("grid")
    return RunConfig(mode, name, params, settings)


def load_config(path) -> RunConfig:
    """Read a TOML config or a JSON run manifest (replay)."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError("cli.run", f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix == ".json":
            doc = json.loads(text)
            if not isinstance(doc, dict) or "config" not in doc:
                raise ConfigError("cli.run", "manifest has no config section")
            raw = doc["config"]
        else:
            raw = tomllib.loads(text.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("cli.run", f"cannot parse {path}: {exc}") from None
    return parse_config(raw)


def _backward_config(cfg: RunConfig) -> BackwardConfig:
    return BackwardConfig(
        mode=cfg.get("backward", "mode"),
        degree=cfg.get("regress", "degree"),
        ridge=cfg.get("regress", "ridge"),
        picard_tol=cfg.get("backward", "picard_tol"),
        picard_max=cfg.get("backward", "picard_max"),
        gh_nodes=cfg.get("oracle", "gh_nodes"),
        mesh_nodes=cfg.get("oracle", "mesh_nodes"),
    )


def _preflight(cfg: RunConfig):
    """Build every object the run needs before any computation starts."""
    model = builtin_model(cfg.model, cfg.params)
    bcfg = _backward_config(cfg)
    M = cfg.get("mc", "paths")
    if M < 2:
        raise ConfigError("cli.run", "mc.paths must be >= 2")
    if cfg.get("mc", "refine_factor") < 1:
        raise ConfigError("cli.run", "mc.refine_factor must be >= 1")
    ns = [cfg.get("grid", "n")] if cfg.mode == "solve" else cfg.get("study", "n_list")
    grids = [uniform_grid(n, model.horizon) for n in ns]
    budget = cfg.get("mc", "budget")
    if budget > 0 and M * max(ns) ** 2 > budget:
        raise ConfigError("cli.run", f"mc.paths * n^2 = {M * max(ns) ** 2:g} exceeds mc.budget")
    for grid in grids:
        check_admissible(model, grid)
    return model, bcfg, grids


def _write_solution(path: Path, cfg: RunConfig, model, bcfg, grid) -> None:
    bundle = simulate_increments(grid, cfg.get("mc", "paths"), cfg.get("mc", "seed"), model.density)
    bundle = euler_x0(model, bundle)
    if cfg.get("mc", "dump_paths"):
        dump_paths(bundle, path / cfg.get("mc", "dump_paths"))
    est = initial_estimates(solve(model, bundle, bcfg))
    with open(path / "solution.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mode", "n", "quantity", "value", "se"])
        for q in ("Y", "Z", "U"):
            w.writerow([model.name, bcfg.mode, grid.n, q, repr(est[q][0]), repr(est[q][1])])


def write_manifest(path: Path, cfg: RunConfig) -> None:
    doc = {"version": __version__, "config": cfg.as_dict()}
    with open(path / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(config_path, output_dir: Optional[str] = None) -> int:
    """Execute a run; returns the process exit status."""
    try:
        cfg = load_config(config_path)
        if output_dir is not None:
            cfg.settings["output"]["dir"] = output_dir
        model, bcfg, grids = _preflight(cfg)
        out = Path(cfg.get("output", "dir"))
        out.mkdir(parents=True, exist_ok=True)
        if cfg.mode == "solve":
            _write_solution(out, cfg, model, bcfg, grids[0])
        else:
            report = convergence_study(
                model, [g.n for g in grids], cfg.get("mc", "paths"), cfg.get("mc", "seed"),
                bcfg.mode, refine=cfg.get("mc", "refine_factor"), config=bcfg,
                reference_n=cfg.get("study", "reference_n") or None,
                wall_time=cfg.get("output", "wall_time"),
            )
            write_errors_csv(report, out / "errors.csv")
            write_slopes_csv(report, out / "slopes.csv")
        write_manifest(out, cfg)
    except JumpBSDEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_status
    return 0


def list_models(stream=None) -> None:
    stream = stream or sys.stdout
    for name, entry in BUILTIN_MODELS.items():
        params = ", ".join(f"{k}={v:g}" for k, v in entry.defaults.items())
        print(f"{name}: {entry.doc}", file=stream)
        print(f"    parameters (float): {params}", file=stream)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="jumpbsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a solve or a convergence study")
    p_run.add_argument("config", help="TOML config or JSON run manifest")
    p_run.add_argument("--output", help="override output.dir")
    sub.add_parser("models", help="list built-in models and their parameters")
    args = parser.parse_args(argv)
    if args.command == "models":
        list_models()
        return 0
    return run(args.config, args.output)


if __name__ == "__main__":
    sys.exit(main())
