"""Command-line front end: scenario runs with CSV outputs and a manifest.

A run evolves the density (and the observable alongside it), writing
snapshot grids, a mass ledger, a flux-balance ledger, optional Monte-Carlo
histograms, and a manifest of every resolved parameter.  The manifest uses
the same ``key = value`` grammar the ``--config`` option accepts, so a run
can be reproduced bit for bit with ``--config <out>/manifest.txt``.
"""

from __future__ import annotations

import argparse
import sys
import time as _time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .diagnostics import RunReport
from .fv import DensityOperator
from .montecarlo import em_step, histogram_density, sample_density
from .scenarios import SCENARIO_NAMES, builtin_scenario
from .stepping import (
    CFLError,
    NegativeDensityError,
    NewtonError,
    evolve_density,
    evolve_observable,
)

__all__ = ["RunConfig", "parse_config", "resolve_config", "run", "main"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Fully resolved run parameters."""

    scenario: str = ""
    grid_n: int | None = None
    grid_n_azimuth: int | None = None
    grid_n_poloidal: int | None = None
    nt: int | None = None
    dt: float | None = None
    t_final: float | None = None
    method: str | None = None
    diffusion_strength: float | None = None
    mc_n: int = 0
    seed: int = 0
    out_dir: str | None = None
    stride: int | None = None


# config-file key -> (RunConfig attribute, type)
_KEYS = {
    "scenario": ("scenario", str),
    "grid.n": ("grid_n", int),
    "grid.n_azimuth": ("grid_n_azimuth", int),
    "grid.n_poloidal": ("grid_n_poloidal", int),
    "time.nt": ("nt", int),
    "time.dt": ("dt", float),
    "time.t_final": ("t_final", float),
    "method": ("method", str),
    "diffusion.strength": ("diffusion_strength", float),
    "diffusion.h": ("diffusion_strength", float),
    "mc.n": ("mc_n", int),
    "seed": ("seed", int),
    "output.dir": ("out_dir", str),
    "output.stride": ("stride", int),
}


def _parse_value(raw: str, line_no: int):
    raw = raw.strip()
    if not raw:
        raise ConfigError(f"line {line_no}: empty value")
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config(text: str) -> dict:
    """Parse the flat ``key = value`` grammar into typed settings.

    Comments start with ``#``; keys are dotted paths; values are integers,
    decimals, booleans, or quoted strings.  Unknown keys and type
    mismatches raise :class:`ConfigError` with the line number.
    """
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        canonical = key.lower() if key.lower() in _KEYS else key
        if canonical not in _KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        attr, typ = _KEYS[canonical]
        value = _parse_value(raw, line_no)
        if typ is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(
                    f"line {line_no}: {key} expects an integer, got {value!r}"
                )
        elif typ is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(
                    f"line {line_no}: {key} expects a number, got {value!r}"
                )
            value = float(value)
        elif typ is str and not isinstance(value, str):
            raise ConfigError(f"line {line_no}: {key} expects a string, got {value!r}")
        out[attr] = value
    return out


def resolve_config(args) -> RunConfig:
    """Merge CLI flags over config-file settings into a RunConfig."""
    cfg = RunConfig()
    if args.config:
        text = Path(args.config).read_text()
        for attr, value in parse_config(text).items():
            setattr(cfg, attr, value)
    overrides = {
        "scenario": args.scenario,
        "nt": args.nt,
        "dt": args.dt,
        "t_final": args.t_final,
        "method": args.method,
        "mc_n": args.mc,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "stride": args.stride,
    }
    for attr, value in overrides.items():
        if value is not None:
            setattr(cfg, attr, value)
    if not cfg.scenario:
        raise ConfigError("no scenario selected (use --scenario or a config file)")
    if cfg.scenario not in SCENARIO_NAMES:
        raise ConfigError(
            f"unknown scenario {cfg.scenario!r}; choose from {', '.join(SCENARIO_NAMES)}"
        )
    if cfg.nt is not None and cfg.dt is not None:
        raise ConfigError("give time.nt or time.dt, not both")
    return cfg


def _build_scenario(cfg: RunConfig):
    nt = cfg.nt
    if nt is None and cfg.dt is not None:
        t_final = cfg.t_final
        if t_final is None:
            t_final = 3.0 if cfg.scenario == "torus_two_mode" else 2.5
        nt = max(1, int(round(t_final / cfg.dt)))
    sc = builtin_scenario(
        cfg.scenario,
        n=cfg.grid_n,
        n_azimuth=cfg.grid_n_azimuth,
        n_poloidal=cfg.grid_n_poloidal,
        t_final=cfg.t_final,
        n_steps=nt,
        method=cfg.method,
        diffusion=cfg.diffusion_strength,
    )
    return sc


def _resolve_stride(cfg: RunConfig, n_steps: int) -> int:
    stride = cfg.stride
    if stride is None:
        stride = max(1, n_steps // 50)
    if stride < 1 or n_steps % stride != 0:
        raise ConfigError(
            f"output stride {stride} must be positive and divide the step count {n_steps}"
        )
    return stride


def _write_grid_csv(path: Path, scenario_name: str, mode, mode_id: int, step: int,
                    time: float, values: np.ndarray):
    header = [
        f"scenario={scenario_name}",
        f"mode={mode_id}",
        f"step={step}",
        f"time={time!r}",
    ]
    for ax, grid in enumerate(mode.grids):
        header.append(f"axis{ax}_lo={grid.lo!r}")
        header.append(f"axis{ax}_hi={grid.hi!r}")
        header.append(f"axis{ax}_n={grid.n}")
    arr = values[:, None] if values.ndim == 1 else values
    lines = [",".join(header)]
    for row in arr:
        lines.append(",".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n")


def read_grid_csv(path) -> tuple:
    """Parse a snapshot CSV back into (metadata dict, array)."""
    lines = Path(path).read_text().strip().splitlines()
    meta = {}
    for item in lines[0].split(","):
        k, v = item.split("=", 1)
        meta[k] = v
    rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
    arr = np.array(rows)
    if "axis1_n" not in meta:
        arr = arr[:, 0]
    return meta, arr


def _write_manifest(path: Path, cfg: RunConfig, sc, stride: int):
    lines = [
        f"# run manifest, written by hybridfp {__version__}",
        f"# numpy {np.__version__}, kernel backend {_kernels.backend_name()}",
        f'scenario = "{sc.name}"',
        f"time.nt = {sc.n_steps}",
        f"time.t_final = {sc.t_final!r}",
        f'method = "{sc.method}"',
        f"seed = {cfg.seed}",
        f"mc.n = {cfg.mc_n}",
        f"output.stride = {stride}",
    ]
    if sc.name == "torus_two_mode":
        lines.append(f"grid.n_azimuth = {sum(m.grids[0].n for m in sc.system.modes)}")
        lines.append(f"grid.n_poloidal = {sc.system.modes[0].grids[1].n}")
    else:
        lines.append(f"grid.n = {sc.system.modes[0].grids[0].n}")
    lines.append(f"diffusion.strength = {sc.system.modes[0].diffusion!r}")
    path.write_text("\n".join(lines) + "\n")


def run(cfg: RunConfig) -> Path:
    """Execute one configured run; returns the output directory."""
    sc = _build_scenario(cfg)
    stride = _resolve_stride(cfg, sc.n_steps)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
    else:
        out = Path(f"runs/{sc.name}-{_time.strftime('%Y%m%d-%H%M%S')}")
    out.mkdir(parents=True, exist_ok=True)

    op = DensityOperator(sc.system)

    def density_snapshot(step, t, field):
        for mi, m in enumerate(sc.system.modes):
            _write_grid_csv(
                out / f"density_q{m.id}_t{step}.csv",
                sc.name, m, m.id, step, t, field.values[mi],
            )

    density_final, report = evolve_density(
        op,
        sc.density0,
        sc.t_final,
        n_steps=sc.n_steps,
        method=sc.method,
        on_snapshot=density_snapshot,
        snapshot_every=stride,
    )

    def observable_snapshot(k, t, field):
        step = k * stride
        for mi, m in enumerate(sc.system.modes):
            _write_grid_csv(
                out / f"observable_q{m.id}_t{step}.csv",
                sc.name, m, m.id, step, t, field.values[mi],
            )

    evolve_observable(
        sc.system,
        sc.observable0,
        sc.t_final,
        n_outer=sc.n_steps // stride,
        on_outer=observable_snapshot,
    )

    mc_mass = None
    if cfg.mc_n > 0:
        mc_mass = _run_monte_carlo(cfg, sc, out, stride)

    _write_mass_csv(out / "mass.csv", report, len(sc.system.modes), mc_mass, stride)
    _write_fluxbalance_csv(out / "fluxbalance.csv", report)
    _write_manifest(out / "manifest.txt", cfg, sc, stride)
    return out


def _run_monte_carlo(cfg: RunConfig, sc, out: Path, stride: int):
    ens = sample_density(sc.system, sc.density0, cfg.mc_n, cfg.seed)
    rng = ens.rng()
    dt = sc.dt
    alive = {0: 1.0}
    for k in range(1, sc.n_steps + 1):
        em_step(ens, sc.system, dt, rng)
        if k % stride == 0 or k == sc.n_steps:
            alive[k] = ens.alive_fraction()
            hist = histogram_density(ens, sc.system)
            for mi, m in enumerate(sc.system.modes):
                _write_grid_csv(
                    out / f"mc_density_q{m.id}_t{k}.csv",
                    sc.name, m, m.id, k, k * dt, hist.values[mi],
                )
    return alive


def _write_mass_csv(path: Path, report: RunReport, n_modes: int, mc_mass, stride: int):
    cols = ["step", "time"] + [f"mass_q{q}" for q in range(1, n_modes + 1)]
    cols += ["mass_total", "absorbed_cum"]
    if mc_mass is not None:
        cols.append("mc_mass_total")
    lines = [",".join(cols)]
    for row in report.rows:
        get = dict(zip(report.columns, row))
        items = [str(get["step"]), repr(get["time"])]
        items += [repr(get[f"mass_q{q}"]) for q in range(1, n_modes + 1)]
        items += [repr(get["mass_total"]), repr(get["absorbed_cum"])]
        if mc_mass is not None:
            frac = mc_mass.get(get["step"])
            items.append("" if frac is None else repr(frac))
        lines.append(",".join(items))
    path.write_text("\n".join(lines) + "\n")


def _write_fluxbalance_csv(path: Path, report: RunReport):
    cols = ["step", "time", "reset_residual", "reflecting_residual",
            "identification_residual"]
    lines = [",".join(cols)]
    for row in report.rows:
        get = dict(zip(report.columns, row))
        lines.append(
            ",".join(
                [str(get["step"]), repr(get["time"]), repr(get["reset_residual"]),
                 repr(get["reflecting_residual"]), repr(get["identification_residual"])]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hybridfp",
        description="Propagate densities and observables for guard-reset "
        "stochastic hybrid systems.",
    )
    p.add_argument("--scenario", choices=SCENARIO_NAMES, help="built-in scenario name")
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--out-dir", help="output directory (default: runs/<scenario>-<timestamp>)")
    p.add_argument("--nt", type=int, help="number of time steps")
    p.add_argument("--dt", type=float, help="time step (alternative to --nt)")
    p.add_argument("--t-final", type=float, help="final time")
    p.add_argument("--method", choices=("explicit", "implicit"), help="time integrator")
    p.add_argument("--mc", type=int, help="Monte-Carlo particle count (0 disables)")
    p.add_argument("--seed", type=int, help="RNG seed for the particle oracle")
    p.add_argument("--stride", type=int, help="snapshot stride in steps")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CFLError, NewtonError, NegativeDensityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"run complete: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
