"""Built-in benchmark scenarios with their standard parameters.

Four systems: an interval with both ends reflecting, the same interval with
an absorbing right end, the same interval with a guard at the right end
resetting to the left end, and a two-mode torus whose modes are glued at
one interface and coupled by half-turn resets at the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import DensityField, ObservableField
from .geometry import GridSpec, interval_geometry, torus_geometry
from .model import (
    HIGH,
    LOW,
    Absorbing,
    Face,
    Guard,
    HybridSystem,
    Identification,
    Mode,
    Reflecting,
    ResetImage,
    ResetMap,
)

__all__ = ["Scenario", "builtin_scenario", "SCENARIO_NAMES", "gaussian_profile"]

SCENARIO_NAMES = ("ex1_reflecting", "ex2_absorbing", "ex3_reset", "torus_two_mode")

# interval family: drift -gamma*(x - pull_center) on [0, 2]
_INTERVAL = dict(lo=0.0, hi=2.0, pull_center=3.0, gamma=1.0, diffusion=0.5)
_DENSITY_INIT = dict(mean=0.75, sigma=0.20)
_OBSERVABLE_INIT = dict(mean=1.25, sigma=0.20)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Scenario:
    """A validated system plus initial fields and run parameters."""

    name: str
    system: HybridSystem
    density0: DensityField
    observable0: ObservableField
    t_final: float
    n_steps: int
    method: str = "implicit"

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps


def gaussian_profile(x, mean, sigma, period=None, wraps=3):
    """Normal density formula, optionally wrapped over +-``wraps`` periods."""
    x = np.asarray(x, dtype=float)
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    if period is None:
        return norm * np.exp(-0.5 * ((x - mean) / sigma) ** 2)
    out = np.zeros_like(x)
    for k in range(-wraps, wraps + 1):
        out += norm * np.exp(-0.5 * ((x - mean + k * period) / sigma) ** 2)
    return out


def _interval_mode(n, diffusion):
    p = _INTERVAL
    geo = interval_geometry(p["lo"], p["hi"])
    grid = GridSpec(n, p["lo"], p["hi"])
    gamma, center = p["gamma"], p["pull_center"]

    def drift(x):
        return (-gamma * (np.asarray(x, dtype=float) - center),)

    return Mode(id=1, geometry=geo, grids=(grid,), drift=drift, diffusion=diffusion)


def _interval_scenario(name, n, t_final, n_steps, method, diffusion):
    mode = _interval_mode(n, diffusion)
    low, high = Face(1, 0, LOW), Face(1, 0, HIGH)
    if name == "ex1_reflecting":
        boundary = {low: Reflecting(), high: Reflecting()}
    elif name == "ex2_absorbing":
        boundary = {low: Reflecting(), high: Absorbing()}
    else:  # ex3_reset
        reset = ResetMap(source=high, target=low, shift=0.0)
        boundary = {low: ResetImage(reflecting=True), high: Guard(reset)}
    system = HybridSystem(modes=(mode,), boundary=boundary)

    x = mode.grids[0].centers()
    v0 = gaussian_profile(x, **_DENSITY_INIT)
    u0 = gaussian_profile(x, **_OBSERVABLE_INIT)
    density0 = DensityField([v0]).normalize(system)
    observable0 = ObservableField([u0.copy()])
    return Scenario(name, system, density0, observable0, t_final, n_steps, method)


def _torus_drift():
    def drift(azi, pol):
        azi = np.asarray(azi, dtype=float)
        pol = np.asarray(pol, dtype=float)
        shape = np.broadcast_shapes(azi.shape, pol.shape)
        swirl = -6.0 * np.sin(pol - azi)
        return (
            np.broadcast_to(np.float64(3.0), shape),
            np.broadcast_to(swirl, shape),
        )

    return drift


def _torus_scenario(n_azimuth, n_poloidal, t_final, n_steps, method, diffusion):
    if n_azimuth % 2 != 0:
        raise ValueError("azimuthal cell count must be even (two equal half-tori)")
    geo = torus_geometry(2.0, 1.0)
    half = n_azimuth // 2
    drift = _torus_drift()
    grid_pol = GridSpec(n_poloidal, 0.0, TWO_PI)
    mode1 = Mode(
        id=1,
        geometry=geo,
        grids=(GridSpec(half, 0.0, math.pi), grid_pol),
        drift=drift,
        diffusion=diffusion,
    )
    mode2 = Mode(
        id=2,
        geometry=geo,
        grids=(GridSpec(half, math.pi, TWO_PI), grid_pol),
        drift=drift,
        diffusion=diffusion,
    )

    seam1, guard1 = Face(1, 0, LOW), Face(1, 0, HIGH)
    guard2, seam2 = Face(2, 0, LOW), Face(2, 0, HIGH)
    boundary = {
        seam1: Identification(partner=seam2),
        seam2: Identification(partner=seam1),
        guard1: Guard(ResetMap(source=guard1, target=seam1, shift=math.pi)),
        guard2: Guard(ResetMap(source=guard2, target=seam1, shift=math.pi)),
    }
    system = HybridSystem(modes=(mode1, mode2), boundary=boundary)

    uniform_pol = 1.0 / TWO_PI
    values = []
    for mode, mean in ((mode1, 0.75 * math.pi), (mode2, 1.25 * math.pi)):
        azi = mode.grids[0].centers()[:, None]
        bump = gaussian_profile(azi, mean, 0.2, period=TWO_PI)
        values.append(np.broadcast_to(bump * uniform_pol, mode.shape()).copy())
    density0 = DensityField(values).normalize(system)
    observable0 = ObservableField([np.ones(m.shape()) for m in (mode1, mode2)])
    return Scenario(
        "torus_two_mode", system, density0, observable0, t_final, n_steps, method
    )


def builtin_scenario(
    name: str,
    *,
    n: int | None = None,
    n_azimuth: int | None = None,
    n_poloidal: int | None = None,
    t_final: float | None = None,
    n_steps: int | None = None,
    method: str | None = None,
    diffusion: float | None = None,
) -> Scenario:
    """Construct a named scenario, optionally overriding grid/run parameters.

    ``n`` sizes the interval scenarios; ``n_azimuth`` (total cells around the
    large circle, split evenly between the two modes) and ``n_poloidal`` size
    the torus.
    """
    if name not in SCENARIO_NAMES:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIO_NAMES}")
    if method not in (None, "implicit", "explicit"):
        raise ValueError(f"method must be 'implicit' or 'explicit', got {method!r}")
    if diffusion is None:
        diffusion = 0.5
    if diffusion <= 0.0:
        raise ValueError("diffusion strength must be positive")

    if name == "torus_two_mode":
        return _torus_scenario(
            n_azimuth or 100,
            n_poloidal or 100,
            t_final if t_final is not None else 3.0,
            n_steps or 1000,
            method or "implicit",
            diffusion,
        )
    return _interval_scenario(
        name,
        n or 200,
        t_final if t_final is not None else 2.5,
        n_steps or 500,
        method or "implicit",
        diffusion,
    )
