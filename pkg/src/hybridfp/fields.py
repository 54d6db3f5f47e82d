"""Cell-averaged grid functions: densities and observables, one array per mode."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import HybridSystem

__all__ = ["DensityField", "ObservableField", "cell_measures", "pairing"]


def cell_measures(system: HybridSystem):
    """Per-mode arrays of cell measures J * prod(dx): integration weights."""
    out = []
    for m in system.modes:
        coords = np.meshgrid(*[g.centers() for g in m.grids], indexing="ij")
        jac = m.geometry.jacobian(*coords)
        cell = math.prod(g.dx for g in m.grids)
        out.append(jac * cell)
    return out


@dataclass
class DensityField:
    """Mode-conditioned density, cell-averaged, per unit chart volume."""

    values: list
    time: float = 0.0

    def copy(self) -> "DensityField":
        return DensityField([v.copy() for v in self.values], self.time)

    def mass(self, system: HybridSystem) -> float:
        return float(
            sum(np.sum(v * w) for v, w in zip(self.values, cell_measures(system)))
        )

    def normalize(self, system: HybridSystem) -> "DensityField":
        total = self.mass(system)
        if total <= 0.0:
            raise ValueError("cannot normalize a field with nonpositive mass")
        return DensityField([v / total for v in self.values], self.time)


@dataclass
class ObservableField:
    """Cell-centered observable values per mode."""

    values: list
    time: float = 0.0

    def copy(self) -> "ObservableField":
        return ObservableField([v.copy() for v in self.values], self.time)

    def spread(self) -> float:
        hi = max(float(np.max(v)) for v in self.values)
        lo = min(float(np.min(v)) for v in self.values)
        return hi - lo


def pairing(density: DensityField, observable: ObservableField, system: HybridSystem) -> float:
    """Duality bracket: sum over modes of the integral of density * observable."""
    if len(density.values) != len(observable.values):
        raise ValueError("field mode counts differ")
    total = 0.0
    for v, u, w in zip(density.values, observable.values, cell_measures(system)):
        if v.shape != u.shape:
            raise ValueError(f"grid mismatch: {v.shape} vs {u.shape}")
        total += float(np.sum(v * u * w))
    return total
