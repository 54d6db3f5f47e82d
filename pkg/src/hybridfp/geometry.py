"""Chart-level description of mode state spaces.

Each mode lives on a manifold described in a single coordinate chart with a
diagonal metric.  The chart supplies the per-axis metric coefficients, the
volume Jacobian (square root of the metric determinant), and periodicity
flags.  Two charts cover everything this package needs: a flat interval and
the 2-torus embedded in 3-space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "GridSpec",
    "ChartGeometry",
    "interval_geometry",
    "torus_geometry",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell grid on one axis: ``n`` cells covering ``[lo, hi]``."""

    n: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.n < 6:
            raise ValueError(
                f"at least 6 cells per axis are required for the 5-point "
                f"stencil with ghost layers, got n={self.n}"
            )
        if not self.hi > self.lo:
            raise ValueError(f"empty axis range [{self.lo}, {self.hi}]")

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n) + 0.5) * self.dx

    def faces(self) -> np.ndarray:
        return self.lo + np.arange(self.n + 1) * self.dx


@dataclass(frozen=True)
class ChartGeometry:
    """Diagonal-metric chart: metric coefficients, volume Jacobian, periodicity.

    ``metric_diag(*coords)`` returns one array per axis with the diagonal
    metric coefficients evaluated at the given (broadcastable) coordinate
    arrays; ``jacobian(*coords)`` returns the volume Jacobian.  Instances are
    immutable and safe to share across threads.
    """

    dimension: int
    metric_diag: Callable[..., tuple]
    jacobian: Callable[..., np.ndarray]
    axis_periodic: tuple
    params: dict = field(default_factory=dict)
    unit_metric: bool = False  # flat chart: metric identically one

    def inverse_metric_diag(self, *coords):
        return tuple(1.0 / g for g in self.metric_diag(*coords))


def interval_geometry(a: float, b: float) -> ChartGeometry:
    """Flat 1D chart on ``[a, b]``: unit metric, unit volume Jacobian.

    The outward normal sign convention is -1 at the low end and +1 at the
    high end; both boundary points carry unit face measure.
    """
    if not b > a:
        raise ValueError(f"interval requires a < b, got a={a}, b={b}")

    def metric_diag(x):
        return (np.ones_like(np.asarray(x, dtype=float)),)

    def jacobian(x):
        return np.ones_like(np.asarray(x, dtype=float))

    return ChartGeometry(
        dimension=1,
        metric_diag=metric_diag,
        jacobian=jacobian,
        axis_periodic=(False,),
        params={"a": float(a), "b": float(b)},
        unit_metric=True,
    )


def torus_geometry(major_radius: float, minor_radius: float) -> ChartGeometry:
    """Torus chart in (azimuthal, poloidal) angles.

    Axis 0 is the azimuthal angle (rotation about the vertical axis, metric
    coefficient ``(R + r*cos(pol))**2``), axis 1 the poloidal angle within
    the small circle (metric coefficient ``r**2``).  The volume Jacobian is
    ``r*(R + r*cos(pol))``, which stays positive iff R > r > 0.
    """
    R = float(major_radius)
    r = float(minor_radius)
    if not (R > r > 0.0):
        raise ValueError(
            f"torus requires major_radius > minor_radius > 0 so the volume "
            f"Jacobian never vanishes, got R={R}, r={r}"
        )

    def metric_diag(azi, pol):
        # returns read-only broadcast views; callers copy if they mutate
        azi = np.asarray(azi, dtype=float)
        pol = np.asarray(pol, dtype=float)
        shape = np.broadcast_shapes(azi.shape, pol.shape)
        ring = R + r * np.cos(pol)
        g_azi = np.broadcast_to(ring**2, shape)
        g_pol = np.broadcast_to(np.float64(r**2), shape)
        return (g_azi, g_pol)

    def jacobian(azi, pol):
        azi = np.asarray(azi, dtype=float)
        pol = np.asarray(pol, dtype=float)
        ring = r * (R + r * np.cos(pol))
        return np.broadcast_to(ring, np.broadcast_shapes(azi.shape, pol.shape))

    return ChartGeometry(
        dimension=2,
        metric_diag=metric_diag,
        jacobian=jacobian,
        axis_periodic=(True, True),
        params={"major_radius": R, "minor_radius": r},
    )


def chart_volume(geometry: ChartGeometry, grids) -> float:
    """Discrete chart volume: sum of J at cell centers times cell measure."""
    coords = np.meshgrid(*[g.centers() for g in grids], indexing="ij")
    jac = geometry.jacobian(*coords)
    cell = math.prod(g.dx for g in grids)
    return float(np.sum(jac) * cell)
