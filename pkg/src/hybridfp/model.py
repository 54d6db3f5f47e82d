"""Declarative hybrid-system description: modes, boundary taxonomy, resets.

A :class:`HybridSystem` is a set of modes (chart + grid + drift + diffusion
strength) together with one boundary condition per non-periodic face.  Guard
faces export their outgoing probability flux through a reset map to a target
face on the same or another mode; identification faces glue two modes into a
periodic whole.  Construct a system, then run :func:`validate` before
handing it to the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .geometry import ChartGeometry

__all__ = [
    "Face",
    "Reflecting",
    "Absorbing",
    "Guard",
    "ResetImage",
    "Identification",
    "ResetMap",
    "Mode",
    "HybridSystem",
    "ValidationReport",
    "validate",
]

LOW, HIGH = "low", "high"
_SHIFT_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class Face:
    """Address of one boundary face: (mode id, axis, side)."""

    mode: int
    axis: int
    side: str

    def __post_init__(self):
        if self.side not in (LOW, HIGH):
            raise ValueError(f"side must be '{LOW}' or '{HIGH}', got {self.side!r}")


@dataclass(frozen=True)
class ResetMap:
    """Guard-to-image transfer with a cell-aligned tangential shift.

    ``shift`` translates the tangential coordinate modulo its period; it must
    be an integer multiple of the tangential cell width so the discrete flux
    transfer is an exact index permutation.
    """

    source: Face
    target: Face
    shift: float = 0.0


@dataclass(frozen=True)
class Reflecting:
    """Zero total flux; Neumann condition for observables."""


@dataclass(frozen=True)
class Absorbing:
    """Density and observable vanish at the face; mass leaves the system."""


@dataclass(frozen=True)
class Guard:
    """Zero density trace; outgoing flux exported through the reset map."""

    reset: ResetMap


@dataclass(frozen=True)
class ResetImage:
    """Receives reinjected guard flux; its own outgoing component reflects."""

    reflecting: bool = True


@dataclass(frozen=True)
class Identification:
    """Periodic gluing with a partner face: fields and fluxes continuous."""

    partner: Face


BoundaryCondition = Union[Reflecting, Absorbing, Guard, ResetImage, Identification]


@dataclass(frozen=True)
class Mode:
    """One discrete mode: chart, grid, drift field, diffusion strength.

    ``drift(*coords)`` returns one array of chart-velocity components per
    axis; ``diffusion`` is half the squared noise amplitude and must be
    positive.
    """

    id: int
    geometry: ChartGeometry
    grids: tuple
    drift: Callable[..., tuple]
    diffusion: float

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    def shape(self) -> tuple:
        return tuple(g.n for g in self.grids)


@dataclass(frozen=True)
class HybridSystem:
    """Modes plus a boundary condition for every non-periodic face.

    Axes of a mode with no entry in ``boundary`` are treated as wrapped
    (fully periodic); validation requires the chart to be periodic there.
    """

    modes: tuple
    boundary: dict = field(default_factory=dict)

    def mode(self, mode_id: int) -> Mode:
        for m in self.modes:
            if m.id == mode_id:
                return m
        raise KeyError(f"no mode with id {mode_id}")

    def condition(self, face: Face):
        return self.boundary.get(face)

    def axis_wrapped(self, mode_id: int, axis: int) -> bool:
        return (
            Face(mode_id, axis, LOW) not in self.boundary
            and Face(mode_id, axis, HIGH) not in self.boundary
        )

    def faces(self):
        return list(self.boundary.keys())

    @property
    def resets(self):
        return [
            bc.reset for bc in self.boundary.values() if isinstance(bc, Guard)
        ]

    def has_absorbing(self) -> bool:
        return any(isinstance(bc, Absorbing) for bc in self.boundary.values())


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self):
        if not self.ok:
            raise ValueError(
                "invalid hybrid system:\n  - " + "\n  - ".join(self.violations)
            )


def _tangential_axis(mode: Mode, axis: int):
    if mode.dimension == 1:
        return None
    return 1 - axis


def _shift_cells(mode: Mode, axis: int, shift: float):
    """Tangential shift in whole cells, or None if not cell-aligned."""
    tan = _tangential_axis(mode, axis)
    if tan is None:
        return 0 if shift == 0.0 else None
    grid = mode.grids[tan]
    ratio = shift / grid.dx
    cells = round(ratio)
    if abs(ratio - cells) > _SHIFT_ALIGN_TOL:
        return None
    return cells % grid.n


def validate(system: HybridSystem) -> ValidationReport:
    """Check structural and numerical well-formedness; report all violations."""
    v: list = []
    ids = sorted(m.id for m in system.modes)
    if ids != list(range(1, len(system.modes) + 1)):
        v.append(f"mode ids must be 1..{len(system.modes)}, got {ids}")

    by_id = {m.id: m for m in system.modes}

    for m in system.modes:
        if len(m.grids) != m.dimension:
            v.append(f"mode {m.id}: {len(m.grids)} grids for dimension {m.dimension}")
            continue
        if not m.diffusion > 0.0:
            v.append(f"mode {m.id}: diffusion strength must be positive")
        coords = np.meshgrid(*[g.centers() for g in m.grids], indexing="ij")
        fcoords = np.meshgrid(*[g.faces() for g in m.grids], indexing="ij")
        for pts, tag in ((coords, "cell centers"), (fcoords, "faces")):
            jac = m.geometry.jacobian(*pts)
            if not np.all(jac > 0.0):
                v.append(f"mode {m.id}: volume Jacobian not positive at {tag}")
            for ax, g in enumerate(m.geometry.metric_diag(*pts)):
                if not np.all(g > 0.0):
                    v.append(f"mode {m.id}: metric coefficient axis {ax} not positive at {tag}")
            drift = m.drift(*pts)
            if len(drift) != m.dimension:
                v.append(f"mode {m.id}: drift returned {len(drift)} components")
                break
            for ax, comp in enumerate(drift):
                if not np.all(np.isfinite(comp)):
                    v.append(f"mode {m.id}: drift axis {ax} not finite at {tag}")

    for face, bc in system.boundary.items():
        if face.mode not in by_id:
            v.append(f"boundary on unknown mode {face.mode}")
            continue
        m = by_id[face.mode]
        if not 0 <= face.axis < m.dimension:
            v.append(f"mode {face.mode}: boundary on invalid axis {face.axis}")
            continue

    # every non-wrapped axis must have both sides assigned; wrapped axes
    # must be chart-periodic over the full period
    for m in system.modes:
        for ax in range(m.dimension):
            low = Face(m.id, ax, LOW) in system.boundary
            high = Face(m.id, ax, HIGH) in system.boundary
            if low != high:
                v.append(f"mode {m.id} axis {ax}: only one side has a boundary condition")
            if not low and not high:
                if not m.geometry.axis_periodic[ax]:
                    v.append(
                        f"mode {m.id} axis {ax}: unassigned face on a non-periodic chart axis"
                    )

    for face, bc in system.boundary.items():
        if face.mode not in by_id or not 0 <= face.axis < by_id[face.mode].dimension:
            continue
        if isinstance(bc, Identification):
            partner_bc = system.boundary.get(bc.partner)
            if not isinstance(partner_bc, Identification) or partner_bc.partner != face:
                v.append(f"identification at {face} is not mutual")
                continue
            if bc.partner.side == face.side:
                v.append(f"identification at {face} glues two same-side faces")
            m, pm = by_id[face.mode], by_id.get(bc.partner.mode)
            if pm is None:
                continue
            tan, ptan = _tangential_axis(m, face.axis), _tangential_axis(pm, bc.partner.axis)
            if (tan is None) != (ptan is None):
                v.append(f"identification at {face}: dimension mismatch with partner")
            elif tan is not None:
                g, pg = m.grids[tan], pm.grids[ptan]
                if g.n != pg.n or not math.isclose(g.dx, pg.dx, rel_tol=1e-12):
                    v.append(f"identification at {face}: tangential grids do not match")
            if not math.isclose(
                m.grids[face.axis].dx, pm.grids[bc.partner.axis].dx, rel_tol=1e-12
            ):
                v.append(f"identification at {face}: normal spacings differ")
        elif isinstance(bc, Guard):
            reset = bc.reset
            if reset.source != face:
                v.append(f"guard at {face}: reset source {reset.source} is not the guard face")
            target_bc = system.boundary.get(reset.target)
            if not isinstance(target_bc, (ResetImage, Identification)):
                v.append(
                    f"guard at {face}: reset target {reset.target} is not a reset "
                    f"image or identification face"
                )
            m = by_id[face.mode]
            tm = by_id.get(reset.target.mode)
            if tm is None:
                v.append(f"guard at {face}: reset target mode {reset.target.mode} unknown")
                continue
            cells = _shift_cells(m, face.axis, reset.shift)
            if cells is None:
                v.append(f"guard at {face}: shift not cell-aligned")
            tan, ttan = _tangential_axis(m, face.axis), _tangential_axis(tm, reset.target.axis)
            if (tan is None) != (ttan is None):
                v.append(f"guard at {face}: target face dimension mismatch")
            elif tan is not None:
                g, tg = m.grids[tan], tm.grids[ttan]
                if g.n != tg.n or not math.isclose(g.dx, tg.dx, rel_tol=1e-12):
                    v.append(f"guard at {face}: tangential grids of guard and image differ")
                half = 0.5 * g.span
                if abs(abs(reset.shift) - half) < _SHIFT_ALIGN_TOL and g.n % 2 != 0:
                    v.append(f"guard at {face}: half-period shift requires an even cell count")
                if not system.axis_wrapped(m.id, tan):
                    v.append(f"guard at {face}: tangential shift on a non-periodic axis")

    return ValidationReport(v)


def reset_permutation(system: HybridSystem, reset: ResetMap) -> np.ndarray:
    """Index map sending guard-face cell j to its image-face cell.

    Applying the permutation twice with a half-period shift is the identity.
    """
    m = system.mode(reset.source.mode)
    tan = _tangential_axis(m, reset.source.axis)
    if tan is None:
        return np.zeros(1, dtype=np.int64)
    n = m.grids[tan].n
    cells = _shift_cells(m, reset.source.axis, reset.shift)
    if cells is None:
        raise ValueError(f"reset shift {reset.shift} is not cell-aligned")
    return (np.arange(n) + cells) % n
