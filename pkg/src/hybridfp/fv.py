"""Conservative finite-volume discretization of the density evolution.

Fluxes are assembled face by face: WENO5 upwind interface states for the
advective part, central differences for the diffusive part, both scaled by
the face-centered volume Jacobian and inverse metric.  Boundary conditions
enter through ghost layers and face-flux overrides; guard faces export
their outgoing flux, which is reinjected at the reset image as an exact
index permutation, so total mass telescopes to zero (minus absorbing
outflux) in exact arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import axis_flux, weno5_pair
from .fields import DensityField
from .model import (
    HIGH,
    LOW,
    Absorbing,
    Face,
    Guard,
    HybridSystem,
    Identification,
    Reflecting,
    ResetImage,
    reset_permutation,
    validate,
)

__all__ = [
    "weno5_reconstruct",
    "advective_face_flux",
    "diffusive_face_flux",
    "DensityOperator",
    "FluxRecord",
]

NG = _kernels.NGHOST


def weno5_reconstruct(cells) -> float:
    """Left-biased WENO5 interface value at the high face of the center cell.

    ``cells`` holds five consecutive cell averages; the returned value is the
    reconstruction at the face between the third and fourth entries.  The
    right-biased mirror is obtained by reversing the stencil.
    """
    w = np.asarray(cells, dtype=float)
    if w.shape != (5,):
        raise ValueError(f"expected five cell averages, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("stencil contains non-finite values")
    ve = np.empty((8, 1))
    ve[0:5, 0] = w
    ve[5:, 0] = w[4]
    vl, _ = weno5_pair(ve)
    return float(vl[0, 0])


def advective_face_flux(v_left, v_right, velocity, jac_face) -> float:
    """Upwind advective flux: Jacobian times velocity times the upwind state."""
    if velocity > 0.0:
        return jac_face * velocity * v_left
    if velocity < 0.0:
        return jac_face * velocity * v_right
    return 0.0


def diffusive_face_flux(v_lo, v_hi, dx, diffusion, jac_face, ginv_face) -> float:
    """Central diffusive flux across a face between two adjacent cells."""
    if not dx > 0.0:
        raise ValueError("dx must be positive")
    if not diffusion > 0.0:
        raise ValueError("diffusion strength must be positive")
    return -diffusion * jac_face * ginv_face * (v_hi - v_lo) / dx


@dataclass
class FluxRecord:
    """Face fluxes and boundary bookkeeping from one rhs evaluation.

    Flux arrays are stored axis-first (faces along the leading dimension).
    Export/absorb vectors are outward-signed per tangential cell; import
    vectors live in image-face index space.
    """

    flux: dict = field(default_factory=dict)
    exports: dict = field(default_factory=dict)
    imports: dict = field(default_factory=dict)
    absorb: dict = field(default_factory=dict)
    absorb_rate: float = 0.0


class _AxisClosure:
    """Precomputed ghost-fill and face actions for one (mode, axis)."""

    __slots__ = (
        "mode_index",
        "axis",
        "n",
        "m",
        "dx",
        "wrapped",
        "low",
        "high",
        "tan_measure",
    )

    def __init__(self):
        self.low = None
        self.high = None


class _FaceAction:
    __slots__ = (
        "kind",
        "face",
        "partner_index",
        "partner_axis",
        "partner_side",
        "perm",
        "target",
    )

    def __init__(self, kind, face):
        self.kind = kind
        self.face = face
        self.partner_index = None
        self.partner_axis = None
        self.partner_side = None
        self.perm = None
        self.target = None


class DensityOperator:
    """Discrete forward-density generator for a validated hybrid system.

    ``rhs`` maps per-mode cell-average arrays to their time derivative; with
    ``record=True`` it also returns the :class:`FluxRecord` used by the
    diagnostics.  Instances precompute all face-centered coefficients, so
    repeated evaluations only assemble ghosts and fluxes.
    """

    def __init__(self, system: HybridSystem):
        validate(system).raise_if_invalid()
        self.system = system
        self.modes = system.modes
        self._index = {m.id: i for i, m in enumerate(system.modes)}
        self.shapes = [m.shape() for m in system.modes]
        self._work_shapes = [s if len(s) == 2 else (s[0], 1) for s in self.shapes]

        self.jac_c = []
        self.weights = []  # J * prod(dx), natural layout
        self.vel_f = []
        self.jac_f = []
        self.ginv_f = []
        self.closures = []

        for im, mode in enumerate(system.modes):
            dim = mode.dimension
            grids = mode.grids
            centers = [g.centers() for g in grids]
            cc = np.meshgrid(*centers, indexing="ij")
            jac = mode.geometry.jacobian(*cc)
            jac = jac.reshape(self._work_shapes[im])
            if not np.all(jac > 0.0):
                raise ValueError(f"mode {mode.id}: volume Jacobian not positive on grid")
            self.jac_c.append(jac)
            cell = math.prod(g.dx for g in grids)
            self.weights.append((jac * cell).reshape(self.shapes[im]))

            vel_axes, jac_axes, ginv_axes, clos_axes = [], [], [], []
            for axis in range(dim):
                coords = []
                for a in range(dim):
                    pts = grids[a].faces() if a == axis else grids[a].centers()
                    coords.append(pts)
                if dim == 1:
                    mesh = (coords[0][:, None],)
                elif axis == 0:
                    mesh = (coords[0][:, None], coords[1][None, :])
                else:
                    # axis-first layout: leading index runs along this axis
                    mesh = (coords[0][None, :], coords[1][:, None])
                jf = np.ascontiguousarray(
                    np.broadcast_to(mode.geometry.jacobian(*mesh), _face_shape(self._work_shapes[im], axis)).astype(float)
                )
                gf = mode.geometry.metric_diag(*mesh)[axis]
                gf = np.ascontiguousarray(
                    np.broadcast_to(1.0 / gf, jf.shape).astype(float)
                )
                vf = mode.drift(*mesh)[axis]
                vf = np.ascontiguousarray(np.broadcast_to(vf, jf.shape).astype(float))
                if not np.all(jf > 0.0) or not np.all(gf > 0.0):
                    raise ValueError(
                        f"mode {mode.id}: geometry not positive at axis {axis} faces"
                    )
                if system.axis_wrapped(mode.id, axis):
                    # the first and last face are the same physical face
                    for arr in (jf, gf, vf):
                        arr[-1] = arr[0]
                vel_axes.append(vf)
                jac_axes.append(jf)
                ginv_axes.append(gf)
                clos_axes.append(self._build_closure(im, axis))
            self.vel_f.append(vel_axes)
            self.jac_f.append(jac_axes)
            self.ginv_f.append(ginv_axes)
            self.closures.append(clos_axes)

    # -- construction helpers -------------------------------------------

    def _build_closure(self, im, axis):
        mode = self.modes[im]
        clo = _AxisClosure()
        clo.mode_index = im
        clo.axis = axis
        n0, n1 = self._work_shapes[im]
        clo.n = n0 if axis == 0 else n1
        clo.m = n1 if axis == 0 else n0
        clo.dx = mode.grids[axis].dx
        clo.wrapped = self.system.axis_wrapped(mode.id, axis)
        if mode.dimension == 2:
            clo.tan_measure = mode.grids[1 - axis].dx
        else:
            clo.tan_measure = 1.0
        for side in (LOW, HIGH):
            face = Face(mode.id, axis, side)
            bc = self.system.condition(face)
            action = None
            if bc is not None:
                action = _FaceAction(type(bc).__name__, face)
                if isinstance(bc, Identification):
                    action.partner_index = self._index[bc.partner.mode]
                    action.partner_axis = bc.partner.axis
                    action.partner_side = bc.partner.side
                elif isinstance(bc, Guard):
                    action.perm = reset_permutation(self.system, bc.reset)
                    action.target = bc.reset.target
                elif isinstance(bc, ResetImage) and not bc.reflecting:
                    raise NotImplementedError(
                        "reset images without reflecting own-flux are not supported"
                    )
            if side == LOW:
                clo.low = action
            else:
                clo.high = action
        return clo

    # -- field layout helpers --------------------------------------------

    def work_views(self, values):
        """Per-mode arrays reshaped to the internal 2D working layout."""
        return [v.reshape(ws) for v, ws in zip(values, self._work_shapes)]

    def pack(self, values) -> np.ndarray:
        return np.concatenate([np.asarray(v).ravel() for v in values])

    def unpack(self, vec: np.ndarray):
        out = []
        k = 0
        for s in self.shapes:
            size = math.prod(s)
            out.append(vec[k : k + size].reshape(s))
            k += size
        return out

    def mass(self, values) -> float:
        return float(sum(np.sum(v * w) for v, w in zip(values, self.weights)))

    # -- ghost assembly ----------------------------------------------------

    def _axis_view(self, work, im, axis):
        v = work[im]
        return v if axis == 0 else v.T

    def _extend(self, work, im, axis):
        v = self._axis_view(work, im, axis)
        n, m = v.shape
        ve = np.empty((n + 2 * NG, m))
        ve[NG:-NG] = v
        clo = self.closures[im][axis]
        if clo.wrapped:
            ve[:NG] = v[-NG:]
            ve[-NG:] = v[:NG]
            return ve
        self._fill_ghosts(ve, v, work, clo.low, LOW)
        self._fill_ghosts(ve, v, work, clo.high, HIGH)
        return ve

    def _fill_ghosts(self, ve, v, work, action, side):
        kind = action.kind
        if kind in ("Reflecting", "ResetImage"):
            # smooth quadratic extrapolation: the zero-flux condition is
            # enforced by the face override, so the ghosts only have to keep
            # the neighbouring reconstructions at interior accuracy (mirror
            # ghosts kink the stencil and cost an order at the wall)
            if side == LOW:
                a, b, c = v[2], v[1], v[0]
            else:
                a, b, c = v[-3], v[-2], v[-1]
            g1 = a - 3.0 * b + 3.0 * c
            g2 = b - 3.0 * c + 3.0 * g1
            g3 = c - 3.0 * g1 + 3.0 * g2
            if side == LOW:
                ve[2], ve[1], ve[0] = g1, g2, g3
            else:
                ve[-3], ve[-2], ve[-1] = g1, g2, g3
            return
        if kind in ("Absorbing", "Guard"):
            # odd reflection pins the density trace to zero at the face
            if side == LOW:
                ve[:NG] = -v[NG - 1 :: -1]
            else:
                ve[-NG:] = -v[: -NG - 1 : -1]
            return
        # Identification: continue into the partner mode's interior
        pv = self._axis_view(work, action.partner_index, action.partner_axis)
        if side == LOW:
            ve[:NG] = pv[-NG:]
        else:
            ve[-NG:] = pv[:NG]

    # -- rhs ---------------------------------------------------------------

    def rhs(self, values, record: bool = False):
        """Time derivative of the density plus optional flux bookkeeping."""
        work = self.work_views(values)
        fluxes = {}
        rec = FluxRecord() if record else None
        guards = []
        idents = []
        absorb_rate = 0.0

        for im, mode in enumerate(self.modes):
            for axis in range(mode.dimension):
                clo = self.closures[im][axis]
                ve = self._extend(work, im, axis)
                F = axis_flux(
                    ve,
                    self.vel_f[im][axis],
                    self.jac_f[im][axis],
                    self.ginv_f[im][axis],
                    mode.diffusion,
                    clo.dx,
                )
                for action, row, sign in (
                    (clo.low, 0, -1.0),
                    (clo.high, clo.n, 1.0),
                ):
                    if action is None:
                        continue
                    kind = action.kind
                    if kind in ("Reflecting", "ResetImage"):
                        F[row, :] = 0.0
                    elif kind == "Absorbing":
                        outward = sign * F[row, :]
                        absorb_rate += float(np.sum(outward)) * clo.tan_measure
                        if record:
                            rec.absorb[action.face] = outward.copy()
                    elif kind == "Guard":
                        guards.append((action, sign * F[row, :].copy()))
                    elif kind == "Identification":
                        idents.append((action, im, axis, row))
                fluxes[(im, axis)] = F

        # glue identified faces: both sides carry the bitwise-identical flux
        for action, im, axis, row in idents:
            if action.face.side != LOW:
                continue
            pim = action.partner_index
            pax = action.partner_axis
            pF = fluxes[(pim, pax)]
            prow = self.closures[pim][pax].n if action.partner_side == HIGH else 0
            fluxes[(im, axis)][row, :] = pF[prow, :]

        # reinject guard exports at their reset images (exact permutation);
        # landings are summed per image face and applied once
        landings = {}
        for action, outward in guards:
            if record:
                rec.exports[action.face] = outward.copy()
            target = action.target
            tim = self._index[target.mode]
            inflow = np.zeros(fluxes[(tim, target.axis)].shape[1])
            inflow[action.perm] = outward
            if target in landings:
                landings[target] = landings[target] + inflow
            else:
                landings[target] = inflow
        for target, inflow in landings.items():
            tim = self._index[target.mode]
            tF = fluxes[(tim, target.axis)]
            trow = self.closures[tim][target.axis].n if target.side == HIGH else 0
            if target.side == HIGH:
                tF[trow, :] -= inflow
            else:
                tF[trow, :] += inflow
            if record:
                rec.imports[target] = inflow

        out = []
        for im, mode in enumerate(self.modes):
            acc = np.zeros(self._work_shapes[im])
            for axis in range(mode.dimension):
                F = fluxes[(im, axis)]
                d = (F[1:] - F[:-1]) / self.closures[im][axis].dx
                acc -= d if axis == 0 else d.T
            acc /= self.jac_c[im]
            out.append(acc.reshape(self.shapes[im]))

        if record:
            rec.flux = fluxes
            rec.absorb_rate = absorb_rate
            return out, rec
        return out

    def rhs_field(self, density: DensityField, record: bool = False):
        res = self.rhs(density.values, record=record)
        if record:
            out, rec = res
            return DensityField(out, density.time), rec
        return DensityField(res, density.time)


def _face_shape(work_shape, axis):
    n0, n1 = work_shape
    if axis == 0:
        return (n0 + 1, n1)
    return (n1 + 1, n0)
