"""Particle-level oracle: Euler-Maruyama integration of the hybrid SDE.

Particles carry a mode id and chart coordinates; each step proposes an
Ito-Euler move (drift plus isotropic frame-scaled noise evaluated at the
pre-step point) and then resolves boundary events in the fixed order
periodic wrap, guard transfer, reflection, absorption.  Guard transfers
land at the reset image offset into the interior by the overshoot
distance, with the tangential shift applied.

Guard and absorbing faces are monitored at a threshold pulled into the
interior byordinarily 0.58 * sigma * sqrt(dt): an end-of-step crossing
check misses the excursions a continuous path makes beyond the face within
a step, which otherwise biases hitting statistics at O(sqrt(dt)); the
pulled threshold cancels that bias to O(dt).

Randomness comes from a counter-based generator (Philox) keyed by the
ensemble seed; normals are drawn for all particle slots each step, so
trajectories are reproducible bit for bit regardless of how the event
kernel is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
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
    validate,
)

__all__ = ["ParticleEnsemble", "em_step", "histogram_density", "mc_koopman", "sample_density"]


class EventResolutionError(RuntimeError):
    def __init__(self, indices, positions, modes):
        super().__init__(
            f"boundary event resolution did not terminate for "
            f"{len(indices)} particles (first: mode {modes[0]}, x={positions[0]}); "
            f"the time step is too large for the geometry"
        )
        self.indices = indices


@dataclass
class ParticleEnsemble:
    """Hybrid-state particle cloud with per-ensemble counter-based RNG."""

    positions: np.ndarray  # (n, 2); 1D modes use column 0
    modes: np.ndarray  # (n,) int64, 1-based mode ids
    alive: np.ndarray  # (n,) bool
    seed: int
    time: float = 0.0

    @classmethod
    def from_states(cls, system: HybridSystem, states, seed: int) -> "ParticleEnsemble":
        """Build an ensemble from (mode_id, coords) hybrid states."""
        n = len(states)
        pos = np.zeros((n, 2))
        mode = np.empty(n, dtype=np.int64)
        for i, (q, coords) in enumerate(states):
            coords = np.atleast_1d(np.asarray(coords, dtype=float))
            dim = system.mode(q).dimension
            if coords.size != dim:
                raise ValueError(f"state {i}: expected {dim} coordinates, got {coords.size}")
            pos[i, : coords.size] = coords
            mode[i] = q
        return cls(pos, mode, np.ones(n, dtype=bool), int(seed))

    @classmethod
    def replicate(cls, system: HybridSystem, mode_id: int, coords, n: int, seed: int):
        """n copies of a single hybrid state."""
        coords = np.atleast_1d(np.asarray(coords, dtype=float))
        pos = np.zeros((n, 2))
        pos[:, : coords.size] = coords
        mode = np.full(n, mode_id, dtype=np.int64)
        return cls(pos, mode, np.ones(n, dtype=bool), int(seed))

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def alive_fraction(self) -> float:
        return float(np.count_nonzero(self.alive)) / self.n


# continuity-correction constant for discretely monitored crossings
# (expected unseen excursion of a Brownian path beyond the face per step,
# in units of the per-step noise amplitude)
MONITOR_PULL = 0.5825971579390107


class _SystemTables:
    """Flat numeric descriptors of the boundary taxonomy for the event kernel."""

    def __init__(self, system: HybridSystem):
        validate(system).raise_if_invalid()
        self.system = system
        nm = len(system.modes)
        # kernel tables are 0-indexed by mode id - 1
        self.ndim = np.zeros(nm, dtype=np.int64)
        self.lo = np.zeros((nm, 2))
        self.hi = np.ones((nm, 2))
        self.wrap = np.zeros((nm, 2), dtype=np.bool_)
        self.code = np.zeros((nm, 2, 2), dtype=np.int64)
        self.tr_mode = np.zeros((nm, 2, 2), dtype=np.int64)
        self.tr_base = np.zeros((nm, 2, 2))
        self.tr_inward = np.zeros((nm, 2, 2))
        self.tr_shift = np.zeros((nm, 2, 2))
        # per-step monitoring pull = MONITOR_PULL * pull_sigma * sqrt(dt),
        # nonzero only where trajectories leave the system (guards/absorbers)
        self.pull_sigma = np.zeros((nm, 2, 2))
        for m in system.modes:
            q = m.id - 1
            self.ndim[q] = m.dimension
            for ax, grid in enumerate(m.grids):
                self.lo[q, ax] = grid.lo
                self.hi[q, ax] = grid.hi
                self.wrap[q, ax] = system.axis_wrapped(m.id, ax)
            for ax in range(m.dimension):
                for si, side in enumerate((LOW, HIGH)):
                    bc = system.condition(Face(m.id, ax, side))
                    if bc is None:
                        continue
                    if isinstance(bc, (Reflecting, ResetImage)):
                        self.code[q, ax, si] = _kernels.EVENT_REFLECT
                    elif isinstance(bc, Absorbing):
                        self.code[q, ax, si] = _kernels.EVENT_ABSORB
                        self.pull_sigma[q, ax, si] = _face_noise_amplitude(m, ax, si)
                    elif isinstance(bc, (Guard, Identification)):
                        self.code[q, ax, si] = _kernels.EVENT_TRANSFER
                        if isinstance(bc, Guard):
                            target = bc.reset.target
                            shift = bc.reset.shift
                            self.pull_sigma[q, ax, si] = _face_noise_amplitude(m, ax, si)
                        else:
                            target = bc.partner
                            shift = 0.0
                        tmode = system.mode(target.mode)
                        tgrid = tmode.grids[target.axis]
                        self.tr_mode[q, ax, si] = target.mode - 1
                        if target.side == LOW:
                            self.tr_base[q, ax, si] = tgrid.lo
                            self.tr_inward[q, ax, si] = 1.0
                        else:
                            self.tr_base[q, ax, si] = tgrid.hi
                            self.tr_inward[q, ax, si] = -1.0
                        self.tr_shift[q, ax, si] = shift

        self.noise_scale = np.array([math.sqrt(2.0 * m.diffusion) for m in system.modes])
        self.dim_max = max(m.dimension for m in system.modes)

    def apply_increments(self, system, pos, modes0, alive, dt, normals):
        """Add drift + frame-scaled noise to live particles, in place."""
        sqdt = math.sqrt(dt)
        single = len(system.modes) == 1
        for m in system.modes:
            q = m.id - 1
            if single:
                sel = None
                coords = [pos[:, ax] for ax in range(m.dimension)]
            else:
                sel = np.nonzero((modes0 == q) & alive)[0]
                if sel.size == 0:
                    continue
                coords = [pos[sel, ax] for ax in range(m.dimension)]
            drift = m.drift(*coords)
            unit = m.geometry.unit_metric
            metric = None if unit else m.geometry.metric_diag(*coords)
            amp = self.noise_scale[q] * sqdt
            for ax in range(m.dimension):
                noise = normals[:, ax] if sel is None else normals[sel, ax]
                inc = drift[ax] * dt
                if unit:
                    inc = inc + amp * noise
                else:
                    inc = inc + (amp / np.sqrt(metric[ax])) * noise
                if sel is None:
                    np.add(pos[:, ax], inc, out=pos[:, ax], where=alive)
                else:
                    pos[sel, ax] += inc


def _face_noise_amplitude(mode, axis, side_index):
    """Noise amplitude of the face-normal coordinate, averaged over the face."""
    face_coord = mode.grids[axis].lo if side_index == 0 else mode.grids[axis].hi
    if mode.dimension == 1:
        pts = (np.array([face_coord]),)
    else:
        tan = 1 - axis
        tan_pts = mode.grids[tan].centers()
        coords = [None, None]
        coords[axis] = np.full_like(tan_pts, face_coord)
        coords[tan] = tan_pts
        pts = tuple(coords)
    g = mode.geometry.metric_diag(*pts)[axis]
    return math.sqrt(2.0 * mode.diffusion) * float(np.mean(1.0 / np.sqrt(g)))


def _tables(system: HybridSystem) -> _SystemTables:
    cached = getattr(system, "_mc_tables", None)
    if cached is None:
        cached = _SystemTables(system)
        object.__setattr__(system, "_mc_tables", cached)
    return cached


def _scratch_zeros(ensemble: ParticleEnsemble) -> np.ndarray:
    # single-mode systems: the kernel-facing 0-based mode array is all zeros
    # and transfers cannot change it, so one cached buffer serves every step
    buf = getattr(ensemble, "_zero_modes", None)
    if buf is None or buf.shape[0] != ensemble.n:
        buf = np.zeros(ensemble.n, dtype=np.int64)
        ensemble._zero_modes = buf
    return buf


def em_step(ensemble: ParticleEnsemble, system: HybridSystem, dt: float,
            rng: np.random.Generator) -> ParticleEnsemble:
    """Advance the ensemble one Euler-Maruyama step in place.

    Normals are drawn for every particle slot (dead ones included) to keep
    per-particle streams aligned across the run.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    tab = _tables(system)
    pos, mode, alive = ensemble.positions, ensemble.modes, ensemble.alive
    single = len(system.modes) == 1
    if single:
        modes0 = _scratch_zeros(ensemble)
    else:
        modes0 = mode - 1
    normals = rng.standard_normal((pos.shape[0], tab.dim_max))
    tab.apply_increments(system, pos, modes0, alive, dt, normals)
    pull = (MONITOR_PULL * math.sqrt(dt)) * tab.pull_sigma
    fail = _kernels.resolve_events(
        pos,
        modes0,
        alive,
        tab.ndim,
        tab.lo,
        tab.hi,
        tab.wrap,
        tab.code,
        tab.tr_mode,
        tab.tr_base,
        tab.tr_inward,
        tab.tr_shift,
        pull,
    )
    if not single:
        np.add(modes0, 1, out=mode)
    if np.any(fail):
        idx = fail.nonzero()[0]
        raise EventResolutionError(idx, pos[idx], mode[idx])
    ensemble.time += dt
    return ensemble


def evolve_ensemble(ensemble: ParticleEnsemble, system: HybridSystem, t_final: float,
                    dt: float, snapshot_steps=()):
    """Run the ensemble to t_final; yields (step, ensemble) at snapshot steps."""
    n_steps = int(round(t_final / dt))
    rng = ensemble.rng()
    snaps = set(snapshot_steps)
    out = []
    for k in range(1, n_steps + 1):
        em_step(ensemble, system, dt, rng)
        if k in snaps:
            out.append((k, histogram_density(ensemble, system)))
    return out


def histogram_density(ensemble: ParticleEnsemble, system: HybridSystem) -> DensityField:
    """Cell-count density estimate: counts / (n_total * cell volume measure).

    Dead particles are excluded, so the total discrete mass equals the
    alive fraction.
    """
    fields = []
    n_total = ensemble.n
    for m in system.modes:
        shape = m.shape()
        sel = (ensemble.modes == m.id) & ensemble.alive
        counts = np.zeros(shape)
        if np.any(sel):
            idx = []
            for ax, grid in enumerate(m.grids):
                k = np.floor(
                    (ensemble.positions[sel, ax] - grid.lo) / grid.dx
                ).astype(np.int64)
                np.clip(k, 0, grid.n - 1, out=k)
                idx.append(k)
            flat = np.ravel_multi_index(idx, shape) if len(shape) > 1 else idx[0]
            counts = np.bincount(flat, minlength=math.prod(shape)).reshape(shape).astype(float)
        coords = np.meshgrid(*[g.centers() for g in m.grids], indexing="ij")
        jac = m.geometry.jacobian(*coords)
        cell = math.prod(g.dx for g in m.grids)
        fields.append(counts / (n_total * jac * cell))
    return DensityField(fields, ensemble.time)


def sample_density(system: HybridSystem, density: DensityField, n: int, seed: int) -> ParticleEnsemble:
    """Draw an ensemble from a discrete density (cell choice + uniform jitter)."""
    weights = []
    cells = []
    for mi, m in enumerate(system.modes):
        coords = np.meshgrid(*[g.centers() for g in m.grids], indexing="ij")
        jac = m.geometry.jacobian(*coords)
        cell = math.prod(g.dx for g in m.grids)
        w = (density.values[mi] * jac * cell).ravel()
        weights.append(w)
        cells.append(m)
    w_all = np.concatenate(weights)
    w_all = np.clip(w_all, 0.0, None)
    w_all /= w_all.sum()
    gen = np.random.Generator(np.random.Philox(key=seed))
    picks = gen.choice(w_all.size, size=n, p=w_all)
    pos = np.zeros((n, 2))
    mode = np.empty(n, dtype=np.int64)
    offsets = np.cumsum([0] + [w.size for w in weights])
    jitter = gen.random((n, 2))
    for mi, m in enumerate(system.modes):
        sel = (picks >= offsets[mi]) & (picks < offsets[mi + 1])
        if not np.any(sel):
            continue
        local = picks[sel] - offsets[mi]
        idx = np.unravel_index(local, m.shape()) if m.dimension > 1 else (local,)
        for ax, grid in enumerate(m.grids):
            pos[sel, ax] = grid.lo + (idx[ax] + jitter[sel, ax]) * grid.dx
        mode[sel] = m.id
    return ParticleEnsemble(pos, mode, np.ones(n, dtype=bool), int(seed))


def mc_koopman(f, mode_id: int, coords, system: HybridSystem, n: int, t_final: float,
               dt: float, seed: int):
    """Ensemble estimate of the expected observable from one initial state.

    ``f(mode_id, coords_array)`` evaluates the observable on the surviving
    particles; dead particles contribute zero (matching the absorbing
    condition).  Returns (mean, standard_error).
    """
    ens = ParticleEnsemble.replicate(system, mode_id, coords, n, seed)
    rng = ens.rng()
    n_steps = int(round(t_final / dt))
    for _ in range(n_steps):
        em_step(ens, system, dt, rng)
    samples = np.zeros(ens.n)
    for m in system.modes:
        sel = (ens.modes == m.id) & ens.alive
        if np.any(sel):
            samples[sel] = f(m.id, ens.positions[sel, : m.dimension])
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(ens.n))
    return mean, se
