"""Time integration: explicit SSP-RK3 with CFL control and implicit
backward Euler solved by matrix-free Newton-Krylov (restarted GMRES,
central-difference Jacobian-vector products).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .fields import DensityField, ObservableField
from .fv import DensityOperator
from .koopman import KoopmanOperator

__all__ = [
    "SolverConfig",
    "CFLError",
    "NewtonError",
    "GMRESStagnation",
    "NegativeDensityError",
    "cfl_estimate",
    "step_explicit",
    "step_implicit",
    "evolve_density",
    "evolve_observable",
]

CFL_FACTOR = 0.4


@dataclass(frozen=True)
class SolverConfig:
    """Nonlinear/linear solver knobs for the implicit step.

    The Jacobian-vector product is a central difference along the normalized
    direction with perturbation scale sqrt(machine epsilon) * (1 + max|v|).
    """

    newton_max_iters: int = 20
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-13
    gmres_restart: int = 30
    gmres_max_iters: int = 200
    gmres_rtol: float = 1e-8
    # a GMRES direction that misses gmres_rtol but still reduced the linear
    # residual below this factor is accepted as an inexact-Newton direction;
    # the (tight) Newton tolerance still governs the step
    gmres_accept: float = 1e-2
    negative_rel_tol: float = 1e-3

    def __post_init__(self):
        for name in ("newton_rtol", "newton_atol", "gmres_rtol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


class CFLError(RuntimeError):
    def __init__(self, dt, max_dt):
        super().__init__(
            f"explicit step dt={dt:.6g} exceeds the stability estimate "
            f"{max_dt:.6g}; reduce dt or increase the step count"
        )
        self.max_dt = max_dt


class GMRESStagnation(RuntimeError):
    pass


class NewtonError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(f"{message}; residual history {residuals}")
        self.residuals = residuals


class NegativeDensityError(RuntimeError):
    def __init__(self, step, time, minimum, tol):
        super().__init__(
            f"density fell to {minimum:.3e} (< -{tol:.1e}) at step {step}, "
            f"t={time:.6g}; the scheme does not clip, aborting"
        )
        self.step = step
        self.time = time
        self.minimum = minimum


def cfl_estimate(system_or_operator, values=None, factor: float = CFL_FACTOR) -> float:
    """Largest stable explicit step: factor * min over cells and axes of
    dx/|drift| (advection) and dx^2/(2 * diffusion * g^aa) (diffusion)."""
    op = (
        system_or_operator
        if isinstance(system_or_operator, DensityOperator)
        else DensityOperator(system_or_operator)
    )
    bound = math.inf
    for im, mode in enumerate(op.modes):
        for axis in range(mode.dimension):
            dx = mode.grids[axis].dx
            vmax = float(np.max(np.abs(op.vel_f[im][axis])))
            if vmax > 0.0:
                bound = min(bound, dx / vmax)
            gmax = float(np.max(op.ginv_f[im][axis]))
            bound = min(bound, dx * dx / (2.0 * mode.diffusion * gmax))
    return factor * bound


def step_explicit(values, rhs_fn, dt, max_dt=None):
    """One SSP-RK3 step of d(values)/dt = rhs_fn(values).

    Refuses to step when ``dt`` exceeds the supplied stability bound.
    """
    if max_dt is not None and dt > max_dt:
        raise CFLError(dt, max_dt)
    r0 = rhs_fn(values)
    v1 = [v + dt * r for v, r in zip(values, r0)]
    r1 = rhs_fn(v1)
    v2 = [0.75 * v + 0.25 * (w + dt * r) for v, w, r in zip(values, v1, r1)]
    r2 = rhs_fn(v2)
    return [v / 3.0 + (2.0 / 3.0) * (w + dt * r) for v, w, r in zip(values, v2, r2)]


def step_explicit_density(op: DensityOperator, values, dt, max_dt=None):
    """SSP-RK3 step of the density with absorbing-outflux bookkeeping.

    Returns (values_next, absorbed_increment); the increment uses the
    stage weights (1/6, 1/6, 2/3), so mass + absorbed telescopes exactly.
    """
    if max_dt is not None and dt > max_dt:
        raise CFLError(dt, max_dt)
    r0, rec0 = op.rhs(values, record=True)
    v1 = [v + dt * r for v, r in zip(values, r0)]
    r1, rec1 = op.rhs(v1, record=True)
    v2 = [0.75 * v + 0.25 * (w + dt * r) for v, w, r in zip(values, v1, r1)]
    r2, rec2 = op.rhs(v2, record=True)
    out = [v / 3.0 + (2.0 / 3.0) * (w + dt * r) for v, w, r in zip(values, v2, r2)]
    absorbed = dt * (
        rec0.absorb_rate / 6.0 + rec1.absorb_rate / 6.0 + 2.0 * rec2.absorb_rate / 3.0
    )
    return out, absorbed


@dataclass
class ImplicitStats:
    newton_iters: int = 0
    gmres_iters: int = 0
    residuals: list = field(default_factory=list)
    halved: bool = False

    def merge(self, other: "ImplicitStats"):
        self.newton_iters = max(self.newton_iters, other.newton_iters)
        self.gmres_iters += other.gmres_iters
        self.residuals.extend(other.residuals)
        self.halved = self.halved or other.halved


def _jvp_operator(rhs_vec, x, dt):
    # central difference of the rhs only; the identity part of the
    # backward-Euler Jacobian is added exactly to avoid a sqrt(eps)
    # noise floor in the matvec
    eps_scale = math.sqrt(np.finfo(float).eps) * (1.0 + float(np.max(np.abs(x))))

    def matvec(w):
        wn = float(np.linalg.norm(w))
        if wn == 0.0:
            return np.zeros_like(w)
        step = eps_scale / wn
        dp = rhs_vec(x + step * w)
        dm = rhs_vec(x - step * w)
        return w - dt * ((dp - dm) / (2.0 * step))

    return LinearOperator((x.size, x.size), matvec=matvec)


def step_implicit(x_n, rhs_vec, dt, config: SolverConfig = SolverConfig(), _retry=True):
    """Backward-Euler step: solve x - x_n - dt * rhs_vec(x) = 0 by Newton-GMRES.

    On GMRES stagnation the step is retried once as two half steps; a second
    stagnation or Newton nonconvergence raises.  Returns (x, ImplicitStats).
    """

    def residual(x):
        return x - x_n - dt * rhs_vec(x)

    stats = ImplicitStats()
    x = x_n.copy()
    r = residual(x)
    rnorm0 = float(np.linalg.norm(r))
    stats.residuals.append(rnorm0)
    tol = config.newton_rtol * rnorm0 + config.newton_atol
    outer = max(1, math.ceil(config.gmres_max_iters / config.gmres_restart))

    for _ in range(config.newton_max_iters):
        if stats.residuals[-1] <= tol:
            return x, stats
        jac = _jvp_operator(rhs_vec, x, dt)
        counter = [0]

        def _count(_):
            counter[0] += 1

        delta, info = gmres(
            jac,
            -r,
            rtol=config.gmres_rtol,
            atol=0.0,
            restart=config.gmres_restart,
            maxiter=outer,
            callback=_count,
            callback_type="pr_norm",
        )
        stats.gmres_iters += counter[0]
        if info != 0:
            # finite-difference matvecs floor the attainable linear residual;
            # a direction that still reduced it substantially is a valid
            # inexact-Newton direction (the Newton test below stays exact)
            achieved = float(np.linalg.norm(jac.matvec(delta) + r))
            if not achieved <= config.gmres_accept * float(np.linalg.norm(r)):
                if not _retry:
                    raise GMRESStagnation(
                        f"GMRES stalled at relative residual "
                        f"{achieved / max(float(np.linalg.norm(r)), 1e-300):.2e} "
                        f"(info={info})"
                    )
                half_stats = ImplicitStats(halved=True)
                x_half, s1 = step_implicit(x_n, rhs_vec, dt / 2.0, config, _retry=False)
                half_stats.merge(s1)
                x_full, s2 = step_implicit(x_half, rhs_vec, dt / 2.0, config, _retry=False)
                half_stats.merge(s2)
                half_stats.halved = True
                return x_full, half_stats
        x = x + delta
        r = residual(x)
        stats.residuals.append(float(np.linalg.norm(r)))
        stats.newton_iters += 1

    if stats.residuals[-1] <= tol:
        return x, stats
    raise NewtonError(
        f"Newton failed to converge in {config.newton_max_iters} iterations",
        stats.residuals,
    )


def step_implicit_density(
    op: DensityOperator, values, dt, config: SolverConfig, _retry=True
):
    """Backward-Euler density step with absorbing-outflux bookkeeping.

    On GMRES stagnation the step is retried once as two half steps, with
    the mass bookkeeping following the sub-steps actually taken.  Returns
    (values_next, absorbed_increment, stats, record) where the record is
    the flux bookkeeping evaluated at the accepted state.
    """

    def rhs_vec(x):
        return op.pack(op.rhs(op.unpack(x)))

    try:
        x, stats = step_implicit(op.pack(values), rhs_vec, dt, config, _retry=False)
    except GMRESStagnation:
        if not _retry:
            raise
        v1, a1, s1, _ = step_implicit_density(op, values, dt / 2.0, config, _retry=False)
        v2, a2, s2, rec = step_implicit_density(op, v1, dt / 2.0, config, _retry=False)
        s1.merge(s2)
        s1.halved = True
        return v2, a1 + a2, s1, rec
    out = op.unpack(x)
    _, rec = op.rhs(out, record=True)
    absorbed = dt * rec.absorb_rate
    return out, absorbed, stats, rec


# ---------------------------------------------------------------------------
# run loops
# ---------------------------------------------------------------------------


def _as_density_operator(system_or_op) -> DensityOperator:
    if isinstance(system_or_op, DensityOperator):
        return system_or_op
    return DensityOperator(system_or_op)


def evolve_density(
    system_or_op,
    density: DensityField,
    t_final: float,
    *,
    n_steps: int | None = None,
    dt: float | None = None,
    method: str = "implicit",
    config: SolverConfig | None = None,
    record_every: int = 1,
    on_snapshot=None,
    snapshot_every: int | None = None,
):
    """Advance a density to ``t_final``, recording the conservation ledger.

    Exactly one of ``n_steps``/``dt`` may be given (default: 500 steps).
    Returns (final DensityField, RunReport).  ``on_snapshot(step, time,
    DensityField)`` fires every ``snapshot_every`` steps (and at step 0 and
    the end) when provided.
    """
    from .diagnostics import RunReport, flux_balance_report

    op = _as_density_operator(system_or_op)
    config = config or SolverConfig()
    if method not in ("implicit", "explicit"):
        raise ValueError(f"unknown method {method!r}")
    max_dt = cfl_estimate(op) if method == "explicit" else None
    if dt is not None and n_steps is not None:
        raise ValueError("give either n_steps or dt, not both")
    if dt is not None:
        n_steps = max(1, int(round(t_final / dt)))
    elif n_steps is None:
        # default: 500 steps, or the smallest stable count for explicit runs
        n_steps = 500
        if max_dt is not None:
            n_steps = max(n_steps, math.ceil(t_final / max_dt))
    dt = t_final / n_steps
    if max_dt is not None and dt > max_dt:
        raise CFLError(dt, max_dt)

    values = [v.copy() for v in density.values]
    report = RunReport.with_modes(len(op.modes))
    absorbed = 0.0

    def _record(step, time, stats, rec):
        masses = [float(np.sum(v * w)) for v, w in zip(values, op.weights)]
        if rec is None:
            _, rec = op.rhs(values, record=True)
        bal = flux_balance_report(rec, op)
        row = {
            "step": step,
            "time": time,
            "mass_total": sum(masses),
            "absorbed_cum": absorbed,
            "reset_residual": bal.reset_residual,
            "reflecting_residual": bal.reflecting_residual,
            "identification_residual": bal.identification_residual,
            "newton_iters": 0 if stats is None else stats.newton_iters,
            "gmres_iters": 0 if stats is None else stats.gmres_iters,
        }
        for q, m in enumerate(masses, start=1):
            row[f"mass_q{q}"] = m
        report.append(**row)

    _record(0, 0.0, None, None)
    if on_snapshot is not None:
        on_snapshot(0, 0.0, DensityField([v.copy() for v in values], 0.0))

    for k in range(1, n_steps + 1):
        t = k * dt
        if method == "explicit":
            values, dabs = step_explicit_density(op, values, dt)
            stats, rec = None, None
        else:
            values, dabs, stats, rec = step_implicit_density(op, values, dt, config)
        absorbed += dabs
        vmin = min(float(np.min(v)) for v in values)
        vmax = max(float(np.max(np.abs(v))) for v in values)
        if vmin < -config.negative_rel_tol * max(vmax, 1e-300):
            raise NegativeDensityError(k, t, vmin, config.negative_rel_tol * vmax)
        if k % record_every == 0 or k == n_steps:
            _record(k, t, stats, rec)
        if on_snapshot is not None and snapshot_every and (
            k % snapshot_every == 0 or k == n_steps
        ):
            on_snapshot(k, t, DensityField([v.copy() for v in values], t))

    return DensityField(values, t_final), report


def evolve_observable(
    system_or_op,
    observable: ObservableField,
    t_final: float,
    *,
    dt: float | None = None,
    n_outer: int | None = None,
    advection: str = "upwind",
    on_outer=None,
):
    """Advance an observable to ``t_final`` with SSP-RK3 substeps under CFL.

    The horizon is divided into ``n_outer`` reporting intervals (default 1);
    each interval is integrated with an internal step at or below the CFL
    estimate (or ``dt`` if given and stable).  ``on_outer(k, time,
    ObservableField)`` fires after each interval.
    """
    if isinstance(system_or_op, KoopmanOperator):
        kop = system_or_op
        system = kop.system
    else:
        system = system_or_op
        kop = KoopmanOperator(system, advection=advection)
    bound = cfl_estimate(DensityOperator(system))
    if dt is None:
        dt = bound
    elif dt > bound:
        raise CFLError(dt, bound)
    n_outer = n_outer or 1
    values = [u.copy() for u in observable.values]
    if on_outer is not None:
        on_outer(0, 0.0, ObservableField([u.copy() for u in values], 0.0))
    t_chunk = t_final / n_outer
    for k in range(1, n_outer + 1):
        m = max(1, math.ceil(t_chunk / dt))
        h = t_chunk / m
        for _ in range(m):
            values = step_explicit(values, kop.rhs, h)
        if on_outer is not None:
            on_outer(k, k * t_chunk, ObservableField([u.copy() for u in values], k * t_chunk))
    return ObservableField(values, t_final)
