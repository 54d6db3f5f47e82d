"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists twice: a numba ``@njit`` version and a vectorized numpy
version with identical arithmetic (same expression grouping, no
transcendentals inside the kernels), so the two backends agree bitwise.
The numba path is used when available; set ``HYBRIDFP_DISABLE_NUMBA=1`` to
force the numpy fallback.  ``benchmarks/benchmark_kernels.py`` compares the
two.

All array kernels operate along axis 0; callers transpose for other axes.
Face/cell layout along the working axis: cell i of n sits at extended index
i + 3 (three ghost layers per side), face k in 0..n separates cells k-1 | k.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("HYBRIDFP_DISABLE_NUMBA", "").strip().lower()
_DISABLE = _env in {"1", "true", "yes", "on"}

try:
    if _DISABLE:
        raise ImportError("numba disabled by HYBRIDFP_DISABLE_NUMBA")
    from numba import njit, prange

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised via env flag in tests
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):  # fallback decorator: plain python
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap

    prange = range

NGHOST = 3

# Jiang-Shu parameters: ideal weights, regularization, indicator power.
_D0, _D1, _D2 = 0.1, 0.6, 0.3
_WENO_EPS = 1e-6


# ---------------------------------------------------------------------------
# WENO5 reconstruction
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _weno_scalar(a, b, c, d, e):
    """Left-biased interface value at the c|d face from five cell averages."""
    b0 = (13.0 / 12.0) * (a - 2.0 * b + c) ** 2 + 0.25 * (a - 4.0 * b + 3.0 * c) ** 2
    b1 = (13.0 / 12.0) * (b - 2.0 * c + d) ** 2 + 0.25 * (b - d) ** 2
    b2 = (13.0 / 12.0) * (c - 2.0 * d + e) ** 2 + 0.25 * (3.0 * c - 4.0 * d + e) ** 2
    a0 = _D0 / (_WENO_EPS + b0) ** 2
    a1 = _D1 / (_WENO_EPS + b1) ** 2
    a2 = _D2 / (_WENO_EPS + b2) ** 2
    q0 = (2.0 * a - 7.0 * b + 11.0 * c) / 6.0
    q1 = (-b + 5.0 * c + 2.0 * d) / 6.0
    q2 = (2.0 * c + 5.0 * d - e) / 6.0
    return (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)


def _weno_combine_np(a, b, c, d, e):
    b0 = (13.0 / 12.0) * (a - 2.0 * b + c) ** 2 + 0.25 * (a - 4.0 * b + 3.0 * c) ** 2
    b1 = (13.0 / 12.0) * (b - 2.0 * c + d) ** 2 + 0.25 * (b - d) ** 2
    b2 = (13.0 / 12.0) * (c - 2.0 * d + e) ** 2 + 0.25 * (3.0 * c - 4.0 * d + e) ** 2
    a0 = _D0 / (_WENO_EPS + b0) ** 2
    a1 = _D1 / (_WENO_EPS + b1) ** 2
    a2 = _D2 / (_WENO_EPS + b2) ** 2
    q0 = (2.0 * a - 7.0 * b + 11.0 * c) / 6.0
    q1 = (-b + 5.0 * c + 2.0 * d) / 6.0
    q2 = (2.0 * c + 5.0 * d - e) / 6.0
    return (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)


@njit(cache=True)
def _weno5_pair_nb(ve):
    nf = ve.shape[0] - 2 * NGHOST + 1
    m = ve.shape[1]
    vl = np.empty((nf, m))
    vr = np.empty((nf, m))
    for k in range(nf):
        for j in range(m):
            a = ve[k, j]
            b = ve[k + 1, j]
            c = ve[k + 2, j]
            d = ve[k + 3, j]
            e = ve[k + 4, j]
            f = ve[k + 5, j]
            vl[k, j] = _weno_scalar(a, b, c, d, e)
            vr[k, j] = _weno_scalar(f, e, d, c, b)
    return vl, vr


def _weno5_pair_np(ve):
    w0 = ve[0:-5]
    w1 = ve[1:-4]
    w2 = ve[2:-3]
    w3 = ve[3:-2]
    w4 = ve[4:-1]
    w5 = ve[5:]
    vl = _weno_combine_np(w0, w1, w2, w3, w4)
    vr = _weno_combine_np(w5, w4, w3, w2, w1)
    return vl, vr


def weno5_pair(ve):
    """Left/right-biased interface states at all faces along axis 0.

    ``ve`` has shape (n + 6, m): n interior cells plus 3 ghost layers per
    side.  Returns two (n + 1, m) arrays: the left-biased and right-biased
    reconstructions at each face.
    """
    if NUMBA_ENABLED:
        return _weno5_pair_nb(ve)
    return _weno5_pair_np(ve)


# ---------------------------------------------------------------------------
# Total face flux along one axis: upwind advection + central diffusion
# ---------------------------------------------------------------------------


@njit(cache=True)
def _axis_flux_nb(ve, vel, jac_f, ginv_f, diffusion, dx):
    nf = ve.shape[0] - 2 * NGHOST + 1
    m = ve.shape[1]
    flux = np.empty((nf, m))
    for k in range(nf):
        for j in range(m):
            a = ve[k, j]
            b = ve[k + 1, j]
            c = ve[k + 2, j]
            d = ve[k + 3, j]
            e = ve[k + 4, j]
            f = ve[k + 5, j]
            w = vel[k, j]
            if w > 0.0:
                adv = jac_f[k, j] * w * _weno_scalar(a, b, c, d, e)
            elif w < 0.0:
                adv = jac_f[k, j] * w * _weno_scalar(f, e, d, c, b)
            else:
                adv = 0.0
            dif = -diffusion * jac_f[k, j] * ginv_f[k, j] * (d - c) / dx
            flux[k, j] = adv + dif
    return flux


def _axis_flux_np(ve, vel, jac_f, ginv_f, diffusion, dx):
    vl, vr = _weno5_pair_np(ve)
    up = np.where(vel > 0.0, vl, np.where(vel < 0.0, vr, 0.0))
    adv = jac_f * vel * up
    adv[vel == 0.0] = 0.0
    dif = -diffusion * jac_f * ginv_f * (ve[3:-2] - ve[2:-3]) / dx
    return adv + dif


def axis_flux(ve, vel, jac_f, ginv_f, diffusion, dx):
    """Total (advective + diffusive) flux at every face along axis 0.

    Advective part upwinds the WENO5 interface state on the sign of the
    face velocity; diffusive part is central.  All coefficient arrays are
    face-centered with shape (n + 1, m).
    """
    if NUMBA_ENABLED:
        return _axis_flux_nb(ve, vel, jac_f, ginv_f, diffusion, dx)
    return _axis_flux_np(ve, vel, jac_f, ginv_f, diffusion, dx)


# ---------------------------------------------------------------------------
# Observable (backward-equation) axis terms
# ---------------------------------------------------------------------------


@njit(cache=True)
def _observable_axis_nb(ue, vel_c, jg_f, jac_c, dx, diffusion, include_advection):
    n = ue.shape[0] - 2
    m = ue.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            um = ue[i, j]
            u0 = ue[i + 1, j]
            up = ue[i + 2, j]
            w = vel_c[i, j]
            adv = 0.0
            if include_advection:
                if w > 0.0:
                    adv = w * (up - u0) / dx
                elif w < 0.0:
                    adv = w * (u0 - um) / dx
            lb = (jg_f[i + 1, j] * (up - u0) - jg_f[i, j] * (u0 - um)) / (
                jac_c[i, j] * dx * dx
            )
            out[i, j] = adv + diffusion * lb
    return out


def _observable_axis_np(ue, vel_c, jg_f, jac_c, dx, diffusion, include_advection):
    um = ue[:-2]
    u0 = ue[1:-1]
    up = ue[2:]
    if include_advection:
        adv = np.where(
            vel_c > 0.0,
            vel_c * (up - u0) / dx,
            np.where(vel_c < 0.0, vel_c * (u0 - um) / dx, 0.0),
        )
    else:
        adv = np.zeros_like(u0)
    lb = (jg_f[1:] * (up - u0) - jg_f[:-1] * (u0 - um)) / (jac_c * dx * dx)
    return adv + diffusion * lb


def observable_axis_terms(ue, vel_c, jg_f, jac_c, dx, diffusion, include_advection=True):
    """One axis' contribution to the observable time derivative.

    First-order upwind directional derivative (forward difference when the
    drift component is positive: information arrives from where the flow
    goes) plus the conservative-form second-difference part of the
    Laplace-Beltrami operator.  ``ue`` carries one ghost layer per side,
    shape (n + 2, m); ``jg_f`` holds J * g^aa at faces, ``jac_c`` J at cells.
    """
    if NUMBA_ENABLED:
        return _observable_axis_nb(
            ue, vel_c, jg_f, jac_c, dx, diffusion, include_advection
        )
    return _observable_axis_np(ue, vel_c, jg_f, jac_c, dx, diffusion, include_advection)


# ---------------------------------------------------------------------------
# Particle event resolution (identification wrap -> guard -> reflect -> absorb)
# ---------------------------------------------------------------------------

EVENT_NONE = 0
EVENT_REFLECT = 1
EVENT_ABSORB = 2
EVENT_TRANSFER = 3

_MAX_EVENT_ITERS = 10


@njit(cache=True, parallel=True)
def _resolve_events_nb(
    pos, mode, alive, ndim, lo, hi, wrap, code, tr_mode, tr_base, tr_inward,
    tr_shift, pull
):
    n = pos.shape[0]
    fail = np.zeros(n, dtype=np.int64)
    for p in prange(n):
        if not alive[p]:
            continue
        ok = False
        for _ in range(_MAX_EVENT_ITERS):
            q = mode[p]
            dim = ndim[q]
            for ax in range(dim):
                if wrap[q, ax]:
                    span = hi[q, ax] - lo[q, ax]
                    x = pos[p, ax]
                    if x < lo[q, ax] or x >= hi[q, ax]:
                        pos[p, ax] = lo[q, ax] + ((x - lo[q, ax]) % span)
            violated = False
            for ax in range(dim):
                if wrap[q, ax]:
                    continue
                x = pos[p, ax]
                # guard/absorbing faces monitor at a threshold pulled into
                # the interior (continuity correction for discrete-time
                # crossing checks); other faces have zero pull
                if x < lo[q, ax] + pull[q, ax, 0]:
                    side = 0
                    face = lo[q, ax] + pull[q, ax, 0]
                elif x > hi[q, ax] - pull[q, ax, 1]:
                    side = 1
                    face = hi[q, ax] - pull[q, ax, 1]
                else:
                    continue
                violated = True
                ev = code[q, ax, side]
                if ev == EVENT_REFLECT:
                    pos[p, ax] = 2.0 * face - x
                elif ev == EVENT_ABSORB:
                    pos[p, ax] = hi[q, ax] if side == 1 else lo[q, ax]
                    alive[p] = False
                elif ev == EVENT_TRANSFER:
                    over = x - face
                    if over < 0.0:
                        over = -over
                    pos[p, ax] = tr_base[q, ax, side] + tr_inward[q, ax, side] * over
                    shift = tr_shift[q, ax, side]
                    if dim == 2 and shift != 0.0:
                        other = 1 - ax
                        pos[p, other] = pos[p, other] + shift
                    mode[p] = tr_mode[q, ax, side]
                else:
                    # no condition on this face: clamp (defensive)
                    pos[p, ax] = face
                break
            if not alive[p]:
                ok = True
                break
            if not violated:
                ok = True
                break
        if not ok:
            fail[p] = 1
    return fail


def _resolve_events_np(
    pos, mode, alive, ndim, lo, hi, wrap, code, tr_mode, tr_base, tr_inward,
    tr_shift, pull
):
    n = pos.shape[0]
    fail = np.zeros(n, dtype=np.int64)
    for p in range(n):
        if not alive[p]:
            continue
        ok = False
        for _ in range(_MAX_EVENT_ITERS):
            q = mode[p]
            dim = ndim[q]
            for ax in range(dim):
                if wrap[q, ax]:
                    span = hi[q, ax] - lo[q, ax]
                    x = pos[p, ax]
                    if x < lo[q, ax] or x >= hi[q, ax]:
                        pos[p, ax] = lo[q, ax] + ((x - lo[q, ax]) % span)
            violated = False
            for ax in range(dim):
                if wrap[q, ax]:
                    continue
                x = pos[p, ax]
                if x < lo[q, ax] + pull[q, ax, 0]:
                    side = 0
                    face = lo[q, ax] + pull[q, ax, 0]
                elif x > hi[q, ax] - pull[q, ax, 1]:
                    side = 1
                    face = hi[q, ax] - pull[q, ax, 1]
                else:
                    continue
                violated = True
                ev = code[q, ax, side]
                if ev == EVENT_REFLECT:
                    pos[p, ax] = 2.0 * face - x
                elif ev == EVENT_ABSORB:
                    pos[p, ax] = hi[q, ax] if side == 1 else lo[q, ax]
                    alive[p] = False
                elif ev == EVENT_TRANSFER:
                    over = x - face
                    if over < 0.0:
                        over = -over
                    pos[p, ax] = tr_base[q, ax, side] + tr_inward[q, ax, side] * over
                    shift = tr_shift[q, ax, side]
                    if dim == 2 and shift != 0.0:
                        other = 1 - ax
                        pos[p, other] = pos[p, other] + shift
                    mode[p] = tr_mode[q, ax, side]
                else:
                    pos[p, ax] = face
                break
            if not alive[p]:
                ok = True
                break
            if not violated:
                ok = True
                break
        if not ok:
            fail[p] = 1
    return fail


def resolve_events(
    pos, mode, alive, ndim, lo, hi, wrap, code, tr_mode, tr_base, tr_inward,
    tr_shift, pull
):
    """Resolve boundary events for proposed particle positions, in place.

    Per particle, iterate (at most 10 times): wrap periodic axes, then handle
    the first violated face by its event code (reflect = mirror about the
    face, absorb = park on the face and mark dead, transfer = land at the
    image face offset inward by the overshoot with the tangential shift
    applied).  ``pull`` moves the guard/absorbing monitoring threshold into
    the interior, compensating the expected unseen excursions of a
    discretely sampled path beyond the face.  Returns a per-particle failure
    flag for non-terminating resolution.
    """
    if NUMBA_ENABLED:
        return _resolve_events_nb(
            pos, mode, alive, ndim, lo, hi, wrap, code, tr_mode, tr_base,
            tr_inward, tr_shift, pull
        )
    return _resolve_events_np(
        pos, mode, alive, ndim, lo, hi, wrap, code, tr_mode, tr_base,
        tr_inward, tr_shift, pull
    )


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
