import math

import numpy as np
import pytest

from hybridfp.fields import cell_measures
from hybridfp.geometry import GridSpec, interval_geometry, torus_geometry
from hybridfp.model import (
    Face,
    Guard,
    HybridSystem,
    Identification,
    Mode,
    Reflecting,
    ResetImage,
    ResetMap,
)
from hybridfp.montecarlo import (
    EventResolutionError,
    ParticleEnsemble,
    em_step,
    histogram_density,
    mc_koopman,
    sample_density,
)
from hybridfp.scenarios import builtin_scenario

TINY_NOISE = 1e-300  # noise amplitude below one ulp: positions unchanged


def _interval_system(drift_value, diffusion=TINY_NOISE, lo=0.0, hi=2.0, right="reflect"):
    geo = interval_geometry(lo, hi)

    def drift(x):
        return (np.full_like(np.asarray(x, dtype=float), drift_value),)

    mode = Mode(1, geo, (GridSpec(16, lo, hi),), drift, diffusion)
    low, high = Face(1, 0, "low"), Face(1, 0, "high")
    if right == "reflect":
        boundary = {low: Reflecting(), high: Reflecting()}
    elif right == "absorb":
        from hybridfp.model import Absorbing

        boundary = {low: Reflecting(), high: Absorbing()}
    else:  # reset
        boundary = {
            low: ResetImage(),
            high: Guard(ResetMap(source=high, target=low, shift=0.0)),
        }
    return HybridSystem((mode,), boundary)


def test_frozen_dynamics_leaves_ensemble_unchanged():
    system = _interval_system(0.0)
    ens = ParticleEnsemble.replicate(system, 1, [0.7], 100, seed=1)
    before = ens.positions.copy()
    em_step(ens, system, 0.01, ens.rng())
    assert np.array_equal(ens.positions, before)
    assert np.all(ens.alive)


def test_mirror_reflection_at_low_face():
    # proposal 0.01 - 0.05 = -0.04 reflects to +0.04
    system = _interval_system(-5.0)
    ens = ParticleEnsemble.replicate(system, 1, [0.01], 1, seed=1)
    em_step(ens, system, 0.01, ens.rng())
    assert ens.positions[0, 0] == pytest.approx(0.04, abs=1e-15)


def test_guard_overshoot_lands_past_image():
    # crossing the guard at 2 by 0.03 lands at 0 + 0.03 in the same mode
    system = _interval_system(4.0, right="reset")
    ens = ParticleEnsemble.replicate(system, 1, [1.99], 1, seed=1)
    em_step(ens, system, 0.01, ens.rng())
    assert ens.positions[0, 0] == pytest.approx(0.03, abs=1e-15)
    assert ens.modes[0] == 1
    assert ens.alive[0]


def test_absorption_parks_particle_dead():
    system = _interval_system(4.0, right="absorb")
    ens = ParticleEnsemble.replicate(system, 1, [1.99], 1, seed=1)
    em_step(ens, system, 0.01, ens.rng())
    assert not ens.alive[0]
    assert ens.positions[0, 0] == 2.0
    # dead particles never revive or move
    em_step(ens, system, 0.01, ens.rng())
    assert not ens.alive[0]
    assert ens.positions[0, 0] == 2.0


def _two_mode_torus(diffusion=TINY_NOISE, azi_speed=1.0):
    geo = torus_geometry(2.0, 1.0)

    def drift(azi, pol):
        shape = np.broadcast_shapes(np.shape(azi), np.shape(pol))
        return (
            np.broadcast_to(np.float64(azi_speed), shape),
            np.broadcast_to(np.float64(0.0), shape),
        )

    pol_grid = GridSpec(16, 0.0, 2 * math.pi)
    m1 = Mode(1, geo, (GridSpec(8, 0.0, math.pi), pol_grid), drift, diffusion)
    m2 = Mode(2, geo, (GridSpec(8, math.pi, 2 * math.pi), pol_grid), drift, diffusion)
    seam1, guard1 = Face(1, 0, "low"), Face(1, 0, "high")
    guard2, seam2 = Face(2, 0, "low"), Face(2, 0, "high")
    return HybridSystem(
        (m1, m2),
        {
            seam1: Identification(partner=seam2),
            seam2: Identification(partner=seam1),
            guard1: Guard(ResetMap(guard1, seam1, math.pi)),
            guard2: Guard(ResetMap(guard2, seam1, math.pi)),
        },
    )


def test_torus_guard_applies_half_turn_shift():
    system = _two_mode_torus(azi_speed=5.0)
    ens = ParticleEnsemble.replicate(system, 1, [math.pi - 0.01, 1.0], 1, seed=2)
    em_step(ens, system, 0.01, ens.rng())  # cross pi by 0.04
    assert ens.modes[0] == 1
    assert ens.positions[0, 0] == pytest.approx(0.04, abs=1e-12)
    assert ens.positions[0, 1] == pytest.approx(1.0 + math.pi, abs=1e-12)


def test_identification_crossing_is_seamless():
    system = _two_mode_torus(azi_speed=-5.0)
    ens = ParticleEnsemble.replicate(system, 1, [0.01, 1.0], 1, seed=2)
    em_step(ens, system, 0.01, ens.rng())  # cross 0 downward by 0.04
    assert ens.modes[0] == 2
    assert ens.positions[0, 0] == pytest.approx(2 * math.pi - 0.04, abs=1e-12)
    assert ens.positions[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_event_resolution_aborts_on_pathological_step():
    system = _interval_system(4000.0)  # one step jumps far outside
    ens = ParticleEnsemble.replicate(system, 1, [1.0], 1, seed=3)
    with pytest.raises(EventResolutionError):
        em_step(ens, system, 1.0, ens.rng())


def test_histogram_point_mass():
    sc = builtin_scenario("ex1_reflecting", n=32)
    ens = ParticleEnsemble.replicate(sc.system, 1, [0.55], 500, seed=4)
    hist = histogram_density(ens, sc.system)
    w = cell_measures(sc.system)[0]
    k = int(0.55 / sc.system.modes[0].grids[0].dx)
    expected = np.zeros(32)
    expected[k] = 1.0 / w[k]
    assert np.allclose(hist.values[0], expected)


def test_histogram_mass_equals_alive_fraction():
    sc = builtin_scenario("ex2_absorbing", n=64)
    ens = sample_density(sc.system, sc.density0, 20000, seed=5)
    rng = ens.rng()
    for _ in range(200):
        em_step(ens, sc.system, 5e-3, rng)
    hist = histogram_density(ens, sc.system)
    assert hist.mass(sc.system) == pytest.approx(ens.alive_fraction(), abs=1e-12)
    assert ens.alive_fraction() < 1.0


def test_uniform_torus_sampling_matches_volume_density():
    # oracle: inverse-CDF sampling of the poloidal marginal proportional to
    # the ring radius, uniform azimuth; the chart-volume density is constant
    R, r = 2.0, 1.0
    rng = np.random.default_rng(6)
    n = 400_000
    u = rng.random(n)
    grid = np.linspace(0, 2 * math.pi, 20001)
    cdf = (R * grid + r * np.sin(grid)) / (2 * math.pi * R)
    pol = np.interp(u, cdf, grid)
    azi = rng.random(n) * 2 * math.pi
    sc = builtin_scenario("torus_two_mode", n_azimuth=20, n_poloidal=20)
    pos = np.column_stack([azi, pol])
    modes = np.where(azi < math.pi, 1, 2).astype(np.int64)
    ens = ParticleEnsemble(pos, modes, np.ones(n, dtype=bool), seed=6)
    hist = histogram_density(ens, sc.system)
    target = 1.0 / (4 * math.pi**2 * R * r)
    for v in hist.values:
        assert np.max(np.abs(v - target)) < 8.0 * target / math.sqrt(n / 400)


def test_reproducibility_bitwise():
    sc = builtin_scenario("ex3_reset", n=32)

    def run():
        ens = sample_density(sc.system, sc.density0, 3000, seed=7)
        rng = ens.rng()
        for _ in range(50):
            em_step(ens, sc.system, 2e-3, rng)
        return ens.positions.copy(), ens.modes.copy(), ens.alive.copy()

    p1, m1, a1 = run()
    p2, m2, a2 = run()
    assert np.array_equal(p1, p2)
    assert np.array_equal(m1, m2)
    assert np.array_equal(a1, a2)


def test_alive_fraction_monotone():
    sc = builtin_scenario("ex2_absorbing", n=64)
    ens = sample_density(sc.system, sc.density0, 5000, seed=8)
    rng = ens.rng()
    fracs = [ens.alive_fraction()]
    for _ in range(100):
        em_step(ens, sc.system, 5e-3, rng)
        fracs.append(ens.alive_fraction())
    assert all(b <= a for a, b in zip(fracs, fracs[1:]))


def test_conservative_scenarios_keep_everyone_alive():
    for name in ("ex1_reflecting", "ex3_reset"):
        sc = builtin_scenario(name, n=32)
        ens = sample_density(sc.system, sc.density0, 2000, seed=9)
        rng = ens.rng()
        for _ in range(50):
            em_step(ens, sc.system, 2e-3, rng)
        assert ens.alive_fraction() == 1.0


def test_mc_koopman_constant_observable():
    sc = builtin_scenario("ex3_reset", n=32)
    mean, se = mc_koopman(
        lambda q, x: np.ones(x.shape[0]), 1, [1.0], sc.system, 2000, 0.1, 1e-2, seed=10
    )
    assert mean == 1.0
    assert se == 0.0


def test_mc_koopman_survival_probability():
    sc = builtin_scenario("ex2_absorbing", n=64)
    n = 4000
    ens_mean, _ = mc_koopman(
        lambda q, x: np.ones(x.shape[0]), 1, [1.9], sc.system, n, 0.5, 1e-3, seed=11
    )
    # crossing from 1.9 under rightward drift: most particles are absorbed
    assert 0.0 < ens_mean < 0.5


def test_mc_koopman_matches_grid_solver():
    # cross-oracle: pathwise expectation of the Gaussian bump observable from
    # a single start against the grid backward solve (point value at x=1)
    from hybridfp.scenarios import gaussian_profile
    from hybridfp.stepping import evolve_observable

    sc = builtin_scenario("ex1_reflecting", n=200)
    uT = evolve_observable(sc.system, sc.observable0, 2.5)
    grid_val = 0.5 * (uT.values[0][99] + uT.values[0][100])

    def bump(q, xs):
        return gaussian_profile(xs[:, 0], 1.25, 0.2)

    mean, se = mc_koopman(bump, 1, [1.0], sc.system, 50_000, 2.5, 1e-3, seed=123)
    assert se > 0.0
    assert abs(mean - grid_val) <= 3.0 * se
