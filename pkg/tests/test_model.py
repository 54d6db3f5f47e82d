import math

import numpy as np
import pytest

from hybridfp.geometry import GridSpec, interval_geometry
from hybridfp.model import (
    Face,
    Guard,
    HybridSystem,
    Mode,
    Reflecting,
    ResetImage,
    ResetMap,
    reset_permutation,
    validate,
)
from hybridfp.scenarios import SCENARIO_NAMES, builtin_scenario


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_builtin_scenarios_validate(name):
    kw = {"n_azimuth": 16, "n_poloidal": 16} if name == "torus_two_mode" else {"n": 32}
    sc = builtin_scenario(name, **kw)
    assert validate(sc.system).ok


def test_builtin_scenario_parameters():
    sc = builtin_scenario("ex1_reflecting")
    g = sc.system.modes[0].grids[0]
    assert (g.lo, g.hi) == (0.0, 2.0)
    assert sc.system.modes[0].diffusion == 0.5
    assert sc.t_final == 2.5
    # drift pulls toward x = 3 with unit rate
    (xdot,) = sc.system.modes[0].drift(np.array([0.0, 1.0, 3.0]))
    assert np.allclose(xdot, [3.0, 2.0, 0.0])
    sc_t = builtin_scenario("torus_two_mode")
    assert sc_t.t_final == 3.0
    assert sc_t.n_steps == 1000
    assert [m.grids[0].n for m in sc_t.system.modes] == [50, 50]
    assert sc_t.system.modes[0].grids[1].n == 100
    azi, pol = sc_t.system.modes[0].drift(np.array(0.3), np.array(1.2))
    assert azi == pytest.approx(3.0)
    assert pol == pytest.approx(-6.0 * math.sin(1.2 - 0.3))


def test_initial_density_normalized():
    for name in SCENARIO_NAMES:
        kw = {"n_azimuth": 20, "n_poloidal": 20} if name == "torus_two_mode" else {}
        sc = builtin_scenario(name, **kw)
        assert sc.density0.mass(sc.system) == pytest.approx(1.0, abs=1e-12)


def test_nonpositive_diffusion_reported():
    mode = _interval_mode(diffusion=0.0)
    sys1 = HybridSystem(
        (mode,),
        {Face(1, 0, "low"): Reflecting(), Face(1, 0, "high"): Reflecting()},
    )
    rep = validate(sys1)
    assert not rep.ok
    assert any("diffusion strength must be positive" in v for v in rep.violations)


def test_misaligned_shift_reported():
    sc = builtin_scenario("torus_two_mode", n_azimuth=16, n_poloidal=101)
    rep = validate(sc.system)
    assert not rep.ok
    assert any("shift not cell-aligned" in v for v in rep.violations)


def test_half_period_shift_needs_even_count():
    # a shift of half the period that happens to be cell-aligned still
    # requires an even tangential cell count
    sc = builtin_scenario("torus_two_mode", n_azimuth=16, n_poloidal=100)
    assert validate(sc.system).ok


def test_guard_target_must_be_image_or_identification():
    mode = _interval_mode()
    high = Face(1, 0, "high")
    low = Face(1, 0, "low")
    bad = HybridSystem(
        (mode,),
        {
            low: Reflecting(),
            high: Guard(ResetMap(source=high, target=low, shift=0.0)),
        },
    )
    rep = validate(bad)
    assert any("reset image or identification" in v for v in rep.violations)


def test_single_sided_assignment_reported():
    mode = _interval_mode()
    rep = validate(HybridSystem((mode,), {Face(1, 0, "low"): Reflecting()}))
    assert any("only one side" in v for v in rep.violations)


def test_unassigned_nonperiodic_axis_reported():
    mode = _interval_mode()
    rep = validate(HybridSystem((mode,), {}))
    assert any("non-periodic chart axis" in v for v in rep.violations)


def test_mode_ids_must_be_dense():
    mode = _interval_mode(mode_id=2)
    rep = validate(
        HybridSystem(
            (mode,),
            {Face(2, 0, "low"): Reflecting(), Face(2, 0, "high"): Reflecting()},
        )
    )
    assert any("mode ids" in v for v in rep.violations)


def test_reset_permutation_half_turn_is_involution():
    sc = builtin_scenario("torus_two_mode", n_azimuth=16, n_poloidal=20)
    reset = sc.system.resets[0]
    perm = reset_permutation(sc.system, reset)
    twice = perm[perm]
    assert np.array_equal(twice, np.arange(20))


def test_face_side_validated():
    with pytest.raises(ValueError):
        Face(1, 0, "sideways")


def test_ex3_structure_matches_reset_example():
    sc = builtin_scenario("ex3_reset")
    high = sc.system.condition(Face(1, 0, "high"))
    low = sc.system.condition(Face(1, 0, "low"))
    assert isinstance(high, Guard)
    assert isinstance(low, ResetImage) and low.reflecting
    assert high.reset.target == Face(1, 0, "low")
    assert validate(sc.system).ok


def _interval_mode(mode_id=1, diffusion=0.5):
    geo = interval_geometry(0.0, 2.0)

    def drift(x):
        return (3.0 - np.asarray(x, dtype=float),)

    return Mode(mode_id, geo, (GridSpec(16, 0.0, 2.0),), drift, diffusion)
