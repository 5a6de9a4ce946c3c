import math

import numpy as np
import pytest

from tfchandra.errors import InvalidArgument
from tfchandra.radial import RadialDensity, coulomb_distance, coulomb_norm, rescale_density
from tfchandra.thomas_fermi import (
    classify_slope,
    gamma_tf,
    load_tf_cache,
    save_tf_cache,
    solve_tf_screening,
    tf_density,
    tf_energy,
    tf_energy_of_density,
    tf_length_scale,
    tf_minimize_direct,
    tf_potential,
)
from tfchandra.thomas_fermi import _series_coefficients

# high-precision value of phi'(0) for the neutral atom, reproduced below by
# an independent collocation solve and the direct minimiser
SLOPE0 = -1.588071022611375


@pytest.fixture(scope="module")
def sol():
    return solve_tf_screening(1e-10)


def test_constants():
    assert gamma_tf(2) == pytest.approx((3 * math.pi**2) ** (2 / 3), rel=1e-15)
    assert tf_length_scale(2) == pytest.approx(0.5 * (3 * math.pi / 4) ** (2 / 3), rel=1e-14)
    assert tf_length_scale(2) == pytest.approx(0.8853, abs=1e-4)
    assert tf_length_scale(1) == pytest.approx(tf_length_scale(2) * 2 ** (2 / 3), rel=1e-14)


def test_series_matches_hand_expansion():
    s = -1.5
    a = _series_coefficients(s)
    assert a[0] == 1 and a[1] == 0 and a[2] == s
    assert a[3] == pytest.approx(4 / 3)
    assert a[4] == 0
    assert a[5] == pytest.approx(2 / 5 * s)
    assert a[6] == pytest.approx(1 / 3)
    assert a[7] == pytest.approx(3 / 70 * s * s)


def test_boundary_condition_and_shape(sol):
    assert sol.screening(0.0)[0] == 1.0
    assert np.all(sol.phi > 0)
    assert np.all(np.diff(sol.phi) < 0)


def test_slope(sol):
    lo, hi = sol.diagnostics["bracket"]
    assert hi - lo <= 1e-10
    assert sol.slope0 == pytest.approx(SLOPE0, abs=1e-9)
    assert abs(sol.slope0 - (-1.588071)) < 1e-5
    # collocation profile carries its own slope parameter
    assert sol.diagnostics["collocation_slope"] == pytest.approx(sol.slope0, abs=1e-6)


def test_ode_residual(sol):
    assert sol.diagnostics["collocation_max_rms_residual"] <= 1e-10
    assert sol.ode_residual().max() < 1e-4


def test_sommerfeld_tail(sol):
    # 144/x^3 solves the equation exactly
    x = np.linspace(1.0, 50.0, 7)
    phi = 144 / x**3
    assert np.allclose(12 * 144 / x**5, phi**1.5 / np.sqrt(x), rtol=1e-14)
    # and the neutral profile approaches it
    ratios = sol.screening(np.array([1e2, 1e3, 1e4])) * np.array([1e2, 1e3, 1e4]) ** 3 / 144
    assert np.all(np.diff(np.abs(1 - ratios)) < 0)
    assert abs(1 - ratios[-1]) < 1e-2


def test_shooting_dichotomy():
    # a steeper start ionises (crosses zero); a shallower one overshoots the tail
    assert classify_slope(SLOPE0 - 1e-3) == "crossed"
    assert classify_slope(SLOPE0 + 1e-3) == "diverged"


def test_tol_range():
    for tol in (1e-13, 1e-3):
        with pytest.raises(InvalidArgument):
            solve_tf_screening(tol)


def test_density_charge_and_origin(sol):
    for Z in (1.0, 7.0, 92.0):
        assert tf_density(sol, Z).charge == pytest.approx(Z, rel=1e-4)
    rho = tf_density(sol, 1.0)
    r = rho.grid.nodes[:40]
    lim = (2 / sol.gamma_tf) ** 1.5
    # rho r^{3/2} -> (2/gamma_TF)^{3/2} with a sqrt(r) correction
    vals = rho.values[:40] * r**1.5
    coef = np.polyfit(np.sqrt(r), vals, 2)
    assert coef[-1] == pytest.approx(lim, rel=1e-6)


def test_density_scaling_relation(sol):
    base = tf_density(sol, 1.0)
    for Z in (3.0, 50.0):
        direct = RadialDensity(base.grid.scaled(Z ** (-1 / 3)), sol.density_values(base.grid.nodes * Z ** (-1 / 3), Z))
        mapped = rescale_density(base, Z, inverse=True)
        assert coulomb_distance(mapped, direct) <= 1e-8 * coulomb_norm(direct)
        assert np.allclose(tf_density(sol, Z).values, direct.values, rtol=1e-10)


def test_potential_properties(sol):
    Z = 10.0
    rho = tf_density(sol, Z)
    phi = tf_potential(sol, Z)
    r = rho.grid.nodes
    assert np.all(phi > 0)
    assert r[0] * phi[0] == pytest.approx(Z, rel=1e-3)
    # Euler-Lagrange relation, Newton potential vs local density
    mask = (r > 1e-6) & (r < 20)
    np.testing.assert_allclose(0.5 * sol.gamma_tf * rho.values[mask] ** (2 / 3), phi[mask], rtol=1e-6)
    # agrees with Z phi(x)/r
    np.testing.assert_allclose(phi[mask], sol.potential(r[mask], Z), rtol=1e-6)


def test_energy_value_and_virial(sol):
    e = tf_energy(sol, 1.0)
    assert e.total == e.kinetic - e.attraction + e.repulsion
    assert e.total == pytest.approx(-0.7687, rel=1e-3)
    # E = (3/7) phi'(0) / b, an identity of the neutral solution
    assert e.total == pytest.approx(3 / 7 * SLOPE0 / sol.length_scale, rel=1e-6)
    assert e.kinetic / e.repulsion == pytest.approx(3.0, rel=1e-3)
    assert e.attraction / e.repulsion == pytest.approx(7.0, rel=1e-3)
    assert e.total / e.kinetic == pytest.approx(-1.0, rel=1e-3)


def test_energy_scaling(sol):
    per = [tf_energy(sol, Z).total / Z ** (7 / 3) for Z in (1.0, 10.0, 100.0)]
    assert max(per) - min(per) <= 1e-6 * abs(per[0])


def test_direct_minimiser_agrees(sol):
    rho, report = tf_minimize_direct(1.0)
    assert np.all(rho.values >= 0)
    assert rho.charge <= 1.0 + 1e-12
    assert all(b <= a for a, b in zip(report["history"], report["history"][1:]))
    e = tf_energy(sol, 1.0).total
    assert report["objective"] >= e
    assert report["objective"] == pytest.approx(e, rel=1e-4)
    ref = RadialDensity(rho.grid, sol.density_values(rho.grid.nodes, 1.0))
    assert coulomb_distance(rho, ref) < 1e-2 * coulomb_norm(ref)
    again = tf_energy_of_density(rho, 1.0)
    assert again.total == pytest.approx(report["objective"], rel=1e-12)


def test_direct_minimiser_scales(sol):
    rho, report = tf_minimize_direct(8.0)
    assert report["objective"] == pytest.approx(tf_energy(sol, 8.0).total, rel=1e-4)


def test_cache_round_trip(sol, tmp_path):
    save_tf_cache(sol, tmp_path)
    assert (tmp_path / "phi.csv").read_text().startswith("x,phi\n")
    back = load_tf_cache(tmp_path, tol=1e-10)
    assert back is not None
    assert back.slope0 == sol.slope0
    assert np.array_equal(back.phi, sol.phi)
    assert np.array_equal(tf_density(back, 5.0).values, tf_density(sol, 5.0).values)
    assert load_tf_cache(tmp_path, tol=1e-8) is None
    assert load_tf_cache(tmp_path / "missing") is None
