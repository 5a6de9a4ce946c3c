import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigh, toeplitz

from tfchandra.density import (
    PROXY_LABEL,
    Level,
    convergence_study,
    fermi_filling,
    mean_field_density,
    potential_test,
    proxy_distances,
    solve_mean_field,
    weak_test,
)
from tfchandra.errors import InvalidArgument, ModelFailure
from tfchandra.radial import (
    RadialDensity,
    ShellCharge,
    build_grid,
    coulomb_distance,
    coulomb_norm,
    shell_pair,
)
from tfchandra.spectral import Discretization, channel_hamiltonian, position_transform
from tfchandra.thomas_fermi import solve_tf_screening

from scipy.linalg import eigh as dense_eigh


@pytest.fixture(scope="module")
def tf():
    return solve_tf_screening(q=2)


@pytest.fixture(scope="module")
def runs(tf):
    return {Z: solve_mean_field(Z, 0.5, tf=tf) for Z in (10, 20, 44, 80)}


def _charge(rho):
    g = rho.grid
    return g.integrate(4 * math.pi * g.nodes**2 * rho.values)


# ------------------------------------------------------------ radial transform


def test_transform_reproduces_hydrogen_orbitals():
    g = 0.5
    disc = Discretization("sinc", h=0.1, t_min=-12.0, t_max=math.log(1e5))
    exact = {
        (0, 1): lambda r: 2 * g**1.5 * r * np.exp(-g * r),
        (1, 2): lambda r: g**2.5 / math.sqrt(24) * r**2 * np.exp(-g * r / 2),
        (2, 3): lambda r: 4 * g**3.5 / (81 * math.sqrt(30)) * r**3 * np.exp(-g * r / 3),
    }
    for (ell, n), u in exact.items():
        w, v = dense_eigh(channel_hamiltonian("schrodinger", g, ell, disc), driver="evd")
        r, T = position_transform(ell, disc)
        d = T @ v[:, 0]
        # compare sqrt(h r) u(r), the quantity whose squares sum to the norm
        ref = u(r) * np.sqrt(disc.h * r)
        sign = np.sign(d[np.argmax(np.abs(ref))])
        assert np.max(np.abs(sign * d - ref)) < 1e-6 * np.max(np.abs(ref))
        assert d @ d == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("t_max", [math.log(1e5), 11.0, 11.55])
def test_collocated_coulomb_term_matches_reduced_coupling(t_max):
    # -g/r in momentum space plus +g/(2r) through the transform is hydrogen at g/2,
    # whether or not the window is a whole number of steps
    g = 0.5
    disc = Discretization("sinc", h=0.1, t_min=-12.0, t_max=t_max)
    for ell in (0, 2):
        r, T = position_transform(ell, disc)
        H = channel_hamiltonian("schrodinger", g, ell, disc) + (T.T * (0.5 * g / r)) @ T
        w = eigh(H, eigvals_only=True, driver="evd")[:3]
        exact = -((g / 2) ** 2) / (2 * np.arange(ell + 1, ell + 4) ** 2)
        np.testing.assert_allclose(w, exact, rtol=2e-7)


# ------------------------------------------------------------ Fermi filling


def test_filling_fractional_and_tied_levels():
    levels = [Level(0, 1, -1.0), Level(0, 2, -0.3), Level(1, 2, -0.3), Level(2, 3, -0.1)]
    rep = fermi_filling(levels, 5, q=2)
    occ = {(lv.n, lv.ell): lv.occupation for lv in rep.levels}
    # 2 electrons in 1s, 3 shared by 2s (cap 2) and 2p (cap 6) in proportion
    assert occ == {(1, 0): 1.0, (2, 0): 0.375, (2, 1): 0.375}
    assert rep.tie_size == 2
    assert rep.fractional_occupancy == 0.375
    assert rep.fermi_energy == -0.3
    assert rep.as_dict()["last_filled"] == {"n": 2, "ell": 1}


def test_filling_rejects_shortfall_and_bad_counts():
    with pytest.raises(ModelFailure) as info:
        fermi_filling([Level(0, 1, -1.0)], 3)
    assert info.value.diagnostics["capacity"] == 2
    with pytest.raises(InvalidArgument):
        fermi_filling([Level(0, 1, -1.0)], 0)


@st.composite
def level_sets(draw):
    n = draw(st.integers(1, 12))
    es = draw(st.lists(st.floats(-5, -1e-3), min_size=n, max_size=n))
    ells = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    return [Level(l, l + 1 + i, e) for i, (l, e) in enumerate(zip(ells, es))]


@settings(max_examples=80, deadline=None)
@given(level_sets(), st.floats(0.1, 1.0), st.floats(-3.0, 3.0))
def test_filling_properties(levels, share, shift):
    capacity = sum(2 * (2 * lv.ell + 1) for lv in levels)
    N = share * capacity
    rep = fermi_filling(levels, N)
    assert sum(lv.occupation * 2 * (2 * lv.ell + 1) for lv in rep.levels) == pytest.approx(N, rel=1e-12)
    assert all(0 < lv.occupation <= 1 for lv in rep.levels)
    # every occupied level lies at or below the Fermi energy, every empty one above it
    occupied = {(lv.n, lv.ell) for lv in rep.levels}
    for lv in levels:
        if (lv.n, lv.ell) in occupied:
            assert lv.energy <= rep.fermi_energy
        else:
            assert lv.energy > rep.fermi_energy
    # a constant shift of the potential leaves the occupations alone
    moved = fermi_filling([Level(lv.ell, lv.n, lv.energy + shift) for lv in levels], N)
    assert [lv.occupation for lv in moved.levels] == pytest.approx([lv.occupation for lv in rep.levels], abs=1e-9)


# ------------------------------------------------------------ mean-field proxy


def _position_oracle(Z, gamma, result, tf, dx=0.04):
    """Schrödinger orbitals by sinc collocation in ln r (independent of the momentum code)."""
    lam = gamma * Z ** (-2 / 3) / tf.length_scale
    x = np.arange(math.log(1e-14), math.log(3e3 / lam), dx)
    r = np.exp(x)
    m = np.arange(x.size)
    d2 = np.where(m == 0, -math.pi**2 / 3, -2 * (-1.0) ** m / np.maximum(m, 1) ** 2) / dx**2
    V = -gamma * tf.screening(lam * r) / r
    B = np.diag(r**2)
    shift = 2 * gamma**2
    rho = np.zeros_like(r)
    levels = {}
    for ell in sorted({lv.ell for lv in result.filling.levels}):
        A = -0.5 * toeplitz(d2) + np.diag(0.125 + r**2 * V + ell * (ell + 1) / 2)
        # r^2-weighted problem solved as B x = mu (A + shift B) x for accuracy near zero
        mu, y = eigh(B, A + shift * B, driver="gvd")
        levels[ell] = 1 / mu[::-1] - shift
        y = y[:, ::-1]
        for lv in result.filling.levels:
            if lv.ell == ell:
                z = r * y[:, lv.n - ell - 1]
                z /= math.sqrt(dx * (z @ z))
                rho += lv.occupation * 2 * (2 * ell + 1) * z**2 / r / (4 * math.pi * r**2)
    c = Z / gamma
    grid = build_grid("log-uniform", r[0] / c, r[-1] / c, r.size)
    return levels, RadialDensity(grid, c**3 * rho)


@pytest.mark.parametrize("Z", [10, 20])
def test_schrodinger_proxy_matches_position_space_oracle(tf, Z):
    g = 0.5
    res = solve_mean_field(Z, g, kinetic="schrodinger", tf=tf)
    levels, rho = _position_oracle(Z, g, res, tf)
    for lv in res.filling.levels:
        assert lv.energy == pytest.approx(levels[lv.ell][lv.n - lv.ell - 1], rel=1e-6, abs=1e-9 * g**2)
    assert coulomb_distance(res.density, rho) < 1e-4 * coulomb_norm(rho)


def test_proxy_charge_positivity_and_label(runs):
    for Z, res in runs.items():
        assert res.label == PROXY_LABEL
        assert np.all(res.density.values >= 0)
        assert _charge(res.density) == pytest.approx(Z, rel=1e-6)
        filled = sum(lv.occupation * res.q * (2 * lv.ell + 1) for lv in res.filling.levels)
        assert filled == pytest.approx(Z, rel=1e-14)
        assert res.max_norm_defect < 1e-6


def test_proxy_filling_reports(runs):
    assert runs[10].filling.last_filled == (2, 1)
    assert runs[20].filling.last_filled == (4, 0)
    # 4d opens at Z = 44 and is only partly filled
    rep = runs[44].filling
    assert rep.last_filled == (4, 2) and 0 < rep.fractional_occupancy < 1


def test_shortfall_of_bound_levels_is_reported(tf):
    # the neutral potential at Z = 40 binds 1s-5s, 2p-4p and 3d only
    with pytest.raises(ModelFailure) as info:
        solve_mean_field(40, 0.5, tf=tf)
    assert info.value.diagnostics["capacity"] == 38


def test_nonrelativistic_limit(tf):
    a = mean_field_density(20, 0.05, kinetic="chandrasekhar", tf=tf)
    b = mean_field_density(20, 0.05, kinetic="schrodinger", tf=tf)
    assert coulomb_distance(a, b) < 0.01 * coulomb_norm(b)


def test_kinetic_gap_shrinks_with_gamma(tf):
    gaps, plain = [], []
    for g in (0.5, 0.2, 0.05):
        c = solve_mean_field(20, g, kinetic="chandrasekhar", tf=tf).density
        s = solve_mean_field(20, g, kinetic="schrodinger", tf=tf).density
        dc, ds = proxy_distances(c, 20, tf)[0], proxy_distances(s, 20, tf)[0]
        gaps.append(abs(dc - ds))
        plain.append(ds)
    assert gaps[0] > gaps[1] > gaps[2]
    # the Schrödinger proxy does not know about c at all
    assert max(plain) - min(plain) < 1e-8 * plain[0]


def test_mean_field_rejects_bad_arguments(tf):
    with pytest.raises(InvalidArgument):
        solve_mean_field(1, 0.5, tf=tf)
    with pytest.raises(InvalidArgument):
        solve_mean_field(10, 0.7, tf=tf)
    with pytest.raises(InvalidArgument):
        solve_mean_field(10, 0.5, kinetic="dirac", tf=tf)
    with pytest.raises(InvalidArgument):
        solve_mean_field(10, 0.5, q=1, tf=tf)
    with pytest.raises(InvalidArgument):
        solve_mean_field(10, 0.5, disc=Discretization("gauss-subtraction"), tf=tf)


# ------------------------------------------------------------ distances


def test_convergence_records(tf, runs):
    records, slope, dens = convergence_study([10, 20, 80], 0.5, tf=tf)
    assert [r.Z for r in records] == [10, 20, 80]
    for rec in records:
        assert rec.scaling_defect < 1e-6
        assert rec.label == PROXY_LABEL
        assert rec.as_dict()["filling"]["electrons"] == rec.Z
    distances = [r.distance for r in records]
    assert distances[0] > distances[1] > distances[2]
    assert slope < 0
    assert np.array_equal(dens[20.0].values, runs[20].density.values)


def test_self_test_distance_vanishes(tf):
    Z = 30.0
    grid = build_grid("log-uniform", 1e-9, 1e3, 900)
    rho = RadialDensity(grid, tf.density_values(grid.nodes, Z))
    d_hat, d_raw = proxy_distances(rho, Z, tf)
    assert d_hat < 1e-12 and d_raw < 1e-12


def test_convergence_study_rejects_bad_lists(tf):
    with pytest.raises(InvalidArgument):
        convergence_study([10, 20], tf=tf)
    with pytest.raises(InvalidArgument):
        convergence_study([10, 40, 20], tf=tf)


# ------------------------------------------------------------ weak tests


def test_weak_tests_obey_schwarz(tf, runs):
    grid = build_grid("log-uniform", 1e-8, 1e4, 1200)
    charges = [
        RadialDensity(grid, tf.density_values(grid.nodes, 1.0)),
        RadialDensity(grid, np.exp(-grid.nodes**2) / math.pi**1.5),
        RadialDensity(grid, np.where(grid.nodes < 2.0, 3 / (4 * math.pi * 8), 0.0)),
    ]
    shells = [ShellCharge(a, 1.0) for a in (0.05, 0.5, 1.0, 5.0)]
    for Z, res in runs.items():
        d = proxy_distances(res.density, Z, tf)[0]
        for s in charges:
            assert abs(weak_test(s, Z, res.density, tf)) <= coulomb_norm(s) * d
        for s in shells:
            value = weak_test(s, Z, res.density, tf)
            assert math.isfinite(value)
            assert abs(value) <= math.sqrt(shell_pair(s, s)) * d


def test_weak_test_rejects_other_objects(tf, runs):
    with pytest.raises(InvalidArgument):
        weak_test(np.ones(3), 10, runs[10].density, tf)


def test_potential_test_dual_evaluation(tf, runs):
    gaps = []
    for Z, res in runs.items():
        out = potential_test(lambda r: np.exp(-r) / r, Z, res.density, tf)
        assert out.gap == pytest.approx(out.gap_via_coulomb, rel=1e-6)
        gaps.append(abs(out.gap))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    smooth = potential_test(lambda r: 1 / (1 + r * r) ** 2, 20, runs[20].density, tf)
    assert smooth.gap == pytest.approx(smooth.gap_via_coulomb, rel=1e-6)


def test_potential_test_trivial_and_invalid(tf, runs):
    rho = runs[10].density
    assert tuple(potential_test(lambda r: np.zeros_like(r), 10, rho, tf)) == (0.0, 0.0)
    with pytest.raises(InvalidArgument):
        potential_test(lambda r: 1 / r, 10, rho, tf)
    with pytest.raises(InvalidArgument):
        potential_test(lambda r: np.full_like(r, 0.3), 10, rho, tf)
    with pytest.raises(InvalidArgument):
        potential_test(lambda r: np.full_like(r, np.nan), 10, rho, tf)
