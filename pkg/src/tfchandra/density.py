"""Mean-field proxy for the atomic density and its distance to Thomas-Fermi.

The proxy places ``N = Z`` non-interacting electrons in the neutral
Thomas-Fermi potential ``Phi_Z`` with the one-particle operator
``sqrt(-c^2 Delta + c^4) - c^2 - Phi_Z(x)``, ``c = Z / gamma``. All outputs
describe this mean-field proxy, not the N-body ground-state density.

In scaled units (momenta in ``c``, energies in ``c^2``) the operator reads
``sqrt(p^2 + 1) - 1 - gamma phi(lam r) / r`` with ``lam = gamma Z^{-2/3} / b``.
The Coulomb part uses the channel kernel of :mod:`tfchandra.spectral`; the
bounded electron-cloud potential ``W = gamma (1 - phi(lam r)) / r`` is
collocated in position space through the sinc-to-sinc radial transform,
which also delivers the orbitals ``u(r)`` for the density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh

from .errors import InvalidArgument, ModelFailure
from .radial import (
    RadialDensity,
    RadialGrid,
    ShellCharge,
    build_grid,
    coulomb_pair_values,
    rescale_density,
    resample,
    shell_density_pair,
)
from .spectral import (
    GAMMA_CRITICAL,
    OPERATORS,
    T_MAX_CAP,
    Discretization,
    channel_hamiltonian,
    position_transform,
)
from .thomas_fermi import TFSolution, solve_tf_screening

__all__ = [
    "PROXY_LABEL",
    "Level",
    "FillingReport",
    "MeanFieldResult",
    "ConvergenceRecord",
    "PotentialTestResult",
    "default_mean_field_discretization",
    "fermi_filling",
    "solve_mean_field",
    "mean_field_density",
    "proxy_distances",
    "convergence_study",
    "weak_test",
    "potential_test",
]

PROXY_LABEL = "mean-field proxy"
TF_LENGTH = 0.8853  # q = 2 length scale; only sets the default window
DEGENERACY_TOL = 1e-10
TRANSFORM_MARGIN = 60
NORM_TOL = 1e-6
# a level counts as bound only below -max(ROUNDING_MARGIN eps ||H||, CLOUD_MARGIN gamma lam):
# rounding in the dense eigensolve and collocation error of the cloud potential
# both leave spurious continuum levels just below zero
ROUNDING_MARGIN = 1e3
CLOUD_MARGIN = 1e-5
# upper end of the momentum window, ln(p_max / gamma); p^2/2 grows the norm
# of the Schrödinger matrix much faster, and its momentum tails decay faster
WINDOW_ABOVE = {"chandrasekhar": 12.0, "schrodinger": 8.0}


@dataclass(frozen=True)
class Level:
    ell: int
    n: int
    energy: float
    occupation: float = 0.0

    @property
    def capacity_per_spin(self) -> int:
        return 2 * self.ell + 1


@dataclass(frozen=True)
class FillingReport:
    """Occupied levels (``occupation`` is the filled fraction of ``q(2l+1)``)."""

    electrons: float
    q: int
    levels: tuple
    fermi_energy: float
    last_filled: tuple
    fractional_occupancy: float
    tie_size: int

    def as_dict(self) -> dict:
        return {
            "electrons": self.electrons,
            "q": self.q,
            "fermi_energy": self.fermi_energy,
            "last_filled": {"n": self.last_filled[0], "ell": self.last_filled[1]},
            "fractional_occupancy": self.fractional_occupancy,
            "tie_size": self.tie_size,
            "levels": [
                {"n": lv.n, "ell": lv.ell, "energy": lv.energy, "occupation": lv.occupation}
                for lv in self.levels
            ],
        }


def fermi_filling(levels: Sequence[Level], electrons: float, q: int = 2) -> FillingReport:
    """Fill the lowest levels with ``q(2l+1)`` electrons each.

    Levels closer than ``DEGENERACY_TOL`` form one block; the block at the
    Fermi level is filled proportionally to capacity.
    """
    if electrons <= 0:
        raise InvalidArgument(f"electron count must be positive, got {electrons}")
    ordered = sorted(levels, key=lambda lv: (lv.energy, lv.ell, lv.n))
    blocks: list[list[Level]] = []
    for lv in ordered:
        if blocks and lv.energy - blocks[-1][0].energy <= DEGENERACY_TOL:
            blocks[-1].append(lv)
        else:
            blocks.append([lv])
    remaining = float(electrons)
    filled: list[Level] = []
    for block in blocks:
        cap = sum(q * lv.capacity_per_spin for lv in block)
        frac = 1.0 if cap <= remaining else remaining / cap
        filled.extend(Level(lv.ell, lv.n, lv.energy, frac) for lv in block)
        remaining -= cap * frac
        if frac < 1.0 or remaining <= 0:
            top = block[-1]
            return FillingReport(
                electrons=float(electrons),
                q=q,
                levels=tuple(filled),
                fermi_energy=top.energy,
                last_filled=(top.n, top.ell),
                fractional_occupancy=frac,
                tie_size=len(block),
            )
    capacity = float(electrons) - remaining
    raise ModelFailure(
        f"the potential binds only {capacity:g} electrons in {len(ordered)} levels, need {electrons:g}",
        {"bound_levels": len(ordered), "capacity": capacity, "electrons": float(electrons)},
    )


@dataclass(frozen=True)
class MeanFieldResult:
    """Proxy density ``rho~_Z`` in Hartree units and how it was built."""

    Z: float
    gamma: float
    kinetic: str
    q: int
    density: RadialDensity
    filling: FillingReport
    disc: dict
    max_norm_defect: float
    label: str = PROXY_LABEL


def default_mean_field_discretization(Z: float, gamma: float, kinetic: str = "chandrasekhar") -> Discretization:
    """Momentum window from the outer-shell scale ``lam`` to a few decades above ``gamma``.

    The inner shells have momenta near ``gamma``; a wider window only raises
    the rounding floor that separates bound levels from the continuum.
    """
    lam = gamma * Z ** (-2.0 / 3.0) / TF_LENGTH
    t_max = min(math.log(gamma) + WINDOW_ABOVE[kinetic], T_MAX_CAP[kinetic])
    return Discretization("sinc", h=0.1, t_min=math.log(lam) - 7.0, t_max=t_max)


def _check_inputs(Z: float, gamma: float, kinetic: str, q: int) -> None:
    if not (np.isfinite(Z) and Z >= 2):
        raise InvalidArgument(f"Z must be >= 2, got {Z}")
    if not (np.isfinite(gamma) and 0 < gamma <= GAMMA_CRITICAL * (1 + 1e-12)):
        raise InvalidArgument(f"gamma={gamma} outside the admissible range (0, 2/pi]")
    if kinetic not in OPERATORS:
        raise InvalidArgument(f"unknown kinetic operator {kinetic!r}; expected one of {OPERATORS}")
    if int(q) != q or q < 1:
        raise InvalidArgument(f"q must be a positive integer, got {q}")


def solve_mean_field(
    Z: float,
    gamma: float = 0.5,
    disc: Discretization | None = None,
    kinetic: str = "chandrasekhar",
    q: int = 2,
    tf: TFSolution | None = None,
    max_ell: int = 12,
) -> MeanFieldResult:
    """Orbitals, Fermi filling and density of the mean-field proxy."""
    _check_inputs(Z, gamma, kinetic, q)
    tf = tf or solve_tf_screening(q=q)
    if tf.q != q:
        raise InvalidArgument(f"Thomas-Fermi solution is for q={tf.q}, requested q={q}")
    disc = disc or default_mean_field_discretization(Z, gamma, kinetic)
    if disc.scheme != "sinc":
        raise InvalidArgument("the mean-field proxy needs the sinc scheme")
    lam = gamma * Z ** (-2.0 / 3.0) / tf.length_scale
    r_scaled = None
    channels: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    levels: list[Level] = []
    filling = None
    for ell in range(max_ell + 1):
        r_scaled, T = position_transform(ell, disc, TRANSFORM_MARGIN)
        cloud = gamma * lam * tf.screening_deficit(lam * r_scaled)
        H = channel_hamiltonian(kinetic, gamma, ell, disc) + (T.T * cloud) @ T
        w, v = eigh(0.5 * (H + H.T), driver="evd")
        floor = max(ROUNDING_MARGIN * np.finfo(float).eps * float(np.abs(np.diag(H)).max()), CLOUD_MARGIN * gamma * lam)
        bound = w < -floor
        if not bound.any():
            break
        if filling is not None and w[0] > filling.fermi_energy:
            break
        channels[ell] = (w[bound], T @ v[:, bound])
        levels.extend(Level(ell, ell + 1 + i, float(e)) for i, e in enumerate(w[bound]))
        try:
            filling = fermi_filling(levels, Z, q)
        except ModelFailure:
            filling = None
    if filling is None:
        filling = fermi_filling(levels, Z, q)  # raises with the capacity report

    h = float(disc.h)
    rho = np.zeros_like(r_scaled)
    worst = 0.0
    for lv in filling.levels:
        if lv.occupation == 0.0:
            continue
        coeff = channels[lv.ell][1][:, lv.n - lv.ell - 1]
        worst = max(worst, abs(float(coeff @ coeff) - 1.0))
        rho += lv.occupation * q * (2 * lv.ell + 1) * coeff**2 / (h * r_scaled)
    if worst > NORM_TOL:
        raise ModelFailure(
            f"orbital norm off by {worst:.2e} after the radial transform; widen the momentum window",
            {"max_norm_defect": worst, "disc": disc.as_dict()},
        )
    rho /= 4.0 * math.pi * r_scaled**2

    # back to Hartree units: r = r'/c, rho(r) = c^3 rho'(c r)
    c = Z / gamma
    grid = build_grid("log-uniform", r_scaled[0] / c, r_scaled[-1] / c, r_scaled.size)
    values = c**3 * rho
    values *= Z / grid.integrate(4.0 * math.pi * grid.nodes**2 * values)
    return MeanFieldResult(
        Z=float(Z),
        gamma=float(gamma),
        kinetic=kinetic,
        q=q,
        density=RadialDensity(grid, values),
        filling=filling,
        disc=disc.as_dict(),
        max_norm_defect=worst,
    )


def mean_field_density(Z: float, gamma: float = 0.5, disc: Discretization | None = None, **kw) -> RadialDensity:
    """Proxy density ``rho~_Z`` (Hartree units, total charge ``Z``)."""
    return solve_mean_field(Z, gamma, disc, **kw).density


# ------------------------------------------------------------ distances


def _difference(values: np.ndarray, grid: RadialGrid, tf: TFSolution, Z: float) -> np.ndarray:
    return values - tf.density_values(grid.nodes, Z)


def proxy_distances(density: RadialDensity, Z: float, tf: TFSolution) -> tuple[float, float]:
    """``(||rho^_Z - rho_1^TF||_C, ||rho~_Z - rho_Z^TF||_C)``.

    The Thomas-Fermi densities are evaluated from the screening function on
    the proxy's own grid (and its ``Z^{1/3}`` image), so no interpolation
    enters either distance.
    """
    unscaled = _difference(density.values, density.grid, tf, Z)
    hat = rescale_density(density, Z)
    scaled = _difference(hat.values, hat.grid, tf, 1.0)
    d_hat = coulomb_pair_values(hat.grid, scaled, scaled).value
    d_raw = coulomb_pair_values(density.grid, unscaled, unscaled).value
    return math.sqrt(max(d_hat, 0.0)), math.sqrt(max(d_raw, 0.0))


@dataclass(frozen=True)
class ConvergenceRecord:
    Z: float
    gamma: float
    distance: float
    unscaled_distance: float
    filling: dict
    kinetic: str = "chandrasekhar"
    label: str = PROXY_LABEL

    @property
    def scaling_defect(self) -> float:
        """Relative violation of ``distance^2 Z^{7/3} = unscaled_distance^2``."""
        lhs = self.distance**2 * self.Z ** (7.0 / 3.0)
        rhs = self.unscaled_distance**2
        return abs(lhs - rhs) / max(rhs, 1e-300)

    def as_dict(self) -> dict:
        return {
            "Z": self.Z,
            "gamma": self.gamma,
            "distance": self.distance,
            "unscaled_distance": self.unscaled_distance,
            "kinetic": self.kinetic,
            "label": self.label,
            "filling": self.filling,
        }


def convergence_study(
    Z_list: Sequence[float],
    gamma: float = 0.5,
    disc: Discretization | None = None,
    kinetic: str = "chandrasekhar",
    q: int = 2,
    tf: TFSolution | None = None,
) -> tuple[list[ConvergenceRecord], float, dict]:
    """Distances of the rescaled proxy to ``rho_1^TF`` along ``Z_list``.

    Returns the records, the least-squares slope of ``log distance`` against
    ``log Z`` (reported, not judged) and the proxy densities keyed by ``Z``.
    """
    zs = [float(z) for z in Z_list]
    if len(zs) < 3 or any(b <= a for a, b in zip(zs, zs[1:])):
        raise InvalidArgument("Z_list must be strictly ascending with at least 3 entries")
    tf = tf or solve_tf_screening(q=q)
    records, densities = [], {}
    for Z in zs:
        res = solve_mean_field(Z, gamma, disc, kinetic, q, tf)
        d_hat, d_raw = proxy_distances(res.density, Z, tf)
        records.append(ConvergenceRecord(Z, float(gamma), d_hat, d_raw, res.filling.as_dict(), kinetic))
        densities[Z] = res.density
    slope = float(np.polyfit(np.log(zs), np.log([r.distance for r in records]), 1)[0])
    return records, slope, densities


# ------------------------------------------------------------ weak tests


def _rescaled_difference(density: RadialDensity, Z: float, tf: TFSolution):
    hat = rescale_density(density, Z)
    return hat.grid, _difference(hat.values, hat.grid, tf, 1.0)


def weak_test(
    sigma: RadialDensity | ShellCharge, Z: float, density: RadialDensity, tf: TFSolution | None = None
) -> float:
    """``D(sigma, rho^_Z - rho_1^TF)`` for a test charge ``sigma``.

    ``density`` is the unscaled proxy ``rho~_Z``. A :class:`ShellCharge` is
    paired in closed form through Newton's theorem; a density is resampled
    onto the proxy's rescaled grid.
    """
    tf = tf or solve_tf_screening()
    grid, diff = _rescaled_difference(density, Z, tf)
    if isinstance(sigma, ShellCharge):
        return float(shell_density_pair(sigma, diff, grid))
    if not isinstance(sigma, RadialDensity):
        raise InvalidArgument("sigma must be a RadialDensity or a ShellCharge")
    values = sigma.values if sigma.grid.same_as(grid) else resample(sigma, grid).values
    return float(coulomb_pair_values(grid, values, diff).value)


@dataclass(frozen=True)
class PotentialTestResult:
    """``int U rho^_Z`` and ``int U rho_1^TF`` plus their gap recomputed as ``2 D(-Delta U / 4 pi, .)``."""

    with_proxy: float
    with_tf: float
    gap_via_coulomb: float = field(default=0.0)

    @property
    def gap(self) -> float:
        return self.with_proxy - self.with_tf

    def __iter__(self):
        return iter((self.with_proxy, self.with_tf))


def _radial_laplacian_source(U: Callable, r: np.ndarray, step: float = 1e-2):
    """``-(1/4 pi) Delta U`` on ``r`` and the point charge ``lim r U(r)`` at the origin.

    ``(r U)''`` is taken by a five-point rule in ``ln r``.
    """
    tau = np.log(r)

    def w(t):
        rr = np.exp(t)
        return rr * np.asarray(U(rr), dtype=float)

    w0 = w(tau)
    wp = [w(tau + k * step) for k in (1, 2)]
    wm = [w(tau - k * step) for k in (1, 2)]
    d1 = (8 * (wp[0] - wm[0]) - (wp[1] - wm[1])) / (12 * step)
    d2 = (16 * (wp[0] + wm[0]) - (wp[1] + wm[1]) - 30 * w0) / (12 * step * step)
    second = (d2 - d1) / r**2
    return -second / (4.0 * math.pi * r), float(w0[0])


def potential_test(
    U: Callable[[np.ndarray], np.ndarray], Z: float, density: RadialDensity, tf: TFSolution | None = None
) -> PotentialTestResult:
    """``(int U rho^_Z, int U rho_1^TF)`` by quadrature, with the gap cross-checked.

    ``U`` must decay at large ``r``; it is viewed as the potential of
    ``sigma = -(1/4 pi) Delta U`` plus a point charge ``lim r U(r)`` at the
    origin, so that ``int U (rho - rho') = 2 D(sigma, rho - rho')``.
    """
    tf = tf or solve_tf_screening()
    grid, diff = _rescaled_difference(density, Z, tf)
    r = grid.nodes
    u = np.asarray(U(r), dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidArgument("U is not finite on the grid")
    scale = float(np.max(np.abs(u * r)))
    if scale == 0.0:
        return PotentialTestResult(0.0, 0.0, 0.0)
    if abs(u[-1] * r[-1]) > 1e-6 * scale:
        raise InvalidArgument(f"U does not vanish at infinity: r U(r) = {u[-1] * r[-1]:.3e} at r = {r[-1]:.3e}")
    shell = 4.0 * math.pi * r**2
    hat_values = diff + tf.density_values(r, 1.0)
    with_proxy = grid.integrate(shell * u * hat_values)
    with_tf = grid.integrate(shell * u * tf.density_values(r, 1.0))
    sigma, point = _radial_laplacian_source(U, r)
    origin_potential = grid.integrate(4.0 * math.pi * r * diff)
    gap = point * origin_potential + 2.0 * coulomb_pair_values(grid, sigma, diff).value
    return PotentialTestResult(float(with_proxy), float(with_tf), float(gap))
