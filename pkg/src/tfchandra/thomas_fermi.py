"""Neutral Thomas-Fermi atom: screening function, density, potential, energy.

Stationarity of the Thomas-Fermi functional at zero chemical potential gives
``(gamma_TF / 2) rho^{2/3} = Phi`` with ``Phi = Z/r - rho * |x|^{-1}``. Writing
``Phi = Z phi(x) / r`` and ``r = b x`` with

    b = (4 pi)^{-2/3} (gamma_TF / 2) Z^{-1/3}

turns Poisson's equation ``Delta Phi = 4 pi rho`` into the universal screening
equation ``phi'' = phi^{3/2} / sqrt(x)`` with ``phi(0) = 1`` and
``phi(inf) = 0``. For ``q = 2`` the length scale is ``b = 0.8853...``.

The initial slope is found by shooting (bisection on ``phi'(0)``). The full
profile is obtained from a collocation boundary-value solve in ``ln x`` with
the slope as a free parameter, because the neutral branch is exponentially
unstable for outward integration beyond ``x ~ 20``. The two slopes are
compared as a consistency diagnostic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_bvp, solve_ivp
from scipy.interpolate import make_interp_spline

from . import __version__
from .errors import InvalidArgument, SolverFailure
from .radial import (
    RadialDensity,
    RadialGrid,
    build_grid,
    coulomb_pair,
    enclosed_charge,
    rescale_density,
)

__all__ = [
    "TFSolution",
    "EnergyBreakdown",
    "gamma_tf",
    "tf_length_scale",
    "solve_tf_screening",
    "tf_density",
    "tf_potential",
    "tf_energy",
    "tf_energy_of_density",
    "tf_minimize_direct",
    "classify_slope",
    "save_tf_cache",
    "load_tf_cache",
]

# sampling of the stored profile: log-uniform in x
X_MIN, X_MAX, X_STEP = 1e-14, 1e5, 0.02
# collocation domain; below X_BVP the series is exact to rounding
X_BVP = 1e-6
SHOOT_X0 = 1e-6
SHOOT_X_MAX = 200.0
SLOPE_BRACKET = (-1.7, -1.5)


def gamma_tf(q: int = 2) -> float:
    """Thomas-Fermi constant ``(6 pi^2 / q)^{2/3}``."""
    if q < 1:
        raise InvalidArgument("spin multiplicity q must be >= 1")
    return (6 * math.pi**2 / q) ** (2.0 / 3.0)


def tf_length_scale(q: int = 2, Z: float = 1.0) -> float:
    """Radius ``b`` with ``r = b x``; 0.8853 for q = 2, Z = 1."""
    return (4 * math.pi) ** (-2.0 / 3.0) * 0.5 * gamma_tf(q) * Z ** (-1.0 / 3.0)


# --------------------------------------------------------------- series


def _series_coefficients(slope: float, order: int = 24) -> np.ndarray:
    """Coefficients ``a_k`` of ``phi = sum a_k x^{k/2}`` near the origin.

    ``a_0 = 1``, ``a_1 = 0``, ``a_2 = slope``; the rest follow from
    ``a_{k+3} (k+3)(k+1)/4 = [phi^{3/2}]_k`` with the power series of
    ``phi^{3/2}`` generated by the J.C.P. Miller recurrence.
    """
    a = np.zeros(order + 1)
    a[0], a[2] = 1.0, slope
    b = np.zeros(order + 1)  # coefficients of phi^{3/2}
    b[0] = 1.0
    for k in range(order - 2):
        if k >= 1:
            # Miller: k a_0 b_k = sum_{j=1}^k (alpha*j - k + j) a_j b_{k-j}, alpha = 3/2
            s = 0.0
            for j in range(1, k + 1):
                s += (1.5 * j - (k - j)) * a[j] * b[k - j]
            b[k] = s / k
        a[k + 3] = b[k] / ((k + 3) * (k + 1) / 4.0)
    return a


def _series(slope: float, x) -> tuple[np.ndarray, np.ndarray]:
    a = _series_coefficients(slope)
    x = np.asarray(x, dtype=float)
    sq = np.sqrt(x)
    phi = np.zeros_like(x)
    dphi = np.zeros_like(x)
    for k in range(a.size - 1, -1, -1):
        phi = phi * sq + a[k]
    for k in range(a.size - 1, 1, -1):  # a_1 = 0
        dphi = dphi * sq + 0.5 * k * a[k]
    return phi, dphi


# ------------------------------------------------------------ shooting


def _rhs(x, y):
    return [y[1], max(y[0], 0.0) ** 1.5 / math.sqrt(x)]


def _crossed(x, y):
    return y[0]


_crossed.terminal, _crossed.direction = True, -1


def _turned(x, y):
    return y[1]


_turned.terminal, _turned.direction = True, 1


def _above_envelope(x, y):
    # beyond x = 20 a trajectory more than twice the 144/x^3 tail has diverged
    return y[0] - 2 * 144.0 / x**3 if x > 20 else -1.0


_above_envelope.terminal, _above_envelope.direction = True, 1


def classify_slope(slope: float, x_max: float = SHOOT_X_MAX, rtol: float = 1e-13) -> str:
    """``"crossed"`` if phi reaches zero, ``"diverged"`` if it turns upward.

    Trajectories that remain undecided at ``x_max`` are compared with the
    exact particular solution ``144/x^3``.
    """
    phi0, dphi0 = _series(slope, np.array(SHOOT_X0))
    sol = solve_ivp(
        _rhs,
        (SHOOT_X0, x_max),
        [float(phi0), float(dphi0)],
        method="DOP853",
        rtol=rtol,
        atol=1e-15,
        events=[_crossed, _turned, _above_envelope],
    )
    if sol.status == -1:
        raise SolverFailure("integrator failed while shooting", {"slope": slope, "message": sol.message})
    if sol.t_events[0].size:
        return "crossed"
    if sol.t_events[1].size or sol.t_events[2].size:
        return "diverged"
    x = sol.t[-1]
    return "diverged" if sol.y[0, -1] > 144.0 / x**3 else "crossed"


def _shoot(tol: float) -> tuple[float, float, int]:
    lo, hi = SLOPE_BRACKET
    if classify_slope(lo) != "crossed" or classify_slope(hi) != "diverged":
        raise SolverFailure(
            "initial slope bracket does not straddle the neutral branch",
            {"bracket": SLOPE_BRACKET, "lo": classify_slope(lo), "hi": classify_slope(hi)},
        )
    steps = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if classify_slope(mid) == "crossed":
            lo = mid
        else:
            hi = mid
        steps += 1
    return lo, hi, steps


# ----------------------------------------------------------- collocation


def _profile_bvp(slope_guess: float, tol: float):
    t0, t1 = math.log(X_BVP), math.log(X_MAX)
    x0 = X_BVP

    def f(t, y, p):
        x = np.exp(t)
        return np.vstack([y[1], y[1] + x**1.5 * np.maximum(y[0], 0.0) ** 1.5])

    def bc(ya, yb, p):
        ph, dph = _series(p[0], np.array(x0))
        # outer Robin condition: the tail behaves like x^-3
        return np.array([ya[0] - ph, ya[1] - x0 * dph, yb[1] + 3 * yb[0]])

    t = np.linspace(t0, t1, 600)
    x = np.exp(t)
    guess = 1.0 / (1.0 + x**3 / 144.0)
    y = np.vstack([guess, np.gradient(guess, t)])
    sol = solve_bvp(f, bc, t, y, p=[slope_guess], tol=tol, max_nodes=400000, bc_tol=1e-13)
    if sol.status != 0:
        raise SolverFailure("screening boundary-value solve did not converge", {"message": sol.message})
    return sol


# -------------------------------------------------------------- solution


@dataclass(frozen=True, eq=False)
class TFSolution:
    """Universal neutral screening function and its physical accessors.

    Attributes
    ----------
    x, phi : ndarray
        Samples of the screening function on a log-uniform grid in ``x``.
    slope0 : float
        ``phi'(0)`` from shooting (midpoint of the final bracket).
    length_scale : float
        ``b`` at ``Z = 1`` in Bohr radii.
    q : int
        Spin multiplicity entering ``gamma_tf``.
    gamma_tf : float
        ``(6 pi^2 / q)^{2/3}``.
    tol : float
        Bracket width requested for ``slope0``.
    diagnostics : dict
        Shooting bracket, collocation slope and residual.
    """

    x: np.ndarray
    phi: np.ndarray
    slope0: float
    length_scale: float
    q: int
    gamma_tf: float
    tol: float
    integrator: str = "DOP853 shooting + collocation profile"
    diagnostics: dict = field(default_factory=dict)
    _spline: object = field(init=False, repr=False)

    def __post_init__(self):
        t = np.log(self.x)
        object.__setattr__(self, "_spline", make_interp_spline(t, self.phi, k=5))
        self.x.setflags(write=False)
        self.phi.setflags(write=False)

    def screening(self, x) -> np.ndarray:
        """phi(x) for any ``x >= 0``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        low = x < self.x[0]
        high = x > self.x[-1]
        mid = ~(low | high)
        out[low] = _series(self.slope0, x[low])[0] if low.any() else 0.0
        out[mid] = self._spline(np.log(x[mid]))
        out[high] = self.phi[-1] * (self.x[-1] / x[high]) ** 3
        return out

    def screening_derivative(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        low = x < self.x[0]
        high = x > self.x[-1]
        mid = ~(low | high)
        out[low] = _series(self.slope0, x[low])[1] if low.any() else 0.0
        out[mid] = self._spline(np.log(x[mid]), 1) / x[mid]
        out[high] = -3 * self.phi[-1] * self.x[-1] ** 3 / x[high] ** 4
        return out

    def screening_deficit(self, x) -> np.ndarray:
        """``(1 - phi(x)) / x`` without cancellation at small ``x``.

        Times ``Z`` this is the potential of the electron cloud in units where
        ``b = 1``; it tends to ``-phi'(0)`` at the origin.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        small = x < 1e-4
        if small.any():
            a = _series_coefficients(self.slope0)
            sq = np.sqrt(x[small])
            acc = np.zeros_like(sq)
            for k in range(a.size - 1, 1, -1):
                acc = acc * sq + a[k]
            out[small] = -acc
        big = ~small
        out[big] = (1.0 - self.screening(x[big])) / x[big]
        return out

    def ode_residual(self, x_lo: float = 1e-3, x_hi: float = 1e3) -> np.ndarray:
        """Relative residual of ``phi'' = phi^{3/2}/sqrt(x)`` from the stored samples.

        Second derivatives of the sampled profile are only meaningful where
        ``phi''`` is large against rounding in ``phi``; the collocation
        residual in ``diagnostics`` covers the whole domain.
        """
        keep = (self.x > x_lo) & (self.x < x_hi)
        x = self.x[keep]
        t = np.log(x)
        d1 = self._spline(t, 1)
        d2 = self._spline(t, 2)
        phi2 = (d2 - d1) / x**2
        rhs = self.phi[keep] ** 1.5 / np.sqrt(x)
        return np.abs(phi2 - rhs) / rhs

    def enclosed_fraction(self, x) -> np.ndarray:
        """Fraction of the electron charge inside ``r = b x``: ``1 - phi + x phi'``."""
        return 1.0 - self.screening(x) + np.asarray(x) * self.screening_derivative(x)

    def potential(self, r, Z: float) -> np.ndarray:
        """``Phi_Z(r) = Z phi(Z^{1/3} r / b) / r`` from the screening function."""
        r = np.asarray(r, dtype=float)
        return Z * self.screening(r * Z ** (1.0 / 3.0) / self.length_scale) / r

    def density_values(self, r, Z: float = 1.0) -> np.ndarray:
        """``rho_Z(r) = (2 Phi_Z / gamma_TF)^{3/2}``."""
        phi = np.maximum(self.potential(r, Z), 0.0)
        return (2.0 * phi / self.gamma_tf) ** 1.5

    def reference_grid(self, Z: float = 1.0) -> RadialGrid:
        """Log-uniform radial grid ``r = b x Z^{-1/3}`` on the stored samples."""
        b = self.length_scale * Z ** (-1.0 / 3.0)
        return build_grid("log-uniform", b * self.x[0], b * self.x[-1], self.x.size)


def _sample_grid() -> np.ndarray:
    n = int(round((math.log(X_MAX) - math.log(X_MIN)) / X_STEP)) + 1
    return build_grid("log-uniform", X_MIN, X_MAX, n).nodes.copy()


def solve_tf_screening(tol: float = 1e-10, q: int = 2) -> TFSolution:
    """Solve the neutral screening problem.

    Parameters
    ----------
    tol : float
        Bracket width for ``phi'(0)``, in ``[1e-12, 1e-4]``. The collocation
        profile uses ``max(tol, 1e-10)`` as its residual tolerance.
    q : int
        Spin multiplicity; only ``gamma_tf`` and ``length_scale`` depend on it.
    """
    if not (1e-12 <= tol <= 1e-4):
        raise InvalidArgument(f"tol must lie in [1e-12, 1e-4], got {tol}")
    g = gamma_tf(q)
    lo, hi, steps = _shoot(tol)
    slope = 0.5 * (lo + hi)
    bvp = _profile_bvp(slope, max(tol, 1e-10))
    x = _sample_grid()
    phi = np.empty_like(x)
    inner = x < X_BVP
    phi[inner] = _series(slope, x[inner])[0]
    phi[~inner] = bvp.sol(np.log(x[~inner]))[0]
    if np.any(phi <= 0) or np.any(np.diff(phi) >= 0):
        raise SolverFailure("screening profile is not positive and decreasing", {"slope0": slope})
    diag = {
        "bracket": [lo, hi],
        "bisection_steps": steps,
        "collocation_slope": float(bvp.p[0]),
        "collocation_max_rms_residual": float(np.max(bvp.rms_residuals)),
        "collocation_nodes": int(bvp.x.size),
    }
    return TFSolution(x, phi, slope, tf_length_scale(q), q, g, tol, diagnostics=diag)


# ------------------------------------------------------- physical layer


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy components in Hartree; ``attraction`` is reported positive."""

    kinetic: float
    attraction: float
    repulsion: float
    total: float
    scott_term: float | None = None
    remainder: str | None = None

    @classmethod
    def from_parts(cls, kinetic: float, attraction: float, repulsion: float, **kw) -> "EnergyBreakdown":
        k, a, r = float(kinetic), float(attraction), float(repulsion)
        return cls(k, a, r, k - a + r, **kw)

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _check_z(Z: float) -> None:
    if not (np.isfinite(Z) and Z > 0):
        raise InvalidArgument(f"Z must be positive, got {Z}")


def tf_density(sol: TFSolution, Z: float = 1.0) -> RadialDensity:
    """Thomas-Fermi density of the neutral atom with nuclear charge ``Z``.

    Built once at ``Z = 1`` on the sample grid and carried to ``Z`` by the
    exact map ``rho_Z(r) = Z^2 rho_1(Z^{1/3} r)``.
    """
    _check_z(Z)
    grid = sol.reference_grid(1.0)
    x = sol.x
    rho1 = (2.0 * sol.phi / (sol.gamma_tf * sol.length_scale * x)) ** 1.5
    base = RadialDensity(grid, rho1)
    if Z == 1:
        return base
    return rescale_density(base, Z, inverse=True)


def tf_potential(sol: TFSolution, Z: float = 1.0) -> np.ndarray:
    """Mean-field potential ``Z/r - rho_Z * |x|^{-1}`` at the density nodes.

    The electronic part comes from Newton's theorem applied to the sampled
    density, independently of the screening function used to build it. It
    is arranged as

        Phi(r) = (Q_ext + Q_out(r)) / r - int_r^{r_max} 4 pi s rho(s) ds,

    where ``Q_out(r)`` is the sampled charge between ``r`` and ``r_max`` and
    ``Q_ext = Z (phi(X) - X phi'(X))`` the neutral-tail charge beyond the last
    node. Both pieces are positive, so the far tail does not suffer from
    cancellation between ``Z/r`` and the screening cloud.
    """
    _check_z(Z)
    rho = tf_density(sol, Z)
    grid, r = rho.grid, rho.grid.nodes
    inner = enclosed_charge(grid, rho.values)
    outer = grid.cumulative(4 * np.pi * r * rho.values)
    # tail sums accumulated from the outside in
    q_out = np.concatenate((np.cumsum(np.diff(inner)[::-1])[::-1], [0.0]))
    o_out = np.concatenate((np.cumsum(np.diff(outer)[::-1])[::-1], [0.0]))
    X = sol.x[-1]
    q_ext = Z * float(sol.screening(X)[0] - X * sol.screening_derivative(X)[0])
    return (q_ext + q_out) / r - o_out


def tf_energy_of_density(rho: RadialDensity, Z: float, q: int = 2) -> EnergyBreakdown:
    """Evaluate the Thomas-Fermi functional on an arbitrary sampled density."""
    g = gamma_tf(q)
    grid = rho.grid
    r = grid.nodes
    kinetic = 0.3 * g * grid.integrate(4 * np.pi * r**2 * rho.values ** (5.0 / 3.0))
    attraction = Z * grid.integrate(4 * np.pi * r * rho.values)
    repulsion = coulomb_pair(rho, rho).value
    return EnergyBreakdown.from_parts(kinetic, attraction, repulsion)


def tf_energy(sol: TFSolution, Z: float = 1.0) -> EnergyBreakdown:
    """Components of ``E^TF(Z)`` by quadrature on :func:`tf_density`."""
    _check_z(Z)
    return tf_energy_of_density(tf_density(sol, Z), Z, sol.q)


# ----------------------------------------------------- direct minimiser


def _cumulative_matrix(grid: RadialGrid) -> np.ndarray:
    return np.column_stack([grid.cumulative(col) for col in np.eye(grid.n)])


def _scaled_newton_step(hess, grad, a, slack):
    """Newton step, switching to the charge-constrained KKT step when needed.

    The system is Jacobi-scaled before the Cholesky solve; the raw Hessian
    spans many decades between the origin and the far tail.
    """
    from scipy.linalg import cho_factor, cho_solve

    d = 1.0 / np.sqrt(np.diag(hess))
    fac = cho_factor(d[:, None] * hess * d[None, :])

    def solve(v):
        return d * cho_solve(fac, d * v)

    step = -solve(grad)
    if a @ step <= slack:
        return step
    # enforce a . (rho + step) = Z with one Lagrange multiplier
    ha = solve(a)
    mu = (a @ step - slack) / (a @ ha)
    return step - mu * ha


def tf_minimize_direct(
    Z: float = 1.0,
    grid: RadialGrid | None = None,
    max_iter: int = 200,
    q: int = 2,
) -> tuple[RadialDensity, dict]:
    """Minimise the discretised functional over ``rho >= 0`` with charge ``<= Z``.

    The discrete objective uses the same quadrature as :func:`tf_energy_of_density`
    and is convex, so a damped Newton iteration with the exact gradient and
    Hessian is used: fraction-to-boundary damping keeps ``rho > 0``, an Armijo
    backtrack guarantees descent, and every accepted iterate is projected
    onto the charge constraint by uniform scaling. Nothing here uses the
    screening equation.

    Raises
    ------
    SolverFailure
        If an accepted iterate does not lower the objective, or the iteration
        limit is reached before the Newton decrement is negligible.
    """
    _check_z(Z)
    if grid is None:
        b = tf_length_scale(q, Z)
        grid = build_grid("log-uniform", 1e-9 * b, 2e3 * b, 500)
    g = gamma_tf(q)
    r, w = grid.nodes, grid.weights
    C = _cumulative_matrix(grid)
    c4 = 4 * np.pi * r**2
    coul = C.T @ (C * (w / r**2)[:, None]) + np.outer(C[-1], C[-1]) / r[-1]
    coul = c4[:, None] * coul * c4[None, :]
    coul = 0.5 * (coul + coul.T)
    lin = Z * w * 4 * np.pi * r

    def charge(rho):
        return float(w @ (c4 * rho))

    def value(rho):
        return 0.3 * g * (w @ (c4 * rho ** (5.0 / 3.0))) - lin @ rho + 0.5 * rho @ coul @ rho

    def project(rho):
        rho = np.maximum(rho, 0.0)
        total = charge(rho)
        return rho * (Z / total) if total > Z else rho

    b = tf_length_scale(q, Z)
    rho = (r / b) ** -1.5 * (1 + r / b) ** -4.5  # positive, r^-6 tail
    rho = project(rho * Z / charge(rho))
    f = value(rho)
    history = [float(f)]
    decrement = np.inf
    for it in range(1, max_iter + 1):
        grad = w * c4 * 0.5 * g * rho ** (2.0 / 3.0) - lin + coul @ rho
        hess = coul + np.diag(w * c4 * (g / 3.0) * rho ** (-1.0 / 3.0))
        step = _scaled_newton_step(hess, grad, w * c4, Z - charge(rho))
        decrement = float(-grad @ step)
        if decrement <= 1e-15 * abs(f):
            break
        # projected path: no component may shrink below a tenth of itself
        alpha = 1.0
        while True:
            trial = project(np.maximum(rho + alpha * step, 0.1 * rho))
            ft = value(trial)
            if ft <= f + 1e-4 * float(grad @ (trial - rho)) or alpha < 1e-12:
                break
            alpha *= 0.5
        if ft > f:
            raise SolverFailure(
                "objective did not decrease across a projected step",
                {"iteration": it, "previous": float(f), "current": float(ft)},
            )
        rho, f = trial, ft
        history.append(float(f))
    else:
        raise SolverFailure("direct minimisation hit the iteration limit", {"decrement": decrement})
    out = RadialDensity(grid, rho)
    report = {
        "objective": float(f),
        "history": history,
        "charge": float(out.charge),
        "iterations": len(history) - 1,
        "newton_decrement": decrement,
    }
    return out, report


# ------------------------------------------------------------------ cache


def save_tf_cache(sol: TFSolution, directory: str | Path) -> tuple[Path, Path]:
    """Write ``phi.csv`` (``x,phi``) and ``phi.json`` (slope and provenance)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = d / "phi.csv", d / "phi.json"
    with open(csv_path, "w", newline="") as fh:
        fh.write("x,phi\n")
        for x, p in zip(sol.x, sol.phi):
            fh.write(f"{float(x)!r},{float(p)!r}\n")
    meta = {
        "slope0": sol.slope0,
        "tol": sol.tol,
        "integrator": sol.integrator,
        "version": __version__,
        "q": sol.q,
        "diagnostics": sol.diagnostics,
    }
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def load_tf_cache(directory: str | Path, tol: float | None = None, q: int | None = None) -> TFSolution | None:
    """Reload a cached solution, or ``None`` if missing or not matching."""
    d = Path(directory)
    csv_path, json_path = d / "phi.csv", d / "phi.json"
    if not (csv_path.exists() and json_path.exists()):
        return None
    meta = json.loads(json_path.read_text())
    if meta.get("version") != __version__:
        return None
    if tol is not None and meta.get("tol") != tol:
        return None
    qq = meta.get("q", 2)
    if q is not None and qq != q:
        return None
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    return TFSolution(
        data[:, 0].copy(),
        data[:, 1].copy(),
        float(meta["slope0"]),
        tf_length_scale(qq),
        qq,
        gamma_tf(qq),
        float(meta["tol"]),
        meta.get("integrator", ""),
        meta.get("diagnostics", {}),
    )
