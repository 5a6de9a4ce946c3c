"""Radial channel spectra of hydrogen-like one-particle operators in momentum space.

Two operators are treated in scaled units,

    schrodinger:    p^2 / 2            - gamma / |x|
    chandrasekhar:  sqrt(p^2 + 1) - 1  - gamma / |x|

restricted to angular momentum ``ell``. With ``g(p) = p f(p)`` and the flat
measure ``dp`` the Coulomb term is the integral operator with kernel
``-(gamma / pi) Q_ell((p^2 + p'^2) / (2 p p'))``, ``Q_ell`` the Legendre
function of the second kind. In ``t = ln p`` the argument becomes
``cosh(t - t')``, so after the similarity ``v = sqrt(p) g`` the kernel is
``e^{t/2} K(t - t') e^{t'/2}`` with the convolution kernel
``K(tau) = Q_ell(cosh tau)`` whose Fourier transform is known in closed form:

    K^(omega) = (pi / 2) |Gamma((ell + 1 + i omega)/2) / Gamma((ell + 2 + i omega)/2)|^2.

The default ``"sinc"`` scheme expands ``v`` in translated sinc functions on a
uniform ``t`` grid. The convolution part is then represented exactly in the
band-limited space and only the smooth ``e^{t/2}`` factors are collocated.
Convergence is exponential in ``1/h``.

The ``"gauss-subtraction"`` scheme (Gauss nodes on ``u = p/(p+p0)`` with the
logarithmic diagonal removed by subtracting ``f(p) C_ell``) is kept for
comparison; it converges only algebraically.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh, toeplitz
from scipy.optimize import brentq
from scipy.special import loggamma, roots_legendre

from .errors import InvalidArgument, RefinementNeeded

__all__ = [
    "GAMMA_CRITICAL",
    "Discretization",
    "ChannelSpectrum",
    "StabilityReport",
    "legendre_q",
    "kernel_symbol",
    "channel_constant",
    "kinetic_energy",
    "default_discretization",
    "channel_hamiltonian",
    "channel_eigensystem",
    "schrodinger_exact",
    "schrodinger_levels",
    "chandrasekhar_levels",
    "critical_coupling_probe",
    "tail_exponent",
    "hankel_symbol_phase",
    "position_transform",
]

GAMMA_CRITICAL = 2.0 / math.pi
OPERATORS = ("schrodinger", "chandrasekhar")
SCHEMES = ("sinc", "gauss-subtraction")
# dense eigensolvers lose accuracy as the kinetic diagonal grows; cap the
# momentum range per operator (p^2/2 grows much faster than sqrt(p^2+1))
T_MAX_CAP = {"schrodinger": math.log(1e5), "chandrasekhar": math.log(1e7)}
# per-unit-t decay of the truncation error above which no extrapolation is tried
SLOW_TAIL_RATIO = 0.9


# ------------------------------------------------------------ kernel pieces


def legendre_q(lmax: int, z, zm1=None) -> np.ndarray:
    """Legendre functions of the second kind ``Q_0 .. Q_lmax`` for ``z > 1``.

    ``zm1 = z - 1`` may be passed separately to avoid cancellation near the
    diagonal ``p = p'``, where ``zm1 = (p - p')^2 / (2 p p')``. Upward
    recurrence is used for ``z < 1.05`` (where it is stable); elsewhere the
    minimal solution is obtained by Miller's backward recurrence normalised
    to ``Q_0``.

    Returns an array of shape ``(lmax + 1,) + z.shape``.
    """
    z = np.asarray(z, dtype=float)
    zm1 = z - 1.0 if zm1 is None else np.asarray(zm1, dtype=float)
    q0 = 0.5 * np.log1p(2.0 / zm1)
    up = np.empty((lmax + 1,) + z.shape)
    up[0] = q0
    if lmax >= 1:
        up[1] = z * q0 - 1.0
    for l in range(1, lmax):
        up[l + 1] = ((2 * l + 1) * z * up[l] - l * up[l - 1]) / (l + 1)
    near = z < 1.05
    if lmax < 2 or near.all():
        return up
    zf = np.where(near, 2.0, z)
    ratio = 1.0 / (zf + np.sqrt(zf * zf - 1.0))
    start = lmax + int(math.ceil(math.log(1e-18) / math.log(float(ratio.max())))) + 5
    down = np.empty((lmax + 1,) + z.shape)
    a_next = np.zeros_like(zf)
    a = np.full_like(zf, 1e-300)
    for l in range(start, 0, -1):
        a_prev = ((2 * l + 1) * zf * a - (l + 1) * a_next) / l
        a_next, a = a, a_prev
        if l - 1 <= lmax:
            down[l - 1] = a
        s = np.abs(a)
        big = s > 1e200
        if big.any():
            a = np.where(big, a / s, a)
            a_next = np.where(big, a_next / s, a_next)
            down[l - 1 :] = np.where(big, down[l - 1 :] / np.where(big, s, 1.0), down[l - 1 :])
    q0f = 0.5 * np.log1p(2.0 / np.where(near, 1.0, zm1))
    down *= q0f / down[0]
    return np.where(near, up, down)


def kernel_symbol(ell: int, omega) -> np.ndarray:
    """Fourier transform of ``tau -> Q_ell(cosh tau)``."""
    w = np.asarray(omega, dtype=float)
    a = loggamma((ell + 1 + 1j * w) / 2).real - loggamma((ell + 2 + 1j * w) / 2).real
    return 0.5 * math.pi * np.exp(2 * a)


def channel_constant(ell: int) -> float:
    """``C_ell = int Q_ell(cosh tau) d tau``; pi^2/2, 2, pi^2/8, 8/9, ..."""
    return float(kernel_symbol(ell, 0.0))


@functools.lru_cache(maxsize=128)
def _sinc_coefficients(ell: int, h: float, m_cap: int) -> np.ndarray:
    """Band-limited kernel samples ``kappa_m = (1/pi) int_0^{pi/h} K^ cos(m h w) dw``.

    Pure function of its arguments; ``m_cap`` is a power of two so that the
    quadrature, and hence every ``kappa_m``, is identical for all basis sizes
    in one bucket.
    """
    M = 2 * m_cap + 256
    x, wt = roots_legendre(M)
    u = 0.5 * (x + 1.0)
    omega = math.pi / h * u
    weights = 0.5 * wt * kernel_symbol(ell, omega) / h
    m = np.arange(m_cap)
    out = np.cos(np.outer(m, math.pi * u)) @ weights
    out.setflags(write=False)
    return out


def _bucket(n: int) -> int:
    return max(512, 1 << (int(n) - 1).bit_length())


def kinetic_energy(kind: str, p: np.ndarray) -> np.ndarray:
    """Kinetic symbol; ``sqrt(p^2+1)-1`` is written as ``p^2/(sqrt(p^2+1)+1)``."""
    if kind == "schrodinger":
        return 0.5 * p * p
    if kind == "chandrasekhar":
        return p * p / (np.sqrt(p * p + 1.0) + 1.0)
    raise InvalidArgument(f"unknown operator {kind!r}; expected one of {OPERATORS}")


# ----------------------------------------------------------- discretisation


@dataclass(frozen=True)
class Discretization:
    """Basis description for one channel eigensolve.

    For ``scheme="sinc"``: uniform ``t = ln p`` nodes from ``t_min`` to
    ``t_max`` with spacing ``h``. For ``scheme="gauss-subtraction"``: ``n``
    Gauss nodes on ``u = p/(p + p0)``.
    """

    scheme: str = "sinc"
    h: float = 0.2
    t_min: float = -14.0
    t_max: float = 8.0
    n: int = 600
    p0: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "sinc":
            if not (self.h > 0 and self.t_max > self.t_min):
                raise InvalidArgument("sinc discretisation needs h > 0 and t_max > t_min")
        elif self.n < 16 or self.p0 <= 0:
            raise InvalidArgument("gauss-subtraction needs n >= 16 and p0 > 0")

    @property
    def size(self) -> int:
        if self.scheme == "sinc":
            return int(round((self.t_max - self.t_min) / self.h)) + 1
        return self.n

    @property
    def momentum_cutoff(self) -> float:
        if self.scheme == "sinc":
            return math.exp(self.t_min + (self.size - 1) * self.h)
        return math.inf

    def nodes(self) -> np.ndarray:
        """Momentum nodes ``p_i``."""
        if self.scheme == "sinc":
            return np.exp(self.t_min + self.h * np.arange(self.size))
        x, _ = roots_legendre(self.n)
        u = 0.5 * (x + 1.0)
        return self.p0 * u / (1.0 - u)

    def refined(self, step: int = 1, t_cap: float = math.inf) -> "Discretization":
        """Next member of the refinement sequence used by the level solvers."""
        if self.scheme == "sinc":
            return replace(
                self,
                h=self.h * 0.75**step,
                t_min=self.t_min - 1.0 * step,
                t_max=min(self.t_max + 0.5 * step, max(t_cap, self.t_max)),
            )
        return replace(self, n=self.n * 2**step)

    def as_dict(self) -> dict:
        d = {"scheme": self.scheme, "size": self.size}
        if self.scheme == "sinc":
            d.update(h=self.h, t_min=self.t_min, t_max=self.t_max, momentum_cutoff=self.momentum_cutoff)
        else:
            d.update(n=self.n, p0=self.p0)
        return d


def default_discretization(gamma: float, ell: int, n_count: int, kind: str = "chandrasekhar") -> Discretization:
    """Sinc grid covering levels ``n = ell+1 .. ell+n_count`` at coupling ``gamma``.

    A bound state ``n`` lives around ``p ~ gamma / n``; in ``v = sqrt(p) g``
    it vanishes like ``p^{ell + 3/2}`` below and like ``p^{-ell - 5/2}``
    above that scale, which fixes the range. The spacing resolves the
    ``n - ell - 1`` nodes of the highest level.
    """
    n_top = ell + n_count
    t_min = math.log(gamma / n_top) - 30.0 / (ell + 1.5)
    t_max = min(math.log(gamma) + 28.0 / (ell + 2.5), T_MAX_CAP[kind])
    h = min(0.2, 2.0 / n_top)
    return Discretization("sinc", h=h, t_min=t_min, t_max=t_max)


def _coulomb_matrix(ell: int, disc: Discretization) -> np.ndarray:
    """Symmetric matrix of ``(1/pi) x`` the channel Coulomb kernel (without gamma)."""
    p = disc.nodes()
    if disc.scheme == "sinc":
        n = disc.size
        kappa = _sinc_coefficients(ell, float(disc.h), _bucket(n))[:n]
        sp = np.sqrt(p)
        return (disc.h / math.pi) * sp[:, None] * toeplitz(kappa) * sp[None, :]
    x, w = roots_legendre(disc.n)
    u = 0.5 * (x + 1.0)
    wp = 0.5 * w * disc.p0 / (1.0 - u) ** 2
    P, Pp = np.meshgrid(p, p, indexing="ij")
    zm1 = (P - Pp) ** 2 / (2 * P * Pp)
    np.fill_diagonal(zm1, 1.0)
    Q = legendre_q(ell, 1.0 + zm1, zm1)[ell]
    np.fill_diagonal(Q, 0.0)
    # subtract f(p) C_ell: int Q(z) g(p')/p' ... handled in g = p f variables
    diag = p * channel_constant(ell) - (Q * (wp[None, :] * p[:, None] / p[None, :])).sum(axis=1)
    S = np.sqrt(wp[:, None] * wp[None, :]) * Q
    S[np.diag_indices(disc.n)] = diag
    return 0.5 * (S + S.T) / math.pi


def channel_hamiltonian(kind: str, gamma: float, ell: int, disc: Discretization) -> np.ndarray:
    """Dense symmetric matrix of the channel operator."""
    p = disc.nodes()
    H = -gamma * _coulomb_matrix(ell, disc)
    H[np.diag_indices_from(H)] += kinetic_energy(kind, p)
    return 0.5 * (H + H.T)


def channel_eigensystem(
    kind: str, gamma: float, ell: int, disc: Discretization, count: int, vectors: bool = False
):
    """Lowest ``count`` eigenvalues (and optionally vectors) of the channel matrix."""
    H = channel_hamiltonian(kind, gamma, ell, disc)
    count = min(count, H.shape[0])
    # full divide-and-conquer: the subset drivers lose ~1e-7 relative on
    # small eigenvalues of these strongly graded matrices
    if vectors:
        w, v = eigh(H, driver="evd")
        return w[:count], v[:, :count]
    return eigh(H, eigvals_only=True, driver="evd")[:count]


def hankel_symbol_phase(ell: int, omega) -> np.ndarray:
    """Phase of the radial Fourier-Bessel transform in Mellin space.

    ``u(r) = sqrt(2/pi) int (p r) j_ell(p r) g(p) dp`` becomes, in ``t = ln p``
    and ``tau = ln r`` with the ``sqrt`` weights, a convolution in ``tau + t``
    whose symbol ``2^{-i w} Gamma((ell+3/2-i w)/2) / Gamma((ell+3/2+i w)/2)``
    has unit modulus. Returns its argument.
    """
    w = np.asarray(omega, dtype=float)
    return -w * math.log(2.0) - 2.0 * loggamma(0.5 * (ell + 1.5) + 0.5j * w).imag


@functools.lru_cache(maxsize=64)
def _hankel_samples(ell: int, h: float, m_cap: int) -> np.ndarray:
    """``T(m) = int_0^1 cos(pi u m + phase(pi u / h)) du`` for ``|m| < m_cap``."""
    M = 2 * (2 * m_cap) + 512
    x, wt = roots_legendre(M)
    u = 0.5 * (x + 1.0)
    phase = hankel_symbol_phase(ell, math.pi * u / h)
    m = np.arange(-m_cap + 1, m_cap)
    out = np.cos(np.outer(m, math.pi * u) + phase[None, :]) @ (0.5 * wt)
    out.setflags(write=False)
    return out


def position_transform(ell: int, disc: Discretization, margin: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Map sinc coefficients in ``t = ln p`` to sinc coefficients in ``tau = ln r``.

    Returns ``(r, T)``: radii ``r_k = exp(tau_k)`` on a uniform ``tau`` grid
    with the same spacing, mirrored from the momentum window and widened by
    ``margin`` nodes on both sides, and the matrix ``T`` (Hankel structure)
    such that for an eigenvector ``c`` the radial function is
    ``u(r_k) = (T c)_k / sqrt(h r_k)``. ``T`` is an isometry up to the
    truncation of the window, so ``sum (T c)^2`` checks the normalisation.
    """
    if disc.scheme != "sinc":
        raise InvalidArgument("position_transform needs the sinc scheme")
    n, h = disc.size, float(disc.h)
    k_count = n + 2 * margin
    m_cap = _bucket(n + margin)
    samples = _hankel_samples(ell, h, m_cap)
    k = np.arange(k_count)[:, None]
    j = np.arange(n)[None, :]
    # tau_k + t_j = (k + j - (n - 1) - margin) h
    T = samples[k + j - (n - 1) - margin + (m_cap - 1)]
    t_last = disc.t_min + (n - 1) * h
    tau = -t_last - margin * h + h * np.arange(k_count)
    return np.exp(tau), T


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class ChannelSpectrum:
    """Negative eigenvalues of one radial channel, ascending, in scaled units.

    ``exact`` holds the closed-form hydrogen levels for the Schrödinger
    operator. ``delta`` is the largest change of the returned eigenvalues
    over the last refinement, and ``history`` lists ``(basis size, levels)``
    for every refinement tried. When ``one_sided`` is set the levels were not
    extrapolated: they are upper bounds and ``delta`` is a rough size of the
    missing momentum tail, given per level in ``level_delta``.
    """

    operator_kind: str
    gamma: float
    ell: int
    eigenvalues: tuple
    disc: dict
    delta: float
    exact: tuple | None = None
    history: tuple = field(default=(), repr=False)
    one_sided: bool = False
    level_delta: tuple | None = None

    @property
    def principal_numbers(self) -> tuple:
        return tuple(range(self.ell + 1, self.ell + 1 + len(self.eigenvalues)))

    def rows(self) -> list[dict]:
        """Records for the ``operator,gamma,ell,n,eigenvalue,resolution`` dump."""
        return [
            {
                "operator": self.operator_kind,
                "gamma": self.gamma,
                "ell": self.ell,
                "n": n,
                "eigenvalue": e,
                "resolution": self.disc["size"],
            }
            for n, e in zip(self.principal_numbers, self.eigenvalues)
        ]


@dataclass(frozen=True)
class StabilityReport:
    gamma: float
    ground_state_by_refinement: tuple
    verdict: str
    limit_estimate: float | None = None


def _check_gamma(gamma: float) -> None:
    if not (np.isfinite(gamma) and gamma > 0):
        raise InvalidArgument(f"gamma must be positive, got {gamma}")


def _check_channel(ell: int, n_count: int) -> None:
    if ell < 0 or int(ell) != ell:
        raise InvalidArgument(f"ell must be a nonnegative integer, got {ell}")
    if n_count < 1:
        raise InvalidArgument(f"n_count must be >= 1, got {n_count}")


def schrodinger_exact(gamma: float, ell: int, n_count: int) -> tuple:
    """Closed-form hydrogen levels ``-gamma^2 / (2 n^2)``, ``n = ell+1 ..``."""
    return tuple(-(gamma**2) / (2.0 * n * n) for n in range(ell + 1, ell + 1 + n_count))


def _window(h: float, t_lo: float, t_hi: float) -> Discretization:
    """Sinc grid anchored at ``t_hi`` reaching down to at most ``t_lo``."""
    n = int(math.ceil((t_hi - t_lo) / h - 1e-9)) + 1
    return Discretization("sinc", h=h, t_min=t_hi - (n - 1) * h, t_max=t_hi)


def _negative_levels(kind, gamma, ell, disc, n_count):
    vals = channel_eigensystem(kind, gamma, ell, disc, n_count)
    if vals.size < n_count or np.any(vals >= 0):
        return None
    return vals


def _converged_levels(kind, gamma, ell, n_count, disc, tol, max_refinements):
    """Refine the spacing, then remove the momentum-truncation error.

    Stage 1 shrinks ``h`` (and lowers ``t_min``) on a fixed upper end until
    the levels move by less than ``tol / 4``. Stage 2 extends the upper end
    in four equal steps at the final spacing. The truncation error decays
    geometrically in ``t_max`` (like a power of the momentum cutoff), so
    Aitken extrapolation of the last three and of the previous three points
    gives the limit and, from their difference, its error.
    """
    if disc.scheme != "sinc":
        # algebraic scheme: plain doubling of the node count
        history, prev, current = [], None, disc
        for step in range(max_refinements + 1):
            vals = _negative_levels(kind, gamma, ell, current, n_count)
            history.append((current.size, None if vals is None else tuple(map(float, vals))))
            if vals is not None and prev is not None:
                delta = float(np.max(np.abs(vals - prev)))
                if delta < tol:
                    return vals, current, delta, history
            prev, current = vals, current.refined()
        raise RefinementNeeded(
            f"{kind} levels (gamma={gamma}, ell={ell}) did not settle to {tol:g}",
            {"history": history, "last_disc": current.as_dict()},
        )

    cap = T_MAX_CAP[kind]
    h, t_lo, t_hi = disc.h, disc.t_min, disc.t_max
    history = []
    prev = None
    for step in range(max_refinements + 1):
        levels, used, tail_err = _tail_limit(kind, gamma, ell, n_count, h, t_lo, t_hi, cap, tol, history)
        if prev is not None:
            delta = max(tail_err, float(np.max(np.abs(levels - prev))))
            if delta < tol:
                return levels, used, delta, history
        prev = levels
        h, t_lo = h * 0.75, t_lo - 1.0
    raise RefinementNeeded(
        f"{kind} levels (gamma={gamma}, ell={ell}) did not settle to {tol:g}",
        {"history": history, "last_disc": used.as_dict()},
    )


def tail_exponent(gamma: float, ell: int) -> float:
    """Decay rate of the momentum-truncation error of the relativistic levels.

    Eigenfunctions fall off like ``p^(-2-sigma)`` where ``sigma`` in (0, 1) solves
    ``gamma * K_ell(i sigma) / pi = 1`` (the Mellin symbol continued to the
    imaginary axis). Cutting the momentum range at ``e^T`` shifts the levels
    by ``O(e^(-2 sigma T))``. Returns ``2 sigma``; zero at the critical coupling.
    """

    def symbol(sig):
        a = (loggamma((ell + 1 + sig) / 2) + loggamma((ell + 1 - sig) / 2)
             - loggamma((ell + 2 + sig) / 2) - loggamma((ell + 2 - sig) / 2)).real
        return 0.5 * math.exp(a)

    if gamma * symbol(0.0) >= 1.0:
        return 0.0
    hi = 1.0 - 1e-15
    if gamma * symbol(hi) <= 1.0:
        return 2.0
    return 2.0 * brentq(lambda sig: gamma * symbol(sig) - 1.0, 0.0, hi, xtol=1e-15)


def _ladder(kind, gamma, ell, n_count, h, t_lo, starts, history):
    rows = []
    for top in starts:
        d = _window(h, t_lo, top)
        v = _negative_levels(kind, gamma, ell, d, n_count)
        history.append((d.size, None if v is None else tuple(map(float, v))))
        if v is None:
            raise RefinementNeeded(
                f"{kind} levels (gamma={gamma}, ell={ell}): fewer than {n_count} bound states on {d.as_dict()}",
                {"history": history},
            )
        rows.append(v)
    return np.array(rows), d


def _tail_limit(kind, gamma, ell, n_count, h, t_lo, t_hi, cap, tol, history):
    """Levels at spacing ``h`` with the momentum-truncation error removed.

    The upper end is extended in steps that are whole multiples of ``h``.
    For the relativistic operator the error is a series in ``q^k`` with the
    known ratio ``q = exp(-tail_exponent * step)``, removed by a Richardson
    table. Otherwise the ratio is estimated from the data (Aitken).
    """
    step_t = max(1, round(1.0 / h)) * h
    if kind == "chandrasekhar":
        rate = tail_exponent(gamma, ell)
        depth = 6
        start = min(t_hi, cap - depth * step_t)
        E, d = _ladder(kind, gamma, ell, n_count, h, t_lo, [start + k * step_t for k in range(depth + 1)], history)
        if float(np.max(np.abs(E[-1] - E[-2]))) < tol / 4:
            return E[-1], d, float(np.max(np.abs(E[-1] - E[-2])))
        q = math.exp(-rate * step_t)
        table = E
        err = math.inf
        for m in range(1, depth + 1):
            qm = q**m
            if qm > 0.999:
                break
            nxt = (table[1:] - qm * table[:-1]) / (1.0 - qm)
            err_m = float(np.max(np.abs(nxt[-1] - table[-1])))
            if err_m >= err:
                break
            table, err = nxt, err_m
            if err < tol / 8:
                break
        return table[-1], d, err

    start = min(t_hi, cap - 3 * step_t)
    E, d = _ladder(kind, gamma, ell, n_count, h, t_lo, [start + k * step_t for k in range(4)], history)
    inc = np.diff(E, axis=0)
    last = float(np.max(np.abs(inc[-1])))
    if last < tol / 4:
        return E[-1], d, last
    with np.errstate(divide="ignore", invalid="ignore"):
        r_prev = inc[1] / inc[0]
        r_last = inc[2] / inc[1]
    if not np.all((r_last > 0) & (r_last < 0.95) & (r_prev > 0) & (r_prev < 0.95)):
        raise RefinementNeeded(
            f"{kind} levels (gamma={gamma}, ell={ell}): momentum-truncation error is not geometric",
            {"history": history, "ratios": r_last.tolist()},
        )
    lim_prev = E[2] + inc[1] * r_prev / (1 - r_prev)
    lim_last = E[3] + inc[2] * r_last / (1 - r_last)
    return lim_last, d, float(np.max(np.abs(lim_last - lim_prev)))


def schrodinger_levels(
    gamma: float,
    ell: int,
    n_count: int,
    disc: Discretization | None = None,
    tol: float = 1e-9,
    max_refinements: int = 6,
) -> ChannelSpectrum:
    """Closed-form hydrogen levels and their numerical counterparts.

    The numerical path shares every line of kernel code with
    :func:`chandrasekhar_levels`; only the kinetic symbol differs.

    Examples
    --------
    >>> s = schrodinger_levels(1.0, 0, 3)
    >>> [round(e, 6) for e in s.exact]
    [-0.5, -0.125, -0.055556]
    """
    _check_gamma(gamma)
    _check_channel(ell, n_count)
    disc = disc or default_discretization(gamma, ell, n_count, "schrodinger")
    levels, used, delta, history = _converged_levels("schrodinger", gamma, ell, n_count, disc, tol, max_refinements)
    return ChannelSpectrum(
        "schrodinger",
        gamma,
        ell,
        tuple(float(v) for v in levels),
        used.as_dict(),
        delta,
        exact=schrodinger_exact(gamma, ell, n_count),
        history=tuple(history),
    )


def chandrasekhar_levels(
    gamma: float,
    ell: int,
    n_count: int,
    disc: Discretization | None = None,
    tol: float = 1e-9,
    max_refinements: int = 6,
    one_sided: bool = False,
) -> ChannelSpectrum:
    """Lowest ``n_count`` levels of ``sqrt(p^2+1) - 1 - gamma/|x|`` in channel ``ell``.

    The basis is refined (finer ``h``, wider momentum range) until the
    levels move by less than ``tol`` (absolute, scaled units).

    Close to the critical coupling the momentum tail decays too slowly to be
    extrapolated. With ``one_sided=True`` such channels return the levels at
    the largest admissible cutoff instead of raising; enlarging the range at
    fixed spacing borders the matrix, so these can only be too high.

    Raises
    ------
    InvalidArgument
        ``gamma`` outside ``(0, 2/pi]``; use :func:`critical_coupling_probe`
        beyond the critical coupling.
    RefinementNeeded
        The tolerance is not met within ``max_refinements`` steps. The
        diagnostics carry the per-refinement levels.
    """
    _check_gamma(gamma)
    if gamma > GAMMA_CRITICAL * (1 + 1e-12):
        raise InvalidArgument(f"gamma={gamma} outside the admissible range (0, 2/pi]")
    _check_channel(ell, n_count)
    disc = disc or default_discretization(gamma, ell, n_count)
    slow = math.exp(-tail_exponent(gamma, ell)) > SLOW_TAIL_RATIO
    per_level = None
    if slow and one_sided and disc.scheme == "sinc":
        levels, used, per_level, history = _levels_at_cap(gamma, ell, n_count, disc, max_refinements)
        delta = float(per_level.max())
        per_level = tuple(float(v) for v in per_level)
    else:
        levels, used, delta, history = _converged_levels(
            "chandrasekhar", gamma, ell, n_count, disc, tol, max_refinements
        )
        slow = False
    return ChannelSpectrum(
        "chandrasekhar",
        gamma,
        ell,
        tuple(float(v) for v in levels),
        used.as_dict(),
        delta,
        history=tuple(history),
        one_sided=slow,
        level_delta=per_level,
    )


def _levels_at_cap(gamma, ell, n_count, disc, max_refinements):
    """Unextrapolated levels at the momentum cap for a slowly decaying tail.

    The per-level uncertainty combines the spacing change with
    ``T * |last increment|``, the size of an algebraic tail whose increments
    fall like ``T^-2``.
    """
    kind = "chandrasekhar"
    cap = T_MAX_CAP[kind]
    history = []
    h, t_lo = disc.h, disc.t_min
    prev = None
    for _ in range(max_refinements + 1):
        step_t = max(1, round(1.0 / h)) * h
        E, used = _ladder(kind, gamma, ell, n_count, h, t_lo, [cap - step_t, cap], history)
        if prev is not None:
            change = np.abs(E[-1] - prev)
            if np.all(change < 1e-3 * np.abs(E[-1])):
                tail = np.abs(E[1] - E[0]) * cap / step_t
                return E[-1], used, np.maximum(change, tail), history
        prev = E[-1]
        h, t_lo = h * 0.75, t_lo - 1.0
    raise RefinementNeeded(
        f"{kind} levels (gamma={gamma}, ell={ell}) did not settle in the spacing",
        {"history": history},
    )


def critical_coupling_probe(gamma: float, refinements: int = 5, ell: int = 0) -> StabilityReport:
    """Track the lowest Chandrasekhar eigenvalue while the basis grows.

    Each refinement halves ``h`` in steps of ``1/sqrt(2)`` and multiplies the
    momentum cutoff by 4 (the cap on the cutoff that protects the dense
    eigensolver is lifted here, since round-off there is far below the
    effects being probed). The verdict is ``"collapsing"`` when the sequence
    keeps falling without shrinking increments, or drops below ``-1``
    (the lower bound ``|p| - (2/pi)/|x| >= 0`` forbids that when bounded).
    Otherwise it is ``"bounded"`` and a geometric extrapolation of the
    increments is reported as ``limit_estimate``.
    """
    _check_gamma(gamma)
    if refinements < 4:
        raise InvalidArgument("critical_coupling_probe needs at least 4 refinements")
    base = Discretization("sinc", h=0.2, t_min=math.log(gamma) - 20.0, t_max=8.0)
    seq = []
    for k in range(refinements):
        disc = replace(base, h=base.h * 2 ** (-k / 2), t_max=base.t_max + k * math.log(4.0))
        e0 = float(channel_eigensystem("chandrasekhar", gamma, ell, disc, 1)[0])
        seq.append((disc.size, disc.momentum_cutoff, e0))
    values = np.array([v for _, _, v in seq])
    inc = -np.diff(values)
    falling = np.all(inc > 0)
    below = values.min() < -1.0
    shrinking = inc[-1] < 0.8 * inc[0] and np.all(inc[1:] <= inc[:-1] * 1.05)
    if below or (falling and not shrinking):
        return StabilityReport(gamma, tuple(seq), "collapsing", None)
    ratio = float(inc[-1] / inc[-2]) if inc[-2] > 0 else 0.0
    ratio = min(max(ratio, 0.0), 0.95)
    limit = float(values[-1] - inc[-1] * ratio / (1.0 - ratio)) if inc[-1] > 0 else float(values[-1])
    return StabilityReport(gamma, tuple(seq), "bounded", limit)
