"""Scott coefficient s(gamma) and the two-term energy expansion.

``s(gamma)`` is ``gamma^-2`` times the trace of the difference between the
negative parts of the hydrogen Schrödinger operator ``p^2/2 - gamma/|x|``
and the Chandrasekhar operator ``sqrt(p^2+1) - 1 - gamma/|x|``, counted
with spin multiplicity ``q``. Channel by channel this is

    s = gamma^-2 sum_l q (2l+1) sum_{n>l} (-gamma^2/(2n^2) - e^C_{n,l}).

The double sum is truncated at ``(ell_max, n_max)``. Each channel is
completed by an ``a_l / n^3`` tail and the channel totals by a
``b / (l + 1/2)^2`` tail; both tails follow from first-order perturbation
theory in ``-p^4/8``, which also gives the small-coupling limit
``s(gamma) / gamma^2 -> q 5 pi^2 / 48``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from .errors import FitRejected, InvalidArgument, PrecisionError
from .spectral import GAMMA_CRITICAL, chandrasekhar_levels
from .thomas_fermi import EnergyBreakdown, TFSolution, solve_tf_screening, tf_energy

__all__ = [
    "SGammaResult",
    "TailFit",
    "s_gamma",
    "tail_fit",
    "channel_tail_fit",
    "energy_expansion",
    "perturbative_difference",
    "SMALL_COUPLING_LIMIT",
    "REMAINDER_ORDER",
]

# s(gamma)/gamma^2 as gamma -> 0, per spin state: (5/8) zeta(2)
SMALL_COUPLING_LIMIT = 5.0 * math.pi**2 / 48.0
REMAINDER_ORDER = "O(Z^(47/24))"
# an entry is accepted once the eigenvalue uncertainty is below this share of it
GATE_FRACTION = 0.1
FIT_WINDOW = 4


def perturbative_difference(gamma: float, n: int, ell: int) -> float:
    """First-order estimate ``<p^4>/8`` of ``e^S_n - e^C_{n,l}``."""
    return gamma**4 * (1.0 / ((2 * ell + 1) * n**3) - 3.0 / (8.0 * n**4))


@dataclass(frozen=True)
class TailFit:
    """Least-squares fit ``d_k ~ a / (k + shift)^power`` and its summed remainder."""

    coefficient: float
    remainder: float
    residual: float
    spread: float

    @property
    def error(self) -> float:
        return self.residual + self.spread


def _power_tail(values, positions, power: float, first_missing: float, what: str) -> TailFit:
    d = np.asarray(values, dtype=float)
    x = np.asarray(positions, dtype=float)
    if d.size < FIT_WINDOW:
        raise FitRejected(f"{what}: need at least {FIT_WINDOW} terms, got {d.size}", {"terms": d.tolist()})
    d, x = d[-FIT_WINDOW:], x[-FIT_WINDOW:]
    if np.all(d == 0):
        return TailFit(0.0, 0.0, 0.0, 0.0)
    if np.any(d <= 0) or np.any(np.diff(d) >= 0):
        raise FitRejected(
            f"{what}: tail data not positive and decreasing; raise the cutoffs",
            {"terms": d.tolist(), "positions": x.tolist()},
        )
    basis = x**-power
    a = float(basis @ d / (basis @ basis))
    hurwitz = float(zeta(power, first_missing))
    residual = float(np.linalg.norm(d - a * basis) / np.linalg.norm(basis)) * hurwitz
    # model bias: drift of the local coefficient d_k x_k^p across the window,
    # carried out to infinity assuming the drift decays like 1/x
    local = d * x**power
    spread = float(abs(local[-1] - local[0])) * x[-1] / (x[-1] - x[0]) * hurwitz
    return TailFit(a, a * hurwitz, residual, spread)


def tail_fit(partial, model: str = "inverse-cube", n_start: int = 1) -> TailFit:
    """Complete ``sum_n d_n`` beyond the last supplied term with ``a / n^3``.

    ``partial`` holds consecutive terms ``d_n`` for ``n = n_start ..``; the
    last four are fitted and ``a * sum_{n > n_max} n^-3`` (a Hurwitz zeta
    value) is returned as ``remainder``.

    >>> n = range(1, 21)
    >>> round(tail_fit([1 / k**3 for k in n]).remainder, 12)
    0.001189061201
    """
    if model != "inverse-cube":
        raise InvalidArgument(f"unknown tail model {model!r}; only 'inverse-cube' is available")
    d = np.asarray(partial, dtype=float)
    n = np.arange(n_start, n_start + d.size)
    return _power_tail(d, n, 3.0, float(n_start + d.size), "n-tail")


def channel_tail_fit(totals) -> TailFit:
    """Complete ``sum_l T_l`` for ``l > ell_max`` with ``b / (l + 1/2)^2``."""
    t = np.asarray(totals, dtype=float)
    ell = np.arange(t.size) + 0.5
    return _power_tail(t, ell, 2.0, t.size + 0.5, "channel tail")


@dataclass(frozen=True)
class SGammaResult:
    """``s(gamma)`` with its truncated table and completions.

    ``partial[l]`` lists ``(n, q(2l+1)(e^S_n - e^C_{n,l})/gamma^2)``.
    ``lower_bound`` is set when some channel could only be bounded (at the
    critical coupling): ``value`` is then a lower bound and
    ``error_estimate`` includes the size of the missing momentum tail.
    """

    gamma: float
    q: int
    partial: dict
    value: float
    error_estimate: float
    ell_max: int
    n_max: int
    per_channel: tuple = field(repr=False, default=())
    channel_tail: float = 0.0
    lower_bound: bool = False

    @property
    def truncated_sum(self) -> float:
        return float(sum(w for row in self.partial.values() for _, w in row))

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "q": self.q,
            "value": self.value,
            "error_estimate": self.error_estimate,
            "lower_bound": self.lower_bound,
            "cutoffs": {"ell_max": self.ell_max, "n_max": self.n_max},
            "channel_tail": self.channel_tail,
            "per_channel": [dict(c) for c in self.per_channel],
        }

    def partial_rows(self) -> list[dict]:
        """Rows ``ell,n,difference`` for the partial-contribution table."""
        return [{"ell": ell, "n": n, "difference": w} for ell, row in self.partial.items() for n, w in row]


def default_cutoffs(gamma: float) -> tuple[int, int]:
    return (6, 14) if gamma >= 0.3 else (12, 28)


def _channel_differences(gamma: float, ell: int, n_max: int):
    """Unweighted ``e^S - e^C`` for ``n = ell+1 .. n_max`` with their uncertainties."""
    count = n_max - ell
    smallest = perturbative_difference(gamma, n_max, ell)
    tol = min(1e-9, max(1e-13, 0.02 * smallest))
    for attempt in range(3):
        levels = chandrasekhar_levels(gamma, ell, count, tol=tol, one_sided=True)
        n = np.array(levels.principal_numbers)
        diff = -(gamma**2) / (2.0 * n * n) - np.array(levels.eigenvalues)
        if levels.one_sided:
            # levels are upper bounds: the differences are lower bounds whose
            # spacing error is checked per level in the solver
            return n, diff, levels
        if np.all(levels.delta < GATE_FRACTION * diff):
            return n, diff, levels
        tol /= 10.0
    bad = int(n[np.argmax(levels.delta >= GATE_FRACTION * diff)])
    raise PrecisionError(
        f"eigenvalue uncertainty {levels.delta:.2e} does not resolve the difference at (ell={ell}, n={bad})",
        {"ell": ell, "n": bad, "difference": float(diff[n == bad][0]), "delta": levels.delta},
    )


def s_gamma(gamma: float, q: int = 2, ell_max: int | None = None, n_max: int | None = None) -> SGammaResult:
    """Scott coefficient ``s(gamma)`` for ``0 < gamma <= 2/pi``.

    Everything is computed per spin state and multiplied by ``q`` at the
    end, so results for different ``q`` are exact multiples of each other.
    The error estimate adds the fit residuals and window spreads of both
    tails and, for bounded channels, their momentum-tail uncertainty.
    """
    if not (np.isfinite(gamma) and 0 < gamma <= GAMMA_CRITICAL * (1 + 1e-12)):
        raise InvalidArgument(f"gamma={gamma} outside the admissible range (0, 2/pi]")
    if int(q) != q or q < 1:
        raise InvalidArgument(f"q must be a positive integer, got {q}")
    q = int(q)
    d_ell, d_n = default_cutoffs(gamma)
    ell_max = d_ell if ell_max is None else int(ell_max)
    n_max = d_n if n_max is None else int(n_max)
    if ell_max < 4 or n_max < ell_max + 4:
        raise InvalidArgument(f"need ell_max >= 4 and n_max >= ell_max + 4, got ({ell_max}, {n_max})")

    g2 = gamma * gamma
    partial, channels, totals = {}, [], []
    error = 0.0
    bounded = False
    for ell in range(ell_max + 1):
        n, diff, levels = _channel_differences(gamma, ell, n_max)
        unit = (2 * ell + 1) * diff / g2
        fit = tail_fit(unit, n_start=ell + 1)
        total = float(np.sum(unit)) + fit.remainder
        uncertainty = fit.error
        if levels.one_sided:
            bounded = True
            uncertainty += (2 * ell + 1) * float(np.sum(levels.level_delta)) / g2
        error += uncertainty
        totals.append(total)
        partial[ell] = tuple(zip((int(k) for k in n), unit))
        channels.append(
            {
                "ell": ell,
                "truncated": float(np.sum(unit)),
                "n_tail": fit.remainder,
                "total": total,
                "fit_coefficient": fit.coefficient,
                "error": uncertainty,
                "one_sided": levels.one_sided,
                "eigen_delta": levels.delta,
                "basis_size": levels.disc["size"],
            }
        )
    ell_fit = channel_tail_fit(totals)
    error += ell_fit.error
    value = float(np.sum(totals)) + ell_fit.remainder

    scaled_partial = {ell: tuple((k, q * w) for k, w in row) for ell, row in partial.items()}
    scaled_channels = tuple(
        {k: (q * v if k in ("truncated", "n_tail", "total", "fit_coefficient", "error") else v) for k, v in c.items()}
        for c in channels
    )
    return SGammaResult(
        gamma=float(gamma),
        q=q,
        partial=scaled_partial,
        value=q * value,
        error_estimate=q * error,
        ell_max=ell_max,
        n_max=n_max,
        per_channel=scaled_channels,
        channel_tail=q * ell_fit.remainder,
        lower_bound=bounded,
    )


def energy_expansion(
    Z: float, gamma: float, q: int, s_value: float, tf: TFSolution | None = None
) -> EnergyBreakdown:
    """``E^TF(Z) + (q/4 - s) Z^2``; the next order is reported only as a symbol."""
    if not (np.isfinite(Z) and Z > 0):
        raise InvalidArgument(f"Z must be positive, got {Z}")
    if not (np.isfinite(s_value) and s_value >= 0):
        raise InvalidArgument(f"s_value must be nonnegative, got {s_value}")
    if not (0 < gamma <= GAMMA_CRITICAL * (1 + 1e-12)):
        raise InvalidArgument(f"gamma={gamma} outside the admissible range (0, 2/pi]")
    tf = tf or solve_tf_screening(q=q)
    if tf.q != q:
        raise InvalidArgument(f"Thomas-Fermi solution is for q={tf.q}, requested q={q}")
    base = tf_energy(tf, Z)
    scott = (q / 4.0 - s_value) * Z * Z
    return EnergyBreakdown(
        base.kinetic,
        base.attraction,
        base.repulsion,
        base.total + scott,
        scott_term=scott,
        remainder=REMAINDER_ORDER,
    )
