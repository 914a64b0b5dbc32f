"""
Gauss hypergeometric functions for the patch kernels.

This module evaluates F_n(x) = F(n + 1/2, n + 1/2; 2n + 1; x) on [0, 1) together with the
angular-integral identity that turns ring integrals of (A - cos θ)^(-β/2) into Gauss
functions. Three evaluation branches are used:

* ``series``: the power series, for x up to ``X_SWITCH``;
* ``log_connection``: the c = a + b connection formula around x = 1 (digamma based),
  used when all of its terms are positive;
* ``recurrence``: toroidal Legendre functions Q_{n-1/2} by backward recurrence,
  normalised with the complete elliptic integral, for the remaining band.

Vectorised helpers (``fn_values``) feed the kernel module; ``hyp_Fn`` is the scalar
surface that also reports the branch and the coefficient of ln(1 - x).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

X_SWITCH = 0.7
SERIES_RTOL = 1e-16
MAX_TERMS = 10_000
RECURRENCE_DIGITS = 40.0  # e-folds of decay added above n before the backward sweep
_RESCALE_LIMIT = 1e200


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a special function."""


class SeriesDidNotConverge(ArithmeticError):
    """Raised when a hypergeometric series hits the term cap."""


class HypBranch(str, Enum):
    """Evaluation branch used for F_n."""
    SERIES = "series"
    LOG_CONNECTION = "log_connection"
    RECURRENCE = "recurrence"


@dataclass(frozen=True)
class HypEvalResult:
    """Value of F_n(x) with the data describing how it was obtained."""
    value: float
    log_part_coefficient: float
    branch: HypBranch
    terms_used: int


def pochhammer(x: float, n: int) -> float:
    """
    Rising factorial (x)_n = x (x + 1) ... (x + n - 1).

    Large n overflows to +inf, as ``scipy.special.poch`` does.

    :param x: Base.
    :param n: Non-negative number of factors.
    :return: The product, 1.0 for n = 0.
    """
    if n < 0:
        raise DomainError(f"pochhammer requires n >= 0, got {n}")
    if n == 0:
        return 1.0
    return float(special.poch(x, n))


def _log_half_pochhammer(n: int) -> float:
    """ln((1/2)_n)."""
    return special.gammaln(n + 0.5) - special.gammaln(0.5)


def log_epsilon(n: int) -> float:
    """ln of 2 (1/2)_n^2 / (2n)!, the normalisation shared by all H^n kernels."""
    return math.log(2.0) + 2.0 * _log_half_pochhammer(n) - special.gammaln(2 * n + 1)


def hyp2f1_series(a: float, b: float, c: float, x, max_terms: int = MAX_TERMS) -> Tuple[np.ndarray, int]:
    """
    Sums the Gauss series F(a, b; c; x) term by term.

    The stopping rule is term < SERIES_RTOL * partial sum for every entry.

    :param a: First numerator parameter.
    :param b: Second numerator parameter.
    :param c: Denominator parameter, not a non-positive integer.
    :param x: Scalar or array with entries in [0, 1).
    :param max_terms: Term cap; exceeding it raises SeriesDidNotConverge.
    :return: (sum, number of terms used by the slowest entry).
    """
    x = np.asarray(x, dtype=float)
    term = np.ones_like(x)
    total = np.ones_like(x)
    active = x > 0.0
    k = 0
    while np.any(active):
        if k >= max_terms:
            raise SeriesDidNotConverge(
                f"F({a}, {b}; {c}; x) needs more than {max_terms} terms at x={float(np.max(x[active]))}")
        term = np.where(active, term * ((a + k) * (b + k) / ((c + k) * (k + 1.0))) * x, 0.0)
        total = total + term
        k += 1
        active = active & (np.abs(term) > SERIES_RTOL * np.abs(total))
    return total, k + 1


def _log_connection_threshold(n: int) -> float:
    """Largest 1 - x for which every bracket of the connection formula is positive."""
    a = n + 0.5
    return 0.5 * math.exp(2.0 * special.digamma(1.0) - 2.0 * special.digamma(a))


def _fn_log_connection(n: int, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Connection formula for c = a + b around x = 1, written in y = 1 - x.

    F = G Σ_k ((a)_k / k!)^2 y^k [2ψ(k + 1) - 2ψ(a + k) - ln y], with G = Γ(2a) / Γ(a)^2.
    Returns (value, coefficient of ln(1 - x), terms).
    """
    a = n + 0.5
    log_pref = special.gammaln(2.0 * a) - 2.0 * special.gammaln(a)
    log_y = np.log(y)
    coef = np.ones_like(y)
    bracket = 2.0 * special.digamma(1.0) - 2.0 * special.digamma(a) - log_y
    acc = coef * bracket
    log_acc = coef.copy()
    k = 0
    while True:
        if k >= MAX_TERMS:
            raise SeriesDidNotConverge(f"log connection for n={n} did not converge")
        coef = coef * ((a + k) / (k + 1.0)) ** 2 * y
        k += 1
        bracket = 2.0 * special.digamma(k + 1.0) - 2.0 * special.digamma(a + k) - log_y
        acc = acc + coef * bracket
        log_acc = log_acc + coef
        if np.all(coef * np.maximum(np.abs(bracket), 1.0) <= SERIES_RTOL * np.abs(acc)):
            break
    pref = math.exp(log_pref)
    return pref * acc, -pref * log_acc, k + 1


def _fn_recurrence(n: int, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    F_n through the toroidal function Q_{n-1/2}(A), A = 2/x - 1.

    Q_{k-1/2} is the minimal solution of (k - 1/2) q_{k-1} = 2kA q_k - (k + 1/2) q_{k+1};
    the backward sweep is normalised with Q_{-1/2}(A) = sqrt(x) K(x).
    """
    big_a = (1.0 + y) / x
    eta0 = 2.0 * np.arcsinh(np.sqrt(y / x))
    start = n + int(np.ceil(RECURRENCE_DIGITS / float(np.min(eta0)))) + 1
    if start - n > MAX_TERMS:
        raise SeriesDidNotConverge(f"toroidal recurrence for n={n} needs {start - n} extra steps")
    q_hi = np.zeros_like(x)
    q = np.ones_like(x)
    q_n = np.ones_like(x)
    for k in range(start, 0, -1):
        q_lo = (2.0 * k * big_a * q - (k + 0.5) * q_hi) / (k - 0.5)
        q_hi, q = q, q_lo
        if k - 1 == n:
            q_n = q.copy()
        big = np.abs(q) > _RESCALE_LIMIT
        if np.any(big):
            scale = np.where(big, 1.0 / _RESCALE_LIMIT, 1.0)
            q = q * scale
            q_hi = q_hi * scale
            if k - 1 <= n:
                q_n = q_n * scale
    q0_true = np.sqrt(x) * special.ellipkm1(y)
    log_qn = np.log(q_n) - np.log(q) + np.log(q0_true)
    log_factor = (math.log(2.0 * math.sqrt(2.0)) + special.gammaln(2 * n + 1) - math.log(2.0 * math.pi)
                  + (n + 0.5) * np.log(2.0 / x) - 2.0 * _log_half_pochhammer(n) - n * math.log(2.0))
    return np.exp(log_qn + log_factor), start - n


def _branch_masks(n: int, x: np.ndarray, y: np.ndarray):
    series = x <= X_SWITCH
    log_conn = (~series) & (y <= _log_connection_threshold(n))
    recur = ~(series | log_conn)
    return series, log_conn, recur


def fn_values(n: int, x, y: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Vectorised F_n(x) for arrays.

    :param n: Mode, n >= 1.
    :param x: Arguments in [0, 1).
    :param y: Optional complement 1 - x computed by the caller without cancellation.
    :return: Array of values with the shape of x.
    """
    if n < 1:
        raise DomainError(f"F_n requires n >= 1, got {n}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = 1.0 - x if y is None else np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(x < 0.0) or np.any(y <= 0.0):
        raise DomainError("F_n is defined for 0 <= x < 1")
    out = np.empty_like(x)
    series, log_conn, recur = _branch_masks(n, x, y)
    a = n + 0.5
    if np.any(series):
        out[series] = hyp2f1_series(a, a, 2.0 * n + 1.0, x[series])[0]
    if np.any(log_conn):
        out[log_conn] = _fn_log_connection(n, y[log_conn])[0]
    if np.any(recur):
        out[recur] = _fn_recurrence(n, x[recur], y[recur])[0]
    return out


def _evaluate(n: int, x: float, y: float, branch: Optional[HypBranch] = None) -> HypEvalResult:
    if n < 1:
        raise DomainError(f"F_n requires n >= 1, got {n}")
    if not (0.0 <= x < 1.0) or y <= 0.0:
        raise DomainError(f"F_n is defined for 0 <= x < 1, got x={x}")
    if branch is None:
        series, log_conn, _ = _branch_masks(n, np.array([x]), np.array([y]))
        branch = HypBranch.SERIES if series[0] else (
            HypBranch.LOG_CONNECTION if log_conn[0] else HypBranch.RECURRENCE)

    a = n + 0.5
    xs, ys = np.array([x]), np.array([y])
    if branch is HypBranch.SERIES:
        value, terms = hyp2f1_series(a, a, 2.0 * n + 1.0, xs)
        log_coef = 0.0
    elif branch is HypBranch.LOG_CONNECTION:
        value, log_coef_arr, terms = _fn_log_connection(n, ys)
        log_coef = float(log_coef_arr[0])
    else:
        value, terms = _fn_recurrence(n, xs, ys)
        pref = math.exp(special.gammaln(2.0 * a) - 2.0 * special.gammaln(a))
        log_coef = -pref * float(hyp2f1_series(a, a, 1.0, ys)[0][0])

    logger.debug("F_%d(%.6g) via %s (%d terms)", n, x, branch.value, terms)
    return HypEvalResult(value=float(value[0]), log_part_coefficient=log_coef,
                         branch=branch, terms_used=int(terms))


def hyp_Fn(n: int, x: float, branch: Optional[HypBranch] = None) -> HypEvalResult:  # pylint: disable=invalid-name
    """
    Evaluates F_n(x) = F(n + 1/2, n + 1/2; 2n + 1; x).

    :param n: Mode, n >= 1.
    :param x: Argument in [0, 1).
    :param branch: Forces a branch; by default it is chosen from x and n.
    :return: HypEvalResult with value, branch, term count and the ln(1 - x) coefficient
             (0 on the series branch).
    """
    return _evaluate(n, float(x), 1.0 - float(x), branch)


def hyp_Fn_complement(n: int, y: float, branch: Optional[HypBranch] = None) -> HypEvalResult:  # pylint: disable=invalid-name
    """Same as ``hyp_Fn`` but takes y = 1 - x, which keeps digits when x is close to 1."""
    y = float(y)
    return _evaluate(n, 1.0 - y, y, branch)


def angular_integral(n: int, beta: float, big_a: float) -> float:
    """
    Closed form of ∫_0^{2π} cos(nθ) (A - cos θ)^(-β/2) dθ.

    2π (1 + A)^(-β/2 - n) (β/2)_n 2^n (1/2)_n / (2n)! F(n + β/2, n + 1/2; 2n + 1; 2/(1 + A)).

    :param n: Non-negative Fourier mode.
    :param beta: Non-negative exponent.
    :param big_a: A > 1.
    :return: The integral.

    β = 1 goes through F_n (the elliptic integral for n = 0); other exponents use
    ``scipy.special.hyp2f1``, which stays accurate as A approaches 1.
    """
    if big_a <= 1.0:
        raise DomainError(f"angular_integral requires A > 1, got {big_a}")
    if n < 0 or beta < 0:
        raise DomainError("angular_integral requires n >= 0 and beta >= 0")
    rising = special.poch(beta / 2.0, n)
    if rising == 0.0:
        return 0.0
    z = 2.0 / (1.0 + big_a)
    y = (big_a - 1.0) / (big_a + 1.0)
    if beta == 1.0 and n == 0:
        hyp = (2.0 / math.pi) * float(special.ellipkm1(y))
    elif beta == 1.0:
        hyp = float(fn_values(n, z, y)[0])
    else:
        hyp = float(special.hyp2f1(n + beta / 2.0, n + 0.5, 2.0 * n + 1.0, z))
    log_mag = (math.log(2.0 * math.pi) - (beta / 2.0 + n) * math.log1p(big_a) + math.log(rising)
               + n * math.log(2.0) + _log_half_pochhammer(n) - special.gammaln(2 * n + 1))
    return math.exp(log_mag) * hyp
