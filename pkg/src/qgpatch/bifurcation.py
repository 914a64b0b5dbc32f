"""
Bifurcation angular velocities Ω_m with λ_m(Ω_m) = 1.

λ_m is increasing in Ω on the upper half of the window and blows up at Ω̄₁, so Ω_m is
found by bisection on [Ω_mid, Ω̄₁ - ε]. Each point carries the transversality quantity
Q_m and the margin 1 - λ_2m(Ω_m) of the one-dimensional kernel.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from qgpatch.config import resolve_jobs
from qgpatch.kernels import KernelContext
from qgpatch.spectral import WINDOW_MARGIN, EigenPair, assemble, eigenpair_at, largest_eigenpair

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEGENERACY_THRESHOLD = 1e-6
SEQUENCE_HEADER = (
    "m[symmetry mode]",
    "Omega_m[rad/time; lambda_m(Omega_m) = 1]",
    "Q_m[transversality quantity]",
    "kernel_margin[1 - lambda_2m(Omega_m)]",
)


class NotBracketed(RuntimeError):
    """λ_m - 1 does not change sign on [Ω_mid, Ω̄₁ - ε]."""

    def __init__(self, m: int, deficit: float, below_threshold: bool = False):
        self.m = m
        self.deficit = deficit
        self.below_threshold = below_threshold
        if below_threshold:
            message = f"m={m} is below threshold: lambda_m(Omega_mid) - 1 = {-deficit:.3e} >= 0"
        else:
            message = f"m={m} not bracketed: 1 - lambda_m at the top of the window = {deficit:.3e}"
        super().__init__(message)


@dataclass
class BifurcationPoint:
    m: int
    omega_m: float
    eigenpair: EigenPair = field(repr=False)
    residual: float
    iterations: int
    transversality_q: float = math.nan
    kernel_margin: float = math.nan
    h2_mass_fraction: float = math.nan
    tolerance: float = DEFAULT_TOL

    @property
    def converged(self) -> bool:
        """|λ_m(Ω_m) - 1| within the tolerance the root was solved to."""
        return self.residual <= self.tolerance

    def to_dict(self) -> Dict:
        return {
            "m": self.m,
            "Omega_m": self.omega_m,
            "lambda": self.eigenpair.eigenvalue,
            "residual": self.residual,
            "converged": self.converged,
            "iterations": self.iterations,
            "transversality_Q": self.transversality_q,
            "kernel_margin": self.kernel_margin,
            "h2_mass_fraction": self.h2_mass_fraction,
        }


def bracket(ctx: KernelContext):
    """[Ω_mid, Ω̄₁ - ε] with ε matching the assembly guard."""
    window = ctx.window()
    return window.midpoint, window.omega_bar_1 - 2.0 * WINDOW_MARGIN * window.gap


def max_iterations(gap: float, tol: float) -> int:
    return int(math.ceil(math.log2(gap / tol))) + 2


def transversality_from_pair(pair: EigenPair, ctx: KernelContext) -> float:
    """Q = Σ w sin φ r₁² h₁² - (d₂/d₁) Σ w sin φ r₂² h₂²."""
    grid = ctx.grid
    base = grid.weights * np.sin(grid.nodes)
    first = float(np.sum(base * ctx.radius(1, grid.nodes) ** 2 * pair.h1 ** 2))
    second = float(np.sum(base * ctx.radius(2, grid.nodes) ** 2 * pair.h2 ** 2))
    return first - ctx.height(2) / ctx.height(1) * second


def is_degenerate(q: float, threshold: float = DEGENERACY_THRESHOLD) -> bool:
    return abs(q) <= threshold


def h2_mass_fraction(pair: EigenPair, ctx: KernelContext) -> float:
    """∫h₂² sin³ / (∫h₁² sin³ + ∫h₂² sin³)."""
    weights = ctx.grid.weights * np.sin(ctx.grid.nodes) ** 3
    first, second = float(np.sum(weights * pair.h1 ** 2)), float(np.sum(weights * pair.h2 ** 2))
    return second / (first + second)


def transversality(point: BifurcationPoint, ctx: KernelContext) -> float:
    """Computes Q_m for the point and stores it."""
    point.transversality_q = transversality_from_pair(point.eigenpair, ctx)
    if is_degenerate(point.transversality_q):
        logger.warning("Transversality degenerate at m=%d: Q=%.3e", point.m, point.transversality_q)
    return point.transversality_q


def find_omega_m(m: int, ctx: KernelContext, tol: float = DEFAULT_TOL) -> BifurcationPoint:
    """
    Solves λ_m(Ω) = 1 by bisection on [Ω_mid, Ω̄₁ - ε].

    The loop stops once |λ - 1| <= tol or the bracket is narrower than tol; the final Ω is
    the linear interpolant of the last bracket.

    :param m: Symmetry mode, m >= 1.
    :param ctx: Kernel context.
    :param tol: Tolerance in λ and in Ω.
    :return: BifurcationPoint with Q_m, kernel margin and h₂ mass fraction filled in.
    :raises NotBracketed: when λ_m - 1 has no sign change on the bracket.
    """
    window = ctx.window()
    if not window.spectral_condition:
        raise NotBracketed(m, math.nan)
    lo, hi = bracket(ctx)
    f_lo = eigenpair_at(m, lo, ctx).eigenvalue - 1.0
    if f_lo >= 0.0:
        raise NotBracketed(m, -f_lo, below_threshold=True)
    f_hi = eigenpair_at(m, hi, ctx).eigenvalue - 1.0
    if f_hi < 0.0:
        raise NotBracketed(m, -f_hi)
    limit = max_iterations(window.gap, tol)
    iterations = 0
    pair: Optional[EigenPair] = None
    while iterations < limit and hi - lo > tol:
        mid = 0.5 * (lo + hi)
        pair = eigenpair_at(m, mid, ctx)
        iterations += 1
        f_mid = pair.eigenvalue - 1.0
        logger.debug("m=%d iteration %d: Omega=%.14f lambda-1=%.3e", m, iterations, mid, f_mid)
        if abs(f_mid) <= tol:
            lo = hi = mid
            break
        if f_mid < 0.0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    if hi > lo:
        omega = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        pair = eigenpair_at(m, omega, ctx)
    else:
        omega = lo
    point = BifurcationPoint(m=m, omega_m=omega, eigenpair=pair, residual=abs(pair.eigenvalue - 1.0),
                             iterations=iterations, tolerance=tol)
    if not point.converged:
        logger.warning("Omega_%d: residual %.3e above tolerance %.1e after %d iterations",
                       m, point.residual, tol, iterations)
    transversality(point, ctx)
    point.kernel_margin = 1.0 - largest_eigenpair(assemble(2 * m, omega, ctx)).eigenvalue
    point.h2_mass_fraction = h2_mass_fraction(pair, ctx)
    logger.info("Omega_%d = %.12f (residual %.2e, %d iterations, Q=%.4e)",
                m, omega, point.residual, iterations, point.transversality_q)
    return point


@dataclass
class SequenceReport:
    points: List[BifurcationPoint]
    skipped: Dict[int, str]
    omega_bar_1: float

    @property
    def operational_m0(self) -> Optional[int]:
        """Smallest mode whose bracket contains a sign change."""
        return self.points[0].m if self.points else None

    @property
    def strictly_increasing(self) -> bool:
        values = [p.omega_m for p in self.points]
        return bool(np.all(np.diff(values) > 0.0))

    @property
    def approaches_top(self) -> bool:
        distances = [self.omega_bar_1 - p.omega_m for p in self.points]
        return bool(np.all(np.diff(distances) < 0.0))

    @property
    def mass_fraction_decreasing(self) -> bool:
        return bool(np.all(np.diff([p.h2_mass_fraction for p in self.points]) < 0.0))

    def to_dict(self) -> Dict:
        return {
            "points": [p.to_dict() for p in self.points],
            "skipped": {str(m): reason for m, reason in self.skipped.items()},
            "operational_m0": self.operational_m0,
            "strictly_increasing": self.strictly_increasing,
            "approaches_omega_bar_1": self.approaches_top,
            "mass_fraction_decreasing": self.mass_fraction_decreasing,
        }

    def to_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SEQUENCE_HEADER)
            for p in self.points:
                writer.writerow([p.m, repr(p.omega_m), repr(p.transversality_q), repr(p.kernel_margin)])
        logger.info("Wrote %d bifurcation points to %s", len(self.points), path)


def omega_sequence(m_min: int, m_max: int, ctx: KernelContext, tol: float = DEFAULT_TOL,
                   jobs: Optional[int] = None) -> SequenceReport:
    """
    Ω_m for m_min <= m <= m_max, computed in parallel.

    Modes without a bracket are listed in ``skipped`` with the reason; nothing is
    fabricated for them.
    """
    if m_min < 1 or m_max < m_min:
        raise ValueError(f"invalid mode range {m_min}:{m_max}")
    ctx.window()
    modes = list(range(m_min, m_max + 1))

    def solve(m: int):
        try:
            return find_omega_m(m, ctx, tol)
        except NotBracketed as exc:
            logger.info("Skipping m=%d: %s", m, exc)
            return exc

    workers = resolve_jobs(jobs, tasks=len(modes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(solve, modes))
    else:
        results = [solve(m) for m in modes]
    points = [r for r in results if isinstance(r, BifurcationPoint)]
    skipped = {m: str(r) for m, r in zip(modes, results) if isinstance(r, NotBracketed)}
    return SequenceReport(points=points, skipped=skipped, omega_bar_1=ctx.window().omega_bar_1)
