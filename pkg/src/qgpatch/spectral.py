"""
Nyström discretization of the block operator T^n_Ω and its largest eigenpair.

For mode n and angular velocity Ω the operator acts on pairs (h₁, h₂) of latitude functions:

    T_i(h)(φ) = (-1)^(i-1) / ν_i(φ) [d₁∫H^n_i1(φ, ψ) h₁(ψ) dψ - d₂∫H^n_i2(φ, ψ) h₂(ψ) dψ]

and is self-adjoint for ⟨H, G⟩ = ∫h₁g₁ dμ₁ + (d₂/d₁)∫h₂g₂ dμ₂, dμ_j = ν_j sin ψ r_j² dψ.
Scaling by the square roots of the discrete measures turns the Nyström matrix into a
symmetric one with the same spectrum.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from qgpatch.config import resolve_jobs
from qgpatch.kernels import KernelContext, OmegaWindow
from qgpatch.quadrature import QuadratureGrid, build_grid

__all__ = [
    "QuadratureGrid", "build_grid", "OmegaOutsideWindow", "DiscreteOperator", "EigenPair",
    "SWEEP_HEADER", "SweepRow", "SpectralReport", "BoundaryDecayReport", "assemble", "largest_eigenpair",
    "eigenpair_at", "eigen_sweep", "omega_grid", "boundary_decay_check", "eigenvalue_bounds",
    "hilbert_schmidt_bound", "dlambda_domega", "nystrom_interpolate",
]

logger = logging.getLogger(__name__)

WINDOW_MARGIN = 1e-6
SIGN_TOLERANCE = 1e-8
ENVELOPE_SLACK = 2.0
ENDPOINT_TOLERANCE = 1e-4
# distances below Ω̄₁, in units of the gap, of the first and last default sweep value
SWEEP_BAND = (0.2, 0.01)
SWEEP_HEADER = (
    "n[azimuthal mode]",
    "Omega[rad/time]",
    "lambda[largest eigenvalue of T^n_Omega]",
    "gap_to_second[lambda minus second eigenvalue]",
    "sign_ok[h1>=0 and h2<=0 at every node]",
)


class OmegaOutsideWindow(ValueError):
    """Ω too close to or outside the admissible window; ν is not positive."""


@dataclass(frozen=True)
class DiscreteOperator:
    """
    Symmetric 2N×2N matrix S of T^n_Ω.

    ``sqrt_measure_1`` is √(ω₁ν₁) and ``sqrt_measure_2`` is √((d₂/d₁)ω₂ν₂) with
    ω_j = w sin φ r_j(φ)² at the nodes; u = (sqrt_measure_1 h₁, sqrt_measure_2 h₂).
    """
    n: int
    omega: float
    matrix: np.ndarray
    sqrt_measure_1: np.ndarray
    sqrt_measure_2: np.ndarray
    weights_1: np.ndarray
    weights_2: np.ndarray
    nu_1: np.ndarray
    nu_2: np.ndarray
    d_ratio: float
    grid: QuadratureGrid = field(repr=False)

    @property
    def size(self) -> int:
        return self.grid.size

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))

    @property
    def sqrt_measure(self) -> np.ndarray:
        return np.concatenate((self.sqrt_measure_1, self.sqrt_measure_2))

    def unsymmetrized(self) -> np.ndarray:
        """The plain Nyström matrix of T^n_Ω, similar to ``matrix``."""
        scale = self.sqrt_measure
        return self.matrix * (1.0 / scale)[:, None] * scale[None, :]

    def split(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Maps a vector of the symmetric problem back to (h₁, h₂)."""
        n = self.size
        return u[:n] / self.sqrt_measure_1, u[n:] / self.sqrt_measure_2

    def norm(self, h1: np.ndarray, h2: np.ndarray) -> float:
        """Discrete norm of (h₁, h₂) in the weighted space."""
        return math.sqrt(float(np.sum((self.sqrt_measure_1 * h1) ** 2) + np.sum((self.sqrt_measure_2 * h2) ** 2)))


@dataclass
class EigenPair:
    n: int
    omega: float
    eigenvalue: float
    h1: np.ndarray
    h2: np.ndarray
    second_eigenvalue: float
    normalized: bool = True

    @property
    def gap_to_second(self) -> float:
        return self.eigenvalue - self.second_eigenvalue

    def sign_pattern_ok(self, relative_tol: float = SIGN_TOLERANCE) -> bool:
        """h₁ ≥ -tol and h₂ ≤ tol at every node, tol relative to max|H|."""
        tol = relative_tol * max(float(np.max(np.abs(self.h1))), float(np.max(np.abs(self.h2))))
        return bool(np.all(self.h1 >= -tol) and np.all(self.h2 <= tol))


def assemble(n: int, omega: float, ctx: KernelContext, check_window: bool = True) -> DiscreteOperator:
    """
    Builds the symmetric matrix of T^n_Ω on the grid of ``ctx``.

    :param n: Angular mode, n >= 1.
    :param omega: Angular velocity inside the window.
    :param ctx: Kernel context holding the surfaces and the grid.
    :param check_window: Also refuse Ω within 1e-6·gap of the window ends.
    :return: DiscreteOperator.
    :raises OmegaOutsideWindow: if ν is not positive at the nodes or Ω hugs the window.
    """
    if check_window:
        window = ctx.window()
        if not window.contains(omega, WINDOW_MARGIN):
            raise OmegaOutsideWindow(
                f"Omega={omega:.12g} outside ({window.omega_bar_2:.12g}, {window.omega_bar_1:.12g}) "
                f"with margin {WINDOW_MARGIN:g}*gap")
    grid = ctx.grid
    nu1, nu2 = ctx.nu_nodes(1, omega), ctx.nu_nodes(2, omega)
    if min(float(np.min(nu1)), float(np.min(nu2))) <= 0.0:
        raise OmegaOutsideWindow(f"nu is not positive at the nodes for Omega={omega:.12g}")
    d1, d2 = ctx.height(1), ctx.height(2)
    w1 = grid.weights * np.sin(grid.nodes) * ctx.radius(1, grid.nodes) ** 2
    w2 = grid.weights * np.sin(grid.nodes) * ctx.radius(2, grid.nodes) ** 2
    g11, g12, g22 = ctx.blocks(n)
    s1, s2 = np.sqrt(w1 / nu1), np.sqrt(w2 / nu2)
    cross = -math.sqrt(d1 * d2) * s1[:, None] * g12 * s2[None, :]
    matrix = np.block([
        [d1 * s1[:, None] * g11 * s1[None, :], cross],
        [cross.T, d2 * s2[:, None] * g22 * s2[None, :]],
    ])
    logger.debug("Assembled T^%d at Omega=%.10f (%dx%d)", n, omega, *matrix.shape)
    return DiscreteOperator(n=n, omega=omega, matrix=matrix,
                            sqrt_measure_1=np.sqrt(w1 * nu1), sqrt_measure_2=np.sqrt(d2 / d1 * w2 * nu2),
                            weights_1=w1, weights_2=w2, nu_1=nu1, nu_2=nu2, d_ratio=d2 / d1, grid=grid)


def largest_eigenpair(op: DiscreteOperator) -> EigenPair:
    """
    Largest eigenvalue of the symmetric matrix and its eigenvector mapped back to (h₁, h₂).

    The eigenvector has unit norm in the weighted space; its h₁ entry of largest magnitude
    is positive.
    """
    size = op.matrix.shape[0]
    values, vectors = linalg.eigh(op.matrix, subset_by_index=[size - 2, size - 1])
    u = vectors[:, 1]
    h1, h2 = op.split(u)
    if h1[int(np.argmax(np.abs(h1)))] < 0.0:
        h1, h2 = -h1, -h2
    return EigenPair(n=op.n, omega=op.omega, eigenvalue=float(values[1]), h1=h1, h2=h2,
                     second_eigenvalue=float(values[0]))


def eigenpair_at(n: int, omega: float, ctx: KernelContext) -> EigenPair:
    """Assembles T^n_Ω and returns its largest eigenpair."""
    return largest_eigenpair(assemble(n, omega, ctx))


@dataclass
class SweepRow:
    n: int
    omega: float
    eigenvalue: float
    gap_to_second: float
    sign_ok: bool


@dataclass
class SpectralReport:
    """Table of λ_n(Ω) with monotonicity verdicts per Ω (in n) and per n (in Ω)."""
    rows: List[SweepRow]
    decreasing_in_n: Dict[float, bool] = field(default_factory=dict)
    increasing_in_omega: Dict[int, bool] = field(default_factory=dict)

    def value(self, n: int, omega: float) -> float:
        for row in self.rows:
            if row.n == n and row.omega == omega:
                return row.eigenvalue
        raise KeyError((n, omega))

    def decay_slope(self, omega: float, n_min: int, n_max: int) -> float:
        """Least-squares slope of log λ_n against log n for n in [n_min, n_max]."""
        points = [(row.n, row.eigenvalue) for row in self.rows
                  if row.omega == omega and n_min <= row.n <= n_max]
        if len(points) < 2:
            raise ValueError("decay slope needs at least two modes")
        ns, lams = np.array(points, dtype=float).T
        return float(np.polyfit(np.log(ns), np.log(lams), 1)[0])

    def to_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SWEEP_HEADER)
            for row in self.rows:
                writer.writerow([row.n, repr(row.omega), repr(row.eigenvalue), repr(row.gap_to_second),
                                 str(row.sign_ok).lower()])
        logger.info("Wrote %d sweep rows to %s", len(self.rows), path)

    def to_dict(self) -> Dict:
        return {
            "rows": len(self.rows),
            "decreasing_in_n": {repr(k): v for k, v in self.decreasing_in_n.items()},
            "increasing_in_omega": {str(k): v for k, v in self.increasing_in_omega.items()},
            "all_sign_ok": all(row.sign_ok for row in self.rows),
        }


def omega_grid(window: OmegaWindow, points: int, band: Tuple[float, float] = SWEEP_BAND) -> List[float]:
    """
    Evenly spaced angular velocities from Ω̄₁ - band[0]·gap up to Ω̄₁ - band[1]·gap.

    λ_n(Ω) also diverges as Ω decreases to Ω̄₂ (the inner block carries 1/ν₂), so
    monotone sweeps stay in the band below Ω̄₁.
    """
    if points < 2:
        raise ValueError(f"an Omega grid needs at least two points, got {points}")
    low, high = band
    if not 0.0 < high < low < 1.0:
        raise ValueError(f"band {band} must satisfy 0 < high < low < 1")
    top, gap = window.omega_bar_1, window.gap
    return [float(top - f * gap) for f in np.linspace(low, high, points)]


def eigen_sweep(modes: Sequence[int], omegas: Sequence[float], ctx: KernelContext,
                jobs: Optional[int] = None) -> SpectralReport:
    """
    λ_n(Ω) over a grid of modes and angular velocities.

    Modes are processed in parallel; each worker assembles one mode for every Ω.
    """
    modes, omegas = sorted(set(modes)), sorted(set(omegas))
    window = ctx.window()
    for omega in omegas:
        if not window.contains(omega, WINDOW_MARGIN):
            raise OmegaOutsideWindow(f"sweep value Omega={omega:.12g} lies outside the window")

    def run_mode(n: int) -> List[SweepRow]:
        rows = []
        for omega in omegas:
            pair = eigenpair_at(n, omega, ctx)
            rows.append(SweepRow(n, omega, pair.eigenvalue, pair.gap_to_second, pair.sign_pattern_ok()))
        logger.debug("Swept mode %d over %d Omega values", n, len(omegas))
        return rows

    workers = resolve_jobs(jobs, tasks=len(modes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            chunks = list(executor.map(run_mode, modes))
    else:
        chunks = [run_mode(n) for n in modes]
    rows = [row for chunk in chunks for row in chunk]
    report = SpectralReport(rows=rows)
    for omega in omegas:
        column = [r.eigenvalue for r in rows if r.omega == omega]
        report.decreasing_in_n[omega] = bool(np.all(np.diff(column) < 0.0))
    for n in modes:
        line = [r.eigenvalue for r in rows if r.n == n]
        report.increasing_in_omega[n] = bool(np.all(np.diff(line) > 0.0))
    logger.info("Sweep of %d modes x %d Omega values done", len(modes), len(omegas))
    return report


def hilbert_schmidt_bound(op: DiscreteOperator, ctx: KernelContext) -> float:
    """max over blocks of the discrete L²(μ⊗μ) norm of the symmetric kernel Γ/(ν ν)."""
    g11, g12, g22 = ctx.blocks(op.n)
    s1 = np.sqrt(op.weights_1 / op.nu_1)
    s2 = np.sqrt(op.weights_2 / op.nu_2)
    norms = [np.linalg.norm(s_i[:, None] * g * s_j[None, :])
             for g, s_i, s_j in ((g11, s1, s1), (g12, s1, s2), (g22, s2, s2))]
    return float(max(norms))


def eigenvalue_bounds(op: DiscreteOperator, ctx: KernelContext) -> Tuple[float, float]:
    """
    Two-sided bounds for the largest eigenvalue.

    Lower: the quadratic form at H = (ρ, 0) with ρ ∝ sin^(1/2), normalised. Upper:
    2(d₁ + d₂) times the block Hilbert–Schmidt norm.
    """
    u = np.zeros(2 * op.size)
    u[:op.size] = op.sqrt_measure_1 * np.sqrt(np.sin(op.grid.nodes))
    u /= np.linalg.norm(u)
    lower = float(u @ op.matrix @ u)
    upper = 2.0 * (ctx.height(1) + ctx.height(2)) * hilbert_schmidt_bound(op, ctx)
    return lower, upper


def dlambda_domega(pair: EigenPair, op: DiscreteOperator) -> float:
    """
    λ'(Ω) = λ (∫ν₁⁻¹h₁² dμ₁ - (d₂/d₁)∫ν₂⁻¹h₂² dμ₂) for the normalised eigenpair.
    """
    first = float(np.sum(op.weights_1 * pair.h1 ** 2))
    second = op.d_ratio * float(np.sum(op.weights_2 * pair.h2 ** 2))
    return pair.eigenvalue * (first - second)


def nystrom_interpolate(pair: EigenPair, ctx: KernelContext, phis) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigenfunction values at arbitrary latitudes: h(φ) = λ⁻¹ T^n_Ω h(φ).

    Self integrals use product weights on the node values, so φ may sit on or next to a node.
    """
    grid = ctx.grid
    d1, d2 = ctx.height(1), ctx.height(2)
    n = pair.n
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    out1, out2 = np.empty(phis.shape), np.empty(phis.shape)
    for k, t in enumerate(phis):
        rows = {}
        for i in (1, 2):
            for j, h in ((1, pair.h1), (2, pair.h2)):
                if i == j:
                    weights = grid.product_weights(
                        float(t), lambda psi, i=i: ctx.H_n(i, i, n, np.full(psi.shape, t), psi, check=False))
                else:
                    weights = grid.weights * ctx.H_n(i, j, n, np.full(grid.size, t), grid.nodes)
                rows[(i, j)] = float(np.dot(weights, h))
        nu1, nu2 = float(ctx.nu(1, pair.omega, t)), float(ctx.nu(2, pair.omega, t))
        out1[k] = (d1 * rows[(1, 1)] - d2 * rows[(1, 2)]) / (nu1 * pair.eigenvalue)
        out2[k] = -(d1 * rows[(2, 1)] - d2 * rows[(2, 2)]) / (nu2 * pair.eigenvalue)
    return out1, out2


@dataclass
class BoundaryDecayReport:
    n: int
    endpoint_values: Tuple[float, float, float, float]
    endpoint_estimates: Tuple[float, float, float, float]
    fitted_constant: float
    envelope_ok: bool
    endpoints_ok: bool

    @property
    def passed(self) -> bool:
        return self.envelope_ok and self.endpoints_ok

    def to_dict(self) -> Dict:
        return {"n": self.n, "endpoint_values": list(self.endpoint_values),
                "fitted_constant": self.fitted_constant, "envelope_ok": self.envelope_ok,
                "endpoints_ok": self.endpoints_ok, "passed": self.passed}


def _extrapolate_to_zero(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Quadratic extrapolation to x = 0 and its distance to the linear one."""
    quadratic = float(np.polynomial.polynomial.polyfit(x[:3], y[:3], 2)[0])
    linear = float(np.polynomial.polynomial.polyfit(x[:2], y[:2], 1)[0])
    return quadratic, abs(quadratic - linear)


def boundary_decay_check(pair: EigenPair, grid: QuadratureGrid) -> BoundaryDecayReport:
    """
    Checks that (h₁, h₂) vanish at the poles and stay below C(sin^(n-1) + sin^(1/2)).

    C is fitted on the bulk [π/6, 5π/6] and inflated by ENVELOPE_SLACK. An endpoint passes
    when its extrapolated value is within ten times the extrapolation error estimate or
    below ENDPOINT_TOLERANCE·max|H|.
    """
    if pair.n < 2:
        raise ValueError("boundary decay check needs n >= 2")
    sines = np.sin(grid.nodes)
    envelope = sines ** (pair.n - 1) + np.sqrt(sines)
    scale = max(float(np.max(np.abs(pair.h1))), float(np.max(np.abs(pair.h2))))
    bulk = (grid.nodes >= math.pi / 6) & (grid.nodes <= 5 * math.pi / 6)
    ratios = np.maximum(np.abs(pair.h1), np.abs(pair.h2)) / envelope
    constant = ENVELOPE_SLACK * float(np.max(ratios[bulk]))
    envelope_ok = bool(np.all(ratios <= constant))
    values, estimates = [], []
    for h in (pair.h1, pair.h2):
        for x, y in ((grid.nodes, h), (math.pi - grid.nodes[::-1], h[::-1])):
            value, estimate = _extrapolate_to_zero(x, y)
            values.append(value)
            estimates.append(estimate)
    endpoints_ok = all(abs(v) <= max(10.0 * e, ENDPOINT_TOLERANCE * scale) for v, e in zip(values, estimates))
    report = BoundaryDecayReport(n=pair.n, endpoint_values=tuple(values), endpoint_estimates=tuple(estimates),
                                 fitted_constant=constant, envelope_ok=envelope_ok, endpoints_ok=endpoints_ok)
    if not report.passed:
        logger.warning("Boundary decay check failed for n=%d (envelope %s, endpoints %s)",
                       pair.n, envelope_ok, endpoints_ok)
    return report
