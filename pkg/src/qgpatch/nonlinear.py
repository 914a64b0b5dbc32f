"""
Stream function, velocity and the functional F̃ for perturbed doubly connected patches.

A perturbation moves surface j to r_j(φ, θ) = r₀,j(φ) + f_j(φ, θ) with
f_j = Σ_k f_{j,k}(φ) cos(kθ). The stream function of q = 1_{D₁} - 1_{D₂} splits as
ψ = 𝒯₁ - 𝒯₂ with 𝒯_j = -(1/4π)∫_{D_j} |x - y|⁻¹ dy, and each 𝒯_j is evaluated as

* the unperturbed body, by the divergence theorem on its surface (ring kernels n = 0, 1);
* the first-order shell r₀ < r < r₀ + f, where f is pulled out of the radial integral
  (ring kernels of the populated modes);
* the remainder of the shell, by 16-point Gauss along each ray on a latitude × longitude
  tensor grid.

The two latitude integrals with a log-type singularity use the graded rule of the grid.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from qgpatch.bifurcation import BifurcationPoint
from qgpatch.config import resolve_jobs
from qgpatch.kernels import KernelContext, ring_kernel
from qgpatch.profiles import validate_hypotheses
from qgpatch.spectral import assemble

logger = logging.getLogger(__name__)

RADIAL_ORDER = 16
THETA_FACTOR = 8
EPSILON_FACTOR = 0.05
FD_STEP = 1e-5
LINEARIZATION_TOLERANCE = 1e-4
ORDER_THRESHOLD = 1.8
DEFAULT_S_VALUES = (1e-2, 5e-3, 2.5e-3)
LINEARIZATION_HEADER = (
    "n[azimuthal mode]",
    "direction[index of the random direction]",
    "relative_error[max|FD - dF~| / max|dF~|]",
    "richardson_defect[max|FD(2s) - FD(s)| / max|dF~|]",
)

# (surface, latitude, offset f) of an evaluation point lying on a perturbed surface
Anchor = Tuple[int, float, float]


class PerturbationTooLarge(ValueError):
    """The perturbation breaks the sup-norm bound or the separation guard."""


@dataclass
class SurfacePerturbation:
    """
    Coefficients f_{j,k} at the grid nodes for surfaces j = 1, 2.

    ``modes`` maps k to the pair (f_{1,k}, f_{2,k}); only multiples of ``fold`` are allowed.
    """
    fold: int
    modes: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.fold < 1:
            raise ValueError(f"fold must be positive, got {self.fold}")
        sizes = set()
        for k, (f1, f2) in self.modes.items():
            if k < 1 or k % self.fold:
                raise ValueError(f"mode {k} is not a positive multiple of the fold {self.fold}")
            sizes.update((np.shape(f1), np.shape(f2)))
        if len(sizes) > 1:
            raise ValueError(f"coefficient arrays differ in shape: {sorted(sizes)}")
        self.modes = {k: (np.asarray(f1, dtype=float), np.asarray(f2, dtype=float))
                      for k, (f1, f2) in sorted(self.modes.items())}

    @classmethod
    def zero(cls, fold: int) -> "SurfacePerturbation":
        return cls(fold=fold)

    @classmethod
    def single_mode(cls, n: int, h1, h2, fold: Optional[int] = None) -> "SurfacePerturbation":
        """f_j = h_j(φ) cos(nθ)."""
        return cls(fold=fold or n, modes={n: (h1, h2)})

    @property
    def max_mode(self) -> int:
        return max(self.modes) if self.modes else self.fold

    def default_n_theta(self) -> int:
        return THETA_FACTOR * self.max_mode

    def scaled(self, s: float) -> "SurfacePerturbation":
        return SurfacePerturbation(self.fold, {k: (s * f1, s * f2) for k, (f1, f2) in self.modes.items()})

    def coefficients(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """(modes, K×N array of f_{j,k})."""
        ks = np.array(list(self.modes), dtype=int)
        if not self.modes:
            return ks, np.zeros((0, 0))
        return ks, np.stack([pair[j - 1] for pair in self.modes.values()])

    def values(self, j: int, theta) -> np.ndarray:
        """f_j at the nodes × theta."""
        theta = np.asarray(theta, dtype=float)
        ks, coeffs = self.coefficients(j)
        if not len(ks):
            return np.zeros((0, theta.size))
        return coeffs.T @ np.cos(np.outer(ks, theta))

    def theta_derivative(self, j: int, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        ks, coeffs = self.coefficients(j)
        if not len(ks):
            return np.zeros((0, theta.size))
        return -(coeffs * ks[:, None]).T @ np.sin(np.outer(ks, theta))

    def sup_norm(self, n_theta: Optional[int] = None) -> float:
        if not self.modes:
            return 0.0
        theta = theta_grid(n_theta or self.default_n_theta())
        return max(float(np.max(np.abs(self.values(j, theta)))) for j in (1, 2))

    def equatorial_defect(self) -> float:
        """max |f_{j,k}(π - φ) - f_{j,k}(φ)| on a grid symmetric about the equator."""
        defects = [float(np.max(np.abs(f - f[::-1]))) for pair in self.modes.values() for f in pair]
        return max(defects, default=0.0)


def theta_grid(n_theta: int) -> np.ndarray:
    """Evaluation longitudes 2πl/N_θ."""
    return 2.0 * math.pi * np.arange(n_theta) / n_theta


def source_longitudes(n_theta: int) -> np.ndarray:
    """Source longitudes 2π(q + ½)/N_θ, staggered against the evaluation grid."""
    return 2.0 * math.pi * (np.arange(n_theta) + 0.5) / n_theta


@dataclass
class FunctionalValue:
    """F̃₁ and F̃₂ on the (φ_k, θ_l) grid."""
    values_1: np.ndarray
    values_2: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    mean_removed: bool = True

    def surface(self, i: int) -> np.ndarray:
        return self.values_1 if i == 1 else self.values_2

    @property
    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(self.values_1))), float(np.max(np.abs(self.values_2))))

    def row_mean_defect(self) -> float:
        return max(float(np.max(np.abs(np.mean(v, axis=1)))) for v in (self.values_1, self.values_2))

    def equatorial_defect(self) -> float:
        return max(float(np.max(np.abs(v - v[::-1]))) for v in (self.values_1, self.values_2))

    def fold_defect(self, m: int) -> float:
        """max |F̃(φ, θ + 2π/m) - F̃(φ, θ)|."""
        shift = self.theta.size // m
        return max(float(np.max(np.abs(np.roll(v, -shift, axis=1) - v))) for v in (self.values_1, self.values_2))

    def sine_fraction(self) -> float:
        """Energy in the sin(kθ) coefficients relative to the total."""
        sine = total = 0.0
        for v in (self.values_1, self.values_2):
            coeffs = np.fft.rfft(v, axis=1)
            sine += float(np.sum(coeffs.imag ** 2))
            total += float(np.sum(np.abs(coeffs) ** 2))
        return sine / total if total > 0.0 else 0.0

    def to_dict(self) -> Dict:
        return {
            "sup_norm": self.sup_norm,
            "mean_removed": self.mean_removed,
            "row_mean_defect": self.row_mean_defect(),
            "shape": [int(self.phi.size), int(self.theta.size)],
        }


@dataclass
class _Sources:
    """Per-surface source data on the node × staggered-longitude grid."""
    r0: np.ndarray
    z: np.ndarray
    weight: np.ndarray
    f: np.ndarray
    f_eta: np.ndarray
    modes: np.ndarray
    coefficients: np.ndarray


class _StreamEvaluator:
    def __init__(self, ctx: KernelContext, perturbation: SurfacePerturbation, n_theta: int):
        self.ctx = ctx
        self.grid = ctx.grid
        self.perturbation = perturbation
        self.perturbed = bool(perturbation.modes)
        self.eta = source_longitudes(n_theta)
        self.d_eta = 2.0 * math.pi / n_theta
        self.radial_nodes, self.radial_weights = np.polynomial.legendre.leggauss(RADIAL_ORDER)
        self.sources = {j: self._sources(j) for j in (1, 2)}

    def _sources(self, j: int) -> _Sources:
        nodes = self.grid.nodes
        ks, coeffs = self.perturbation.coefficients(j)
        if self.perturbed:
            f, f_eta = self.perturbation.values(j, self.eta), self.perturbation.theta_derivative(j, self.eta)
        else:
            f = f_eta = np.zeros((nodes.size, self.eta.size))
        return _Sources(r0=self.ctx.radius(j, nodes), z=self.ctx.height(j) * np.cos(nodes),
                        weight=self.grid.weights * np.sin(nodes), f=f, f_eta=f_eta,
                        modes=ks, coefficients=coeffs)

    def _rule(self, j: int, z: float, anchor: Optional[Anchor]):
        if anchor is not None and anchor[0] == j:
            return self.grid.singular_rule(anchor[1])
        t = math.acos(min(1.0, max(-1.0, z / self.ctx.height(j))))
        return self.grid.singular_rule(t)

    def _differences(self, j: int, R: float, z: float, points: np.ndarray,  # pylint: disable=invalid-name
                     anchor: Optional[Anchor]):
        """(R - r₀(φ'), z - d cos φ'), free of cancellation when the point sits on surface j."""
        profile = self.ctx.config.profile(j)
        d = self.ctx.height(j)
        if anchor is not None and anchor[0] == j:
            _, t, offset = anchor
            return (profile.difference(t, points) + offset,
                    -2.0 * d * np.sin(0.5 * (t + points)) * np.sin(0.5 * (t - points)))
        return R - profile.radius(points), z - d * np.cos(points)

    def body(self, j: int, R: float, theta: float, z: float,  # pylint: disable=invalid-name
             anchor: Optional[Anchor] = None) -> float:
        """𝒯_j at (R e^{iθ}, z)."""
        profile = self.ctx.config.profile(j)
        d = self.ctx.height(j)
        points, weights = self._rule(j, z, anchor)
        r0, slope = profile.radius(points), profile.derivative(points)
        sin_p, z_src = np.sin(points), d * np.cos(points)
        dr, dz = self._differences(j, R, z, points, anchor)
        ring0 = ring_kernel(0, R, z, r0, z_src, dr=dr, dz=dz)
        ring1 = ring_kernel(1, R, z, r0, z_src, dr=dr, dz=dz)
        # (y - x)·n dS = α - β cos(η - θ) on the unperturbed surface
        alpha = d * sin_p * r0 ** 2 - r0 * slope * dz
        beta = d * sin_p * r0 * R
        value = -float(np.dot(weights, alpha * ring0 - beta * ring1)) / (8.0 * math.pi)
        if self.perturbed:
            value += self._first_order(j, R, theta, z, points, weights, r0, z_src, dr, dz)
            value += self._remainder(j, R, theta, z)
        return value

    def _first_order(self, j, R, theta, z, points, weights, r0, z_src, dr, dz) -> float:  # pylint: disable=invalid-name
        src = self.sources[j]
        f_points = self.grid.interpolate(src.coefficients, points)
        weighted = weights * np.sin(points) * r0
        total = 0.0
        for k, f_k in zip(src.modes, f_points):
            ring = ring_kernel(int(k), R, z, r0, z_src, dr=dr, dz=dz)
            total += math.cos(k * theta) * float(np.dot(weighted * f_k, ring))
        return -self.ctx.height(j) * total / (4.0 * math.pi)

    def _remainder(self, j: int, R: float, theta: float, z: float) -> float:  # pylint: disable=invalid-name
        """∫∫ ∫_{r₀}^{r₀+f} (r g(r) - r₀ g(r₀)) dr with g = 1/|x - y|."""
        src = self.sources[j]
        cos_d = np.cos(self.eta - theta)[None, :]
        base = R * R + (z - src.z[:, None]) ** 2
        r0 = src.r0[:, None]
        g0 = 1.0 / np.sqrt(base + r0 ** 2 - 2.0 * R * r0 * cos_d)
        radii = r0[:, :, None] + 0.5 * src.f[:, :, None] * (1.0 + self.radial_nodes)
        g = 1.0 / np.sqrt(base[:, :, None] + radii ** 2 - 2.0 * R * radii * cos_d[:, :, None])
        inner = 0.5 * src.f * (np.sum(self.radial_weights * radii * g, axis=-1) - 2.0 * r0 * g0)
        total = float(np.sum(src.weight[:, None] * inner)) * self.d_eta
        return -self.ctx.height(j) * total / (4.0 * math.pi)

    def stream(self, R: float, theta: float, z: float, anchor: Optional[Anchor] = None) -> float:  # pylint: disable=invalid-name
        return self.body(1, R, theta, z, anchor) - self.body(2, R, theta, z, anchor)

    def velocity(self, R: float, theta: float, z: float) -> complex:  # pylint: disable=invalid-name
        """u + iv = Σ ±(d_j/4π)∫∫ sin φ' (∂_η r_j + i r_j) e^{iη} / |x - y| dη dφ'."""
        total = 0j
        phase = complex(math.cos(theta), math.sin(theta))
        for j, sign in ((1, 1.0), (2, -1.0)):
            d = self.ctx.height(j)
            points, weights = self._rule(j, z, None)
            r0 = self.ctx.radius(j, points)
            ring1 = ring_kernel(1, R, z, r0, d * np.cos(points))
            unperturbed = 1j * phase * float(np.dot(weights, np.sin(points) * r0 * ring1))
            correction = self._velocity_correction(j, R, theta, z) if self.perturbed else 0j
            total += sign * d / (4.0 * math.pi) * (unperturbed + correction)
        return total

    def _velocity_correction(self, j: int, R: float, theta: float, z: float) -> complex:  # pylint: disable=invalid-name
        src = self.sources[j]
        e_eta = np.exp(1j * self.eta)[None, :]
        cos_d = np.cos(self.eta - theta)[None, :]
        base = R * R + (z - src.z[:, None]) ** 2
        r0 = src.r0[:, None]
        rho = r0 + src.f
        perturbed = (1j * rho + src.f_eta) * e_eta / np.sqrt(base + rho ** 2 - 2.0 * R * rho * cos_d)
        flat = 1j * r0 * e_eta / np.sqrt(base + r0 ** 2 - 2.0 * R * r0 * cos_d)
        return complex(np.sum(src.weight[:, None] * (perturbed - flat))) * self.d_eta


def _n_theta(perturbation: SurfacePerturbation, n_theta: Optional[int]) -> int:
    n_theta = n_theta or perturbation.default_n_theta()
    if n_theta % perturbation.fold:
        raise ValueError(f"N_theta={n_theta} is not a multiple of the fold {perturbation.fold}")
    return n_theta


def _check_shape(perturbation: SurfacePerturbation, ctx: KernelContext):
    for k, (f1, _) in perturbation.modes.items():
        if f1.shape != (ctx.grid.size,):
            raise ValueError(f"mode {k} has {f1.shape} samples, the grid has {ctx.grid.size} nodes")


def separation_delta(ctx: KernelContext) -> float:
    """δ: squared distance between the unperturbed surfaces."""
    report = ctx.config.validated
    if report is None:
        report = validate_hypotheses(ctx.config)
        ctx.config.validated = report
    return report.separation_delta


def epsilon_max(ctx: KernelContext) -> float:
    return EPSILON_FACTOR * min(ctx.height(2), math.sqrt(separation_delta(ctx)))


def separation_guard(perturbation: SurfacePerturbation, ctx: KernelContext,
                     n_theta: Optional[int] = None) -> float:
    """min J₁₂ = min |γ₁(φ, θ) - γ₂(ψ, η)|² over the node × longitude grid."""
    n_theta = _n_theta(perturbation, n_theta)
    theta = theta_grid(n_theta)
    nodes = ctx.grid.nodes
    radii = []
    for j in (1, 2):
        r = np.repeat(ctx.radius(j, nodes)[:, None], n_theta, axis=1)
        if perturbation.modes:
            r = r + perturbation.values(j, theta)
        radii.append(r)
    z1, z2 = ctx.height(1) * np.cos(nodes), ctx.height(2) * np.cos(nodes)
    cos_d = np.cos(theta[:, None] - theta[None, :])
    best = math.inf
    for k in range(nodes.size):
        r1 = radii[0][k][:, None, None]
        j12 = (r1 ** 2 + radii[1][None, :, :] ** 2
               - 2.0 * r1 * radii[1][None, :, :] * cos_d[:, None, :]
               + (z1[k] - z2)[None, :, None] ** 2)
        best = min(best, float(np.min(j12)))
    return best


def check_perturbation(perturbation: SurfacePerturbation, ctx: KernelContext,
                       n_theta: Optional[int] = None):
    """
    :raises PerturbationTooLarge: if sup|f| > ε_max or min J₁₂ < δ/4.
    """
    if not perturbation.modes:
        return
    _check_shape(perturbation, ctx)
    bound = epsilon_max(ctx)
    size = perturbation.sup_norm(n_theta)
    if size > bound:
        raise PerturbationTooLarge(f"sup|f| = {size:.3e} exceeds epsilon_max = {bound:.3e}")
    guard, delta = separation_guard(perturbation, ctx, n_theta), separation_delta(ctx)
    if guard < 0.25 * delta:
        raise PerturbationTooLarge(f"min J12 = {guard:.3e} below delta/4 = {0.25 * delta:.3e}")


def body_stream(j: int, point: Sequence[float], perturbation: SurfacePerturbation, ctx: KernelContext,
                n_theta: Optional[int] = None) -> float:
    """
    𝒯_j at point = (R, θ, z).

    :param j: 1 for the outer body, 2 for the inner one.
    """
    evaluator = _StreamEvaluator(ctx, perturbation, _n_theta(perturbation, n_theta))
    R, theta, z = (float(v) for v in point)  # pylint: disable=invalid-name
    return evaluator.body(j, R, theta, z)


def stream_at(point: Sequence[float], perturbation: SurfacePerturbation, ctx: KernelContext,
              n_theta: Optional[int] = None) -> float:
    """ψ = 𝒯₁ - 𝒯₂ at point = (R, θ, z)."""
    evaluator = _StreamEvaluator(ctx, perturbation, _n_theta(perturbation, n_theta))
    R, theta, z = (float(v) for v in point)  # pylint: disable=invalid-name
    return evaluator.stream(R, theta, z)


def velocity_at(point: Sequence[float], perturbation: SurfacePerturbation, ctx: KernelContext,
                n_theta: Optional[int] = None) -> Tuple[float, float]:
    """Horizontal velocity (u, v) = (-∂_y ψ, ∂_x ψ) at point = (R, θ, z)."""
    evaluator = _StreamEvaluator(ctx, perturbation, _n_theta(perturbation, n_theta))
    R, theta, z = (float(v) for v in point)  # pylint: disable=invalid-name
    value = evaluator.velocity(R, theta, z)
    return value.real, value.imag


def functional_Ftilde(omega: float, perturbation: SurfacePerturbation, ctx: KernelContext,  # pylint: disable=invalid-name
                      n_theta: Optional[int] = None, full_theta: bool = False,
                      jobs: Optional[int] = None) -> FunctionalValue:
    """
    F̃_i(φ, θ) = [ψ(γ_i(φ, θ)) - Ω r_i²/2 - θ-mean] / r₀,i(φ) at the nodes × θ_l.

    Only one period 2π/m is evaluated unless ``full_theta`` is set; the rest of the row
    follows from the m-fold symmetry of the perturbation.

    :param omega: Angular velocity.
    :param perturbation: Surface perturbation sampled at the grid nodes.
    :param ctx: Kernel context.
    :param n_theta: Longitudes; defaults to 8 times the largest populated mode.
    :param full_theta: Evaluate every longitude.
    :param jobs: Worker threads.
    :return: FunctionalValue.
    :raises PerturbationTooLarge: if the perturbation fails the size or separation guard.
    """
    n_theta = _n_theta(perturbation, n_theta)
    check_perturbation(perturbation, ctx, n_theta)
    evaluator = _StreamEvaluator(ctx, perturbation, n_theta)
    theta = theta_grid(n_theta)
    columns = n_theta if full_theta else n_theta // perturbation.fold
    nodes = ctx.grid.nodes
    offsets = {j: (perturbation.values(j, theta[:columns]) if perturbation.modes
                   else np.zeros((nodes.size, columns))) for j in (1, 2)}

    def row(task: Tuple[int, int]) -> np.ndarray:
        i, k = task
        phi = float(nodes[k])
        r0, z = float(ctx.radius(i, phi)), ctx.height(i) * math.cos(phi)
        out = np.empty(columns)
        for l in range(columns):
            f = float(offsets[i][k, l])
            R = r0 + f  # pylint: disable=invalid-name
            out[l] = evaluator.stream(R, float(theta[l]), z, anchor=(i, phi, f)) - 0.5 * omega * R * R
        return out

    tasks = [(i, k) for i in (1, 2) for k in range(nodes.size)]
    workers = resolve_jobs(jobs, tasks=len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(row, tasks))
    else:
        rows = [row(task) for task in tasks]
    surfaces = []
    for i in (1, 2):
        values = np.array(rows[(i - 1) * nodes.size:i * nodes.size])
        if not full_theta:
            values = np.tile(values, (1, perturbation.fold))
        values = values - np.mean(values, axis=1, keepdims=True)
        surfaces.append(values / ctx.radius(i, nodes)[:, None])
    logger.debug("F~ at Omega=%.10f on %dx%d points (%d evaluated per row)",
                 omega, nodes.size, n_theta, columns)
    return FunctionalValue(values_1=surfaces[0], values_2=surfaces[1], phi=nodes, theta=theta)


def linearized_matvec(omega: float, direction: SurfacePerturbation, ctx: KernelContext,
                      n_theta: Optional[int] = None) -> FunctionalValue:
    """
    ∂F̃_i(Ω, 0, 0)(h) = (-1)^(i-1) ν_i Σ_n cos(nθ) (h_{i,n} - T^n_{i,Ω}(h_{1,n}, h_{2,n})).

    T^n_Ω h is applied through the symmetric matrix of the spectral module.
    """
    _check_shape(direction, ctx)
    n_theta = _n_theta(direction, n_theta)
    theta = theta_grid(n_theta)
    size = ctx.grid.size
    out = [np.zeros((size, n_theta)), np.zeros((size, n_theta))]
    for n, (h1, h2) in direction.modes.items():
        op = assemble(n, omega, ctx)
        applied = op.matrix @ (op.sqrt_measure * np.concatenate((h1, h2))) / op.sqrt_measure
        cos_n = np.cos(n * theta)[None, :]
        out[0] += (op.nu_1 * (h1 - applied[:size]))[:, None] * cos_n
        out[1] += (-op.nu_2 * (h2 - applied[size:]))[:, None] * cos_n
    return FunctionalValue(values_1=out[0], values_2=out[1], phi=ctx.grid.nodes, theta=theta)


def kernel_direction(point: BifurcationPoint) -> SurfacePerturbation:
    """f*_m = (h₁, h₂) cos(mθ) from the top eigenfunction, scaled to unit sup-norm."""
    pair = point.eigenpair
    scale = max(float(np.max(np.abs(pair.h1))), float(np.max(np.abs(pair.h2))))
    return SurfacePerturbation.single_mode(point.m, pair.h1 / scale, pair.h2 / scale)


def smooth_direction(n: int, ctx: KernelContext, rng: np.random.Generator) -> SurfacePerturbation:
    """A random equatorially symmetric direction sinⁿφ·p(cos²φ), unit sup-norm."""
    nodes = ctx.grid.nodes
    basis = np.stack([np.sin(nodes) ** n * np.cos(nodes) ** (2 * p) for p in range(3)])
    h1 = rng.uniform(0.5, 1.5, 3) @ basis
    h2 = -rng.uniform(0.5, 1.5, 3) @ basis
    scale = max(float(np.max(np.abs(h1))), float(np.max(np.abs(h2))))
    return SurfacePerturbation.single_mode(n, h1 / scale, h2 / scale)


def _max_difference(a: FunctionalValue, b: FunctionalValue) -> float:
    return max(float(np.max(np.abs(a.values_1 - b.values_1))), float(np.max(np.abs(a.values_2 - b.values_2))))


def _central_difference(omega: float, direction: SurfacePerturbation, ctx: KernelContext, s: float,
                        n_theta: Optional[int], jobs: Optional[int]) -> FunctionalValue:
    plus = functional_Ftilde(omega, direction.scaled(s), ctx, n_theta=n_theta, jobs=jobs)
    minus = functional_Ftilde(omega, direction.scaled(-s), ctx, n_theta=n_theta, jobs=jobs)
    return FunctionalValue(values_1=(plus.values_1 - minus.values_1) / (2.0 * s),
                           values_2=(plus.values_2 - minus.values_2) / (2.0 * s),
                           phi=plus.phi, theta=plus.theta)


@dataclass
class ResidualReport:
    m: int
    omega_m: float
    s_values: List[float]
    sup_norms: List[float]
    fitted_order: float
    constant: float

    @property
    def passed(self) -> bool:
        return self.fitted_order >= ORDER_THRESHOLD

    def to_dict(self) -> Dict:
        return {
            "m": self.m,
            "Omega_m": self.omega_m,
            "sup_norm_by_s": {repr(s): v for s, v in zip(self.s_values, self.sup_norms)},
            "fitted_order": self.fitted_order,
            "fitted_constant": self.constant,
            "passed": self.passed,
        }


def residual_check(point: BifurcationPoint, ctx: KernelContext,
                   s_values: Sequence[float] = DEFAULT_S_VALUES, n_theta: Optional[int] = None,
                   jobs: Optional[int] = None) -> ResidualReport:
    """
    sup|F̃(Ω_m, s f*_m)| for each s and the fitted order p of C s^p.

    :raises PerturbationTooLarge: if the largest s leaves the admissible neighbourhood.
    """
    if len(s_values) < 2:
        raise ValueError("at least two amplitudes are needed to fit an order")
    direction = kernel_direction(point)
    norms = []
    for s in s_values:
        value = functional_Ftilde(point.omega_m, direction.scaled(s), ctx, n_theta=n_theta, jobs=jobs)
        norms.append(value.sup_norm)
        logger.info("m=%d s=%.3e: sup|F~| = %.4e", point.m, s, value.sup_norm)
    slope, intercept = np.polyfit(np.log(s_values), np.log(norms), 1)
    return ResidualReport(m=point.m, omega_m=point.omega_m, s_values=[float(s) for s in s_values],
                          sup_norms=norms, fitted_order=float(slope), constant=float(math.exp(intercept)))


@dataclass
class LinearizationRow:
    n: int
    direction: int
    relative_error: float
    richardson_defect: float = math.nan


@dataclass
class LinearizationReport:
    omega: float
    rows: List[LinearizationRow]
    stationarity: float
    tolerance: float = LINEARIZATION_TOLERANCE

    @property
    def max_error(self) -> float:
        return max((r.relative_error for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance and self.stationarity <= 1e-8

    def to_dict(self) -> Dict:
        return {
            "Omega": self.omega,
            "stationarity_sup_norm": self.stationarity,
            "max_relative_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }

    def to_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(LINEARIZATION_HEADER)
            for r in self.rows:
                writer.writerow([r.n, r.direction, repr(r.relative_error), repr(r.richardson_defect)])
        logger.info("Wrote %d linearization rows to %s", len(self.rows), path)


def linearization_check(omega: float, ctx: KernelContext, modes: Sequence[int], directions: int = 3,
                        s: float = FD_STEP, seed: int = 0, richardson: bool = False,
                        n_theta: Optional[int] = None, jobs: Optional[int] = None) -> LinearizationReport:
    """
    Compares central differences of F̃ with ``linearized_matvec`` on random smooth directions.

    The relative error is max|FD - L| / max|L|. With ``richardson`` the difference is also
    taken at 2s and the spread of the two quotients is reported.
    """
    rng = np.random.default_rng(seed)
    stationarity = functional_Ftilde(omega, SurfacePerturbation.zero(min(modes)), ctx,
                                     n_theta=n_theta, jobs=jobs).sup_norm
    rows = []
    for n in modes:
        for index in range(directions):
            direction = smooth_direction(n, ctx, rng)
            linear = linearized_matvec(omega, direction, ctx, n_theta=n_theta)
            scale = linear.sup_norm
            difference = _central_difference(omega, direction, ctx, s, n_theta, jobs)
            row = LinearizationRow(n=n, direction=index,
                                   relative_error=_max_difference(difference, linear) / scale)
            if richardson:
                wide = _central_difference(omega, direction, ctx, 2.0 * s, n_theta, jobs)
                row.richardson_defect = _max_difference(wide, difference) / scale
            logger.info("n=%d direction %d: relative error %.3e", n, index, row.relative_error)
            rows.append(row)
    return LinearizationReport(omega=omega, rows=rows, stationarity=stationarity)
