"""
Revolution profiles of the stationary patches.

A surface of revolution is generated by a profile r0(φ) on [0, π]; the point of latitude φ
and azimuth θ is (r0(φ) e^{iθ}, d cos φ). This module provides the ellipsoid and sphere
presets, tabulated profiles read from CSV, the two-surface configuration and a grid-based
certification of the standing assumptions (regularity, non-degeneracy, equatorial
symmetry, separation of the interfaces).
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 512
SYMMETRY_TOLERANCE = 1e-10


class HypothesisViolation(ValueError):
    """Raised when preset or configuration parameters break the standing assumptions."""


class ProfileFormatError(ValueError):
    """Raised when a tabulated profile file cannot be used."""


class ProfileKind(str, Enum):
    """Kinds of generating curves."""
    ELLIPSOID = "ellipsoid"
    SPHERE = "sphere"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class RevolutionProfile:
    """
    Generating curve r0 of an axisymmetric surface.

    Ellipsoids and spheres are r0 = a sin φ; tabulated profiles interpolate samples with a
    monotone cubic whose end values are clamped to 0.
    """
    kind: ProfileKind
    semi_axis: float = 0.0
    samples: Tuple[Tuple[float, float], ...] = ()
    _interpolant: Optional[PchipInterpolator] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind is ProfileKind.TABULATED:
            phis, radii = _clamped_samples(self.samples)
            object.__setattr__(self, "samples", tuple(zip(phis.tolist(), radii.tolist())))
            object.__setattr__(self, "_interpolant", PchipInterpolator(phis, radii))
        elif self.semi_axis <= 0.0:
            raise HypothesisViolation(f"{self.kind.value} needs a positive semi-axis, got {self.semi_axis}")

    @classmethod
    def ellipsoid(cls, a: float) -> "RevolutionProfile":
        """Profile a sin φ (horizontal semi-axis a)."""
        return cls(kind=ProfileKind.ELLIPSOID, semi_axis=float(a))

    @classmethod
    def sphere(cls, radius: float) -> "RevolutionProfile":
        """Profile of a ball of the given radius; pair it with d = radius."""
        return cls(kind=ProfileKind.SPHERE, semi_axis=float(radius))

    @classmethod
    def tabulated(cls, phis: Sequence[float], radii: Sequence[float]) -> "RevolutionProfile":
        """Profile interpolating (φ, r) samples."""
        return cls(kind=ProfileKind.TABULATED, samples=tuple(zip(map(float, phis), map(float, radii))))

    def radius(self, phi) -> np.ndarray:
        """r0(φ)."""
        phi = np.asarray(phi, dtype=float)
        if self._interpolant is None:
            return self.semi_axis * np.sin(phi)
        # the cubic of the last panel does not reproduce 0 exactly at π
        return np.where((phi <= 0.0) | (phi >= math.pi), 0.0, self._interpolant(phi))

    def derivative(self, phi) -> np.ndarray:
        """r0'(φ)."""
        phi = np.asarray(phi, dtype=float)
        if self._interpolant is None:
            return self.semi_axis * np.cos(phi)
        return np.asarray(self._interpolant.derivative()(phi))

    def difference(self, phi, psi) -> np.ndarray:
        """r0(φ) - r0(ψ), without cancellation for the analytic presets."""
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        if self._interpolant is None:
            return 2.0 * self.semi_axis * np.cos(0.5 * (phi + psi)) * np.sin(0.5 * (phi - psi))
        return self.radius(phi) - self.radius(psi)


def _clamped_samples(samples) -> Tuple[np.ndarray, np.ndarray]:
    if len(samples) < 3:
        raise ProfileFormatError("a tabulated profile needs at least 3 samples")
    data = np.asarray(samples, dtype=float)
    phis, radii = data[:, 0].copy(), data[:, 1].copy()
    if np.any(np.diff(phis) <= 0.0):
        raise ProfileFormatError("profile latitudes must be strictly increasing")
    if phis[0] < 0.0 or phis[-1] > math.pi + 1e-12:
        raise ProfileFormatError("profile latitudes must lie in [0, pi]")
    if np.any(radii < 0.0):
        raise ProfileFormatError("profile radii must be non-negative")
    if phis[0] > 0.0:
        phis, radii = np.concatenate(([0.0], phis)), np.concatenate(([0.0], radii))
    if phis[-1] < math.pi:
        phis, radii = np.concatenate((phis, [math.pi])), np.concatenate((radii, [0.0]))
    phis[-1] = math.pi
    radii[0] = radii[-1] = 0.0
    return phis, radii


def load_profile_csv(path: str) -> RevolutionProfile:
    """
    Reads a two-column CSV (φ in radians, r) with a header row.

    :param path: File path.
    :return: Tabulated RevolutionProfile.
    """
    logger.debug("Reading tabulated profile from %s", path)
    rows: List[Tuple[float, float]] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or len(header) != 2:
            raise ProfileFormatError(f"{path}: expected a two-column header row")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ProfileFormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError as exc:
                raise ProfileFormatError(f"{path}:{lineno}: {exc}") from exc
    profile = RevolutionProfile.tabulated([r[0] for r in rows], [r[1] for r in rows])
    logger.info("Loaded tabulated profile with %d samples from %s", len(profile.samples), path)
    return profile


@dataclass
class HypothesisReport:
    """Grid estimates of the constants in the standing assumptions."""
    chord_constant_C: float  # pylint: disable=invalid-name
    separation_delta: float
    interaction_bound_delta_bar: float
    symmetry_defect: float
    regularity_defect: float
    passed: bool = True
    reasons: List[str] = field(default_factory=list)


@dataclass
class PatchPairConfig:
    """Outer surface (d1, outer) enclosing the inner surface (d2, inner)."""
    d1: float
    d2: float
    outer: RevolutionProfile
    inner: RevolutionProfile
    validated: Optional[HypothesisReport] = None

    def profile(self, index: int) -> RevolutionProfile:
        """Profile of surface 1 (outer) or 2 (inner)."""
        return self.outer if index == 1 else self.inner

    def height(self, index: int) -> float:
        """Vertical semi-axis d_1 or d_2."""
        return self.d1 if index == 1 else self.d2

    def is_ellipsoid_sphere(self) -> bool:
        """True for the analytic ellipsoid/sphere preset."""
        return (self.outer.kind in (ProfileKind.ELLIPSOID, ProfileKind.SPHERE)
                and self.inner.kind is ProfileKind.SPHERE
                and abs(self.inner.semi_axis - self.d2) <= 1e-14 * self.d2)


def _chord_constant(profile: RevolutionProfile, d: float, phis: np.ndarray) -> float:
    """Smallest C with C⁻¹ ≤ ratio ≤ C for r0/sin φ and for the arc-chord quotient."""
    radii = profile.radius(phis)
    sines = np.sin(phis)
    ratio = radii / sines
    phi, psi = np.meshgrid(phis, phis, indexing="ij")
    off = phi != psi
    chord = profile.difference(phi, psi) ** 2 + (d * (np.cos(phi) - np.cos(psi))) ** 2
    quotient = chord[off] / (phi[off] - psi[off]) ** 2
    return float(max(ratio.max(), 1.0 / ratio.min(), quotient.max(), 1.0 / quotient.min()))


def _separation(config: PatchPairConfig, phis: np.ndarray) -> float:
    def gap(phi, psi):
        return (config.outer.radius(phi) - config.inner.radius(psi)) ** 2 + \
            (config.d1 * np.cos(phi) - config.d2 * np.cos(psi)) ** 2

    phi, psi = np.meshgrid(phis, phis, indexing="ij")
    values = gap(phi, psi)
    k = np.unravel_index(np.argmin(values), values.shape)
    best = float(values[k])
    if best <= 0.0:
        return 0.0
    refined = minimize(lambda v: float(gap(v[0], v[1])), x0=[phi[k], psi[k]],
                       method="L-BFGS-B", bounds=[(0.0, math.pi), (0.0, math.pi)],
                       options={"ftol": 1e-15, "gtol": 1e-12})
    return float(min(best, refined.fun)) if refined.success else best


def _regularity_defect(profile: RevolutionProfile) -> float:
    """Largest jump of the second derivative across tabulation knots."""
    if profile.kind is not ProfileKind.TABULATED:
        return 0.0
    second = profile._interpolant.derivative(2)  # pylint: disable=protected-access
    knots = np.array([s[0] for s in profile.samples])[1:-1]
    if knots.size == 0:
        return 0.0
    eps = 1e-9
    return float(np.max(np.abs(second(knots + eps) - second(knots - eps))))


def validate_hypotheses(config: PatchPairConfig, grid_size: int = DEFAULT_GRID_SIZE) -> HypothesisReport:
    """
    Certifies the standing assumptions on a latitude grid.

    This is a numerical check, not a proof: every constant is a grid estimate.

    :param config: Configuration to check.
    :param grid_size: Number of grid intervals on [0, π], at least 64.
    :return: HypothesisReport; failures are encoded in ``passed`` and ``reasons``.
    """
    if grid_size < 64:
        raise ValueError(f"grid_size must be at least 64, got {grid_size}")
    closed = np.linspace(0.0, math.pi, grid_size + 1)
    interior = closed[1:-1]
    reasons = []

    symmetry = 0.0
    for profile in (config.outer, config.inner):
        symmetry = max(symmetry, float(np.max(np.abs(profile.radius(math.pi - closed) - profile.radius(closed)))))
    if symmetry > SYMMETRY_TOLERANCE:
        reasons.append(f"equatorial symmetry defect {symmetry:.3e}")

    positive = all(np.all(p.radius(interior) > 0.0) for p in (config.outer, config.inner))
    if positive:
        chord = max(_chord_constant(config.outer, config.d1, interior),
                    _chord_constant(config.inner, config.d2, interior))
    else:
        chord = math.inf
        reasons.append("profile vanishes inside (0, pi)")

    delta = _separation(config, closed)
    if delta <= 0.0:
        reasons.append("interfaces touch (separation is zero)")
    if not config.d1 > config.d2 > 0.0:
        reasons.append(f"heights must satisfy d1 > d2 > 0, got d1={config.d1}, d2={config.d2}")

    phi, psi = np.meshgrid(closed, closed, indexing="ij")
    r1, r2 = config.outer.radius(phi), config.inner.radius(psi)
    big_r = (r1 + r2) ** 2 + (config.d1 * np.cos(phi) - config.d2 * np.cos(psi)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(big_r > 0.0, 4.0 * r1 * r2 / big_r, 0.0)
    delta_bar = float(np.max(x))

    report = HypothesisReport(
        chord_constant_C=chord,
        separation_delta=delta,
        interaction_bound_delta_bar=delta_bar,
        symmetry_defect=symmetry,
        regularity_defect=max(_regularity_defect(config.outer), _regularity_defect(config.inner)),
        passed=not reasons,
        reasons=reasons,
    )
    logger.info("Hypothesis check: C=%.4g delta=%.4g delta_bar=%.4g symmetry=%.2e passed=%s",
                report.chord_constant_C, report.separation_delta, report.interaction_bound_delta_bar,
                report.symmetry_defect, report.passed)
    return report


def make_ellipsoid_sphere_config(a: float, d1: float, d2: float,
                                 grid_size: int = DEFAULT_GRID_SIZE) -> PatchPairConfig:
    """
    Outer ellipsoid with semi-axes (a, a, d1) around the ball of radius d2.

    :raises HypothesisViolation: unless d1 > d2 > 0 and a > d2.
    """
    if not d2 > 0.0:
        raise HypothesisViolation(f"d2 must be positive, got {d2}")
    if not d1 > d2:
        raise HypothesisViolation(f"need d1 > d2, got d1={d1}, d2={d2}")
    if not a > d2:
        raise HypothesisViolation(f"need a > d2, got a={a}, d2={d2}")
    config = PatchPairConfig(d1=float(d1), d2=float(d2),
                             outer=RevolutionProfile.ellipsoid(a), inner=RevolutionProfile.sphere(d2))
    config.validated = validate_hypotheses(config, grid_size)
    return config


def make_scaled_ellipsoid_config(d1: float, gamma: float, d2: float,
                                 grid_size: int = DEFAULT_GRID_SIZE) -> PatchPairConfig:
    """Well-separated family: outer profile d1^(1+γ) sin φ around the ball of radius d2."""
    return make_ellipsoid_sphere_config(d1 ** (1.0 + gamma), d1, d2, grid_size)


def make_tabulated_config(outer: RevolutionProfile, inner: RevolutionProfile, d1: float, d2: float,
                          grid_size: int = DEFAULT_GRID_SIZE) -> PatchPairConfig:
    """
    Configuration from arbitrary profiles.

    :raises HypothesisViolation: when the hypothesis report fails.
    """
    config = PatchPairConfig(d1=float(d1), d2=float(d2), outer=outer, inner=inner)
    config.validated = validate_hypotheses(config, grid_size)
    if not config.validated.passed:
        raise HypothesisViolation("; ".join(config.validated.reasons))
    return config
