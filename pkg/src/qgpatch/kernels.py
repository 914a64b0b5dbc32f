"""
Interaction kernels between the two stationary surfaces.

For surfaces i, j and latitudes φ (target) and ψ (source):

* R_ij(φ, ψ) = (r_i(φ) + r_j(ψ))² + (d_i cos φ - d_j cos ψ)²;
* x = 4 r_i(φ) r_j(ψ) / R_ij, with 1 - x = ((r_i - r_j)² + Δz²) / R_ij computed directly;
* H^n_ij(φ, ψ) = ε_n x^(n-1) F_n(x) sin ψ r_j(ψ)² R_ij^(-3/2), ε_n = 2 (1/2)_n² / (2n)!.

The symmetric part Γ^n_ij = H^n_ij / (sin ψ r_j²) satisfies Γ^n_ij(φ, ψ) = Γ^n_ji(ψ, φ).
The ν functions, the angular-velocity window and the closed forms of the ellipsoid/sphere
configuration live here as well.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import integrate, special

from qgpatch.profiles import PatchPairConfig
from qgpatch.quadrature import QuadratureGrid
from qgpatch.specfun import fn_values, log_epsilon

logger = logging.getLogger(__name__)

DIAGONAL_TOLERANCE = 1e-14
WINDOW_SAMPLES = 1024


class SingularKernelError(ValueError):
    """Raised when a self kernel is evaluated on its diagonal."""


def epsilon(n: int) -> float:
    """ε_n = 2 (1/2)_n² / (2n)!."""
    return math.exp(log_epsilon(n))


def _fn_or_elliptic(n: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if n == 0:
        return (2.0 / math.pi) * special.ellipkm1(y)
    return fn_values(n, x, y)


def ring_kernel(n: int, R, z, r_src, z_src, dr=None, dz=None) -> np.ndarray:  # pylint: disable=invalid-name
    """
    ∫_0^{2π} cos(nη) / |X - Y(η)| dη for X = (R, 0, z) and the ring Y(η) = (r' e^{iη}, z').

    Equals π ε_n x^n F_n(x) / sqrt(R_sum) with R_sum = (R + r')² + (z - z')² and
    x = 4 R r' / R_sum; n = 0 gives 4 K(x) / sqrt(R_sum).

    :param n: Non-negative mode.
    :param R: Radius of the evaluation point.
    :param z: Height of the evaluation point.
    :param r_src: Ring radius r'.
    :param z_src: Ring height z'.
    :param dr: Optional R - r' computed by the caller without cancellation.
    :param dz: Optional z - z' computed the same way.
    :return: Array of ring integrals.
    """
    R, z, r_src, z_src = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (R, z, r_src, z_src)))
    diff = R - r_src if dr is None else np.broadcast_to(np.asarray(dr, dtype=float), R.shape)
    dz2 = (z - z_src) ** 2 if dz is None else np.broadcast_to(np.asarray(dz, dtype=float), R.shape) ** 2
    r_sum = (R + r_src) ** 2 + dz2
    x = 4.0 * R * r_src / r_sum
    # a point on the ring itself only occurs through rounding
    y = np.maximum((diff ** 2 + dz2) / r_sum, np.finfo(float).tiny)
    flat_x, flat_y = x.ravel(), y.ravel()
    values = _fn_or_elliptic(n, flat_x, flat_y).reshape(x.shape)
    return math.pi * epsilon(n) * x ** n * values / np.sqrt(r_sum)


@dataclass
class OmegaWindow:
    """Admissible angular velocities (Ω̄₂, Ω̄₁)."""
    omega_bar_1: float
    omega_bar_2: float
    argmin_phi_1: float
    argmax_phi_2: float
    gap: float

    @property
    def spectral_condition(self) -> bool:
        return self.gap > 0.0

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.omega_bar_1 + self.omega_bar_2)

    def margin(self, relative: float) -> float:
        return relative * self.gap

    def contains(self, omega: float, relative_margin: float = 0.0) -> bool:
        """True when Ω lies inside the window by at least ``relative_margin * gap``."""
        eps = self.margin(relative_margin)
        return self.omega_bar_2 + eps < omega < self.omega_bar_1 - eps

    def to_dict(self) -> Dict[str, float]:
        return {
            "omega_bar_1": self.omega_bar_1,
            "omega_bar_2": self.omega_bar_2,
            "gap": self.gap,
            "argmin_phi_1": self.argmin_phi_1,
            "argmax_phi_2": self.argmax_phi_2,
        }


@dataclass
class KernelContext:
    """
    A configuration together with the latitude rule used for all kernel integrals.

    Kernel values are pure functions of their arguments; the context only memoises ν
    sources at the grid nodes and the Nyström blocks per mode.
    The caches may be filled from several worker threads; every caller gets the same
    cached object.
    """
    config: PatchPairConfig
    grid: QuadratureGrid
    _g_cache: Dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False)
    _block_cache: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(
        default_factory=dict, init=False, repr=False)
    _alpha1: Optional[float] = field(default=None, init=False, repr=False)
    _window: Optional["OmegaWindow"] = field(default=None, init=False, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, init=False, repr=False, compare=False)

    def radius(self, i: int, phi) -> np.ndarray:
        return self.config.profile(i).radius(phi)

    def height(self, i: int) -> float:
        return self.config.height(i)

    def _geometry(self, i: int, j: int, phi, psi) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(R_ij, x, 1 - x) with the complement free of cancellation."""
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        r_i, r_j = self.radius(i, phi), self.radius(j, psi)
        if i == j:
            d = self.height(i)
            dr = self.config.profile(i).difference(phi, psi)
            dz = -2.0 * d * np.sin(0.5 * (phi + psi)) * np.sin(0.5 * (phi - psi))
        else:
            dr = r_i - r_j
            dz = self.height(i) * np.cos(phi) - self.height(j) * np.cos(psi)
        big_r = (r_i + r_j) ** 2 + dz ** 2
        # same floor as ring_kernel: ψ = φ only occurs through rounding
        y = np.maximum((dr ** 2 + dz ** 2) / big_r, np.finfo(float).tiny)
        return big_r, 4.0 * r_i * r_j / big_r, y

    def R_ij(self, i: int, j: int, phi, psi) -> np.ndarray:  # pylint: disable=invalid-name
        """(r_i(φ) + r_j(ψ))² + (d_i cos φ - d_j cos ψ)²."""
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        return (self.radius(i, phi) + self.radius(j, psi)) ** 2 + \
            (self.height(i) * np.cos(phi) - self.height(j) * np.cos(psi)) ** 2

    def gamma_n(self, i: int, j: int, n: int, phi, psi) -> np.ndarray:
        """Symmetric part Γ^n_ij = ε_n x^(n-1) F_n(x) R^(-3/2)."""
        big_r, x, y = self._geometry(i, j, phi, psi)
        shape = x.shape
        values = fn_values(n, x.ravel(), y.ravel()).reshape(shape)
        return epsilon(n) * x ** (n - 1) * values * big_r ** -1.5

    def H_n(self, i: int, j: int, n: int, phi, psi, check: bool = True) -> np.ndarray:  # pylint: disable=invalid-name
        """
        Kernel H^n_ij(φ, ψ) for arrays of latitudes.

        :raises SingularKernelError: for a self kernel with |φ - ψ| < 1e-14 when ``check`` is on.
        """
        phi = np.asarray(phi, dtype=float)
        psi = np.asarray(psi, dtype=float)
        if check and i == j and np.any(np.abs(phi - psi) < DIAGONAL_TOLERANCE):
            raise SingularKernelError(f"H^{n}_{i}{i} is singular on the diagonal")
        weight = np.sin(psi) * self.radius(j, psi) ** 2
        return self.gamma_n(i, j, n, phi, psi) * weight

    def g(self, i: int, phi) -> np.ndarray:
        """
        d₁∫H¹_i1(φ, ψ)dψ - d₂∫H¹_i2(φ, ψ)dψ at the given latitudes (endpoints allowed).

        ν₁ = g₁ - Ω and ν₂ = Ω - g₂.
        """
        phis = np.atleast_1d(np.asarray(phi, dtype=float))
        out = np.empty(phis.shape)
        for k, t in enumerate(phis):
            total = 0.0
            for j, sign in ((1, 1.0), (2, -1.0)):
                if j == i:
                    points, weights = self.grid.singular_rule(float(t))
                else:
                    points, weights = self.grid.nodes, self.grid.weights
                values = self.H_n(i, j, 1, np.full(points.shape, t), points, check=False)
                total += sign * self.height(j) * float(np.dot(weights, values))
            out[k] = total
        return out if np.ndim(phi) else out[0]

    def g_nodes(self, i: int) -> np.ndarray:
        """g_i at the grid nodes, memoised."""
        with self._lock:
            cached = self._g_cache.get(i)
        if cached is None:
            values = self.g(i, self.grid.nodes)
            with self._lock:
                cached = self._g_cache.setdefault(i, values)
        return cached

    def nu(self, i: int, omega: float, phi) -> np.ndarray:
        """ν_{i,Ω}(φ) = (-1)^(i-1) (g_i(φ) - Ω)."""
        sign = 1.0 if i == 1 else -1.0
        return sign * (self.g(i, phi) - omega)

    def nu_nodes(self, i: int, omega: float) -> np.ndarray:
        sign = 1.0 if i == 1 else -1.0
        return sign * (self.g_nodes(i) - omega)

    def blocks(self, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Discrete symmetric kernels (Γ11, Γ12, Γ22) at the grid nodes for mode n.

        Self blocks come from product integration divided by ω_l = w_l sin ψ_l r_j(ψ_l)²
        and are symmetrised; Γ21 is Γ12 transposed.
        """
        with self._lock:
            cached = self._block_cache.get(n)
        if cached is None:
            nodes = self.grid.nodes
            self_blocks = []
            for i in (1, 2):
                matrix = self.grid.nystrom_matrix(lambda phi, psi, i=i: self.H_n(i, i, n, phi, psi, check=False))
                omega = self.grid.weights * np.sin(nodes) * self.radius(i, nodes) ** 2
                gamma = matrix / omega[None, :]
                self_blocks.append(0.5 * (gamma + gamma.T))
            phi, psi = np.meshgrid(nodes, nodes, indexing="ij")
            cross = self.gamma_n(1, 2, n, phi, psi)
            with self._lock:
                cached = self._block_cache.setdefault(n, (self_blocks[0], cross, self_blocks[1]))
            logger.debug("Assembled kernel blocks for n=%d on %d nodes", n, nodes.size)
        return cached

    def window(self, samples: int = WINDOW_SAMPLES) -> "OmegaWindow":
        """The admissible window, scanned once per context."""
        with self._lock:
            if self._window is None:
                self._window = omega_window(self, samples)
            return self._window

    @property
    def alpha1(self) -> float:
        """α₁(a) of the outer ellipsoid, for the ellipsoid/sphere preset."""
        with self._lock:
            if self._alpha1 is None:
                self._alpha1 = alpha1(self.config.outer.semi_axis, self.config.d1)
            return self._alpha1


def _parabolic_vertex(xs: np.ndarray, ys: np.ndarray, k: int) -> Tuple[float, float]:
    """Vertex of the parabola through three consecutive samples, or the sample itself."""
    if k == 0 or k == xs.size - 1:
        return float(xs[k]), float(ys[k])
    x0, x1, x2 = xs[k - 1:k + 2]
    y0, y1, y2 = ys[k - 1:k + 2]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / denom
    if a == 0.0:
        return float(x1), float(y1)
    xv = -b / (2.0 * a)
    if not x0 <= xv <= x2:
        return float(x1), float(y1)
    c = y1 - a * x1 ** 2 - b * x1
    return float(xv), float(a * xv ** 2 + b * xv + c)


def chebyshev_latitudes(samples: int) -> np.ndarray:
    """Chebyshev-spaced latitudes on [0, π], endpoints included."""
    return 0.5 * math.pi * (1.0 - np.cos(math.pi * np.arange(samples) / (samples - 1)))


def omega_window(ctx: KernelContext, samples: int = WINDOW_SAMPLES) -> OmegaWindow:
    """
    Ω̄₁ = inf g₁ and Ω̄₂ = sup g₂ over latitude, from a Chebyshev scan refined by
    three-point parabolic interpolation.

    A non-positive gap is reported, not raised.
    """
    phis = chebyshev_latitudes(samples)
    g1 = ctx.g(1, phis)
    g2 = ctx.g(2, phis)
    arg1, bar1 = _parabolic_vertex(phis, g1, int(np.argmin(g1)))
    arg2, bar2 = _parabolic_vertex(phis, g2, int(np.argmax(g2)))
    # the quadrature nodes are sampled too, so ν stays positive on them inside the window
    bar1 = min(bar1, float(np.min(g1)), float(np.min(ctx.g_nodes(1))))
    bar2 = max(bar2, float(np.max(g2)), float(np.max(ctx.g_nodes(2))))
    window = OmegaWindow(omega_bar_1=bar1, omega_bar_2=bar2, argmin_phi_1=arg1, argmax_phi_2=arg2,
                         gap=bar1 - bar2)
    logger.info("Omega window: (%.10f, %.10f), gap %.3e", bar2, bar1, window.gap)
    if not window.spectral_condition:
        logger.warning("Spectral condition fails: gap %.3e <= 0", window.gap)
    return window


def _quad(integrand, lower: float, upper: float) -> float:
    value, _ = integrate.quad(integrand, lower, upper, epsabs=0.0, epsrel=1e-13, limit=200)
    return value


def alpha1(a: float, d1: float) -> float:
    """
    α₁ = a² d₁ / 4 ∫_0^∞ ds / ((a² + s)² sqrt(d₁² + s)).

    After s = d₁² tan² t the integrand is smooth on [0, π/2]:
    (a² d₁² / 2) ∫ sin t cos² t / (a² cos² t + d₁² sin² t)² dt.
    """
    if a <= 0.0 or d1 <= 0.0:
        raise ValueError("alpha1 needs a > 0 and d1 > 0")
    return 0.5 * a * a * d1 * d1 * _quad(
        lambda t: math.sin(t) * math.cos(t) ** 2 / (a * a * math.cos(t) ** 2 + d1 * d1 * math.sin(t) ** 2) ** 2,
        0.0, 0.5 * math.pi)


def alpha2(a: float, d1: float) -> float:
    """α₂ = a² d₁ / 4 ∫_0^∞ ds / ((a² + s)(d₁² + s)^(3/2)), the z² coefficient."""
    return 0.5 * a * a * _quad(
        lambda t: math.sin(t) * math.cos(t) ** 2 / (a * a * math.cos(t) ** 2 + d1 * d1 * math.sin(t) ** 2),
        0.0, 0.5 * math.pi)


def alpha3(a: float, d1: float) -> float:
    """α₃ = -a² d₁ / 4 ∫_0^∞ ds / ((a² + s) sqrt(d₁² + s)), the constant term."""
    return -0.5 * a * a * d1 * d1 * _quad(
        lambda t: math.sin(t) / (a * a * math.cos(t) ** 2 + d1 * d1 * math.sin(t) ** 2),
        0.0, 0.5 * math.pi)


def ellipsoid_interior_stream(R, z, a: float, d1: float) -> np.ndarray:  # pylint: disable=invalid-name
    """Stream function of the solid ellipsoid inside it: α₁R² + α₂z² + α₃."""
    return alpha1(a, d1) * np.asarray(R) ** 2 + alpha2(a, d1) * np.asarray(z) ** 2 + alpha3(a, d1)


def sphere_stream(R, z, radius: float) -> np.ndarray:  # pylint: disable=invalid-name
    """Stream function of the solid ball: (ρ² - 3r²)/6 inside, -r³/(3ρ) outside."""
    rho2 = np.asarray(R, dtype=float) ** 2 + np.asarray(z, dtype=float) ** 2
    inside = (rho2 - 3.0 * radius ** 2) / 6.0
    with np.errstate(divide="ignore"):
        outside = -radius ** 3 / (3.0 * np.sqrt(rho2))
    return np.where(rho2 <= radius ** 2, inside, outside)


def nu_closed_form(i: int, omega: float, phi, a: float, d1: float, d2: float) -> np.ndarray:
    """ν_{i,Ω} for the ellipsoid (a, a, d₁) around the ball of radius d₂."""
    two_alpha = 2.0 * alpha1(a, d1)
    phi = np.asarray(phi, dtype=float)
    if i == 1:
        return two_alpha - (d2 ** 3 / 3.0) * (d1 ** 2 * np.cos(phi) ** 2 + a ** 2 * np.sin(phi) ** 2) ** -1.5 - omega
    return omega - two_alpha + 1.0 / 3.0 + 0.0 * phi


def window_closed_form(a: float, d1: float, d2: float) -> OmegaWindow:
    """Ω̄₂ = 2α₁ - 1/3 and Ω̄₁ = 2α₁ - d₂³ / (3 min(a, d₁)³)."""
    two_alpha = 2.0 * alpha1(a, d1)
    bar1 = two_alpha - d2 ** 3 / (3.0 * min(a, d1) ** 3)
    bar2 = two_alpha - 1.0 / 3.0
    return OmegaWindow(omega_bar_1=bar1, omega_bar_2=bar2,
                       argmin_phi_1=0.5 * math.pi if a < d1 else 0.0,
                       argmax_phi_2=0.5 * math.pi, gap=bar1 - bar2)
