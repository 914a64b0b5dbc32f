"""
Latitude quadrature on (0, π) with treatment of diagonal log singularities.

The grid is a composite Gauss–Legendre rule on panels graded toward both poles. For an
integrand with a (near-)singularity at a target latitude t, the panel holding t and its
two neighbours are replaced by geometrically graded sub-rules (``singular_rule``). When
the integrand is only known at the grid nodes (Nyström assembly), the sub-rule values are
obtained by Lagrange interpolation on each panel; the resulting product-integration
weights for every node target are precomputed as flat correction tables.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PANEL_ORDER = 8
SUBRULE_RATIO = 0.25
SUBRULE_ORDER = 14
SUBRULE_DEPTH = 1e-13
ULP_FLOOR = 8192.0  # innermost sub-rule width in units of spacing(t); its first Gauss point stays ~28 ulp off t
NEAR_FACTOR = 1.0  # panels closer than this many own widths to the target are refined

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _grading_map(s: np.ndarray, grading: float) -> np.ndarray:
    """s^γ / (s^γ + (1 - s)^γ): identity for γ = 1, clustered at both ends for γ > 1."""
    num = s ** grading
    return num / (num + (1.0 - s) ** grading)


def _lagrange_reference(reference: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Lagrange basis of the reference nodes evaluated at xi, shape (len(xi), len(reference))."""
    p = reference.size
    basis = np.ones((xi.size, p))
    for l in range(p):
        for m in range(p):
            if m != l:
                basis[:, l] *= (xi - reference[m]) / (reference[l] - reference[m])
    return basis


def _graded_piece(a: float, b: float, toward_a: bool, floor: float,
                  gauss: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss pieces on [a, b] whose lengths shrink geometrically toward one end."""
    length = b - a
    if length <= 0.0:
        return np.empty(0), np.empty(0)
    distances = [length]
    while distances[-1] * SUBRULE_RATIO > floor:
        distances.append(distances[-1] * SUBRULE_RATIO)
    distances.append(0.0)
    dist = np.asarray(distances)
    hi, lo = dist[:-1], dist[1:]
    xs, ws = gauss
    half = 0.5 * (hi - lo)
    offsets = (0.5 * (hi + lo))[:, None] + half[:, None] * xs[None, :]
    weights = (half[:, None] * ws[None, :]).ravel()
    points = (a + offsets if toward_a else b - offsets).ravel()
    return points, weights


@dataclass
class QuadratureGrid:
    """
    Composite Gauss–Legendre grid on (0, π).

    Correction tables are flat arrays of equal length: for each entry, the node target it
    belongs to, a sub-rule point and weight, the panel holding the point and the Lagrange
    basis row of that panel evaluated at the point.
    """
    nodes: np.ndarray
    weights: np.ndarray
    breaks: np.ndarray
    grading: float
    order: int = PANEL_ORDER
    corr_target: np.ndarray = field(init=False, repr=False)
    corr_points: np.ndarray = field(init=False, repr=False)
    corr_weights: np.ndarray = field(init=False, repr=False)
    corr_panel: np.ndarray = field(init=False, repr=False)
    corr_basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._reference = np.polynomial.legendre.leggauss(self.order)
        self._fine = np.polynomial.legendre.leggauss(SUBRULE_ORDER)
        self.panel_index = np.repeat(np.arange(self.panels), self.order)
        self._build_corrections()

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    @property
    def panels(self) -> int:
        return int(self.breaks.size - 1)

    def panel_of(self, t: float) -> int:
        """Index of the panel holding latitude t (endpoints map to the outer panels)."""
        idx = int(np.searchsorted(self.breaks, t, side="right")) - 1
        return min(max(idx, 0), self.panels - 1)

    def near_panels(self, t: float, panel: int) -> List[int]:
        """Own panel, its neighbours and every panel closer to t than NEAR_FACTOR of its width."""
        lo, hi = self.breaks[:-1], self.breaks[1:]
        dist = np.maximum(np.maximum(lo - t, t - hi), 0.0)
        close = dist < NEAR_FACTOR * (hi - lo)
        return [q for q in range(self.panels) if abs(q - panel) <= 1 or close[q]]

    @property
    def near_mask(self) -> np.ndarray:
        """near_mask[k, l] is True when node l lies in a near panel of node k."""
        return self._near_mask

    def _near_rule(self, t: float, panel: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        pts, wts, owners = [], [], []
        for q in self.near_panels(t, panel):
            lo, hi = float(self.breaks[q]), float(self.breaks[q + 1])
            depth = max(SUBRULE_DEPTH * (hi - lo), ULP_FLOOR * float(np.spacing(t)))
            if q == panel:
                pieces = [_graded_piece(lo, t, False, depth, self._fine),
                          _graded_piece(t, hi, True, depth, self._fine)]
            elif q < panel:
                pieces = [_graded_piece(lo, hi, False, max(depth, 0.5 * (t - hi)), self._fine)]
            else:
                pieces = [_graded_piece(lo, hi, True, max(depth, 0.5 * (lo - t)), self._fine)]
            for p, w in pieces:
                pts.append(p)
                wts.append(w)
                owners.append(np.full(p.size, q))
        return np.concatenate(pts), np.concatenate(wts), np.concatenate(owners)

    def _basis(self, points: np.ndarray, owners: np.ndarray) -> np.ndarray:
        lo, hi = self.breaks[owners], self.breaks[owners + 1]
        xi = 2.0 * (points - lo) / (hi - lo) - 1.0
        return _lagrange_reference(self._reference[0], xi)

    def _build_corrections(self):
        targets, points, weights, owners = [], [], [], []
        for k, t in enumerate(self.nodes):
            p, w, o = self._near_rule(float(t), int(self.panel_index[k]))
            targets.append(np.full(p.size, k))
            points.append(p)
            weights.append(w)
            owners.append(o)
        self.corr_target = np.concatenate(targets)
        self.corr_points = np.concatenate(points)
        self.corr_weights = np.concatenate(weights)
        self.corr_panel = np.concatenate(owners)
        self.corr_basis = self._basis(self.corr_points, self.corr_panel)
        self._near_mask = np.zeros((self.size, self.size), dtype=bool)
        cols = self.corr_panel[:, None] * self.order + np.arange(self.order)[None, :]
        self._near_mask[np.repeat(self.corr_target, self.order), cols.ravel()] = True
        logger.debug("Built %d correction entries for %d nodes", self.corr_target.size, self.size)

    def far_nodes(self, t: float, panel: int) -> np.ndarray:
        """Boolean mask of nodes outside the near panels of target t."""
        return ~np.isin(self.panel_index, self.near_panels(t, panel))

    def singular_rule(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Rule for ∫_0^π F(ψ) dψ with F sampled anywhere, accurate when F has a log-type
        singularity at ψ = t.

        :param t: Singular latitude in [0, π].
        :return: (points, weights).
        """
        panel = self.panel_of(t)
        far = self.far_nodes(t, panel)
        near_p, near_w, _ = self._near_rule(float(t), panel)
        return (np.concatenate((self.nodes[far], near_p)),
                np.concatenate((self.weights[far], near_w)))

    def product_weights(self, t: float, kernel: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """
        Weights W with Σ W_l h(ψ_l) ≈ ∫ kernel(ψ) h(ψ) dψ for h smooth on each panel.

        :param t: Latitude where the kernel is singular.
        :param kernel: Vectorised function of ψ.
        :return: Length-N weight vector.
        """
        panel = self.panel_of(t)
        far = self.far_nodes(t, panel)
        out = np.zeros(self.size)
        out[far] = self.weights[far] * kernel(self.nodes[far])
        points, weights, owners = self._near_rule(float(t), panel)
        rows = (weights * kernel(points))[:, None] * self._basis(points, owners)
        cols = owners[:, None] * self.order + np.arange(self.order)[None, :]
        np.add.at(out, cols.ravel(), rows.ravel())
        return out

    def nystrom_matrix(self, kernel: Kernel) -> np.ndarray:
        """
        Product-integration matrix W with (W h)_k ≈ ∫ kernel(φ_k, ψ) h(ψ) dψ.

        The kernel is only sampled away from the diagonal panels, so it may be singular
        on φ = ψ.

        :param kernel: Elementwise function of (φ, ψ) arrays.
        :return: N×N matrix.
        """
        n = self.size
        phi, psi = np.meshgrid(self.nodes, self.nodes, indexing="ij")
        far = ~self.near_mask
        out = np.zeros((n, n))
        out[far] = kernel(phi[far], psi[far]) * np.broadcast_to(self.weights, (n, n))[far]
        values = self.corr_weights * kernel(self.nodes[self.corr_target], self.corr_points)
        rows = np.repeat(self.corr_target, self.order)
        cols = (self.corr_panel[:, None] * self.order + np.arange(self.order)[None, :]).ravel()
        np.add.at(out, (rows, cols), (values[:, None] * self.corr_basis).ravel())
        return out

    def plain_matrix(self, kernel: Kernel) -> np.ndarray:
        """Plain Nyström matrix w_l kernel(φ_k, ψ_l) for smooth kernels."""
        phi, psi = np.meshgrid(self.nodes, self.nodes, indexing="ij")
        return kernel(phi, psi) * self.weights[None, :]

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Panel-wise Lagrange interpolation of node values (last axis) at arbitrary points."""
        points = np.asarray(points, dtype=float)
        owners = np.clip(np.searchsorted(self.breaks, points.ravel(), side="right") - 1, 0, self.panels - 1)
        basis = self._basis(points.ravel(), owners)
        values = np.asarray(values, dtype=float)
        panel_values = values[..., owners[:, None] * self.order + np.arange(self.order)[None, :]]
        return np.sum(panel_values * basis, axis=-1).reshape(values.shape[:-1] + points.shape)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def log_integral(self, t: float, values: Optional[np.ndarray] = None) -> float:
        """∫_0^π ln|t - ψ| h(ψ) dψ with h given at the nodes (h = 1 by default)."""
        weights = self.product_weights(t, lambda psi: np.log(np.abs(t - psi)))
        if values is None:
            return float(np.sum(weights))
        return float(np.dot(weights, values))


def build_grid(N: int, grading: float = 2.0, order: int = PANEL_ORDER) -> QuadratureGrid:  # pylint: disable=invalid-name
    """
    Builds the composite Gauss–Legendre grid.

    :param N: Number of nodes, a multiple of ``order`` and at least 16.
    :param grading: Exponent γ ≥ 1 of the panel map toward 0 and π.
    :param order: Gauss points per panel.
    :return: QuadratureGrid with correction tables for all node targets.
    """
    if N < 16 or N % order != 0:
        raise ValueError(f"N must be a multiple of {order} and at least 16, got {N}")
    if grading < 1.0:
        raise ValueError(f"grading must be >= 1, got {grading}")
    panels = N // order
    breaks = math.pi * _grading_map(np.arange(panels + 1) / panels, grading)
    breaks[0], breaks[-1] = 0.0, math.pi
    ref_x, ref_w = np.polynomial.legendre.leggauss(order)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    nodes = (0.5 * (hi + lo) + 0.5 * (hi - lo) * ref_x[None, :]).ravel()
    weights = (0.5 * (hi - lo) * ref_w[None, :]).ravel()
    grid = QuadratureGrid(nodes=nodes, weights=weights, breaks=breaks, grading=float(grading), order=order)
    logger.info("Built quadrature grid: N=%d, panels=%d, grading=%.2f", N, panels, grading)
    return grid
