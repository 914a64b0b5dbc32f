import math
import unittest

import numpy as np

from qgpatch.quadrature import build_grid

# Disable logging
import logging
logging.disable(logging.CRITICAL)


def exact_log_integral(t):
    """∫_0^π ln|t - ψ| dψ."""
    def part(u):
        return u * math.log(u) - u if u > 0.0 else 0.0
    return part(t) + part(math.pi - t)


class TestBuildGrid(unittest.TestCase):
    def test_uniform_weights_sum_to_pi(self):
        grid = build_grid(64, grading=1.0)
        self.assertAlmostEqual(float(np.sum(grid.weights)), math.pi, places=13)
        widths = np.diff(grid.breaks)
        np.testing.assert_allclose(widths, widths[0], rtol=1e-13)

    def test_nodes_open_and_increasing(self):
        grid = build_grid(96, grading=2.0)
        self.assertTrue(np.all(np.diff(grid.nodes) > 0.0))
        self.assertGreater(grid.nodes[0], 0.0)
        self.assertLess(grid.nodes[-1], math.pi)

    def test_grid_symmetric_about_equator(self):
        grid = build_grid(64, grading=2.0)
        np.testing.assert_allclose(grid.nodes[::-1], math.pi - grid.nodes, atol=1e-14)
        np.testing.assert_allclose(grid.weights[::-1], grid.weights, rtol=1e-12)

    def test_sine_integral(self):
        grid = build_grid(128, grading=2.0)
        self.assertAlmostEqual(grid.integrate(np.sin(grid.nodes)), 2.0, delta=1e-12)

    def test_invalid_sizes(self):
        with self.assertRaises(ValueError):
            build_grid(8)
        with self.assertRaises(ValueError):
            build_grid(60)
        with self.assertRaises(ValueError):
            build_grid(64, grading=0.5)


class TestSingularRules(unittest.TestCase):
    def test_log_integral_converges_under_doubling(self):
        exact = exact_log_integral(math.pi / 2)
        coarse = abs(build_grid(64, grading=2.0).log_integral(math.pi / 2) - exact)
        fine = abs(build_grid(128, grading=2.0).log_integral(math.pi / 2) - exact)
        self.assertLessEqual(coarse, 1e-10)
        self.assertLessEqual(fine, max(coarse / 50.0, 1e-12))

    def test_log_integral_at_node_target(self):
        grid = build_grid(64, grading=2.0)
        t = float(grid.nodes[13])
        self.assertAlmostEqual(grid.log_integral(t), exact_log_integral(t), delta=1e-11)

    def test_log_integral_with_smooth_density(self):
        # ∫_0^π ln|ψ| cos ψ dψ = -Si(π)
        grid = build_grid(64, grading=2.0)
        value = grid.log_integral(0.0, np.cos(grid.nodes))
        self.assertAlmostEqual(value, -1.8519370519824662, delta=1e-10)

    def test_singular_rule_integrates_log(self):
        grid = build_grid(32, grading=2.0)
        for t in (0.0, 0.37, math.pi / 2, 2.9, math.pi):
            points, weights = grid.singular_rule(t)
            value = float(np.sum(weights * np.log(np.abs(points - t))))
            self.assertAlmostEqual(value, exact_log_integral(t), delta=1e-11, msg=f"t={t}")
            self.assertAlmostEqual(float(np.sum(weights)), math.pi, delta=1e-13)

    def test_nystrom_matrix_reproduces_log_potential(self):
        grid = build_grid(48, grading=2.0)
        matrix = grid.nystrom_matrix(lambda phi, psi: np.log(np.abs(phi - psi)))
        expected = np.array([exact_log_integral(t) for t in grid.nodes])
        np.testing.assert_allclose(matrix @ np.ones(grid.size), expected, atol=1e-10)

    def test_nystrom_matrix_of_log_kernel_is_finite(self):
        for size, grading in ((48, 2.0), (64, 1.0), (160, 2.0), (256, 3.0)):
            grid = build_grid(size, grading=grading)
            matrix = grid.nystrom_matrix(lambda phi, psi: np.log(np.abs(phi - psi)))
            self.assertTrue(np.all(np.isfinite(matrix)), msg=f"N={size}, grading={grading}")
            self.assertTrue(np.all(grid.corr_points != grid.nodes[grid.corr_target]))

    def test_nystrom_matrix_matches_plain_rule_for_smooth_kernel(self):
        grid = build_grid(32, grading=2.0)

        def kernel(phi, psi):
            return np.cos(phi - psi) * np.sin(psi)
        np.testing.assert_allclose(grid.nystrom_matrix(kernel) @ np.ones(grid.size),
                                   grid.plain_matrix(kernel) @ np.ones(grid.size), atol=1e-12)

    def test_interpolation_is_exact_for_low_degree(self):
        grid = build_grid(32, grading=2.0)
        values = grid.nodes ** 3 - grid.nodes
        points = np.array([0.0, 0.3, 1.7, math.pi])
        np.testing.assert_allclose(grid.interpolate(values, points), points ** 3 - points, atol=1e-11)


if __name__ == "__main__":
    unittest.main()
