import math
import unittest

import numpy as np

from qgpatch.bifurcation import find_omega_m
from qgpatch.kernels import KernelContext, ellipsoid_interior_stream, sphere_stream
from qgpatch.nonlinear import (
    PerturbationTooLarge, SurfacePerturbation, body_stream, functional_Ftilde, kernel_direction,
    linearization_check, linearized_matvec, residual_check, separation_delta, separation_guard,
    smooth_direction, stream_at, velocity_at,
)
from qgpatch.profiles import make_ellipsoid_sphere_config
from qgpatch.spectral import build_grid

# Disable logging
import logging
logging.disable(logging.CRITICAL)


def preset_context(size=64):
    ctx = KernelContext(make_ellipsoid_sphere_config(1.5, 2.0, 1.0, grid_size=64), build_grid(size))
    ctx.window(512)
    return ctx


class TestStreamFunction(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.ctx = preset_context()
        cls.zero = SurfacePerturbation.zero(2)

    def test_sphere_interior_and_exterior(self):
        for R, z in ((0.3, 0.2), (0.5, -0.6), (1.2, 0.3), (0.4, 1.4)):
            expected = float(sphere_stream(R, z, 1.0))
            value = body_stream(2, (R, 0.7, z), self.zero, self.ctx)
            self.assertAlmostEqual(value, expected, delta=1e-8, msg=f"R={R} z={z}")

    def test_ellipsoid_interior(self):
        for R, z in ((0.3, 0.5), (1.2, 0.3), (0.0, 1.5)):
            expected = float(ellipsoid_interior_stream(R, z, 1.5, 2.0))
            value = body_stream(1, (R, 0.0, z), self.zero, self.ctx)
            self.assertAlmostEqual(value, expected, delta=1e-8, msg=f"R={R} z={z}")

    def test_decomposition(self):
        nodes = self.ctx.grid.nodes
        bump = 0.01 * np.sin(nodes) ** 3
        perturbation = SurfacePerturbation.single_mode(3, bump, -bump)
        point = (0.7, 0.3, 0.4)
        total = stream_at(point, perturbation, self.ctx)
        parts = body_stream(1, point, perturbation, self.ctx) - body_stream(2, point, perturbation, self.ctx)
        self.assertAlmostEqual(total, parts, delta=1e-10)

    def test_tangential_velocity_matches_nu_sources(self):
        theta = 0.3
        for i in (1, 2):
            for phi in (0.4, 1.1, 2.0):
                R = float(self.ctx.radius(i, phi))
                z = self.ctx.height(i) * math.cos(phi)
                u, v = velocity_at((R, theta, z), self.zero, self.ctx)
                tangential = -u * math.sin(theta) + v * math.cos(theta)
                self.assertAlmostEqual(tangential / R, float(self.ctx.g(i, phi)[0]), delta=1e-6,
                                       msg=f"i={i} phi={phi}")


class TestPerturbations(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.ctx = preset_context()

    def test_rejects_modes_off_the_fold(self):
        ones = np.ones(self.ctx.grid.size)
        with self.assertRaises(ValueError):
            SurfacePerturbation(fold=3, modes={4: (ones, ones)})
        with self.assertRaises(ValueError):
            SurfacePerturbation(fold=0)
        with self.assertRaises(ValueError):
            stream_at((0.5, 0.0, 0.0), SurfacePerturbation.single_mode(3, ones, ones), self.ctx, n_theta=20)

    def test_rejects_large_perturbation(self):
        direction = smooth_direction(4, self.ctx, np.random.default_rng(1))
        with self.assertRaises(PerturbationTooLarge):
            functional_Ftilde(self.ctx.window().midpoint, direction.scaled(0.5), self.ctx)

    def test_separation_guard(self):
        delta = separation_delta(self.ctx)
        flat = separation_guard(SurfacePerturbation.zero(4), self.ctx)
        # closest approach is the equatorial gap 1.5 - 1
        self.assertGreaterEqual(flat, 0.25 - 1e-12)
        self.assertAlmostEqual(delta, 0.25, delta=1e-6)
        bump = 0.02 * np.sin(self.ctx.grid.nodes) ** 4
        closer = separation_guard(SurfacePerturbation.single_mode(4, -bump, bump), self.ctx)
        self.assertLess(closer, flat)
        self.assertGreater(closer, 0.25 * delta)

    def test_smooth_direction(self):
        direction = smooth_direction(5, self.ctx, np.random.default_rng(3))
        self.assertAlmostEqual(direction.sup_norm(), 1.0, delta=1e-12)
        self.assertLessEqual(direction.equatorial_defect(), 1e-12)


class TestFunctional(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.ctx = preset_context()
        cls.window = cls.ctx.window()
        cls.point = find_omega_m(5, cls.ctx)
        cls.direction = kernel_direction(cls.point)

    def test_kernel_direction_is_normalised_and_symmetric(self):
        self.assertAlmostEqual(self.direction.sup_norm(), 1.0, delta=1e-12)
        self.assertLessEqual(self.direction.equatorial_defect(), 1e-8)
        self.assertEqual(list(self.direction.modes), [5])

    def test_zero_perturbation_is_stationary(self):
        value = functional_Ftilde(self.window.midpoint, SurfacePerturbation.zero(5), self.ctx)
        self.assertLessEqual(value.sup_norm, 1e-8)
        self.assertLessEqual(value.row_mean_defect(), 1e-12)

    def test_output_symmetries(self):
        value = functional_Ftilde(self.point.omega_m, self.direction.scaled(5e-3), self.ctx)
        self.assertEqual(value.values_1.shape, (self.ctx.grid.size, 40))
        self.assertLessEqual(value.row_mean_defect(), 1e-12)
        self.assertLessEqual(value.equatorial_defect(), 1e-10)
        self.assertLessEqual(value.fold_defect(5), 1e-14)
        self.assertLessEqual(value.sine_fraction(), 1e-12)

    def test_full_longitude_grid_has_fold_symmetry(self):
        bump = 0.01 * np.sin(self.ctx.grid.nodes) ** 2
        perturbation = SurfacePerturbation.single_mode(2, bump, -bump)
        full = functional_Ftilde(self.window.midpoint, perturbation, self.ctx, full_theta=True)
        tiled = functional_Ftilde(self.window.midpoint, perturbation, self.ctx)
        self.assertLessEqual(full.fold_defect(2), 1e-10)
        np.testing.assert_allclose(full.values_1, tiled.values_1, atol=1e-10)
        np.testing.assert_allclose(full.values_2, tiled.values_2, atol=1e-10)

    def test_kernel_direction_is_annihilated(self):
        value = linearized_matvec(self.point.omega_m, self.direction, self.ctx)
        self.assertLessEqual(value.sup_norm, 1e-7)

    def test_omega_derivative_is_minus_identity(self):
        direction = smooth_direction(5, self.ctx, np.random.default_rng(7))
        omega, step = self.window.midpoint, 1e-3 * self.window.gap
        upper = linearized_matvec(omega + step, direction, self.ctx)
        lower = linearized_matvec(omega - step, direction, self.ctx)
        h1, h2 = direction.modes[5]
        cos5 = np.cos(5 * upper.theta)[None, :]
        np.testing.assert_allclose((upper.values_1 - lower.values_1) / (2 * step), -h1[:, None] * cos5, atol=1e-6)
        np.testing.assert_allclose((upper.values_2 - lower.values_2) / (2 * step), -h2[:, None] * cos5, atol=1e-6)

    def test_finite_differences_match_linearization(self):
        report = linearization_check(self.window.midpoint, self.ctx, modes=(5, 10), directions=1, seed=11)
        self.assertEqual(len(report.rows), 2)
        self.assertLessEqual(report.stationarity, 1e-8)
        self.assertLessEqual(report.max_error, 1e-4, msg=str(report.rows))
        self.assertTrue(report.passed)

    def test_residual_is_second_order(self):
        report = residual_check(self.point, self.ctx)
        self.assertEqual(len(report.sup_norms), 3)
        self.assertTrue(all(v > 0.0 for v in report.sup_norms))
        self.assertGreaterEqual(report.fitted_order, 1.8, msg=str(report.sup_norms))
        self.assertTrue(report.passed)
        self.assertIn("sup_norm_by_s", report.to_dict())

    def test_velocity_vanishes_on_axis(self):
        perturbation = self.direction.scaled(1e-2)
        for z in (0.0, 0.5, 1.5):
            u, v = velocity_at((0.0, 0.0, z), perturbation, self.ctx)
            self.assertLessEqual(abs(u), 1e-8, msg=f"z={z}")
            self.assertLessEqual(abs(v), 1e-8, msg=f"z={z}")


if __name__ == "__main__":
    unittest.main()
