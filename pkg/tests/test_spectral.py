import csv
import math
import os
import shutil
import tempfile
import unittest

import numpy as np

from qgpatch.kernels import KernelContext
from qgpatch.profiles import make_ellipsoid_sphere_config
from qgpatch.spectral import (
    EigenPair, OmegaOutsideWindow, assemble, boundary_decay_check, build_grid, dlambda_domega,
    SWEEP_HEADER, eigen_sweep, eigenpair_at, eigenvalue_bounds, hilbert_schmidt_bound, largest_eigenpair,
    nystrom_interpolate, omega_grid,
)

# Disable logging
import logging
logging.disable(logging.CRITICAL)


def preset_context(size=64):
    ctx = KernelContext(make_ellipsoid_sphere_config(1.5, 2.0, 1.0, grid_size=64), build_grid(size))
    ctx.window(512)
    return ctx


class TestAssemble(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.ctx = preset_context()
        cls.window = cls.ctx.window()
        cls.op = assemble(3, cls.window.midpoint, cls.ctx)

    def test_matrix_is_symmetric(self):
        self.assertLessEqual(self.op.symmetry_defect(), 1e-12)

    def test_quadratic_form_is_self_adjoint(self):
        rng = np.random.default_rng(5)
        u, v = rng.standard_normal(2 * self.op.size), rng.standard_normal(2 * self.op.size)
        left, right = u @ (self.op.matrix @ v), v @ (self.op.matrix @ u)
        self.assertAlmostEqual(left, right, delta=1e-12 * np.linalg.norm(self.op.matrix) * 4 * self.op.size)

    def test_block_signs(self):
        n = self.op.size
        cross = self.op.matrix[:n, n:]
        self.assertTrue(np.all(cross < 0.0))
        mask = self.ctx.grid.near_mask
        far = ~(mask | mask.T)
        self.assertTrue(np.all(self.op.matrix[:n, :n][far] > 0.0))
        self.assertTrue(np.all(self.op.matrix[n:, n:][far] > 0.0))

    def test_similar_to_plain_nystrom_matrix(self):
        plain = np.linalg.eigvals(self.op.unsymmetrized())
        top = float(np.max(plain.real))
        self.assertAlmostEqual(top / largest_eigenpair(self.op).eigenvalue, 1.0, delta=1e-10)

    def test_frobenius_norm_within_block_bound(self):
        bound = hilbert_schmidt_bound(self.op, self.ctx)
        self.assertTrue(math.isfinite(bound))
        self.assertLessEqual(np.linalg.norm(self.op.matrix), 2.0 * (2.0 + 1.0) * bound)

    def test_rejects_omega_outside_window(self):
        with self.assertRaises(OmegaOutsideWindow):
            assemble(3, self.window.omega_bar_1 + 0.01, self.ctx)
        with self.assertRaises(OmegaOutsideWindow):
            assemble(3, self.window.omega_bar_1 - 1e-9 * self.window.gap, self.ctx)
        with self.assertRaises(OmegaOutsideWindow):
            assemble(3, self.window.omega_bar_2, self.ctx)


class TestLargestEigenpair(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.ctx = preset_context()
        cls.window = cls.ctx.window()

    def test_structure_for_several_modes(self):
        for n in (2, 5, 10):
            op = assemble(n, self.window.midpoint, self.ctx)
            pair = largest_eigenpair(op)
            lower, upper = eigenvalue_bounds(op, self.ctx)
            self.assertGreater(pair.eigenvalue, 0.0, msg=f"n={n}")
            self.assertGreater(pair.gap_to_second, 0.0, msg=f"n={n}")
            self.assertLessEqual(lower, pair.eigenvalue * (1 + 1e-12), msg=f"n={n}")
            self.assertLessEqual(pair.eigenvalue, upper, msg=f"n={n}")
            self.assertTrue(pair.sign_pattern_ok(), msg=f"n={n}")
            self.assertAlmostEqual(op.norm(pair.h1, pair.h2), 1.0, delta=1e-12)

    def test_sign_convention(self):
        pair = eigenpair_at(4, self.window.midpoint, self.ctx)
        self.assertGreater(pair.h1[int(np.argmax(np.abs(pair.h1)))], 0.0)

    def test_derivative_identity(self):
        omega = self.window.omega_bar_1 - 0.1 * self.window.gap
        step = 1e-5 * self.window.gap
        op = assemble(3, omega, self.ctx)
        pair = largest_eigenpair(op)
        upper = eigenpair_at(3, omega + step, self.ctx).eigenvalue
        lower = eigenpair_at(3, omega - step, self.ctx).eigenvalue
        finite_difference = (upper - lower) / (2.0 * step)
        self.assertGreater(finite_difference, 0.0)
        self.assertAlmostEqual(dlambda_domega(pair, op) / finite_difference, 1.0, delta=1e-4)

    def test_converges_under_grid_doubling(self):
        fine = preset_context(128)
        omega = self.window.midpoint
        coarse_value = eigenpair_at(3, omega, self.ctx).eigenvalue
        fine_value = eigenpair_at(3, omega, fine).eigenvalue
        self.assertAlmostEqual(coarse_value / fine_value, 1.0, delta=1e-5)


class TestEigenSweep(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.ctx = preset_context()
        cls.window = cls.ctx.window()

    def setUp(self):
        self.tempdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tempdir)

    def test_decreasing_in_mode(self):
        omega = self.window.midpoint
        report = eigen_sweep(range(2, 13), [omega], self.ctx)
        self.assertTrue(report.decreasing_in_n[omega])
        self.assertLessEqual(report.decay_slope(omega, 8, 12), -0.1)

    def test_increasing_in_omega_on_eleven_point_grid(self):
        omegas = omega_grid(self.window, 11)
        report = eigen_sweep([3, 8], omegas, self.ctx, jobs=2)
        self.assertTrue(report.increasing_in_omega[3])
        self.assertTrue(report.increasing_in_omega[8])
        for n in (3, 8):
            line = [report.value(n, omega) for omega in omegas]
            self.assertTrue(all(a < b for a, b in zip(line, line[1:])), msg=f"n={n}: {line}")

    def test_independent_of_worker_count(self):
        omegas = omega_grid(self.window, 2)
        serial = eigen_sweep([2, 3, 4], omegas, self.ctx, jobs=1)
        threaded = eigen_sweep([2, 3, 4], omegas, preset_context(), jobs=3)
        self.assertEqual([(r.n, r.omega, r.eigenvalue) for r in serial.rows],
                         [(r.n, r.omega, r.eigenvalue) for r in threaded.rows])

    def test_grows_again_towards_omega_bar_2(self):
        # the inner block carries 1/ν₂, which is constant in φ for the sphere
        bottom, gap = self.window.omega_bar_2, self.window.gap
        near_bottom = eigenpair_at(3, bottom + 1e-3 * gap, self.ctx).eigenvalue
        self.assertGreater(near_bottom, eigenpair_at(3, self.window.midpoint, self.ctx).eigenvalue)

    def test_omega_grid(self):
        top, gap = self.window.omega_bar_1, self.window.gap
        omegas = omega_grid(self.window, 11)
        self.assertEqual(len(omegas), 11)
        self.assertTrue(all(a < b for a, b in zip(omegas, omegas[1:])))
        self.assertAlmostEqual(omegas[0], top - 0.2 * gap, delta=1e-14)
        self.assertAlmostEqual(omegas[-1], top - 0.01 * gap, delta=1e-14)
        self.assertTrue(all(self.window.contains(omega, 1e-6) for omega in omegas))
        with self.assertRaises(ValueError):
            omega_grid(self.window, 1)
        with self.assertRaises(ValueError):
            omega_grid(self.window, 5, band=(0.01, 0.2))

    def test_csv_export(self):
        report = eigen_sweep([2, 3], [self.window.midpoint], self.ctx)
        path = os.path.join(self.tempdir, "sweep.csv")
        report.to_csv(path)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], list(SWEEP_HEADER))
        with open(path, "rb") as f:
            self.assertNotIn(b"\r", f.read())
        self.assertEqual(len(rows), 3)
        self.assertEqual(float(rows[1][2]), report.value(2, self.window.midpoint))

    def test_rejects_omega_outside_window(self):
        with self.assertRaises(OmegaOutsideWindow):
            eigen_sweep([2], [self.window.omega_bar_1 + 1.0], self.ctx)


class TestEigenfunctions(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.ctx = preset_context()
        cls.window = cls.ctx.window()

    def test_boundary_decay_for_eigenfunctions(self):
        for n in (2, 6):
            pair = eigenpair_at(n, self.window.midpoint, self.ctx)
            report = boundary_decay_check(pair, self.ctx.grid)
            self.assertTrue(report.envelope_ok, msg=f"n={n}")
            self.assertTrue(report.endpoints_ok, msg=f"n={n}")
            scale = max(np.max(np.abs(pair.h1)), np.max(np.abs(pair.h2)))
            self.assertLessEqual(max(abs(v) for v in report.endpoint_values), 1e-4 * scale)

    def test_constant_vector_fails(self):
        ones = np.ones(self.ctx.grid.size)
        pair = EigenPair(n=3, omega=self.window.midpoint, eigenvalue=1.0, h1=ones, h2=-ones,
                         second_eigenvalue=0.0)
        report = boundary_decay_check(pair, self.ctx.grid)
        self.assertFalse(report.passed)
        self.assertFalse(report.endpoints_ok)

    def test_requires_mode_two(self):
        pair = eigenpair_at(1, self.window.midpoint, self.ctx)
        with self.assertRaises(ValueError):
            boundary_decay_check(pair, self.ctx.grid)

    def test_interpolation_reproduces_nodes(self):
        pair = eigenpair_at(3, self.window.midpoint, self.ctx)
        nodes = self.ctx.grid.nodes[[0, 5, 31, 50]]
        h1, h2 = nystrom_interpolate(pair, self.ctx, nodes)
        scale = float(np.max(np.abs(pair.h1)))
        np.testing.assert_allclose(h1, pair.h1[[0, 5, 31, 50]], atol=1e-6 * scale)
        np.testing.assert_allclose(h2, pair.h2[[0, 5, 31, 50]], atol=1e-6 * scale)

    def test_interpolation_vanishes_at_poles(self):
        pair = eigenpair_at(2, self.window.midpoint, self.ctx)
        h1, h2 = nystrom_interpolate(pair, self.ctx, [0.0, math.pi])
        np.testing.assert_allclose(h1, 0.0, atol=1e-12)
        np.testing.assert_allclose(h2, 0.0, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
