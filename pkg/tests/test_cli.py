import contextlib
import csv
import io
import json
import math
import os
import shutil
import tempfile
import unittest

from qgpatch import cli
from qgpatch.bifurcation import SEQUENCE_HEADER
from qgpatch.nonlinear import LINEARIZATION_HEADER
from qgpatch.spectral import SWEEP_HEADER

# Disable logging
import logging
logging.disable(logging.CRITICAL)


def run_cli(argv):
    """Runs the CLI and returns (exit status, parsed JSON summary)."""
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        status = cli.main(argv)
    return status, json.loads(out.getvalue())


def write_profile(path, scale):
    with open(path, "w", encoding="utf-8") as f:
        f.write("phi,r\n")
        for k in range(65):
            phi = k * math.pi / 64
            f.write(f"{phi!r},{scale * math.sin(phi)!r}\n")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


class TestCLI(unittest.TestCase):
    """
    Runs qgpatch commands end to end on the ellipsoid/sphere preset (a=1.5, d1=2, d2=1)
    with small grids and checks exit codes, JSON summaries and CSV artifacts.
    """

    def setUp(self):
        # Create a temporary directory for configuration and output files
        self.tempdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tempdir)

    def small(self, command, *extra):
        return [command, "--N", "64", "--window-samples", "512", "-o", self.tempdir, *extra]

    def test_check_hypotheses(self):
        status, summary = run_cli(["check-hypotheses", "-o", self.tempdir])
        self.assertEqual(status, 0)
        self.assertTrue(summary["passed"])
        self.assertAlmostEqual(summary["separation_delta"], 0.25, delta=1e-6)

    def test_omega_window_rejects_violated_hypothesis(self):
        status, summary = run_cli(self.small("omega-window", "--a", "0.8"))
        self.assertEqual(status, 2)
        self.assertFalse(summary["passed"])
        self.assertIn("a > d2", summary["error"])

    def test_omega_window(self):
        status, summary = run_cli(self.small("omega-window"))
        self.assertEqual(status, 0)
        self.assertTrue(summary["spectral_condition"])
        self.assertAlmostEqual(summary["omega_bar_1"], summary["closed_form"]["omega_bar_1"], delta=1e-5)
        rows = read_csv(os.path.join(self.tempdir, "nu_sources.csv"))
        self.assertEqual(rows[0], list(cli.NU_SOURCES_HEADER))
        self.assertEqual(rows[0][0], "phi[rad]")
        self.assertEqual(len(rows), 65)

    def test_validate_closed_form(self):
        status, summary = run_cli(["validate-closed-form", "--N", "128", "-o", self.tempdir])
        self.assertEqual(status, 0, msg=json.dumps(summary))
        rows = read_csv(os.path.join(self.tempdir, "closed_form.csv"))
        self.assertEqual(rows[0], list(cli.CLOSED_FORM_HEADER))
        self.assertTrue(all(row[5] == "true" for row in rows[1:]))
        self.assertIn("4*alpha1+2*alpha2", summary["checks"])

    def test_validate_closed_form_needs_ellipsoid(self):
        outer = os.path.join(self.tempdir, "outer.csv")
        inner = os.path.join(self.tempdir, "inner.csv")
        write_profile(outer, 1.5)
        write_profile(inner, 1.0)
        status, _ = run_cli(["validate-closed-form", "--preset", "tabulated", "--outer-csv", outer,
                             "--inner-csv", inner, "--N", "64", "-o", self.tempdir])
        self.assertEqual(status, 2)

    def test_eigen_sweep(self):
        status, summary = run_cli(self.small("eigen-sweep", "--modes", "2:4", "--omega-points", "3"))
        self.assertEqual(status, 0, msg=json.dumps(summary))
        path = os.path.join(self.tempdir, "eigen_sweep.csv")
        rows = read_csv(path)
        self.assertEqual(rows[0], list(SWEEP_HEADER))
        self.assertEqual([cell.split("[")[0] for cell in rows[0]],
                         ["n", "Omega", "lambda", "gap_to_second", "sign_ok"])
        self.assertNotIn(b"\r", read_bytes(path))
        self.assertEqual(sorted({int(row[0]) for row in rows[1:]}), [2, 3, 4])
        self.assertEqual(len(rows), 1 + 3 * 3)
        for omega in {row[1] for row in rows[1:]}:
            column = [float(row[2]) for row in rows[1:] if row[1] == omega]
            self.assertTrue(all(a > b for a, b in zip(column, column[1:])))

    def test_eigen_sweep_mixes_modes_and_ranges(self):
        status, summary = run_cli(self.small("eigen-sweep", "--modes", "2", "4:5", "--omega-points", "2"))
        self.assertEqual(status, 0, msg=json.dumps(summary))
        rows = read_csv(os.path.join(self.tempdir, "eigen_sweep.csv"))
        self.assertEqual(sorted({int(row[0]) for row in rows[1:]}), [2, 4, 5])
        self.assertEqual(summary["rows"], 3 * 2)
        omegas = sorted({float(row[1]) for row in rows[1:]})
        self.assertEqual(len(omegas), 2)
        self.assertLess(omegas[0], omegas[1])

    def test_eigen_sweep_rejects_bad_ranges(self):
        status, _ = run_cli(self.small("eigen-sweep", "--modes", "5:2"))
        self.assertEqual(status, 2)
        status, _ = run_cli(self.small("eigen-sweep", "--modes", "2:4", "--omega-points", "1"))
        self.assertEqual(status, 2)

    def test_eigen_sweep_is_deterministic(self):
        first = os.path.join(self.tempdir, "first")
        second = os.path.join(self.tempdir, "second")
        for target in (first, second):
            status, _ = run_cli(["eigen-sweep", "--N", "64", "--window-samples", "512", "--modes", "2", "5",
                                 "--omega-points", "3", "-j", "2", "-o", target])
            self.assertEqual(status, 0)
        with open(os.path.join(first, "eigen_sweep.csv"), "rb") as a, \
                open(os.path.join(second, "eigen_sweep.csv"), "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_find_bifurcation(self):
        status, summary = run_cli(self.small("find-bifurcation", "--m", "8"))
        self.assertEqual(status, 0, msg=json.dumps(summary))
        self.assertLessEqual(summary["residual"], 1e-10)
        self.assertGreater(summary["kernel_margin"], 0.0)
        rows = read_csv(os.path.join(self.tempdir, "eigenfunction_m8.csv"))
        self.assertEqual(rows[0], list(cli.EIGENFUNCTION_HEADER))
        self.assertEqual(len(rows), 65)

    def test_find_bifurcation_below_threshold(self):
        status, summary = run_cli(self.small("find-bifurcation", "--m", "1"))
        self.assertEqual(status, 1)
        self.assertTrue(summary["below_threshold"])

    def test_omega_sequence(self):
        status, summary = run_cli(self.small("omega-sequence", "--m", "5:9", "-j", "2"))
        self.assertEqual(status, 0, msg=json.dumps(summary))
        self.assertEqual(summary["operational_m0"], summary["points"][0]["m"])
        path = os.path.join(self.tempdir, "omega_sequence.csv")
        rows = read_csv(path)
        self.assertEqual(rows[0], list(SEQUENCE_HEADER))
        self.assertNotIn(b"\r", read_bytes(path))
        self.assertTrue(all(5 <= int(row[0]) <= 9 for row in rows[1:]))
        self.assertEqual(len(rows), 1 + len(summary["points"]))
        omegas = [float(row[1]) for row in rows[1:]]
        self.assertTrue(all(a < b for a, b in zip(omegas, omegas[1:])))

    def test_omega_sequence_rejects_inverted_range(self):
        status, _ = run_cli(self.small("omega-sequence", "--m", "9:5"))
        self.assertEqual(status, 2)

    def test_residual_check_rejects_large_amplitude(self):
        status, summary = run_cli(self.small("residual-check", "--m", "5", "--s", "0.5"))
        self.assertEqual(status, 1)
        self.assertFalse(summary["passed"])
        self.assertIn("reason", summary)

    def test_linearization_check(self):
        status, summary = run_cli(self.small("linearization-check", "--m", "5", "--modes", "5",
                                             "--directions", "1", "--seed", "11"))
        self.assertEqual(status, 0, msg=json.dumps(summary))
        self.assertEqual(summary["modes"], [5])
        path = os.path.join(self.tempdir, "linearization_check.csv")
        rows = read_csv(path)
        self.assertEqual(rows[0], list(LINEARIZATION_HEADER))
        self.assertNotIn(b"\r", read_bytes(path))
        self.assertEqual(len(rows), 2)

    def test_config_file_and_overrides(self):
        path = os.path.join(self.tempdir, "run.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"numerics": {"N": 64, "window_samples": 512}, "command": {"modes": [2, 3]}}, f)
        status, summary = run_cli(["eigen-sweep", "--config", path, "-o", self.tempdir])
        self.assertEqual(status, 0, msg=json.dumps(summary))
        self.assertEqual(summary["rows"], 2 * cli.DEFAULT_OMEGA_POINTS)
        status, summary = run_cli(["eigen-sweep", "--config", path, "--modes", "2", "3", "4", "-o", self.tempdir])
        self.assertEqual(status, 0, msg=json.dumps(summary))
        self.assertEqual(summary["rows"], 3 * cli.DEFAULT_OMEGA_POINTS)

    def test_unknown_config_key(self):
        path = os.path.join(self.tempdir, "bad.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"numerics": {"N": 64, "colour": "blue"}}, f)
        status, summary = run_cli(["omega-window", "--config", path, "-o", self.tempdir])
        self.assertEqual(status, 2)
        self.assertIn("colour", summary["error"])

    def test_invalid_override(self):
        status, _ = run_cli(["omega-window", "--N", "4", "-o", self.tempdir])
        self.assertEqual(status, 2)


if __name__ == "__main__":
    unittest.main()
