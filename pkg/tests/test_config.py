import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

from qgpatch.config import THREADS_ENV, ConfigError, GeometryConfig, RunConfig, resolve_jobs
from qgpatch.profiles import HypothesisViolation

# Disable logging
import logging
logging.disable(logging.CRITICAL)


class TestRunConfig(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tempdir)

    def write(self, name, text):
        path = os.path.join(self.tempdir, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_defaults(self):
        config = RunConfig.from_dict({})
        self.assertEqual(config.geometry.preset, "ellipsoid-sphere")
        self.assertEqual((config.geometry.a, config.geometry.d1, config.geometry.d2), (1.5, 2.0, 1.0))
        self.assertEqual(config.numerics.N, 160)
        self.assertIsNone(config.numerics.N_theta)
        self.assertEqual(config.numerics.tol, 1e-10)
        self.assertEqual(config.command, {})

    def test_partial_blocks_keep_defaults(self):
        config = RunConfig.from_dict({"geometry": {"a": 1.8}, "numerics": {"N": 96},
                                      "command": {"m": 6, "s_values": [0.01]}})
        self.assertEqual(config.geometry.a, 1.8)
        self.assertEqual(config.geometry.d1, 2.0)
        self.assertEqual(config.numerics.N, 96)
        self.assertEqual(config.numerics.grading, 2.0)
        self.assertEqual(config.command["m"], 6)

    def test_unknown_keys_rejected(self):
        for data in ({"extra": 1}, {"geometry": {"b": 1.0}}, {"numerics": {"threads_max": 2}},
                     {"command": {"mode": 3}}):
            with self.assertRaises(ConfigError, msg=str(data)):
                RunConfig.from_dict(data)

    def test_type_and_range_errors(self):
        for data in ({"numerics": {"N": "many"}}, {"numerics": {"N": 8}}, {"geometry": {"d2": -1.0}},
                     {"geometry": {"preset": "torus"}}, {"command": {"modes": []}}):
            with self.assertRaises(ConfigError, msg=str(data)):
                RunConfig.from_dict(data)

    def test_round_trip_through_dict(self):
        config = RunConfig.from_dict({"numerics": {"N": 64}, "command": {"modes": [2, 3]}})
        self.assertEqual(RunConfig.from_dict(config.to_dict()), config)

    def test_from_file(self):
        path = self.write("run.json", json.dumps({"geometry": {"preset": "scaled-ellipsoid", "gamma": 0.25}}))
        config = RunConfig.from_file(path)
        self.assertEqual(config.geometry.preset, "scaled-ellipsoid")
        self.assertEqual(config.geometry.gamma, 0.25)

    def test_file_errors(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_file(self.write("broken.json", "{not json"))
        with self.assertRaises(ConfigError):
            RunConfig.from_file(os.path.join(self.tempdir, "missing.json"))

    def test_build_context(self):
        config = RunConfig.from_dict({"numerics": {"N": 64}})
        ctx = config.build_context()
        self.assertEqual(ctx.grid.size, 64)
        self.assertTrue(ctx.config.is_ellipsoid_sphere())
        self.assertTrue(ctx.config.validated.passed)

    def test_geometry_errors(self):
        with self.assertRaises(HypothesisViolation):
            GeometryConfig(a=0.8).build()
        with self.assertRaises(ConfigError):
            GeometryConfig(preset="tabulated").build()


class TestResolveJobs(unittest.TestCase):
    def test_explicit_value_wins(self):
        with mock.patch.dict(os.environ, {THREADS_ENV: "7"}):
            self.assertEqual(resolve_jobs(2), 2)

    def test_environment_and_default(self):
        with mock.patch.dict(os.environ, {THREADS_ENV: "3"}):
            self.assertEqual(resolve_jobs(), 3)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(resolve_jobs(), 4)
        with mock.patch.dict(os.environ, {THREADS_ENV: "lots"}):
            self.assertEqual(resolve_jobs(), 4)

    def test_capped_by_tasks_and_positive(self):
        self.assertEqual(resolve_jobs(8, tasks=3), 3)
        self.assertEqual(resolve_jobs(0), 1)


if __name__ == "__main__":
    unittest.main()
