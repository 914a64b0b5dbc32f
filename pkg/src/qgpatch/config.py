"""
Run configuration for qgpatch commands.

A JSON file with the blocks ``geometry``, ``numerics`` and ``command`` is validated against
a Draft-7 schema and turned into a RunConfig. Command-line flags override file values.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import jsonschema

from qgpatch.kernels import KernelContext
from qgpatch.profiles import (
    DEFAULT_GRID_SIZE, PatchPairConfig, load_profile_csv, make_ellipsoid_sphere_config,
    make_scaled_ellipsoid_config, make_tabulated_config,
)
from qgpatch.quadrature import build_grid

logger = logging.getLogger(__name__)

THREADS_ENV = "QGPATCH_THREADS"
DEFAULT_JOBS = 4
PRESETS = ("ellipsoid-sphere", "scaled-ellipsoid", "tabulated")

_NUMBER = {"type": "number"}
CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(PRESETS)},
                "a": {"type": "number", "exclusiveMinimum": 0},
                "d1": {"type": "number", "exclusiveMinimum": 0},
                "d2": {"type": "number", "exclusiveMinimum": 0},
                "gamma": _NUMBER,
                "outer_csv": {"type": ["string", "null"]},
                "inner_csv": {"type": ["string", "null"]},
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 16},
                "grading": {"type": "number", "minimum": 1},
                "N_theta": {"type": ["integer", "null"], "minimum": 8},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "hypothesis_grid": {"type": "integer", "minimum": 64},
                "window_samples": {"type": "integer", "minimum": 16},
                "threads": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "command": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "modes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "omegas": {"type": "array", "items": _NUMBER, "minItems": 1},
                "omega_points": {"type": "integer", "minimum": 2},
                "omega": _NUMBER,
                "m": {"type": "integer", "minimum": 1},
                "m_min": {"type": "integer", "minimum": 1},
                "m_max": {"type": "integer", "minimum": 1},
                "s_values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "directions": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration file or values."""


@dataclass
class GeometryConfig:
    preset: str = "ellipsoid-sphere"
    a: float = 1.5
    d1: float = 2.0
    d2: float = 1.0
    gamma: float = 0.5
    outer_csv: Optional[str] = None
    inner_csv: Optional[str] = None

    def build(self, hypothesis_grid: int = DEFAULT_GRID_SIZE) -> PatchPairConfig:
        """Builds and validates the surface pair. Raises HypothesisViolation on failure."""
        if self.preset == "ellipsoid-sphere":
            return make_ellipsoid_sphere_config(self.a, self.d1, self.d2, grid_size=hypothesis_grid)
        if self.preset == "scaled-ellipsoid":
            return make_scaled_ellipsoid_config(self.d1, self.gamma, self.d2, grid_size=hypothesis_grid)
        if not self.outer_csv or not self.inner_csv:
            raise ConfigError("preset 'tabulated' needs outer_csv and inner_csv")
        return make_tabulated_config(load_profile_csv(self.outer_csv), load_profile_csv(self.inner_csv),
                                     self.d1, self.d2, grid_size=hypothesis_grid)


@dataclass
class NumericsConfig:
    N: int = 160  # pylint: disable=invalid-name
    grading: float = 2.0
    N_theta: Optional[int] = None  # pylint: disable=invalid-name
    tol: float = 1e-10
    hypothesis_grid: int = DEFAULT_GRID_SIZE
    window_samples: int = 1024
    threads: Optional[int] = None


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    command: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Validates a configuration mapping against CONFIG_SCHEMA.

        :param data: Parsed JSON object.
        :return: RunConfig with defaults for missing keys.
        :raises ConfigError: on schema violations or unknown keys.
        """
        try:
            jsonschema.validate(data, CONFIG_SCHEMA, cls=jsonschema.Draft7Validator)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"Invalid configuration at {where}: {exc.message}") from exc
        return cls(geometry=GeometryConfig(**data.get("geometry", {})),
                   numerics=NumericsConfig(**data.get("numerics", {})),
                   command=dict(data.get("command", {})))

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        """Loads a JSON configuration file."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Configuration file {path} is not valid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"Cannot read configuration file {path}: {exc}") from exc
        logger.debug("Loaded configuration from %s", path)
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def build_context(self) -> KernelContext:
        """Surface pair plus quadrature grid for this run."""
        config = self.geometry.build(self.numerics.hypothesis_grid)
        grid = build_grid(self.numerics.N, grading=self.numerics.grading)
        return KernelContext(config, grid)


def resolve_jobs(jobs: Optional[int] = None, tasks: Optional[int] = None) -> int:
    """
    Worker count for thread pools: explicit value, else QGPATCH_THREADS, else DEFAULT_JOBS.

    :param jobs: Value from the command line or the config file.
    :param tasks: Number of independent tasks; the result never exceeds it.
    :return: Worker count, at least 1.
    """
    if jobs is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                jobs = int(env)
            except ValueError:
                logger.warning("Ignoring non-integer %s=%r", THREADS_ENV, env)
    jobs = DEFAULT_JOBS if jobs is None else jobs
    if tasks is not None:
        jobs = min(jobs, tasks)
    return max(1, jobs)
