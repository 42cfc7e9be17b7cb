"""Experiment configuration: YAML files, validation and grid payloads."""

from __future__ import annotations

import copy
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import yaml

from .base_dynamics import ToralAutomorphism
from .cocycles import GridCocycle, cocycle_from_dict
from .errors import ConfigError, HyperbolicityError
from .fields import GridField

EXPERIMENTS = (
    "periodic-scan",
    "exponents",
    "distortion-growth",
    "recover",
    "renormalize",
    "counterexample",
    "livsic",
    "holonomy",
)

# name -> (default, type, lower, upper); None bounds are open
PARAMS = {
    "max_period": (8, int, 1, 20),
    "T": (100_000, int, 100, 100_000_000),
    "stride": (10, int, 1, 1000),
    "n_max": (50, int, 1, 100_000),
    "samples": (64, int, 1, 1_000_000),
    "resolution": (64, int, 2, 1024),
    "depth": (30, int, 1, 10_000),
    "tol": (1e-8, float, 0.0, None),
    "K_bound": (50.0, float, 1.0, None),
    "probe_horizon": (200, int, 1, 100_000),
    "residual_samples": (256, int, 1, 1_000_000),
    "residual_tol": (1e-4, float, 0.0, None),
    "distance_tol": (1e-3, float, 0.0, None),
    "isometry_tol": (1e-3, float, 0.0, None),
    "livsic_T": (1_000_000, int, 100, 100_000_000),
    "obstruction_tol": (1e-9, float, 0.0, None),
    "point": (None, list, None, None),
    "deltas": ([1e-2, 1e-3, 1e-4, 1e-5], list, None, None),
    "side": ("stable", str, None, None),
    "a": (None, object, None, None),
    "extension": ("local_linear", str, None, None),
    "growth_tol": (1e-6, float, 0.0, None),
    "growth_threshold": (100.0, float, 1.0, None),
    "cap": (2_000_000, int, 1, None),
}


@dataclass
class ExperimentConfig:
    base: list
    cocycle: dict
    experiment: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    source_dir: str = "."

    def param(self, name):
        if name in self.params:
            return self.params[name]
        return PARAMS[name][0]

    def to_dict(self):
        return {
            "base": {"matrix": [list(r) for r in self.base]},
            "cocycle": copy.deepcopy(self.cocycle),
            "experiment": self.experiment,
            "params": copy.deepcopy(self.params),
            "seed": self.seed,
        }

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()


def _check_param(name, value):
    if name not in PARAMS:
        raise ConfigError(f"params.{name}", "unknown parameter")
    _, kind, lo, hi = PARAMS[name]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"params.{name}", f"expected an integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"params.{name}", f"expected a number, got {value!r}")
    elif kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"params.{name}", f"expected a list, got {value!r}")
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"params.{name}", f"expected a string, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"params.{name}", f"{value!r} is below the minimum {lo}")
    if hi is not None and value > hi:
        raise ConfigError(f"params.{name}", f"{value!r} is above the maximum {hi}")
    if name == "tol" and value <= 0:
        raise ConfigError("params.tol", "must be positive")
    if name == "side" and value not in ("stable", "unstable"):
        raise ConfigError("params.side", "must be 'stable' or 'unstable'")
    if name == "extension" and value not in ("local_linear", "nearest"):
        raise ConfigError("params.extension", "must be 'local_linear' or 'nearest'")


def config_from_dict(data, source_dir="."):
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    unknown = set(data) - {"base", "cocycle", "experiment", "params", "seed"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level key")
    base = data.get("base")
    if not isinstance(base, dict) or "matrix" not in base:
        raise ConfigError("base.matrix", "missing")
    matrix = base["matrix"]
    if (not isinstance(matrix, list) or not matrix
            or not all(isinstance(r, list) and len(r) == len(matrix) for r in matrix)):
        raise ConfigError("base.matrix", "expected a square list of integer rows")
    if not all(isinstance(v, int) and not isinstance(v, bool) for r in matrix for v in r):
        raise ConfigError("base.matrix", "entries must be integers")
    cocycle = data.get("cocycle")
    if not isinstance(cocycle, dict) or "kind" not in cocycle:
        raise ConfigError("cocycle.kind", "missing")
    experiment = data.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}; got {experiment!r}")
    params = data.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params", "expected a mapping")
    for name, value in params.items():
        _check_param(name, value)
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "expected a non-negative integer")
    return ExperimentConfig([list(r) for r in matrix], cocycle, experiment, dict(params), seed,
                            source_dir)


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(data, os.path.dirname(os.path.abspath(path)))


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def build_base(cfg):
    try:
        return ToralAutomorphism(cfg.base)
    except HyperbolicityError as exc:
        raise ConfigError("base.matrix", str(exc)) from None


def build_cocycle(cfg, f):
    spec = dict(cfg.cocycle)
    try:
        if spec.get("kind") == "grid" and "payload" in spec:
            path = spec["payload"]
            if not os.path.isabs(path):
                path = os.path.join(cfg.source_dir, path)
            values, k = read_grid_payload(path)
            if k != f.k:
                raise ConfigError("cocycle.payload", f"grid is for a {k}-torus, base is a {f.k}-torus")
            return GridCocycle(GridField(values, k))
        return cocycle_from_dict(spec, f)
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"cocycle.{exc.args[0]}", "missing") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError("cocycle", str(exc)) from None


# ---------------------------------------------------------------------------
# binary grid payloads: b"CGRD", uint32 version, k, d, n, then float64 values
# in row-major order with shape (n,)*k + (d, d)

_MAGIC = b"CGRD"
_VERSION = 1


def write_grid_payload(path, values, k=2):
    values = np.ascontiguousarray(values, dtype="<f8")
    n = values.shape[0]
    d = values.shape[-1]
    if values.shape != (n,) * k + (d, d):
        raise ValueError(f"expected shape {(n,) * k + (d, d)}, got {values.shape}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4I", _VERSION, k, d, n))
        fh.write(values.tobytes())


def read_grid_payload(path):
    with open(path, "rb") as fh:
        head = fh.read(20)
        if len(head) != 20 or head[:4] != _MAGIC:
            raise ConfigError("cocycle.payload", f"{path} is not a grid payload")
        version, k, d, n = struct.unpack("<4I", head[4:])
        if version != _VERSION:
            raise ConfigError("cocycle.payload", f"unsupported payload version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    shape = (n,) * k + (d, d)
    if data.size != int(np.prod(shape)):
        raise ConfigError("cocycle.payload", f"expected {int(np.prod(shape))} values, found {data.size}")
    return data.reshape(shape).copy(), k
