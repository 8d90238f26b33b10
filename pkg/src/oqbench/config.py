"""Experiment configuration: a versioned JSON schema for runs and sweeps.

A configuration describes one system, a bath (possibly swept over a grid of
couplings/temperatures), the solvers to benchmark, the evaluation window,
and stochastic-reference settings.  See README for the documented schema.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bath import BathSpec
from .operators import SingleQubit, SystemSpec, TwoQubit
from .weak_coupling import KINDS

CONFIG_VERSION = 1
SWEEP_AXES = ("kappa", "beta", "g")


class ConfigError(ValueError):
    """Configuration validation failure, annotated with the field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(mapping, key, path, types, default=None, optional=False):
    if key not in mapping:
        if optional:
            return default
        raise ConfigError(f"{path}.{key}", "missing required field")
    value = mapping[key]
    if not isinstance(value, types):
        raise ConfigError(f"{path}.{key}",
                          f"expected {types}, got {type(value).__name__}")
    return value


def _axis_values(node, path) -> list[float]:
    if isinstance(node, list):
        values = node
    elif isinstance(node, dict) and "log_range" in node:
        lo, hi, n = node["log_range"]
        if not (lo > 0 and hi > lo and int(n) >= 1):
            raise ConfigError(path, f"bad log_range {node['log_range']}")
        values = np.geomspace(lo, hi, int(n)).tolist()
    elif isinstance(node, dict) and "values" in node:
        values = node["values"]
    else:
        raise ConfigError(path, "expected a list, {'values': [...]} or "
                                "{'log_range': [lo, hi, n]}")
    if not values:
        raise ConfigError(path, "sweep axis is empty")
    return [float(v) for v in values]


@dataclass(frozen=True)
class WindowConfig:
    """Evaluation window: fixed length or a multiple of 1/kappa_T."""

    t_max: float | None
    kappa_t_multiples: float | None
    n_steps: int | None
    distance_points: int = 400

    def resolve_t_max(self, kappa: float, beta: float, omega_ref: float) -> float:
        if self.t_max is not None:
            return self.t_max
        kappa_t = kappa / np.tanh(0.5 * beta * omega_ref)
        return self.kappa_t_multiples / kappa_t


@dataclass(frozen=True)
class SledConfig:
    n_traj: int
    master_seed: int
    chunk_size: int | None = None


@dataclass(frozen=True)
class OptimizeConfig:
    enabled: bool = False
    n_starts: int = 9
    xtol: float = 1e-6
    ftol: float = 1e-6
    max_iter: int = 200
    shift_rates: bool = True


@dataclass(frozen=True)
class Cell:
    """One sweep point: concrete system + bath + indices into the grid."""

    indices: tuple[int, ...]
    values: dict
    spec: SystemSpec
    bath: BathSpec

    @property
    def name(self) -> str:
        return "cell_" + "_".join(str(i) for i in self.indices)


@dataclass
class ExperimentConfig:
    system: dict
    bath: dict
    solvers: list[str]
    window: WindowConfig
    sled: SledConfig
    optimize: OptimizeConfig
    sweep: dict = field(default_factory=dict)
    output_dir: str = "oqbench_out"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(str(path), f"not valid JSON ({err})") from err
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        version = _require(raw, "config_version", "$", int)
        if version != CONFIG_VERSION:
            raise ConfigError("$.config_version",
                              f"expected {CONFIG_VERSION}, got {version}")
        system = _require(raw, "system", "$", dict)
        sys_type = _require(system, "type", "$.system", str)
        if sys_type == "single_qubit":
            _require(system, "omega_q", "$.system", (int, float))
        elif sys_type == "two_qubit":
            for key in ("omega_1", "omega_2", "g"):
                _require(system, key, "$.system", (int, float))
        else:
            raise ConfigError("$.system.type",
                              f"unknown system type {sys_type!r}")
        bath = _require(raw, "bath", "$", dict)
        for key in ("beta", "kappa", "omega_c"):
            _require(bath, key, "$.bath", (int, float))

        solvers = _require(raw, "solvers", "$", list)
        for s in solvers:
            if s not in KINDS and s != "sled":
                raise ConfigError("$.solvers", f"unknown solver {s!r}")
        solvers = [s for s in solvers if s != "sled"]  # sled is the reference
        if not solvers:
            raise ConfigError("$.solvers", "need at least one weak-coupling solver")

        window_raw = _require(raw, "window", "$", dict)
        t_max = _require(window_raw, "t_max", "$.window", (int, float),
                         optional=True)
        multiples = _require(window_raw, "kappa_t_multiples", "$.window",
                             (int, float), optional=True)
        if (t_max is None) == (multiples is None):
            raise ConfigError("$.window",
                              "set exactly one of t_max / kappa_t_multiples")
        window = WindowConfig(
            t_max=None if t_max is None else float(t_max),
            kappa_t_multiples=None if multiples is None else float(multiples),
            n_steps=_require(window_raw, "n_steps", "$.window", int,
                             optional=True),
            distance_points=_require(window_raw, "distance_points", "$.window",
                                     int, default=400, optional=True))

        sled_raw = _require(raw, "sled", "$", dict)
        sled = SledConfig(
            n_traj=_require(sled_raw, "n_traj", "$.sled", int),
            master_seed=_require(sled_raw, "master_seed", "$.sled", int),
            chunk_size=_require(sled_raw, "chunk_size", "$.sled", int,
                                optional=True))
        if sled.n_traj < 1:
            raise ConfigError("$.sled.n_traj", "must be >= 1")

        opt_raw = _require(raw, "optimize", "$", dict, default={}, optional=True)
        optimize = OptimizeConfig(
            enabled=_require(opt_raw, "enabled", "$.optimize", bool,
                             default=False, optional=True),
            n_starts=_require(opt_raw, "n_starts", "$.optimize", int,
                              default=9, optional=True),
            xtol=_require(opt_raw, "xtol", "$.optimize", (int, float),
                          default=1e-6, optional=True),
            ftol=_require(opt_raw, "ftol", "$.optimize", (int, float),
                          default=1e-6, optional=True),
            max_iter=_require(opt_raw, "max_iter", "$.optimize", int,
                              default=200, optional=True),
            shift_rates=_require(opt_raw, "shift_rates", "$.optimize", bool,
                                 default=True, optional=True))

        sweep_raw = _require(raw, "sweep", "$", dict, default={}, optional=True)
        sweep = {}
        for axis, node in sweep_raw.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"$.sweep.{axis}",
                                  f"unknown axis; supported: {SWEEP_AXES}")
            if axis == "g" and sys_type != "two_qubit":
                raise ConfigError("$.sweep.g", "g sweep needs a two-qubit system")
            sweep[axis] = _axis_values(node, f"$.sweep.{axis}")

        output = _require(raw, "output", "$", dict, default={}, optional=True)
        out_dir = _require(output, "directory", "$.output", str,
                           default="oqbench_out", optional=True)
        return cls(system=system, bath=bath, solvers=list(solvers),
                   window=window, sled=sled, optimize=optimize, sweep=sweep,
                   output_dir=out_dir, raw=raw)

    @property
    def omega_ref(self) -> float:
        if self.system["type"] == "single_qubit":
            return float(self.system["omega_q"])
        return float(self.system["omega_1"])

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]

    def _make_spec(self, g: float | None = None) -> SystemSpec:
        if self.system["type"] == "single_qubit":
            return SingleQubit(omega_q=float(self.system["omega_q"]))
        return TwoQubit(omega_1=float(self.system["omega_1"]),
                        omega_2=float(self.system["omega_2"]),
                        g=float(self.system["g"] if g is None else g))

    def cells(self) -> list[Cell]:
        """Cartesian sweep grid in fixed axis order (kappa, beta, g)."""
        axes = [(axis, self.sweep[axis]) for axis in SWEEP_AXES
                if axis in self.sweep]
        base = {"kappa": float(self.bath["kappa"]),
                "beta": float(self.bath["beta"])}
        if self.system["type"] == "two_qubit":
            base["g"] = float(self.system["g"])
        out = []

        def emit(indices, values):
            bath = BathSpec.from_kappa(beta=values["beta"],
                                       kappa=values["kappa"],
                                       omega_c=float(self.bath["omega_c"]),
                                       omega_ref=self.omega_ref)
            spec = self._make_spec(values.get("g"))
            out.append(Cell(indices=tuple(indices), values=dict(values),
                            spec=spec, bath=bath))

        def recurse(k, indices, values):
            if k == len(axes):
                emit(indices or (0,), values)
                return
            axis, vals = axes[k]
            for i, v in enumerate(vals):
                values[axis] = v
                recurse(k + 1, list(indices) + [i], values)
                values.pop(axis, None)

        recurse(0, [], dict(base))
        return out
