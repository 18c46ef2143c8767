"""Experiment configuration files.

A config is a TOML document of top-level keys (see README.md for the grammar); a suite manifest holds an
``[[experiment]]`` array of such tables. Unknown keys, wrong types and violated feature gates are reported
together in one ConfigError.
"""
from __future__ import annotations

import tomllib
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from fbmlab.errors import ConfigError
from fbmlab.fbm import SamplingMethod
from fbmlab.holder import WindowStatistic
from fbmlab.sde import Scheme
from fbmlab.storable import Storable, plain
from fbmlab.vector_fields import VECTOR_FIELD_BUILDERS


class ExperimentKind(Enum):
    FBM_VALIDATE = "fbm_validate"
    SDE_CONVERGE = "sde_converge"
    LOCALTIME_IDENTITY = "localtime_identity"
    HOLDER_TIME = "holder_time"
    HOLDER_SPACE = "holder_space"
    DENSITY_SCALING = "density_scaling"
    TAIL_CHECK = "tail_check"
    EXISTENCE = "existence"
    HOLDER_CALIBRATION = "holder_calibration"
    PATH_HOLDER = "path_holder"


class Driver(Enum):
    FBM = "fbm"
    # B_t = t in every component
    LINEAR = "linear"


HOLDER_KINDS = (ExperimentKind.HOLDER_TIME, ExperimentKind.HOLDER_SPACE)
LOCAL_TIME_KINDS = (ExperimentKind.LOCALTIME_IDENTITY, ExperimentKind.EXISTENCE)
SCALAR_KINDS = (
    ExperimentKind.SDE_CONVERGE,
    ExperimentKind.LOCALTIME_IDENTITY,
    ExperimentKind.HOLDER_TIME,
    ExperimentKind.HOLDER_SPACE,
    ExperimentKind.DENSITY_SCALING,
    ExperimentKind.TAIL_CHECK,
)


@dataclass
class ExperimentConfig(Storable):
    kind: ExperimentKind
    name: str = ""
    h: float = 0.3
    d: int = 1
    field_id: str = "const_sigma"
    field_params: Dict[str, float] = field(default_factory=dict)
    driver: Driver = Driver.FBM
    x0: List[float] = field(default_factory=lambda: [0.0])
    t_end: float = 1.0
    a: Optional[float] = None
    n_steps: int = 1024
    method: SamplingMethod = SamplingMethod.DAVIES_HARTE
    scheme: Scheme = Scheme.WONG_ZAKAI
    substeps: Optional[int] = None
    epsilon: Optional[float] = None
    epsilon_factor: float = 0.5
    delta_ladder: Optional[List[float]] = None
    step_ladder: Optional[List[int]] = None
    gap_ladder: Optional[List[float]] = None
    eps_ladder: Optional[List[float]] = None
    statistic: WindowStatistic = WindowStatistic.MEAN
    two_sided: bool = False
    gamma: Optional[float] = None
    gap: float = 0.5
    thresholds: Optional[List[float]] = None
    u: Optional[float] = None
    interval: Optional[List[float]] = None
    betas: List[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])
    n_paths: int = 20
    master_seed: int = 0
    output_dir: str = "out"
    expected: Optional[float] = None
    tolerance: Optional[float] = None
    divergence_diagnostic: bool = False

    @property
    def label(self) -> str:
        return self.name or self.kind.value

    @property
    def cutoff(self) -> float:
        return 0.1 * self.t_end if self.a is None else self.a

    @property
    def sampling_method(self) -> SamplingMethod:
        return SamplingMethod.LINEAR if self.driver is Driver.LINEAR else self.method

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> ExperimentConfig:
        return parse_config(record)


_ENUMS = {
    "kind": ExperimentKind,
    "driver": Driver,
    "method": SamplingMethod,
    "scheme": Scheme,
    "statistic": WindowStatistic,
}
_FLOATS = {"h", "t_end", "a", "epsilon", "epsilon_factor", "gamma", "gap", "u", "expected", "tolerance"}
_INTS = {"d", "n_steps", "substeps", "n_paths", "master_seed"}
_FLOAT_LISTS = {"x0", "delta_ladder", "gap_ladder", "eps_ladder", "thresholds", "interval", "betas"}
_STRINGS = {"name", "field_id", "output_dir"}
_BOOLS = {"two_sided", "divergence_diagnostic"}


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _convert(key: str, value: Any, errors: List[str]) -> Any:
    if value is None:
        return None
    if key in _ENUMS:
        try:
            return _ENUMS[key](value)
        except ValueError:
            errors.append(f"{key}: {value!r} is not one of {[m.value for m in _ENUMS[key]]}")
    elif key in _FLOATS:
        if _is_number(value):
            return float(value)
        errors.append(f"{key}: expected a number, got {value!r}")
    elif key in _INTS:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        errors.append(f"{key}: expected an integer, got {value!r}")
    elif key in _FLOAT_LISTS:
        if key == "x0" and _is_number(value):
            return [float(value)]
        if isinstance(value, list) and all(_is_number(v) for v in value):
            return [float(v) for v in value]
        errors.append(f"{key}: expected a list of numbers, got {value!r}")
    elif key == "step_ladder":
        if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            return list(value)
        errors.append(f"{key}: expected a list of integers, got {value!r}")
    elif key == "field_params":
        if isinstance(value, dict) and all(_is_number(v) for v in value.values()):
            return {str(k): float(v) for k, v in value.items()}
        errors.append(f"{key}: expected a table of numbers, got {value!r}")
    elif key in _STRINGS:
        if isinstance(value, str):
            return value
        errors.append(f"{key}: expected a string, got {value!r}")
    elif key in _BOOLS:
        if isinstance(value, bool):
            return value
        errors.append(f"{key}: expected true or false, got {value!r}")
    return None


def _gate_errors(config: ExperimentConfig) -> List[str]:
    errors = []
    kind, h, d = config.kind, config.h, config.d
    if not 0 < h < 1:
        errors.append(f"h: must lie in (0, 1), got {h}")
    if d < 1:
        errors.append(f"d: must be >= 1, got {d}")
    if config.n_steps < 1:
        errors.append(f"n_steps: must be >= 1, got {config.n_steps}")
    if not config.t_end > 0:
        errors.append(f"t_end: must be positive, got {config.t_end}")
    elif not 0 <= config.cutoff < config.t_end:
        errors.append(f"a: must lie in [0, t_end), got {config.cutoff}")
    if config.n_paths < 1:
        errors.append(f"n_paths: must be >= 1, got {config.n_paths}")
    if not 0 <= config.master_seed < 1 << 64:
        errors.append(f"master_seed: must be a 64-bit unsigned integer, got {config.master_seed}")
    if config.field_id not in VECTOR_FIELD_BUILDERS:
        errors.append(f"field_id: unknown id {config.field_id!r}, expected one of {sorted(VECTOR_FIELD_BUILDERS)}")
    if len(config.x0) not in (1, d):
        errors.append(f"x0: expected 1 or {d} coordinates, got {len(config.x0)}")
    if config.epsilon is not None and not config.epsilon > 0:
        errors.append(f"epsilon: must be positive, got {config.epsilon}")
    if config.substeps is not None and config.substeps < 1:
        errors.append(f"substeps: must be >= 1, got {config.substeps}")
    if config.scheme is Scheme.MILSTEIN_1D and d != 1:
        errors.append("scheme: milstein_1d requires d = 1")
    if config.interval is not None and len(config.interval) != 2:
        errors.append(f"interval: expected [start, end], got {config.interval}")

    if kind in HOLDER_KINDS and not (d == 1 and 0.25 < h < 0.5):
        errors.append(f"kind: {kind.value} requires d = 1 and 1/4 < h < 1/2, got d = {d}, h = {h}")
    if kind in LOCAL_TIME_KINDS and not d * h < 1 and not config.divergence_diagnostic:
        errors.append(f"kind: {kind.value} requires d*h < 1 (got {d * h:g}) unless divergence_diagnostic = true")
    if kind in SCALAR_KINDS and d != 1:
        errors.append(f"d: {kind.value} is one-dimensional, got d = {d}")
    if kind is ExperimentKind.FBM_VALIDATE:
        if config.driver is Driver.LINEAR:
            errors.append("driver: fbm_validate needs the fbm driver")
        if config.n_paths < 100:
            errors.append(f"n_paths: fbm_validate needs at least 100 paths, got {config.n_paths}")
    if kind is ExperimentKind.TAIL_CHECK and config.gamma is not None and not 0 < config.gamma < h:
        errors.append(f"gamma: must lie in (0, h), got {config.gamma}")
    if kind is ExperimentKind.HOLDER_CALIBRATION and not all(0 < b < 1 for b in config.betas):
        errors.append(f"betas: every planted exponent must lie in (0, 1), got {config.betas}")
    return errors


def parse_config(mapping: Dict[str, Any]) -> ExperimentConfig:
    """Validates a mapping of config keys (as read from TOML) into an ExperimentConfig."""
    known = {f.name for f in fields(ExperimentConfig)}
    errors = [f"{key}: unknown key" for key in mapping if key not in known]
    if "kind" not in mapping:
        errors.append("kind: required")
    values = {}
    for key, value in mapping.items():
        if key in known:
            converted = _convert(key, value, errors)
            if converted is not None:
                values[key] = converted
    if errors:
        raise ConfigError(errors)
    config = ExperimentConfig(**values)
    errors = _gate_errors(config)
    if errors:
        raise ConfigError(errors)
    return config


def _read_toml(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError([f"{path}: {e}"]) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return parse_config(_read_toml(path))


def load_manifest(path: Union[str, Path]) -> List[Tuple[str, Dict[str, Any]]]:
    """(name, raw mapping) per ``[[experiment]]`` table; mappings are validated one by one when the suite runs."""
    document = _read_toml(path)
    unknown = [key for key in document if key != "experiment"]
    if unknown:
        raise ConfigError([f"{key}: unknown manifest key" for key in unknown])
    tables = document.get("experiment", [])
    if not isinstance(tables, list):
        raise ConfigError(["experiment: expected an array of tables ([[experiment]])"])
    return [(str(t.get("name") or f"{t.get('kind', 'experiment')}_{i}"), t) for i, t in enumerate(tables)]


def config_record(config: ExperimentConfig) -> Dict[str, Any]:
    """Config echo without unset optional keys, so that it parses back to the same config."""
    return {key: value for key, value in plain(config.to_record()).items() if value is not None}
