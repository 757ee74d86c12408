"""Typed pipeline configuration parsed from INI-style text.

Key = value pairs under named sections; every tuning constant the pipeline
uses appears here so experiment parameters live in data, not code. Unknown
sections or keys are hard errors, catching typos early. Bone-file paths are
resolved relative to the config file's directory.

Substeps is a [run] key (not per solver) so the accel and gyro grids can
never disagree; solver dt is derived from the bone frame rate at run time.
"""

import configparser
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path

import numpy as np

from .calibration import CalibrationErrorParams
from .errors import ConfigError
from .fusion import EskfConfig, ZuptConfig
from .noise import ImuNoiseParams
from .so3 import quat_to_matrix
from .synthesis import AccelSolveConfig, GyroSolveConfig
from .trajectory import MountingSpec, SlidingNoiseParams

__all__ = ["SensorSpec", "PipelineConfig", "load_config", "default_config"]

SENSOR_PREFIX = "sensor."


@dataclass
class SensorSpec:
    sensor_id: str
    bone_file: str
    mount: MountingSpec


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    root_sensor: str = "root"
    heading_deg: float = 0.0
    substeps: int = 3
    accel: AccelSolveConfig = field(default_factory=AccelSolveConfig)
    gyro: GyroSolveConfig = field(default_factory=GyroSolveConfig)
    sliding_enabled: bool = True
    sliding: SlidingNoiseParams = field(default_factory=SlidingNoiseParams)
    noise_enabled: bool = True
    noise: ImuNoiseParams = field(default_factory=lambda: ImuNoiseParams.from_profile("consumer-mems"))
    eskf: EskfConfig = field(default_factory=EskfConfig)
    calib_enabled: bool = True
    calib_error: CalibrationErrorParams = field(default_factory=CalibrationErrorParams)
    sensors: list = field(default_factory=list)

    def sensor_ids(self):
        return [s.sensor_id for s in self.sensors]

    def require_sensors(self):
        if not self.sensors:
            raise ConfigError("config defines no [sensor.<id>] sections")
        if self.root_sensor not in self.sensor_ids():
            raise ConfigError(
                f"root sensor {self.root_sensor!r} is not among {self.sensor_ids()}"
            )


def default_config():
    return PipelineConfig()


def _get(section, key, conv, errors):
    raw = section[key]
    try:
        if conv is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        return conv(raw)
    except ValueError:
        errors.append(f"[{section.name}] {key} = {raw!r} is not a valid {conv.__name__}")
        return None


def _vector(section, key, n, errors):
    raw = section[key]
    parts = raw.replace(",", " ").split()
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        vals = []
    if len(vals) != n:
        errors.append(f"[{section.name}] {key} = {raw!r} must be {n} numbers")
        return None
    return np.array(vals)


def _apply_section(section, spec, errors):
    """spec: key -> (converter, setter); flags unknown keys."""
    for key in section:
        if key not in spec:
            errors.append(f"unknown key {key!r} in section [{section.name}]")
            continue
        conv, setter = spec[key]
        value = _get(section, key, conv, errors)
        if value is not None:
            setter(value)


def _replace_field(store, name):
    def setter(value):
        store[name] = value

    return setter


def _section_to_kwargs(section, dataclass_type, errors, skip=(), extra=None):
    """Collect key=value pairs matching the dataclass's float/int/bool fields."""
    allowed = {}
    for f in dataclass_fields(dataclass_type):
        if f.name in skip:
            continue
        # f.type is the class under eager annotation evaluation, a string
        # under PEP 563; accept either
        tname = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if tname in ("float", "int", "bool"):
            allowed[f.name] = {"float": float, "int": int, "bool": bool}[tname]
    store = {}
    spec = {name: (conv, _replace_field(store, name)) for name, conv in allowed.items()}
    if extra:
        spec.update(extra)
    _apply_section(section, spec, errors)
    return store


def load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        found = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not found:
        raise ConfigError(f"config file not found: {path}")

    cfg = PipelineConfig()
    base_dir = Path(path).resolve().parent
    errors = []
    run_store = {}
    noise_store = {}
    eskf_store = {}

    for name in parser.sections():
        section = parser[name]
        if name == "run":
            _apply_section(
                section,
                {
                    "seed": (int, _replace_field(run_store, "seed")),
                    "out_dir": (str, _replace_field(run_store, "out_dir")),
                    "root_sensor": (str, _replace_field(run_store, "root_sensor")),
                    "heading_deg": (float, _replace_field(run_store, "heading_deg")),
                    "substeps": (int, _replace_field(run_store, "substeps")),
                },
                errors,
            )
        elif name == "accel_solve":
            store = _section_to_kwargs(section, AccelSolveConfig, errors, skip=("substeps", "dt"))
            cfg.accel = AccelSolveConfig(**store)
        elif name == "gyro_solve":
            store = _section_to_kwargs(section, GyroSolveConfig, errors, skip=("substeps", "dt"))
            cfg.gyro = GyroSolveConfig(**store)
        elif name == "sliding":
            store = _section_to_kwargs(section, SlidingNoiseParams, errors, skip=("seed",),
                                       extra={"enabled": (bool, _replace_field(run_store, "sliding_enabled"))})
            cfg.sliding = SlidingNoiseParams(**store)
        elif name == "noise":
            extra = {
                "enabled": (bool, _replace_field(run_store, "noise_enabled")),
                "profile": (str, _replace_field(noise_store, "profile")),
            }
            noise_store.update(
                _section_to_kwargs(section, ImuNoiseParams, errors, skip=("seed",), extra=extra)
            )
        elif name == "eskf":
            extra = {
                "zupt_gyro_thresh": (float, _replace_field(eskf_store, "zupt_gyro")),
                "zupt_accel_thresh": (float, _replace_field(eskf_store, "zupt_accel")),
                "zupt_window": (int, _replace_field(eskf_store, "zupt_window")),
            }
            eskf_store.update(
                _section_to_kwargs(section, EskfConfig, errors, skip=("sample_rate",), extra=extra)
            )
        elif name == "calibration":
            store = _section_to_kwargs(
                section, CalibrationErrorParams, errors, skip=("seed",),
                extra={"enabled": (bool, _replace_field(run_store, "calib_enabled"))},
            )
            cfg.calib_error = CalibrationErrorParams(**store)
        elif name.startswith(SENSOR_PREFIX):
            sensor_id = name[len(SENSOR_PREFIX):]
            if not sensor_id:
                errors.append(f"empty sensor id in section [{name}]")
                continue
            store = {}
            _apply_section(
                section,
                {
                    "bone_file": (str, _replace_field(store, "bone_file")),
                    "offset": (lambda raw: raw, _replace_field(store, "offset_raw")),
                    "mount_quat": (lambda raw: raw, _replace_field(store, "quat_raw")),
                },
                errors,
            )
            if "bone_file" not in store:
                errors.append(f"[{name}] is missing bone_file")
                continue
            offset = np.zeros(3)
            if "offset_raw" in store:
                vec = _vector(section, "offset", 3, errors)
                if vec is None:
                    continue
                offset = vec
            orientation = np.eye(3)
            if "quat_raw" in store:
                quat = _vector(section, "mount_quat", 4, errors)
                if quat is None:
                    continue
                norm = np.linalg.norm(quat)
                if abs(norm - 1.0) > 0.01:
                    errors.append(f"[{name}] mount_quat norm {norm:.4f} outside [0.99, 1.01]")
                    continue
                orientation = quat_to_matrix(quat / norm)
            try:
                mount = MountingSpec(offset=offset, orientation=orientation)
            except ValueError as exc:
                errors.append(f"[{name}]: {exc}")
                continue
            cfg.sensors.append(
                SensorSpec(sensor_id, str(base_dir / store["bone_file"]), mount)
            )
        else:
            errors.append(f"unknown section [{name}]")

    if errors:
        raise ConfigError("; ".join(errors))

    for key, value in run_store.items():
        setattr(cfg, key, value)

    profile = noise_store.pop("profile", None)
    if profile is not None:
        try:
            cfg.noise = ImuNoiseParams.from_profile(profile, **noise_store)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif noise_store:
        cfg.noise = ImuNoiseParams(**noise_store)

    zupt_kwargs = {}
    if "zupt_gyro" in eskf_store:
        zupt_kwargs["gyro_norm_thresh"] = eskf_store.pop("zupt_gyro")
    if "zupt_accel" in eskf_store:
        zupt_kwargs["accel_dev_thresh"] = eskf_store.pop("zupt_accel")
    if "zupt_window" in eskf_store:
        zupt_kwargs["window"] = eskf_store.pop("zupt_window")
    try:
        zupt = ZuptConfig(**zupt_kwargs) if zupt_kwargs else ZuptConfig()
        cfg.eskf = EskfConfig(zupt=zupt, **eskf_store)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    seen = set()
    for sensor_id in cfg.sensor_ids():
        if sensor_id in seen:
            raise ConfigError(f"duplicate sensor id {sensor_id!r}")
        seen.add(sensor_id)
    return cfg
