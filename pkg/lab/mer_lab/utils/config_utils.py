from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml

from ..models.schema import BaselineReg, MerConfig, SynthConfig, TrainConfig
from .validators import ConfigError

CONFIG_DIR = Path(__file__).parent.parent.parent / "config" / "yml"

MER_KEYS = {"enabled": "enabled", "gamma": "gamma", "eps": "eps", "alpha_marg": "alpha_marg",
            "alpha_spec": "alpha_spec", "lambda": "lam"}


def default_config_path(name: str) -> Path:
    """Path of a shipped config, e.g. ``default_config_path("train_default")``."""
    return CONFIG_DIR / f"{name}.yml"


def load_yaml_mapping(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _check_keys(data: Dict[str, Any], allowed, prefix: str = "") -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{prefix}{key}'")


def _coerce(value: Any, kind: type, key: str) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"'{key}' must be true or false, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"'{key}' must be an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string, got {value!r}")
        return value
    raise ConfigError(f"'{key}' has an unsupported type")


def _coerce_list(value: Any, kind: type, key: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(f"'{key}' must be a list, got {value!r}")
    return [_coerce(v, kind, f"{key}[{i}]") for i, v in enumerate(value)]


SYNTH_TYPES = {
    "num_classes": int, "num_modalities": int, "modality_names": [str], "input_dims": [int],
    "num_source_domains": int, "samples_per_domain": int, "invariant_strength": float,
    "cooccurrence_strength": float, "cooccurrence_nuisance": float, "noise_std": [float], "latent_dim": int,
    "latent_noise_var": float, "seed": int,
}

TRAIN_TYPES = {
    "learning_rate": float, "batch_size": int, "epochs": int, "seed": int, "hidden_widths": [int],
    "embedding_dim": int, "validation_fraction": float, "unimodal": bool, "input_dims": [int],
}

MER_TYPES = {"enabled": bool, "gamma": float, "eps": float, "alpha_marg": float, "alpha_spec": float, "lambda": float}


def _typed(data: Dict[str, Any], types: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    result = {}
    for key, value in data.items():
        kind = types[key]
        name = f"{prefix}{key}"
        if value is None and key == "input_dims":
            result[key] = None
        elif isinstance(kind, list):
            result[key] = _coerce_list(value, kind[0], name)
        else:
            result[key] = _coerce(value, kind, name)
    return result


def synth_config_from_dict(data: Dict[str, Any]) -> SynthConfig:
    _check_keys(data, SYNTH_TYPES)
    values = _typed(data, SYNTH_TYPES)
    if values.get("num_modalities", 2) != 2 and "modality_names" not in values:
        values["modality_names"] = [f"m{i}" for i in range(values["num_modalities"])]
    return SynthConfig(**values)


def mer_config_from_dict(data: Dict[str, Any]) -> Tuple[MerConfig, bool]:
    if not isinstance(data, dict):
        raise ConfigError("'mer' must be a mapping")
    _check_keys(data, MER_TYPES, "mer.")
    values = _typed(data, MER_TYPES, "mer.")
    enabled = values.pop("enabled", False)
    return MerConfig(**{MER_KEYS[k]: v for k, v in values.items()}), enabled


def baseline_reg_from_value(data: Any) -> BaselineReg:
    if isinstance(data, str):
        return BaselineReg.parse(data)
    if not isinstance(data, dict):
        raise ConfigError("'baseline_reg' must be a mapping or 'name=value' string")
    _check_keys(data, {"name", "value"}, "baseline_reg.")
    if "name" in data and "value" not in data:
        return BaselineReg.parse(_coerce(data["name"], str, "baseline_reg.name"))
    return BaselineReg(
        name=_coerce(data.get("name", "none"), str, "baseline_reg.name"),
        value=_coerce(data.get("value", 0.0), float, "baseline_reg.value"),
    )


def train_config_from_dict(data: Dict[str, Any]) -> TrainConfig:
    allowed = set(TRAIN_TYPES) | {"mer", "baseline_reg"}
    _check_keys(data, allowed)
    plain = {k: v for k, v in data.items() if k in TRAIN_TYPES}
    values = _typed(plain, TRAIN_TYPES)
    if "mer" in data:
        values["mer"], values["mer_enabled"] = mer_config_from_dict(data["mer"] or {})
    if "baseline_reg" in data:
        values["baseline_reg"] = baseline_reg_from_value(data["baseline_reg"])
    return TrainConfig(**values)


def load_synth_config(path: Optional[Union[str, Path]] = None) -> SynthConfig:
    return synth_config_from_dict(load_yaml_mapping(path or default_config_path("synth_default")))


def load_train_config(path: Optional[Union[str, Path]] = None) -> TrainConfig:
    return train_config_from_dict(load_yaml_mapping(path or default_config_path("train_default")))
