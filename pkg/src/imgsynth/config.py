"""Job config files: INI-style key=value sections mirroring SynthesisJob."""
from __future__ import annotations

import configparser
import io
from dataclasses import replace

from .critic import CriticConfig
from .exceptions import ConfigError
from .losses import LossWeights
from .pipeline import SynthesisJob, validate_job

_JOB_KEYS = {
    "mode": str,
    "target": str,
    "architecture": str,
    "weights_source": str,
    "clipart": str,
    "style": str,
    "query": str,
    "counterfactual": str,
    "mask_query": str,
    "mask_cf": str,
    "blob_center": "int_pair",
    "blob_sigma": float,
    "target_class": int,
    "stage1_iterations": int,
    "stage2_iterations": int,
    "image_lr": float,
    "critic_lr": float,
    "size": int,
    "sample_count": int,
    "seed": int,
    "single_stage": "bool",
    "jitter": "bool",
}
_LAYER_KEYS = ("phi", "phi_c", "phi_r", "phi_s", "phi_q")
_WEIGHT_KEYS = {
    "alpha": "alpha", "beta": "beta", "lambda": "lam", "gamma": "gamma",
    "nu": "nu", "baseline_weight": "baseline_weight",
    "counterfactual_weight": "counterfactual_weight",
}
_CRITIC_KEYS = {
    "layer_count": int,
    "channel_widths": "int_list",
    "kernel_size": int,
    "strides": "int_list",
    "leak": float,
    "gradient_penalty_weight": float,
    "critic_steps_per_image_step": int,
    "learning_rate": float,
}


def _convert(kind, raw: str, key: str):
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int_pair":
            parts = [int(p) for p in raw.split(",")]
            if len(parts) != 2:
                raise ValueError(raw)
            return (parts[0], parts[1])
        if kind == "int_list":
            return tuple(int(p) for p in raw.split(","))
    except ValueError as e:
        raise ConfigError(f"bad value for key '{key}': {raw!r}") from e
    raise AssertionError(kind)


def parse_config(text: str) -> SynthesisJob:
    """Parse a job config document; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e

    known_sections = {"job", "layers", "weights", "critic"}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section '{section}'")

    fields: dict = {}
    if cp.has_section("job"):
        for key, raw in cp.items("job"):
            if key not in _JOB_KEYS:
                raise ConfigError(f"unknown key 'job.{key}'")
            fields[key] = _convert(_JOB_KEYS[key], raw, key)
    if "target" not in fields:
        raise ConfigError("missing required key 'job.target'")

    if cp.has_section("layers"):
        for key, raw in cp.items("layers"):
            if key not in _LAYER_KEYS:
                raise ConfigError(f"unknown key 'layers.{key}'")
            fields[key] = tuple(p.strip() for p in raw.split(",") if p.strip())

    weights = LossWeights()
    if cp.has_section("weights"):
        for key, raw in cp.items("weights"):
            if key not in _WEIGHT_KEYS:
                raise ConfigError(f"unknown key 'weights.{key}'")
            weights = replace(weights, **{_WEIGHT_KEYS[key]: _convert(float, raw, key)})

    critic = CriticConfig()
    if cp.has_section("critic"):
        for key, raw in cp.items("critic"):
            if key not in _CRITIC_KEYS:
                raise ConfigError(f"unknown key 'critic.{key}'")
            critic = replace(critic, **{key: _convert(_CRITIC_KEYS[key], raw, key)})

    job = SynthesisJob(weights=weights, critic_config=critic, **fields)
    validate_job(job)
    return job


def serialize_config(job: SynthesisJob) -> str:
    """Inverse of parse_config: parse(serialize(job)) equals job."""
    cp = configparser.ConfigParser()

    cp["job"] = {}
    for key, kind in _JOB_KEYS.items():
        value = getattr(job, key)
        if value is None:
            continue
        if kind == "int_pair" or kind == "int_list":
            cp["job"][key] = ",".join(str(v) for v in value)
        else:
            cp["job"][key] = str(value)

    layers = {k: getattr(job, k) for k in _LAYER_KEYS if getattr(job, k) is not None}
    if layers:
        cp["layers"] = {k: ",".join(v) for k, v in layers.items()}

    cp["weights"] = {key: repr(getattr(job.weights, attr))
                     for key, attr in _WEIGHT_KEYS.items()}
    cp["critic"] = {}
    for key, kind in _CRITIC_KEYS.items():
        value = getattr(job.critic_config, key)
        cp["critic"][key] = ",".join(str(v) for v in value) if kind == "int_list" else str(value)

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
