"""Run configuration: JSON file merged with CLI overrides (flags win).

The effective config is validated by constructing every typed object the
target subcommand needs before any work starts, so bad values fail fast with
the offending key named.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .connector import TrainConfig
from .encoder import EncoderSpec
from .pyramid import ScaleSet
from .synth import MixPlan, ProviderConfig

DEFAULT_CONFIG: dict = {
    "scale_set": {"base": 378, "scales": [378, 756, 1134]},
    "encoder": {"kind": "patch_mean", "patch": 14, "dim": 3, "seed": 0},
    "train": {
        "stage": "connector_pretrain",
        "learning_rate": 1e-3,
        "global_batch": 256,
        "epochs": 1,
        "warmup_ratio": 0.03,
        "weight_decay": 0.0,
        "seed": 0,
        "hidden": 64,
    },
    "providers": {
        "A": {
            "kind": "messages_api",
            "base_url": "https://api.provider-a.invalid",
            "model": "claude-3-opus-20240229",
            "auth_env_var": "PROVIDER_A_API_KEY",
            "max_attempts": 3,
            "timeout": 60.0,
            "max_parallel": 4,
            "max_tokens": 1024,
        },
        "B": {
            "kind": "chat_completions",
            "base_url": "https://api.provider-b.invalid",
            "model": "llama3-70b-instruct",
            "auth_env_var": "PROVIDER_B_API_KEY",
            "max_attempts": 3,
            "timeout": 60.0,
            "max_parallel": 4,
            "max_tokens": 1024,
        },
    },
    "mix": {"ratio_a": 0.25, "seed": 0},
    "paths": {},
}

STAGE_ALIASES = {
    "pretrain": "connector_pretrain",
    "finetune": "instruct_finetune",
    "connector_pretrain": "connector_pretrain",
    "instruct_finetune": "instruct_finetune",
}

STAGE_RATES = {
    "connector_pretrain": {"learning_rate": 1e-3, "global_batch": 256},
    "instruct_finetune": {"learning_rate": 2e-5, "global_batch": 128},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None) -> dict:
    """Defaults, optionally overlaid with a JSON config file."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        cfg = _deep_merge(cfg, loaded)
    return cfg


def apply_overrides(cfg: dict, overrides: dict) -> dict:
    """Overlay flag-derived values (already nested); None values are ignored."""

    def prune(d: dict) -> dict:
        return {
            k: (prune(v) if isinstance(v, dict) else v)
            for k, v in d.items()
            if v is not None and (not isinstance(v, dict) or prune(v))
        }

    return _deep_merge(cfg, prune(overrides))


def scale_set_from(cfg: dict) -> ScaleSet:
    section = cfg["scale_set"]
    return ScaleSet(base=int(section["base"]), scales=tuple(section["scales"]))


def encoder_spec_from(cfg: dict) -> EncoderSpec:
    section = cfg["encoder"]
    return EncoderSpec(
        kind=section["kind"],
        patch=int(section["patch"]),
        dim=int(section["dim"]),
        seed=int(section.get("seed", 0)),
    )


def train_config_from(cfg: dict) -> TrainConfig:
    section = dict(cfg["train"])
    stage = STAGE_ALIASES.get(str(section.get("stage", "connector_pretrain")))
    if stage is None:
        raise ValueError(f"unknown train.stage {section.get('stage')!r}")
    return TrainConfig(
        stage=stage,
        learning_rate=float(section["learning_rate"]),
        global_batch=int(section["global_batch"]),
        epochs=int(section.get("epochs", 1)),
        warmup_ratio=float(section.get("warmup_ratio", 0.03)),
        weight_decay=float(section.get("weight_decay", 0.0)),
        seed=int(section.get("seed", 0)),
    )


def provider_from(cfg: dict, key: str) -> ProviderConfig:
    section = cfg["providers"][key]
    return ProviderConfig(
        kind=section["kind"],
        base_url=section["base_url"],
        model=section["model"],
        auth_env_var=section["auth_env_var"],
        max_attempts=int(section.get("max_attempts", 3)),
        timeout=float(section.get("timeout", 60.0)),
        max_parallel=int(section.get("max_parallel", 4)),
        max_tokens=int(section.get("max_tokens", 1024)),
    )


def mix_from(cfg: dict) -> MixPlan:
    section = cfg["mix"]
    return MixPlan(ratio_a=float(section["ratio_a"]), seed=int(section.get("seed", 0)))
