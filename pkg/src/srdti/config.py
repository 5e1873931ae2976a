"""Versioned JSON configuration for the command-line pipeline."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

from .cnn.model import DESK_CONFIG, PAPER_CONFIG, CnnConfig
from .phantom import PhantomSpec
from .volume import BlockSpec

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


DEFAULTS: Dict[str, Any] = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "scheme": {"source": "optimize", "restarts": 16, "b": 1.0, "bvecs": None, "bvals": None},
    "acquisition": {"directions": "scheme", "b": 1.0},
    "phantom": {
        "dims": [64, 64, 64],
        "spacing": [1.25, 1.25, 1.25],
        "stripe_period": 3.0,
        "noise_sigma": 0.0,
        "noise": "rician",
        "n_b0": 1,
        "train_seeds": [1, 2, 3, 4],
        "eval_seeds": [101],
    },
    "degrade": {"target_spacing": [2.0, 2.0, 2.0], "noise_sigma": 0.02, "noise": "rician", "n_b0": 3},
    "upsample": {"methods": ["trilinear", "cubic"]},
    "cnn": {"preset": "desk"},
    "blocks": {"size": [24, 24, 24], "train_overlap": [12, 12, 12], "predict_overlap": [8, 8, 8],
               "min_mask_fraction": 0.05},
    "metrics": {"v1_fa_threshold": 0.1, "write_error_maps": False},
    "render": {"residual_range": 0.1, "slices": None},
}

_PRESETS = {"desk": DESK_CONFIG, "paper": PAPER_CONFIG}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and key != "cnn":
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    raw: Dict[str, Any]
    phantom_base: PhantomSpec
    cnn: CnnConfig
    train_blocks: BlockSpec
    predict_blocks: BlockSpec

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def section(self, name: str) -> Dict[str, Any]:
        return self.raw[name]

    def phantom_spec(self, subject_seed: int) -> PhantomSpec:
        p = self.raw["phantom"]
        return PhantomSpec(dims=p["dims"], spacing=p["spacing"], seed=subject_seed,
                           noise_sigma=p["noise_sigma"], noise=p["noise"],
                           stripe_period=p["stripe_period"], n_b0=p["n_b0"])

    def subjects(self) -> Dict[str, List[str]]:
        p = self.raw["phantom"]
        return {
            "train": [f"train-s{s}" for s in p["train_seeds"]],
            "eval": [f"eval-s{s}" for s in p["eval_seeds"]],
        }

    def subject_seed(self, name: str) -> int:
        return int(name.rsplit("-s", 1)[1])

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"


def build_config(data: Optional[dict] = None, seed: Optional[int] = None) -> PipelineConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    raw = _merge(DEFAULTS, data)
    if seed is not None:
        raw["seed"] = int(seed)
    if not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigError("'seed' must be a non-negative integer")

    scheme = raw["scheme"]
    if scheme["source"] not in ("optimize", "file"):
        raise ConfigError("scheme.source must be 'optimize' or 'file'")
    if scheme["source"] == "file" and not (scheme["bvecs"] and scheme["bvals"]):
        raise ConfigError("scheme.source 'file' needs scheme.bvecs and scheme.bvals")
    acq = raw["acquisition"]["directions"]
    if acq != "scheme" and not (isinstance(acq, int) and acq >= 6):
        raise ConfigError("acquisition.directions must be 'scheme' or an integer >= 6")
    for m in raw["upsample"]["methods"]:
        if m not in ("trilinear", "cubic"):
            raise ConfigError(f"upsample.methods: unknown method {m!r}")
    if "cubic" not in raw["upsample"]["methods"]:
        raise ConfigError("upsample.methods must include 'cubic' (the network input)")
    p = raw["phantom"]
    if not p["train_seeds"] or not p["eval_seeds"]:
        raise ConfigError("phantom.train_seeds and phantom.eval_seeds must be non-empty")
    if set(p["train_seeds"]) & set(p["eval_seeds"]):
        raise ConfigError("evaluation phantoms must use seeds distinct from training phantoms")

    cnn_raw = dict(raw["cnn"])
    preset = cnn_raw.pop("preset", None)
    base = _PRESETS.get(preset) if preset else CnnConfig()
    if preset and base is None:
        raise ConfigError(f"unknown cnn preset {preset!r}; choose from {sorted(_PRESETS)}")
    blocks = raw["blocks"]
    try:
        fields = base.to_dict()
        fields.update(cnn_raw)
        fields["block"] = blocks["size"]
        fields["overlap"] = blocks["train_overlap"]
        if "seed" not in cnn_raw:
            fields["seed"] = raw["seed"]
        cnn = CnnConfig.from_dict(fields)
        train_blocks = BlockSpec(tuple(blocks["size"]), tuple(blocks["train_overlap"]))
        predict_blocks = BlockSpec(tuple(blocks["size"]), tuple(blocks["predict_overlap"]))
        phantom_base = PhantomSpec(dims=p["dims"], spacing=p["spacing"], noise_sigma=p["noise_sigma"],
                                   noise=p["noise"], stripe_period=p["stripe_period"], n_b0=p["n_b0"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return PipelineConfig(raw, phantom_base, cnn, train_blocks, predict_blocks)


def load_config(path, seed: Optional[int] = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return build_config(data, seed)
