"""Run configuration: YAML schema, profiles and resolution.

A run config merges profile defaults, a YAML file and CLI overrides, in that
order. Unknown keys are errors (typos fail fast). The resolved config is
serialized into the run directory before anything else happens.
"""

from __future__ import annotations

import copy
from dataclasses import asdict

import yaml

from . import data as dat
from .exceptions import ConfigError
from .model import ModelConfig
from .training import TrainConfig

_SCHEMA = {
    "seed": int,
    "model": {
        "d_model": int, "n_heads": int, "d_ff": int,
        "enc_layers": int, "pretrain_dec_layers": int, "finetune_dec_layers": int,
        "patch_stride": int, "dropout": float,
        "input_len": int, "label_len": int, "pred_len": int,
    },
    "pretrain": {
        "base_lr": float, "weight_decay": float, "beta1": float, "beta2": float,
        "batch_size": int, "epochs": int, "schedule": str, "mask_ratio": float,
        "grad_clip": float,
    },
    "finetune": {
        "lr": float, "beta1": float, "beta2": float, "batch_size": int,
        "epochs": int, "schedule": str, "patience": int, "grad_clip": float,
    },
    "data": {
        "source": str, "path": str,
        "synth": dict,   # validated by synth_generate
        "split": {"kind": str, "train": float, "val": float, "test": float},
    },
}

# Table-style full-scale defaults; the desk profile shrinks everything so the
# whole pipeline runs in seconds on one CPU core.
PROFILES = {
    "full": {
        "seed": 0,
        "model": {"d_model": 512, "n_heads": 8, "d_ff": 2048,
                  "enc_layers": 3, "pretrain_dec_layers": 1,
                  "finetune_dec_layers": 1, "patch_stride": 2, "dropout": 0.05,
                  "input_len": 784, "label_len": 48, "pred_len": 24},
        "pretrain": {"base_lr": 1e-3, "weight_decay": 0.05,
                     "beta1": 0.9, "beta2": 0.95, "batch_size": 64,
                     "epochs": 40, "schedule": "cosine", "mask_ratio": 0.85},
        "finetune": {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999,
                     "batch_size": 32, "epochs": 50, "schedule": "exponential",
                     "patience": 3},
        "data": {"source": "synth",
                 "synth": {"n": 4000, "d": 7, "seed": 1,
                           "components": [{"period": 24, "amp": 1.0},
                                          {"period": 168, "amp": 0.5}],
                           "noise_std": 0.1},
                 "split": {"kind": "ratio", "train": 0.7, "val": 0.15}},
    },
    "desk": {
        "seed": 0,
        "model": {"d_model": 32, "n_heads": 2, "d_ff": 64,
                  "enc_layers": 1, "pretrain_dec_layers": 1,
                  "finetune_dec_layers": 1, "patch_stride": 2, "dropout": 0.05,
                  "input_len": 48, "label_len": 16, "pred_len": 8},
        "pretrain": {"base_lr": 1e-3, "weight_decay": 0.05,
                     "beta1": 0.9, "beta2": 0.95, "batch_size": 64,
                     "epochs": 10, "schedule": "cosine", "mask_ratio": 0.85},
        "finetune": {"lr": 1e-4, "beta1": 0.9, "beta2": 0.999,
                     "batch_size": 32, "epochs": 15, "schedule": "exponential",
                     "patience": 3},
        "data": {"source": "synth",
                 "synth": {"n": 600, "d": 3, "seed": 1,
                           "components": [{"period": 24, "amp": 1.0}],
                           "noise_std": 0.1},
                 "split": {"kind": "ratio", "train": 0.7, "val": 0.15}},
    },
}


def _check_keys(node, schema, path: str = "") -> None:
    if not isinstance(schema, dict) or schema is dict:
        return
    if not isinstance(node, dict):
        raise ConfigError(f"config section {path or '<root>'} must be a mapping")
    for key, value in node.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            if sub is not dict and isinstance(value, dict):
                _check_keys(value, sub, path + key + ".")
        elif sub is dict:
            continue


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class RunConfig:
    def __init__(self, raw: dict):
        _check_keys(raw, _SCHEMA)
        self.raw = raw

    @classmethod
    def resolve(cls, config_path=None, profile: str = "desk",
                overrides: dict | None = None) -> "RunConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        merged = copy.deepcopy(PROFILES[profile])
        if config_path is not None:
            try:
                with open(config_path) as fh:
                    loaded = yaml.safe_load(fh) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {config_path}: {exc}")
            except yaml.YAMLError as exc:
                raise ConfigError(f"malformed config {config_path}: {exc}")
            _check_keys(loaded, _SCHEMA)
            merged = _merge(merged, loaded)
        if overrides:
            merged = _merge(merged, overrides)
        return cls(merged)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def model_config(self, d_x: int) -> ModelConfig:
        m = self.raw["model"]
        return ModelConfig(
            d_x=d_x, d_y=d_x,
            L_x=m["input_len"], L_y=m["pred_len"], L_label=m["label_len"],
            d_model=m["d_model"], n_heads=m["n_heads"], d_ff=m["d_ff"],
            enc_layers=m["enc_layers"],
            pretrain_dec_layers=m["pretrain_dec_layers"],
            finetune_dec_layers=m["finetune_dec_layers"],
            p=m["patch_stride"], dropout=m["dropout"])

    def pretrain_config(self) -> TrainConfig:
        p = self.raw["pretrain"]
        return TrainConfig.pretrain_defaults(
            base_lr=p["base_lr"], weight_decay=p["weight_decay"],
            betas=(p["beta1"], p["beta2"]), batch_size=p["batch_size"],
            epochs=p["epochs"], schedule=p["schedule"],
            mask_ratio=p["mask_ratio"], grad_clip=p.get("grad_clip"),
            seed=self.seed)

    def finetune_config(self) -> TrainConfig:
        f = self.raw["finetune"]
        return TrainConfig.finetune_defaults(
            base_lr=f["lr"], betas=(f["beta1"], f["beta2"]),
            batch_size=f["batch_size"], epochs=f["epochs"],
            schedule=f["schedule"], patience=f["patience"],
            grad_clip=f.get("grad_clip"), seed=self.seed)

    def load_frame(self) -> dat.TimeSeriesFrame:
        d = self.raw["data"]
        source = d.get("source", "synth")
        if source == "csv":
            if "path" not in d:
                raise ConfigError("data.source=csv needs data.path")
            return dat.load_csv(d["path"])
        if source == "synth":
            return dat.synth_generate(d.get("synth", {}))
        raise ConfigError(f"unknown data source {source!r}")

    def split_spec(self) -> dat.SplitSpec:
        s = self.raw["data"].get("split", {})
        return dat.SplitSpec(kind=s.get("kind", "ratio"),
                             train=s.get("train", 0.7), val=s.get("val", 0.1),
                             test=s.get("test"))

    def prepared_splits(self):
        """Load, split chronologically, standardize with train statistics."""
        frame = self.load_frame()
        train, val, test = dat.split_frame(frame, self.split_spec())
        std = dat.Standardizer.fit(train.values)
        return std.apply(train), std.apply(val), std.apply(test), std

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.raw, fh, sort_keys=True)
