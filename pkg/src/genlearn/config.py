"""Experiment configuration: one YAML file, fully resolved before running.

Defaults are merged into the user config so the echoed copy reproduces the
run exactly; all randomness flows from the `seeds` list. File references are
checked at validation time.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from genlearn.classifier import ClassifierSpec, FeatureMap, TrainConfig
from genlearn.corpus import (Dataset, InputError, TaskSchema, build_vocab,
                             load_dataset, split)
from genlearn.ngram import SamplerConfig

DEFAULTS: dict = {
    "task": {
        "modality": "continuous",
        "num_classes": 2,
        "feature_dim": 2,
        "segment_count": 1,
    },
    "data": {
        "train": None,
        "dev": None,
        "test": None,
        "path": None,
        "split_fractions": [0.8, 0.1, 0.1],
        "split_seed": 0,
    },
    "generator": {
        "family": "gmm",
        "components": 2,
        "em_max_iters": 200,
        "em_tol": 1e-7,
        "n": 2,
        "smoothing_k": 0.1,
        "n_grid": None,
        "smoothing_grid": None,
        "class_conditional": False,
        "sampler": {"top_k": 40, "max_len": 64},
    },
    "classifier": {
        "family": "linear",
        "hidden_width": 16,
        "init_scale": 0.01,
        "feature_map": {"dim": 256, "ngram_orders": [1, 2], "hash_seed": 0},
        "train": {
            "learning_rate": 0.5,
            "epochs": 30,
            "batch_size": 32,
            "l2": 0.0,
            "early_stop_patience": 10,
        },
    },
    "pipeline": {
        "mode": "self_train",
        "iterations": 3,
        "k": 10,
        "lam": 0.5,
        "label_mode": "soft",
        "confidence_tau": None,
        "teacher": {"family": "mlp", "hidden_width": 32},
        "tau": 0.95,
        "mu": 7,
    },
    "seeds": [0],
    "output_dir": "runs/experiment",
}

_MODES = ("self_train", "distill", "self_distill", "fixmatch")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    raw: dict

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def mode(self) -> str:
        return self.raw["pipeline"]["mode"]

    @property
    def output_dir(self) -> Path:
        root = os.environ.get("GENLEARN_OUTPUT_ROOT")
        out = Path(self.raw["output_dir"])
        return Path(root) / out if root else out

    def schema(self, vocab=None) -> TaskSchema:
        t = self.raw["task"]
        s = TaskSchema(modality=t["modality"], num_classes=t["num_classes"],
                       segment_count=t["segment_count"],
                       feature_dim=t["feature_dim"])
        return s.with_vocab(vocab) if vocab is not None else s

    def load_splits(self) -> tuple[Dataset, Dataset, Dataset]:
        """(train, dev, test), either from explicit files or a seeded split."""
        d = self.raw["data"]
        schema = self.schema()
        if d["path"]:
            full = load_dataset(d["path"], schema, name="data")
            return split(full, tuple(d["split_fractions"]), d["split_seed"])
        missing = [k for k in ("train", "dev", "test") if not d[k]]
        if missing:
            raise InputError(
                "data config needs either 'path' or all of train/dev/test "
                f"(missing: {', '.join(missing)})")
        return tuple(
            load_dataset(d[k], schema, name=k) for k in ("train", "dev", "test")
        )

    def attach_vocab(self, datasets: list[Dataset]) -> TaskSchema:
        if self.raw["task"]["modality"] != "text":
            return self.schema()
        return self.schema(vocab=build_vocab(datasets))

    def sampler_cfg(self, seed: int) -> SamplerConfig:
        s = self.raw["generator"]["sampler"]
        return SamplerConfig(top_k=s["top_k"], max_len=s["max_len"], seed=seed)

    def train_cfg(self, seed: int) -> TrainConfig:
        t = self.raw["classifier"]["train"]
        return TrainConfig(learning_rate=t["learning_rate"], epochs=t["epochs"],
                           batch_size=t["batch_size"], seed=seed, l2=t["l2"],
                           early_stop_patience=t["early_stop_patience"])

    def feature_map(self) -> FeatureMap:
        if self.raw["task"]["modality"] == "continuous":
            return FeatureMap(kind="identity",
                              dim=self.raw["task"]["feature_dim"])
        f = self.raw["classifier"]["feature_map"]
        return FeatureMap(kind="hashed_ngrams", dim=f["dim"],
                          ngram_orders=tuple(f["ngram_orders"]),
                          hash_seed=f["hash_seed"])

    def classifier_spec(self, block: str = "classifier") -> ClassifierSpec:
        c = (self.raw["pipeline"]["teacher"] if block == "teacher"
             else self.raw["classifier"])
        return ClassifierSpec(
            family=c["family"],
            num_classes=self.raw["task"]["num_classes"],
            feature_map=self.feature_map(),
            hidden_width=c.get("hidden_width", 16),
            init_scale=c.get("init_scale",
                             self.raw["classifier"].get("init_scale", 0.01)),
        )

    def echo_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def _validate(raw: dict) -> None:
    if raw["task"]["modality"] not in ("text", "continuous"):
        raise InputError(f"unknown modality {raw['task']['modality']!r}")
    if raw["pipeline"]["mode"] not in _MODES:
        raise InputError(
            f"unknown pipeline mode {raw['pipeline']['mode']!r}; "
            f"expected one of {', '.join(_MODES)}")
    if raw["generator"]["family"] not in ("gmm", "ngram"):
        raise InputError(f"unknown generator family "
                         f"{raw['generator']['family']!r}")
    if not raw["seeds"]:
        raise InputError("seeds list is empty")
    for key in ("train", "dev", "test", "path"):
        p = raw["data"].get(key)
        if p and not Path(p).exists():
            raise InputError(f"data file does not exist: {p}")


def resolve_config(user: dict) -> ExperimentConfig:
    raw = _deep_merge(DEFAULTS, user or {})
    _validate(raw)
    return ExperimentConfig(raw=raw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(str(path), encoding="utf-8") as fh:
            user = yaml.safe_load(fh)
    except OSError as e:
        raise InputError(f"cannot open config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise InputError(f"invalid YAML in {path}: {e}") from None
    if user is not None and not isinstance(user, dict):
        raise InputError(f"config root must be a mapping: {path}")
    return resolve_config(user or {})
