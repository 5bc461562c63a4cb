"""Bulk synthesis of unlabeled datasets from fitted generators.

Draws are i.i.d.; structural rejection (wrong segment count) and dedup run
on the fly until the target count is reached or the draw budget (20x the
target) is exhausted. Labels are never attached here, even for
class-conditional generators: annotation is a separate, downstream step.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from genlearn.corpus import Dataset, Example, TaskSchema, tokenize
from genlearn.gmm import (ClassConditionalGaussianMixture, GaussianMixture,
                          fit_class_conditional_gmm)
from genlearn.ngram import NGramLM, SamplerConfig, fit_ngram

DRAW_BUDGET_FACTOR = 20


@dataclass(frozen=True)
class GenerationStats:
    """Raw-draw accounting for one bulk generation run."""

    requested: int
    draws: int
    rejected_segment_count: int
    duplicate_count: int
    truncated_count: int
    accepted: int
    budget_exhausted: bool

    def to_dict(self) -> dict:
        return asdict(self)


def dataset_fingerprint(ds: Dataset) -> str:
    """sha256 over the ordered payloads; label-independent."""
    h = hashlib.sha256()
    for ex in ds.examples:
        h.update(json.dumps(list(ex.payload)).encode())
        h.update(b"\n")
    return h.hexdigest()


def _shard_rng(seed: int, shard: int) -> np.random.Generator:
    """Independent stream per (seed, shard); recombination order is by shard."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(shard,)))


def generate_dataset(g, target: int, schema: TaskSchema,
                     sampler_cfg: SamplerConfig | None = None,
                     seed: int | None = None, chunk_size: int = 512,
                     ) -> tuple[Dataset, GenerationStats]:
    """Draw until `target` unique, structurally valid samples exist.

    Text draws with the wrong segment count are rejected; duplicates are
    dropped (first occurrence kept). If the 20x draw budget runs out the
    dataset is returned short, with a warning.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    if seed is None:
        if sampler_cfg is None:
            raise ValueError("either a seed or a SamplerConfig is required")
        seed = sampler_cfg.seed
    budget = DRAW_BUDGET_FACTOR * target
    is_text = g.modality == "text"

    seen: set = set()
    payloads: list[tuple] = []
    draws = rejected = dups = truncated = 0
    shard = 0
    while len(payloads) < target and draws < budget:
        num = min(chunk_size, budget - draws)
        rng = _shard_rng(seed, shard)
        shard += 1
        chunk, trunc_flags = g.sample_payloads(num, rng, sampler_cfg)
        for p, trunc in zip(chunk, trunc_flags):
            draws += 1
            truncated += int(trunc)
            # structural rejection: wrong segment count or an empty segment
            if is_text and (len(p) != schema.segment_count
                            or any(not tokenize(seg) for seg in p)):
                rejected += 1
                continue
            if p in seen:
                dups += 1
                continue
            seen.add(p)
            payloads.append(p)
            if len(payloads) == target:
                break

    stats = GenerationStats(
        requested=target, draws=draws, rejected_segment_count=rejected,
        duplicate_count=dups, truncated_count=truncated,
        accepted=len(payloads), budget_exhausted=len(payloads) < target)
    if stats.accepted == 0:
        raise RuntimeError(
            f"draw budget ({budget}) exhausted with zero accepted samples")
    if stats.budget_exhausted:
        warnings.warn(
            f"draw budget exhausted: {stats.accepted}/{target} samples kept")
    examples = [Example(payload=p, provenance="synthetic") for p in payloads]
    return (
        Dataset(schema=schema, examples=tuple(examples), name="synthetic"),
        stats,
    )


def generate_labeled_dataset(g_cond, num: int, schema: TaskSchema, seed: int,
                             ) -> Dataset:
    """Labeled draws (y ~ P(y), x ~ g(x|y)) keeping the conditioning labels.

    This is the comparison arm for annotation experiments, not part of the
    synthesis pipeline, which always discards generator labels.
    """
    rng = np.random.default_rng(seed)
    payloads, ys = g_cond.sample_labeled_payloads(num, rng)
    examples = [
        Example(payload=p, label=int(y), provenance="synthetic")
        for p, y in zip(payloads, ys)
    ]
    return Dataset(schema=schema, examples=tuple(examples),
                   name="synthetic-labeled")


def fit_class_conditional(corpus: Dataset, family: str, **hyperparams):
    """Fit g(x|y) of the requested family on a fully hard-labeled corpus."""
    if family == "ngram":
        return fit_ngram(corpus, class_conditional=True, **hyperparams)
    if family == "gmm":
        return fit_class_conditional_gmm(corpus, **hyperparams)
    raise ValueError(f"unknown generator family {family!r}")


CHECKPOINT_VERSION = 1


def save_generator(g, path, fmt: str = "json") -> None:
    """Versioned generator checkpoint; fmt is 'json' or 'npz'."""
    obj = _generator_to_dict(g)
    obj["checkpoint_version"] = CHECKPOINT_VERSION
    if fmt == "json":
        with open(str(path), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True)
    elif fmt == "npz":
        np.savez_compressed(str(path), blob=np.frombuffer(
            json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8))
    else:
        raise ValueError(f"unknown checkpoint format {fmt!r}")


def load_generator(path, fmt: str | None = None):
    path = str(path)
    if fmt is None:
        fmt = "npz" if path.endswith(".npz") else "json"
    if fmt == "json":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    elif fmt == "npz":
        with np.load(path) as data:
            obj = json.loads(bytes(data["blob"]).decode())
    else:
        raise ValueError(f"unknown checkpoint format {fmt!r}")
    version = obj.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return _generator_from_dict(obj)


def _generator_to_dict(g) -> dict:
    if isinstance(g, NGramLM):
        return g.to_dict()
    if isinstance(g, GaussianMixture):
        return {
            "kind": "gmm",
            "weights": g.weights.tolist(),
            "means": g.means.tolist(),
            "variances": g.variances.tolist(),
        }
    if isinstance(g, ClassConditionalGaussianMixture):
        return {
            "kind": "gmm_conditional",
            "class_prior": g.class_prior.tolist(),
            "per_class": [_generator_to_dict(sub) for sub in g.per_class],
        }
    raise ValueError(f"cannot checkpoint generator of type {type(g).__name__}")


def _generator_from_dict(obj: dict):
    kind = obj.get("kind")
    if kind == "ngram":
        return NGramLM.from_dict(obj)
    if kind == "gmm":
        return GaussianMixture(weights=np.asarray(obj["weights"]),
                               means=np.asarray(obj["means"]),
                               variances=np.asarray(obj["variances"]))
    if kind == "gmm_conditional":
        return ClassConditionalGaussianMixture(
            per_class=[_generator_from_dict(sub) for sub in obj["per_class"]],
            class_prior=np.asarray(obj["class_prior"]))
    raise ValueError(f"unknown generator kind {kind!r}")
