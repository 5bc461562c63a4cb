"""End-to-end training pipelines over synthetic data.

`self_train` synthesizes an unlabeled pool once, then alternates
annotate-and-retrain rounds, each student restarting from the same initial
parameters. `distill` is the single-round teacher-to-student variant.
`self_distill` is the no-synthetic-data control. The confidence-filtered
step mirrors consistency training on feature vectors with weak/strong
additive-noise augmentations.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from genlearn.classifier import (PROB_CLAMP, ClassifierSpec, TrainConfig,
                                 _augment, _targets_matrix, annotate,
                                 evaluate, featurize_dataset, train)
from genlearn.corpus import Dataset, Example, mix
from genlearn.generate import dataset_fingerprint, generate_dataset
from genlearn.ngram import SamplerConfig


@dataclass(frozen=True)
class SelfTrainConfig:
    iterations: int = 3  # annotate/retrain rounds after the base model
    k: int = 10  # synthetic pool size as a multiple of |labeled|
    lam: float = 0.5
    label_mode: str = "soft"
    confidence_tau: float | None = None
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    sampler_cfg: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.iterations < 1 or self.k < 1:
            raise ValueError("iterations and k must be >= 1")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must lie in (0, 1]")
        if self.label_mode not in ("soft", "hard"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")
        if self.confidence_tau is not None and not 0.0 < self.confidence_tau < 1.0:
            raise ValueError("confidence_tau must lie in (0, 1)")


@dataclass(frozen=True)
class DistillConfig:
    k: int = 10
    lam: float = 0.2
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    sampler_cfg: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lam must lie in (0, 1]")


@dataclass
class RunReport:
    """Structured record of one pipeline run.

    `to_json` is canonical (sorted keys, no volatile fields) so repeated
    seeded runs serialize byte-identically; wall-clock time lives in
    `wall_clock_seconds` and is serialized separately by the CLI.
    """

    mode: str
    config: dict
    seed: int
    baseline: dict = field(default_factory=dict)
    generation: dict = field(default_factory=dict)
    iterations: list[dict] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "seed": self.seed,
            "baseline": self.baseline,
            "generation": self.generation,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def csv_rows(self) -> list[dict]:
        cols = ("iteration", "dev_accuracy", "test_accuracy",
                "mean_cross_entropy", "synthetic_count", "rejected_count",
                "filtered_count")
        return [{c: rec.get(c) for c in cols} for rec in self.iterations]


def _metrics_record(f, dev: Dataset, test: Dataset) -> dict:
    dev_m = evaluate(f, dev)
    test_m = evaluate(f, test)
    return {
        "dev_accuracy": dev_m.accuracy,
        "test_accuracy": test_m.accuracy,
        "mean_cross_entropy": test_m.mean_cross_entropy,
    }


def _derived_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def confidence_filter(annotated: Dataset, tau: float) -> tuple[Dataset, int]:
    """Keep soft-labeled examples whose max probability exceeds tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    kept = []
    for i, ex in enumerate(annotated.examples):
        if ex.soft_label is None:
            raise ValueError(
                f"{annotated.name}[{i}]: confidence_filter needs soft labels")
        if max(ex.soft_label) > tau:
            kept.append(ex)
    return (annotated.replace_examples(kept, name=f"{annotated.name}/filtered"),
            len(annotated) - len(kept))


def _harden(annotated: Dataset) -> Dataset:
    out = [
        Example(payload=ex.payload,
                label=int(np.argmax(ex.soft_label)),
                provenance=ex.provenance)
        for ex in annotated.examples
    ]
    return annotated.replace_examples(out)


def _annotate_pool(f, pool: Dataset, label_mode: str, tau: float | None,
                   ) -> tuple[Dataset, int]:
    """Teacher annotation with optional confidence filtering.

    Filtering needs soft predictions, so with hard labels requested we
    annotate softly, filter, then take the argmax (identical tie handling).
    """
    if tau is None:
        return annotate(f, pool, label_mode), 0
    soft = annotate(f, pool, "soft")
    kept, dropped = confidence_filter(soft, tau)
    if label_mode == "hard":
        kept = _harden(kept)
    return kept, dropped


def self_train(labeled: Dataset, g, f0_spec: ClassifierSpec,
               cfg: SelfTrainConfig, dev: Dataset, test: Dataset,
               model_sink: list | None = None) -> tuple[object, RunReport]:
    """Iterated annotate-and-retrain on a one-shot synthetic pool.

    The pool is generated once and reused for every round (its fingerprint
    is recorded per round); every student restarts from the same initial
    parameters rather than from the previous student. When given,
    `model_sink` collects every intermediate model for checkpointing.
    """
    started = time.perf_counter()
    pool, stats = generate_dataset(
        g, cfg.k * len(labeled), labeled.schema, sampler_cfg=cfg.sampler_cfg,
        seed=cfg.sampler_cfg.seed)
    pool_hash = dataset_fingerprint(pool)
    mix_seeds = _derived_seeds(cfg.train_cfg.seed, cfg.iterations)

    report = RunReport(
        mode="self_train", seed=cfg.train_cfg.seed,
        config={
            "iterations": cfg.iterations, "k": cfg.k, "lam": cfg.lam,
            "label_mode": cfg.label_mode, "confidence_tau": cfg.confidence_tau,
        },
        generation=stats.to_dict() | {"pool_hash": pool_hash},
    )

    f_t, _ = train(f0_spec, labeled, cfg.train_cfg, dev)
    report.baseline = _metrics_record(f_t, dev, test)
    if model_sink is not None:
        model_sink.append(("base", f_t))

    for t in range(1, cfg.iterations + 1):
        annotated, dropped = _annotate_pool(f_t, pool, cfg.label_mode,
                                            cfg.confidence_tau)
        if len(annotated) == 0:
            raise RuntimeError(
                f"iteration {t}: every synthetic example was filtered out "
                f"(tau={cfg.confidence_tau})")
        stream = mix(labeled, annotated, cfg.lam, cfg.train_cfg.batch_size,
                     seed=mix_seeds[t - 1])
        f_next, _ = train(f0_spec, stream, cfg.train_cfg, dev)
        record = {"iteration": t}
        record.update(_metrics_record(f_next, dev, test))
        record.update({
            "synthetic_count": len(annotated),
            "rejected_count": stats.rejected_segment_count,
            "filtered_count": dropped,
            "pool_hash": dataset_fingerprint(pool),
        })
        report.iterations.append(record)
        if model_sink is not None:
            model_sink.append((f"iter_{t}", f_next))
        f_t = f_next

    report.wall_clock_seconds = time.perf_counter() - started
    return f_t, report


def distill(labeled: Dataset, g, teacher, student_spec: ClassifierSpec,
            cfg: DistillConfig, dev: Dataset, test: Dataset,
            ) -> tuple[object, RunReport]:
    """Single-round distillation of `teacher` onto synthetic + labeled data."""
    started = time.perf_counter()
    if student_spec.num_parameters() >= teacher.num_parameters:
        warnings.warn("student has at least as many parameters as the teacher")
    pool, stats = generate_dataset(
        g, cfg.k * len(labeled), labeled.schema, sampler_cfg=cfg.sampler_cfg,
        seed=cfg.sampler_cfg.seed)
    annotated = annotate(teacher, pool, "soft")
    (mix_seed,) = _derived_seeds(cfg.train_cfg.seed, 1)
    stream = mix(labeled, annotated, cfg.lam, cfg.train_cfg.batch_size,
                 seed=mix_seed)
    student, _ = train(student_spec, stream, cfg.train_cfg, dev)

    report = RunReport(
        mode="distill", seed=cfg.train_cfg.seed,
        config={"k": cfg.k, "lam": cfg.lam},
        baseline=_metrics_record(teacher, dev, test),
        generation=stats.to_dict() | {"pool_hash": dataset_fingerprint(pool)},
    )
    record = {"iteration": 1}
    record.update(_metrics_record(student, dev, test))
    record.update({
        "synthetic_count": len(annotated),
        "rejected_count": stats.rejected_segment_count,
        "filtered_count": 0,
        "pool_hash": dataset_fingerprint(pool),
    })
    report.iterations.append(record)
    report.wall_clock_seconds = time.perf_counter() - started
    return student, report


def self_distill(labeled: Dataset, f, student_spec: ClassifierSpec,
                 train_cfg: TrainConfig, dev: Dataset, test: Dataset,
                 ) -> tuple[object, RunReport]:
    """Same-architecture distillation on the original inputs only."""
    started = time.perf_counter()
    stripped = labeled.replace_examples(
        Example(payload=ex.payload, provenance=ex.provenance)
        for ex in labeled.examples)
    soft_labeled = annotate(f, stripped, "soft")
    student, _ = train(student_spec, soft_labeled, train_cfg, dev)

    report = RunReport(
        mode="self_distill", seed=train_cfg.seed, config={},
        baseline=_metrics_record(f, dev, test),
    )
    record = {"iteration": 1}
    record.update(_metrics_record(student, dev, test))
    record.update({"synthetic_count": 0, "rejected_count": 0,
                   "filtered_count": 0})
    report.iterations.append(record)
    report.wall_clock_seconds = time.perf_counter() - started
    return student, report


@dataclass(frozen=True)
class AugmentationPair:
    """Weak/strong feature-space augmentations (per-coordinate noise scales)."""

    weak_sigma: np.ndarray | float = 0.0
    strong_sigma: np.ndarray | float = 0.0
    dropout_p: float = 0.0

    def weak(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return X + self.weak_sigma * rng.standard_normal(X.shape)

    def strong(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        Xp = X + self.strong_sigma * rng.standard_normal(X.shape)
        if self.dropout_p > 0:
            Xp = Xp * (rng.random(X.shape) >= self.dropout_p)
        return Xp


def feature_space_augmentations(feature_std: np.ndarray) -> AugmentationPair:
    """Default pair: weak = 0.05 std noise; strong = 0.25 std noise + dropout."""
    feature_std = np.asarray(feature_std, dtype=np.float64)
    return AugmentationPair(weak_sigma=0.05 * feature_std,
                            strong_sigma=0.25 * feature_std, dropout_p=0.2)


@dataclass(frozen=True)
class FixmatchStepResult:
    loss: float
    labeled_loss: float
    unlabeled_loss: float
    num_retained: int


def fixmatch_step(f, labeled_batch: Sequence[Example],
                  unlabeled_batch: Sequence[Example], tau: float, mu: int,
                  aug: AugmentationPair, learning_rate: float,
                  rng: np.random.Generator) -> FixmatchStepResult:
    """One confidence-filtered consistency step; mutates f's parameters.

    Pseudo-labels are the argmax of predictions on weakly augmented rows;
    only rows whose max probability exceeds tau contribute, normalized by
    the full unlabeled batch size. Strong augmentation applies to the
    unlabeled rows only.
    """
    if len(unlabeled_batch) != mu * len(labeled_batch):
        raise ValueError(
            f"unlabeled batch must hold mu x labeled rows "
            f"({mu} x {len(labeled_batch)} != {len(unlabeled_batch)})")
    if f.feature_map.kind != "identity":
        raise ValueError("fixmatch_step is defined for continuous features")

    Xl = featurize_dataset(list(labeled_batch), f.feature_map)
    Ql = _targets_matrix(labeled_batch, f.num_classes)
    Xu = featurize_dataset(list(unlabeled_batch), f.feature_map)

    P_weak = f.predict_matrix(_augment(aug.weak(Xu, rng)))
    conf = P_weak.max(axis=1)
    pseudo = P_weak.argmax(axis=1)
    keep = conf > tau

    Xs = aug.strong(Xu, rng)
    B, M = len(labeled_batch), len(unlabeled_batch)

    P_l = f.predict_matrix(_augment(Xl))
    labeled_loss = float(
        -(Ql * np.log(np.maximum(P_l, PROB_CLAMP))).sum() / B)
    if keep.any():
        Qs = np.zeros((int(keep.sum()), f.num_classes))
        Qs[np.arange(int(keep.sum())), pseudo[keep]] = 1.0
        P_s = f.predict_matrix(_augment(Xs[keep]))
        unlabeled_loss = float(
            -(Qs * np.log(np.maximum(P_s, PROB_CLAMP))).sum() / M)
    else:
        unlabeled_loss = 0.0

    rows = np.vstack([_augment(Xl)] + ([_augment(Xs[keep])] if keep.any()
                                       else []))
    targets = np.vstack([Ql] + ([Qs] if keep.any() else []))
    weights = np.concatenate([
        np.full(B, 1.0 / B),
        np.full(int(keep.sum()), 1.0 / M) if keep.any() else np.zeros(0),
    ])
    grads = f.grad(rows, targets, row_weights=weights)
    if not isinstance(grads, tuple):
        grads = (grads,)
    for w, gr in zip(f.get_params(), grads):
        w -= learning_rate * gr
    return FixmatchStepResult(
        loss=labeled_loss + unlabeled_loss, labeled_loss=labeled_loss,
        unlabeled_loss=unlabeled_loss, num_retained=int(keep.sum()))


def fixmatch_train(labeled: Dataset, pool: Dataset, f0_spec: ClassifierSpec,
                   train_cfg: TrainConfig, tau: float, mu: int,
                   aug: AugmentationPair, dev: Dataset, test: Dataset,
                   steps_per_epoch: int | None = None,
                   ) -> tuple[object, RunReport]:
    """Epoch loop over fixmatch_step with best-dev parameter selection."""
    started = time.perf_counter()
    rng = np.random.default_rng(train_cfg.seed)
    f = f0_spec.build(rng)
    if steps_per_epoch is None:
        steps_per_epoch = max(1, len(labeled) // train_cfg.batch_size)

    dev_Xa = _augment(featurize_dataset(dev, f.feature_map))
    dev_y = dev.hard_labels()
    best = [w.copy() for w in f.get_params()]
    best_acc = -1.0
    stale = 0
    retained_total = 0
    steps = 0
    report = RunReport(mode="fixmatch", seed=train_cfg.seed,
                       config={"tau": tau, "mu": mu})
    for epoch in range(train_cfg.epochs):
        for _ in range(steps_per_epoch):
            li = rng.integers(0, len(labeled), size=train_cfg.batch_size)
            ui = rng.integers(0, len(pool), size=mu * train_cfg.batch_size)
            res = fixmatch_step(
                f, [labeled.examples[i] for i in li],
                [pool.examples[i] for i in ui], tau, mu, aug,
                train_cfg.learning_rate, rng)
            retained_total += res.num_retained
            steps += 1
        acc = float((f.predict_matrix(dev_Xa).argmax(axis=1) == dev_y).mean())
        if acc > best_acc:
            best_acc = acc
            best = [w.copy() for w in f.get_params()]
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.early_stop_patience:
                break
    f.set_params(best)
    record = {"iteration": 1}
    record.update(_metrics_record(f, dev, test))
    record.update({
        "synthetic_count": len(pool),
        "rejected_count": 0,
        "filtered_count": steps * mu * train_cfg.batch_size - retained_total,
    })
    report.iterations.append(record)
    report.wall_clock_seconds = time.perf_counter() - started
    return f, report
