"""Synthetic-data and annotation quality measurements.

N-gram overlap uses set semantics over per-segment token windows (windows
never cross the [SEP] boundary; the tokenizer is the corpus module's).
Agreement metrics use the standard confusion-matrix definitions, macro
averaged beyond two classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from genlearn.corpus import Dataset, tokenize


@dataclass(frozen=True)
class OverlapRow:
    order: int
    unique_in_a: int
    unique_in_b: int
    shared: int


@dataclass(frozen=True)
class NGramOverlapReport:
    rows: tuple[OverlapRow, ...]
    tokenizer: str = "lowercase-whitespace"
    window_rule: str = "segment-bounded"

    def row(self, order: int) -> OverlapRow:
        for r in self.rows:
            if r.order == order:
                return r
        raise KeyError(f"no order-{order} row in report")

    def to_csv(self) -> str:
        lines = ["order,unique_train,unique_synthetic,shared"]
        lines += [f"{r.order},{r.unique_in_a},{r.unique_in_b},{r.shared}"
                  for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "tokenizer": self.tokenizer,
            "window_rule": self.window_rule,
            "rows": [
                {"order": r.order, "unique_in_a": r.unique_in_a,
                 "unique_in_b": r.unique_in_b, "shared": r.shared}
                for r in self.rows
            ],
        }


def _ngram_set(ds: Dataset, order: int) -> set[tuple[str, ...]]:
    grams: set[tuple[str, ...]] = set()
    for ex in ds.examples:
        for seg in ex.payload:
            toks = tokenize(seg)
            for i in range(len(toks) - order + 1):
                grams.add(tuple(toks[i : i + order]))
    return grams


def ngram_overlap(a: Dataset, b: Dataset,
                  orders: Sequence[int] = (1, 2, 3, 4)) -> NGramOverlapReport:
    """Unique and shared n-gram counts between two text datasets."""
    for ds in (a, b):
        if ds.schema.modality != "text":
            raise ValueError("ngram_overlap requires text datasets")
    rows = []
    for order in orders:
        sa = _ngram_set(a, order)
        sb = _ngram_set(b, order)
        rows.append(OverlapRow(order=order, unique_in_a=len(sa),
                               unique_in_b=len(sb), shared=len(sa & sb)))
    return NGramOverlapReport(rows=tuple(rows))


@dataclass(frozen=True)
class AgreementReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    positive_class: int | None  # None means macro averaging
    macro: bool

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
            "positive_class": self.positive_class, "macro": self.macro,
        }


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def _prf_for_class(ref: np.ndarray, cand: np.ndarray, cls: int,
                   ) -> tuple[float, float]:
    tp = int(((cand == cls) & (ref == cls)).sum())
    fp = int(((cand == cls) & (ref != cls)).sum())
    fn = int(((cand != cls) & (ref == cls)).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


def agreement(reference: Sequence[int], candidate: Sequence[int],
              positive_class: int | None = 1) -> AgreementReport:
    """Accuracy/precision/recall/F1 of candidate labels against reference ones.

    With `positive_class` set the metrics are the binary ones for that class;
    with None they are macro averages over the classes present.
    """
    ref = np.asarray(reference, dtype=np.int64)
    cand = np.asarray(candidate, dtype=np.int64)
    if len(ref) != len(cand):
        raise ValueError(f"length mismatch: {len(ref)} vs {len(cand)}")
    if len(ref) == 0:
        raise ValueError("agreement needs at least one label pair")
    accuracy = float((ref == cand).mean())
    if positive_class is not None:
        p, r = _prf_for_class(ref, cand, positive_class)
        return AgreementReport(accuracy=accuracy, precision=p, recall=r,
                               f1=_f1(p, r), positive_class=positive_class,
                               macro=False)
    classes = sorted(set(ref.tolist()) | set(cand.tolist()))
    ps, rs, fs = [], [], []
    for cls in classes:
        p, r = _prf_for_class(ref, cand, cls)
        ps.append(p)
        rs.append(r)
        fs.append(_f1(p, r))
    return AgreementReport(accuracy=accuracy, precision=float(np.mean(ps)),
                           recall=float(np.mean(rs)), f1=float(np.mean(fs)),
                           positive_class=None, macro=True)


def synthesis_stats(report) -> dict:
    """Rejection/dedup/retention rates from a run report's generation counters.

    All rates are exact fractions of the raw draw count.
    """
    gen = report.generation if hasattr(report, "generation") else report
    required = ("draws", "rejected_segment_count", "duplicate_count", "accepted")
    missing = [k for k in required if k not in gen]
    if missing:
        raise ValueError(f"generation counters missing: {', '.join(missing)}")
    draws = gen["draws"]
    if draws == 0:
        raise ValueError("zero draws recorded")
    out = {
        "rejection_rate": gen["rejected_segment_count"] / draws,
        "dedup_rate": gen["duplicate_count"] / draws,
        "acceptance_rate": gen["accepted"] / draws,
    }
    iterations = getattr(report, "iterations", None)
    if iterations:
        dropped = iterations[-1].get("filtered_count", 0)
        out["post_filter_retention"] = (gen["accepted"] - dropped) / draws
    return out
