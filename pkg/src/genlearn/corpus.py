"""Dataset model: schemas, JSONL ingestion, splitting, dedup, and mixing.

Text examples are tuples of raw segment strings; tokenization is lowercase
whitespace splitting against a vocabulary with reserved [BOS]/[SEP]/[EOS]
tokens. Continuous examples are fixed-length float vectors. Datasets are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

BOS = "[BOS]"
SEP = "[SEP]"
EOS = "[EOS]"

SOFT_LABEL_ATOL = 1e-9


class InputError(ValueError):
    """Malformed user input: files, records, or configuration values."""


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenization. The one tokenizer used everywhere."""
    return text.lower().split()


class Vocabulary:
    """Ordered token set with reserved specials at fixed ids 0, 1, 2.

    Class pseudo-tokens (for class-conditional generators) are appended after
    the regular tokens via :meth:`with_class_tokens`.
    """

    def __init__(self, tokens: Sequence[str], class_tokens: Sequence[str] = ()):
        self._tokens: list[str] = [BOS, SEP, EOS]
        seen = set(self._tokens)
        for tok in tokens:
            if tok in seen:
                continue
            seen.add(tok)
            self._tokens.append(tok)
        self._num_class_tokens = len(class_tokens)
        for tok in class_tokens:
            if tok in seen:
                raise ValueError(f"class token {tok!r} collides with vocabulary")
            seen.add(tok)
            self._tokens.append(tok)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def bos_id(self) -> int:
        return 0

    @property
    def sep_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self._tokens)

    @property
    def num_class_tokens(self) -> int:
        return self._num_class_tokens

    def class_token_id(self, class_index: int) -> int:
        if not 0 <= class_index < self._num_class_tokens:
            raise ValueError(f"no class token for class {class_index}")
        return len(self._tokens) - self._num_class_tokens + class_index

    def with_class_tokens(self, num_classes: int) -> "Vocabulary":
        regular = self._tokens[3 : len(self._tokens) - self._num_class_tokens]
        names = [f"[CLASS_{c}]" for c in range(num_classes)]
        return Vocabulary(regular, class_tokens=names)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise InputError(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id: int) -> str:
        return self._tokens[token_id]

    def encode_segments(self, segments: Sequence[str]) -> list[int]:
        """Token ids for SEP-joined segments (no BOS/EOS framing)."""
        ids: list[int] = []
        for i, seg in enumerate(segments):
            if i > 0:
                ids.append(self.sep_id)
            ids.extend(self.id_of(t) for t in tokenize(seg))
        return ids

    def decode_to_segments(self, ids: Sequence[int]) -> tuple[str, ...]:
        """Inverse of encode_segments: split on SEP, join tokens with spaces."""
        segments: list[list[str]] = [[]]
        for i in ids:
            if i == self.sep_id:
                segments.append([])
            else:
                segments[-1].append(self._tokens[i])
        return tuple(" ".join(seg) for seg in segments)


def build_vocab(datasets: Iterable["Dataset"]) -> Vocabulary:
    """Vocabulary over all tokens of the given text datasets, in first-seen order."""
    tokens: list[str] = []
    seen: set[str] = set()
    for ds in datasets:
        for ex in ds.examples:
            for seg in ex.payload:
                for tok in tokenize(seg):
                    if tok not in seen:
                        seen.add(tok)
                        tokens.append(tok)
    return Vocabulary(tokens)


@dataclass(frozen=True)
class TaskSchema:
    """Shape contract for one classification task."""

    modality: str  # "text" | "continuous"
    num_classes: int
    segment_count: int = 1  # text: segments per example
    feature_dim: int = 1  # continuous: vector length
    vocab: Vocabulary | None = None  # text only

    def __post_init__(self):
        if self.modality not in ("text", "continuous"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.modality == "text" and self.segment_count < 1:
            raise ValueError("segment_count must be >= 1")
        if self.modality == "continuous" and self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    def with_vocab(self, vocab: Vocabulary) -> "TaskSchema":
        return replace(self, vocab=vocab)


@dataclass(frozen=True)
class Example:
    """One instance: text segments or a feature vector, optionally labeled.

    At most one of `label` (hard class index) and `soft_label` (length-C
    probability vector) is set.
    """

    payload: tuple
    label: int | None = None
    soft_label: tuple[float, ...] | None = None
    provenance: str = "original"

    def __post_init__(self):
        if self.label is not None and self.soft_label is not None:
            raise ValueError("example cannot carry both a hard and a soft label")
        if self.provenance not in ("original", "synthetic"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def labeled(self) -> bool:
        return self.label is not None or self.soft_label is not None

    def target_distribution(self, num_classes: int) -> np.ndarray:
        """Training target: one-hot for hard labels, the vector for soft ones."""
        if self.soft_label is not None:
            return np.asarray(self.soft_label, dtype=np.float64)
        if self.label is None:
            raise ValueError("example is unlabeled")
        q = np.zeros(num_classes, dtype=np.float64)
        q[self.label] = 1.0
        return q


def validate_soft_label(probs: Sequence[float], num_classes: int) -> tuple[float, ...]:
    vec = tuple(float(p) for p in probs)
    if len(vec) != num_classes:
        raise ValueError(f"soft label has {len(vec)} entries, expected {num_classes}")
    if any(p < 0.0 or p > 1.0 for p in vec):
        raise ValueError("soft label entries must lie in [0, 1]")
    if abs(sum(vec) - 1.0) > SOFT_LABEL_ATOL:
        raise ValueError(f"soft label sums to {sum(vec)!r}, not 1")
    return vec


def _validate_example(ex: Example, schema: TaskSchema, where: str = "",
                      enforce_alpha: bool = False) -> None:
    # The segment-count constraint is checked at parse time and by
    # enforce_segment_count; raw generated pools may legitimately violate it.
    if schema.modality == "text":
        if enforce_alpha and len(ex.payload) != schema.segment_count:
            raise InputError(
                f"{where}expected {schema.segment_count} segments, got {len(ex.payload)}"
            )
        if len(ex.payload) < 1:
            raise InputError(f"{where}payload needs at least one segment")
        for seg in ex.payload:
            if not isinstance(seg, str) or not tokenize(seg):
                raise InputError(f"{where}empty or non-string segment")
            for tok in tokenize(seg):
                if tok in (BOS.lower(), SEP.lower(), EOS.lower()):
                    raise InputError(f"{where}reserved token {tok!r} inside segment")
    else:
        if len(ex.payload) != schema.feature_dim:
            raise InputError(
                f"{where}expected {schema.feature_dim} features, got {len(ex.payload)}"
            )
        if not all(isinstance(v, float) for v in ex.payload):
            raise InputError(f"{where}features must be real numbers")
    if ex.label is not None and not 0 <= ex.label < schema.num_classes:
        raise InputError(f"{where}label {ex.label} out of range [0, {schema.num_classes})")
    if ex.soft_label is not None:
        try:
            validate_soft_label(ex.soft_label, schema.num_classes)
        except ValueError as e:
            raise InputError(f"{where}{e}") from None


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of schema-conforming examples."""

    schema: TaskSchema
    examples: tuple[Example, ...]
    name: str = "dataset"
    mixed_provenance: bool = False

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        for i, ex in enumerate(self.examples):
            _validate_example(ex, self.schema, where=f"{self.name}[{i}]: ")
        if not self.mixed_provenance:
            kinds = {ex.provenance for ex in self.examples}
            if len(kinds) > 1:
                raise ValueError(
                    f"{self.name}: mixed provenance without mixed_provenance=True"
                )

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    @property
    def fully_labeled(self) -> bool:
        return all(ex.labeled for ex in self.examples)

    @property
    def unlabeled(self) -> bool:
        return not any(ex.labeled for ex in self.examples)

    def hard_labels(self) -> np.ndarray:
        if not all(ex.label is not None for ex in self.examples):
            raise ValueError(f"{self.name}: not fully hard-labeled")
        return np.asarray([ex.label for ex in self.examples], dtype=np.int64)

    def features_matrix(self) -> np.ndarray:
        if self.schema.modality != "continuous":
            raise ValueError("features_matrix is for continuous datasets")
        return np.asarray([ex.payload for ex in self.examples], dtype=np.float64)

    def replace_examples(self, examples: Iterable[Example], name: str | None = None,
                         mixed_provenance: bool | None = None) -> "Dataset":
        return Dataset(
            schema=self.schema,
            examples=tuple(examples),
            name=self.name if name is None else name,
            mixed_provenance=self.mixed_provenance if mixed_provenance is None
            else mixed_provenance,
        )


def _parse_record(obj: dict, schema: TaskSchema, where: str) -> Example:
    if not isinstance(obj, dict):
        raise InputError(f"{where}record is not a JSON object")
    has_seg = "segments" in obj
    has_feat = "features" in obj
    if has_seg == has_feat:
        raise InputError(f"{where}record needs exactly one of 'segments'/'features'")
    if schema.modality == "text":
        if not has_seg:
            raise InputError(f"{where}text schema but record has 'features'")
        payload = tuple(obj["segments"])
    else:
        if not has_feat:
            raise InputError(f"{where}continuous schema but record has 'segments'")
        try:
            payload = tuple(float(v) for v in obj["features"])
        except (TypeError, ValueError):
            raise InputError(f"{where}non-numeric feature value") from None
    label = obj.get("label")
    soft = obj.get("soft_label")
    if label is not None and not isinstance(label, int):
        raise InputError(f"{where}'label' must be an integer")
    ex = Example(
        payload=payload,
        label=label,
        soft_label=None if soft is None else tuple(float(p) for p in soft),
        provenance=obj.get("provenance", "original"),
    )
    _validate_example(ex, schema, where, enforce_alpha=True)
    return ex


def load_dataset(path, schema: TaskSchema, name: str | None = None) -> Dataset:
    """Parse a JSONL dataset file against `schema`.

    Every record must carry `segments` (list of strings) or `features`
    (list of reals) and may carry `label` (int), `soft_label` (list of reals)
    and `provenance`. Malformed records raise :class:`InputError` with the
    offending line number.
    """
    path = str(path)
    examples: list[Example] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot open dataset file {path}: {e}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}: "
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"{where}invalid JSON ({e.msg})") from None
            examples.append(_parse_record(obj, schema, where))
    return Dataset(
        schema=schema,
        examples=tuple(examples),
        name=name if name is not None else path,
        mixed_provenance=True,
    )


def save_dataset(ds: Dataset, path) -> None:
    """Inverse of load_dataset; round-trips exactly."""
    with open(str(path), "w", encoding="utf-8") as fh:
        for ex in ds.examples:
            obj: dict = {}
            if ds.schema.modality == "text":
                obj["segments"] = list(ex.payload)
            else:
                obj["features"] = list(ex.payload)
            if ex.label is not None:
                obj["label"] = ex.label
            if ex.soft_label is not None:
                obj["soft_label"] = list(ex.soft_label)
            obj["provenance"] = ex.provenance
            fh.write(json.dumps(obj) + "\n")


def split(d: Dataset, fractions: tuple[float, float, float], seed: int,
          ) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded disjoint (train, dev, test) partition.

    Dev/test sizes are floor(fraction * n); the remainder goes to train.
    """
    if any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions sum to {sum(fractions)!r}, not 1")
    n = len(d)
    if n < 3:
        raise ValueError(f"dataset too small to split ({n} < 3 examples)")
    n_dev = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    order = np.random.default_rng(seed).permutation(n)
    dev_idx = order[:n_dev]
    test_idx = order[n_dev : n_dev + n_test]
    train_idx = order[n_dev + n_test :]
    parts = []
    for tag, idx in (("train", train_idx), ("dev", dev_idx), ("test", test_idx)):
        parts.append(d.replace_examples(
            (d.examples[i] for i in sorted(idx)), name=f"{d.name}/{tag}"))
    return parts[0], parts[1], parts[2]


def dedup(d: Dataset) -> Dataset:
    """Drop repeated payloads, keeping the first occurrence (labels ignored)."""
    seen: set = set()
    kept: list[Example] = []
    for ex in d.examples:
        if ex.payload in seen:
            continue
        seen.add(ex.payload)
        kept.append(ex)
    return d.replace_examples(kept, name=f"{d.name}/dedup")


def enforce_segment_count(d: Dataset, alpha: int) -> tuple[Dataset, int]:
    """Keep examples with exactly `alpha` segments; count the rest as rejected."""
    if d.schema.modality != "text":
        raise ValueError("enforce_segment_count applies to text datasets only")
    kept = [ex for ex in d.examples if len(ex.payload) == alpha]
    return d.replace_examples(kept), len(d) - len(kept)


@dataclass(frozen=True)
class MixBatch:
    """One mixed mini-batch as (source, row) index pairs.

    source 0 rows index the labeled dataset, source 1 rows the annotated
    synthetic dataset.
    """

    source: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.source)


class MixStream:
    """Epoch-bounded stream mixing labeled and pseudo-labeled data.

    Each epoch contains the synthetic dataset once plus labeled examples drawn
    with replacement so the labeled fraction is `lam`; with lam == 1 epochs are
    plain shuffled passes over the labeled data. Single consumer; deterministic
    per seed.
    """

    def __init__(self, labeled: Dataset, synthetic: Dataset, lam: float,
                 batch_size: int, seed: int):
        if not 0.0 < lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {lam}")
        if len(labeled) == 0 or len(synthetic) == 0:
            raise ValueError("mix requires two non-empty datasets")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        a, b = labeled.schema, synthetic.schema
        if (a.modality, a.num_classes) != (b.modality, b.num_classes):
            raise ValueError("mix requires schema-compatible datasets")
        if not synthetic.fully_labeled:
            raise ValueError("synthetic dataset must be fully annotated before mixing")
        self.labeled = labeled
        self.synthetic = synthetic
        self.lam = lam
        self.batch_size = batch_size
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        if lam == 1.0:
            self._labeled_per_epoch = len(labeled)
        else:
            self._labeled_per_epoch = max(1, round(lam / (1.0 - lam) * len(synthetic)))

    def epoch(self) -> list[MixBatch]:
        """Generate the next epoch's batches."""
        rng = self._rng
        n_lab = self._labeled_per_epoch
        lab_idx = rng.integers(0, len(self.labeled), size=n_lab)
        if self.lam == 1.0:
            source = np.zeros(n_lab, dtype=np.int8)
            index = lab_idx
        else:
            syn_idx = rng.permutation(len(self.synthetic))
            source = np.concatenate([
                np.zeros(n_lab, dtype=np.int8),
                np.ones(len(syn_idx), dtype=np.int8),
            ])
            index = np.concatenate([lab_idx, syn_idx])
        order = rng.permutation(len(source))
        source, index = source[order], index[order]
        return [
            MixBatch(source=source[i : i + self.batch_size],
                     index=index[i : i + self.batch_size])
            for i in range(0, len(source), self.batch_size)
        ]

    def iter_batches(self) -> Iterator[MixBatch]:
        """Infinite batch stream across epoch boundaries."""
        while True:
            yield from self.epoch()

    def examples_of(self, batch: MixBatch) -> list[Example]:
        pools = (self.labeled.examples, self.synthetic.examples)
        return [pools[s][i] for s, i in zip(batch.source, batch.index)]


def mix(labeled: Dataset, synthetic: Dataset, lam: float, batch_size: int,
        seed: int) -> MixStream:
    """Batch stream whose labeled-example fraction is `lam` (by oversampling)."""
    return MixStream(labeled, synthetic, lam, batch_size, seed)
