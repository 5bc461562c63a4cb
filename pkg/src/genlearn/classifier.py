"""Discriminative models: featurization, softmax classifiers, SGD training.

Feature maps are identity (continuous) or signed hashed bag-of-n-grams
(text). Both classifier families train by mini-batch SGD on mean cross
entropy plus an L2 penalty (biases excluded), with dev-accuracy early
stopping that returns the best-dev parameters. Everything is a deterministic
function of (inputs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from genlearn import _kernels
from genlearn.corpus import Dataset, Example, MixStream, tokenize

PROB_CLAMP = 1e-12

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 1 << 64


def _token_code(token: str) -> int:
    """Stable FNV-1a 64 hash of a token; the hash seed mixes in later."""
    h = _FNV_OFFSET
    for b in token.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) % _U64
    return h


@dataclass(frozen=True)
class FeatureMap:
    """Deterministic payload-to-vector map, serialized with every classifier."""

    kind: str  # "identity" | "hashed_ngrams"
    dim: int
    ngram_orders: tuple[int, ...] = (1, 2)
    hash_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "hashed_ngrams"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("feature dim must be >= 1")


def featurize(payload: tuple, fm: FeatureMap) -> np.ndarray:
    """Feature vector for one payload.

    Text payloads become L2-normalized signed hashed n-gram counts; windows
    never span segment boundaries and special tokens contribute nothing.
    """
    if fm.kind == "identity":
        x = np.asarray(payload, dtype=np.float64)
        if x.ndim != 1 or len(x) != fm.dim:
            raise ValueError(f"identity map expects {fm.dim} features")
        return x
    if not all(isinstance(seg, str) for seg in payload):
        raise ValueError("hashed_ngrams map expects text segments")
    out = np.zeros(fm.dim, dtype=np.float64)
    orders = np.asarray(fm.ngram_orders, dtype=np.int64)
    for seg in payload:
        codes = np.asarray([_token_code(t) for t in tokenize(seg)],
                           dtype=np.uint64)
        if len(codes):
            _kernels.hashed_ngram_counts(codes, orders, fm.dim,
                                         np.uint64(fm.hash_seed), out)
    norm = np.linalg.norm(out)
    return out / norm if norm > 0 else out


def featurize_dataset(ds: Dataset | Sequence[Example], fm: FeatureMap,
                      ) -> np.ndarray:
    examples = ds.examples if isinstance(ds, Dataset) else ds
    if not examples:
        return np.zeros((0, fm.dim))
    return np.asarray([featurize(ex.payload, fm) for ex in examples])


def cross_entropy(q: np.ndarray, p: np.ndarray) -> float:
    """-sum_c q_c log p_c with p clamped at 1e-12."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {p.shape}")
    return float(-(q * np.log(np.maximum(p, PROB_CLAMP))).sum())


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((len(X), 1))])


class LinearSoftmaxClassifier:
    """Softmax regression; weights (C, d+1) with the bias in the last column."""

    family = "linear"

    def __init__(self, weights: np.ndarray, feature_map: FeatureMap):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.feature_map = feature_map

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_parameters(self) -> int:
        return self.weights.size

    def clone(self) -> "LinearSoftmaxClassifier":
        return LinearSoftmaxClassifier(self.weights.copy(), self.feature_map)

    def logits_matrix(self, Xa: np.ndarray) -> np.ndarray:
        return Xa @ self.weights.T

    def predict_matrix(self, Xa: np.ndarray) -> np.ndarray:
        return _softmax(self.logits_matrix(Xa))

    def grad(self, Xa: np.ndarray, Q: np.ndarray, l2: float = 0.0,
             row_weights: np.ndarray | None = None) -> np.ndarray:
        P = self.predict_matrix(Xa)
        G = P - Q
        if row_weights is None:
            G = G / len(Xa)
        else:
            G = G * row_weights[:, None]
        dW = G.T @ Xa
        if l2:
            reg = self.weights.copy()
            reg[:, -1] = 0.0
            dW += l2 * reg
        return dW

    def get_params(self) -> list[np.ndarray]:
        return [self.weights]

    def set_params(self, params: Iterable[np.ndarray]) -> None:
        (w,) = params
        self.weights = w.copy()

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "weights": self.weights.tolist(),
            "feature_map": {
                "kind": self.feature_map.kind,
                "dim": self.feature_map.dim,
                "ngram_orders": list(self.feature_map.ngram_orders),
                "hash_seed": self.feature_map.hash_seed,
            },
        }


class MLPClassifier:
    """One tanh hidden layer; weight shapes (h, d+1) and (C, h+1)."""

    family = "mlp"

    def __init__(self, w1: np.ndarray, w2: np.ndarray, feature_map: FeatureMap):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.feature_map = feature_map

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[0]

    @property
    def num_parameters(self) -> int:
        return self.w1.size + self.w2.size

    def clone(self) -> "MLPClassifier":
        return MLPClassifier(self.w1.copy(), self.w2.copy(), self.feature_map)

    def logits_matrix(self, Xa: np.ndarray) -> np.ndarray:
        H = np.tanh(Xa @ self.w1.T)
        return _augment(H) @ self.w2.T

    def predict_matrix(self, Xa: np.ndarray) -> np.ndarray:
        return _softmax(self.logits_matrix(Xa))

    def grad(self, Xa: np.ndarray, Q: np.ndarray, l2: float = 0.0,
             row_weights: np.ndarray | None = None,
             ) -> tuple[np.ndarray, np.ndarray]:
        H = np.tanh(Xa @ self.w1.T)
        Ha = _augment(H)
        P = _softmax(Ha @ self.w2.T)
        G2 = P - Q
        if row_weights is None:
            G2 = G2 / len(Xa)
        else:
            G2 = G2 * row_weights[:, None]
        dw2 = G2.T @ Ha
        dH = G2 @ self.w2[:, :-1]
        dZ = dH * (1.0 - H * H)
        dw1 = dZ.T @ Xa
        if l2:
            r1 = self.w1.copy()
            r1[:, -1] = 0.0
            r2 = self.w2.copy()
            r2[:, -1] = 0.0
            dw1 += l2 * r1
            dw2 += l2 * r2
        return dw1, dw2

    def get_params(self) -> list[np.ndarray]:
        return [self.w1, self.w2]

    def set_params(self, params: Iterable[np.ndarray]) -> None:
        w1, w2 = params
        self.w1 = w1.copy()
        self.w2 = w2.copy()

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "w1": self.w1.tolist(),
            "w2": self.w2.tolist(),
            "feature_map": {
                "kind": self.feature_map.kind,
                "dim": self.feature_map.dim,
                "ngram_orders": list(self.feature_map.ngram_orders),
                "hash_seed": self.feature_map.hash_seed,
            },
        }


def classifier_from_dict(obj: dict):
    fm = FeatureMap(kind=obj["feature_map"]["kind"],
                    dim=obj["feature_map"]["dim"],
                    ngram_orders=tuple(obj["feature_map"]["ngram_orders"]),
                    hash_seed=obj["feature_map"]["hash_seed"])
    if obj["family"] == "linear":
        return LinearSoftmaxClassifier(np.asarray(obj["weights"]), fm)
    if obj["family"] == "mlp":
        return MLPClassifier(np.asarray(obj["w1"]), np.asarray(obj["w2"]), fm)
    raise ValueError(f"unknown classifier family {obj['family']!r}")


@dataclass(frozen=True)
class ClassifierSpec:
    """Initialization recipe; build(rng) yields seed-determined parameters."""

    family: str  # "linear" | "mlp"
    num_classes: int
    feature_map: FeatureMap
    hidden_width: int = 16
    init_scale: float = 0.01

    def __post_init__(self):
        if self.family not in ("linear", "mlp"):
            raise ValueError(f"unknown classifier family {self.family!r}")
        if self.family == "mlp" and self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")

    def build(self, rng: np.random.Generator):
        d = self.feature_map.dim
        if self.family == "linear":
            w = self.init_scale * rng.standard_normal((self.num_classes, d + 1))
            return LinearSoftmaxClassifier(w, self.feature_map)
        w1 = self.init_scale * rng.standard_normal((self.hidden_width, d + 1))
        w2 = self.init_scale * rng.standard_normal(
            (self.num_classes, self.hidden_width + 1))
        return MLPClassifier(w1, w2, self.feature_map)

    def num_parameters(self) -> int:
        d = self.feature_map.dim
        if self.family == "linear":
            return self.num_classes * (d + 1)
        return (self.hidden_width * (d + 1)
                + self.num_classes * (self.hidden_width + 1))


def predict_soft(f, x: np.ndarray) -> np.ndarray:
    """Softmax prediction for one feature vector (max-subtraction stabilized)."""
    Xa = _augment(np.asarray(x, dtype=np.float64)[None, :])
    return f.predict_matrix(Xa)[0]


def predict_payloads(f, payloads: Sequence[tuple]) -> np.ndarray:
    """(M, C) soft predictions for raw payloads via the model's feature map."""
    if not payloads:
        return np.zeros((0, f.num_classes))
    X = np.asarray([featurize(p, f.feature_map) for p in payloads])
    return f.predict_matrix(_augment(X))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0
    early_stop_patience: int = 10  # dev evaluations without improvement

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ValueError("epochs, batch_size, early_stop_patience must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


def _targets_matrix(examples: Sequence[Example], num_classes: int) -> np.ndarray:
    rows = []
    for i, ex in enumerate(examples):
        if not ex.labeled:
            raise ValueError(f"unlabeled example at position {i} in training data")
        rows.append(ex.target_distribution(num_classes))
    return np.asarray(rows)


def _batch_loss(f, Xa: np.ndarray, Q: np.ndarray, l2: float) -> float:
    logits = f.logits_matrix(Xa)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ce = float(-(Q * logp).sum() / len(Xa))
    if l2:
        reg = sum(float((w[:, :-1] ** 2).sum()) for w in f.get_params())
        ce += 0.5 * l2 * reg
    return ce


def train(spec, data, cfg: TrainConfig, dev: Dataset):
    """Mini-batch SGD returning (classifier, per-epoch trace).

    `spec` is a ClassifierSpec or an existing classifier to clone as the
    starting point. `data` is a fully labeled Dataset or a MixStream (single
    consumer). The returned parameters come from the epoch with the best dev
    accuracy; training stops early after `early_stop_patience` dev
    evaluations without improvement.
    """
    rng = np.random.default_rng(cfg.seed)
    f = spec.build(rng) if isinstance(spec, ClassifierSpec) else spec.clone()
    C = f.num_classes
    fm = f.feature_map

    if isinstance(data, MixStream):
        sources = (
            (_augment(featurize_dataset(data.labeled, fm)),
             _targets_matrix(data.labeled.examples, C)),
            (_augment(featurize_dataset(data.synthetic, fm)),
             _targets_matrix(data.synthetic.examples, C)),
        )

        def epochs():
            while True:
                yield [
                    (np.vstack([sources[s][0][i] for s, i
                                in zip(b.source, b.index)]),
                     np.vstack([sources[s][1][i] for s, i
                                in zip(b.source, b.index)]))
                    for b in data.epoch()
                ]
    elif isinstance(data, Dataset):
        Xa = _augment(featurize_dataset(data, fm))
        Q = _targets_matrix(data.examples, C)

        def epochs():
            while True:
                order = rng.permutation(len(Xa))
                yield [
                    (Xa[order[i : i + cfg.batch_size]],
                     Q[order[i : i + cfg.batch_size]])
                    for i in range(0, len(order), cfg.batch_size)
                ]
    else:
        raise TypeError(f"train expects a Dataset or MixStream, got {type(data)}")

    dev_Xa = _augment(featurize_dataset(dev, fm))
    dev_y = dev.hard_labels()

    best_params = [w.copy() for w in f.get_params()]
    best_acc = -1.0
    stale = 0
    trace: list[dict] = []
    epoch_iter = epochs()
    for epoch in range(cfg.epochs):
        batch_losses = []
        for b, (bXa, bQ) in enumerate(next(epoch_iter)):
            loss = _batch_loss(f, bXa, bQ, cfg.l2)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {b}")
            batch_losses.append(loss)
            grads = f.grad(bXa, bQ, l2=cfg.l2)
            if isinstance(grads, tuple):
                for w, g in zip(f.get_params(), grads):
                    w -= cfg.learning_rate * g
            else:
                f.weights -= cfg.learning_rate * grads
        dev_acc = float(
            (f.predict_matrix(dev_Xa).argmax(axis=1) == dev_y).mean())
        trace.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "dev_accuracy": dev_acc,
        })
        if dev_acc > best_acc:
            best_acc = dev_acc
            best_params = [w.copy() for w in f.get_params()]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    f.set_params(best_params)
    return f, trace


def annotate(f, unlabeled: Dataset, mode: str = "soft") -> Dataset:
    """Attach f's predictions to an unlabeled dataset; payloads untouched.

    Hard mode takes the argmax, ties resolving to the lowest class index.
    """
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown annotation mode {mode!r}")
    if not unlabeled.unlabeled:
        raise ValueError(f"{unlabeled.name}: already labeled")
    P = predict_payloads(f, [ex.payload for ex in unlabeled])
    out = []
    for ex, p in zip(unlabeled.examples, P):
        if mode == "soft":
            out.append(Example(payload=ex.payload,
                               soft_label=tuple(float(v) for v in p),
                               provenance=ex.provenance))
        else:
            out.append(Example(payload=ex.payload, label=int(np.argmax(p)),
                               provenance=ex.provenance))
    return unlabeled.replace_examples(out, name=f"{unlabeled.name}/annotated")


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    mean_cross_entropy: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy,
                "mean_cross_entropy": self.mean_cross_entropy}


def evaluate(f, d: Dataset) -> EvalMetrics:
    if len(d) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    y = d.hard_labels()
    P = predict_payloads(f, [ex.payload for ex in d])
    acc = float((P.argmax(axis=1) == y).mean())
    ce = float(-np.log(np.maximum(P[np.arange(len(y)), y], PROB_CLAMP)).mean())
    return EvalMetrics(accuracy=acc, mean_cross_entropy=ce)


def gradient_check(f, batch: Sequence[Example], eps: float = 1e-5,
                   max_coords: int = 100, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checked on a random subset of at most `max_coords` coordinates; near-zero
    gradient pairs are compared against an absolute floor of 1e-8.
    """
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    Xa = _augment(featurize_dataset(list(batch), f.feature_map))
    Q = _targets_matrix(batch, f.num_classes)
    grads = f.grad(Xa, Q)
    if not isinstance(grads, tuple):
        grads = (grads,)
    flat_grad = np.concatenate([g.ravel() for g in grads])
    params = f.get_params()
    sizes = [w.size for w in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    coords = rng.permutation(total)[: min(max_coords, total)]

    def loss_with(vec: np.ndarray) -> float:
        saved = [w.copy() for w in params]
        offset = 0
        for w, size in zip(params, sizes):
            w[...] = vec[offset : offset + size].reshape(w.shape)
            offset += size
        val = _batch_loss(f, Xa, Q, l2=0.0)
        for w, s in zip(params, saved):
            w[...] = s
        return val

    theta = np.concatenate([w.ravel() for w in params])
    worst = 0.0
    for c in coords:
        plus = theta.copy()
        plus[c] += eps
        minus = theta.copy()
        minus[c] -= eps
        num = (loss_with(plus) - loss_with(minus)) / (2.0 * eps)
        ana = flat_grad[c]
        denom = max(abs(ana), abs(num), 1e-8)
        worst = max(worst, abs(ana - num) / denom)
    return worst
