"""Diagonal-covariance Gaussian mixtures: EM fitting and ancestral sampling.

The unconditional mixture models g(x) for continuous tasks; the
class-conditional variant keeps one mixture per class plus an empirical
class prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from genlearn.corpus import Dataset, Example, TaskSchema

VAR_FLOOR = 1e-6
_DEGENERATE_RESP = 1e-12


def _log_gaussian_diag(X: np.ndarray, means: np.ndarray, variances: np.ndarray,
                       ) -> np.ndarray:
    """(N, K) log N(x_i; mu_k, diag(var_k))."""
    d = X.shape[1]
    diff = X[:, None, :] - means[None, :, :]  # N x K x d
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    logdet = np.sum(np.log(variances), axis=1)
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet[None, :] + quad)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def _kmeanspp_centers(X: np.ndarray, K: int, rng: np.random.Generator,
                      ) -> np.ndarray:
    """k-means++ seeding: spread initial means by squared-distance sampling."""
    n = len(X)
    centers = [X[rng.integers(n)]]
    for _ in range(1, K):
        d2 = np.min(
            [np.sum((X - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
            continue
        centers.append(X[rng.choice(n, p=d2 / total)])
    return np.asarray(centers)


@dataclass
class GaussianMixture:
    """Fitted mixture; immutable by convention after fit_gmm returns it."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d), floored at VAR_FLOOR
    schema: TaskSchema | None = None
    ll_trace: list = field(default_factory=list)

    modality = "continuous"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if (self.variances < VAR_FLOOR - 1e-15).any():
            raise ValueError(f"variances must be >= {VAR_FLOOR}")

    @property
    def num_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def responsibilities(self, X: np.ndarray) -> np.ndarray:
        logp = _log_gaussian_diag(X, self.means, self.variances)
        logp = logp + np.log(self.weights)[None, :]
        return np.exp(logp - _logsumexp(logp, axis=1)[:, None])

    def log_density_matrix(self, X: np.ndarray) -> np.ndarray:
        logp = _log_gaussian_diag(X, self.means, self.variances)
        return _logsumexp(logp + np.log(self.weights)[None, :], axis=1)

    def log_density(self, payload: tuple) -> float:
        X = np.asarray([payload], dtype=np.float64)
        return float(self.log_density_matrix(X)[0])

    def sample_matrix(self, num: int, rng: np.random.Generator) -> np.ndarray:
        comps = rng.choice(self.num_components, size=num, p=self.weights)
        eps = rng.standard_normal((num, self.dim))
        return self.means[comps] + eps * np.sqrt(self.variances[comps])

    def sample_payloads(self, num: int, rng: np.random.Generator,
                        sampler_cfg=None) -> tuple[list[tuple], list[bool]]:
        X = self.sample_matrix(num, rng)
        return [tuple(float(v) for v in row) for row in X], [False] * num


def fit_gmm(features: Dataset, K: int, max_iters: int = 200, tol: float = 1e-7,
            seed: int = 0) -> GaussianMixture:
    """EM with k-means++ initialization.

    The mean log-likelihood trace is recorded on the result and checked to be
    non-decreasing; a component that loses all responsibility mass is
    re-seeded once, after which degeneracy is an error.
    """
    if features.schema.modality != "continuous":
        raise ValueError("fit_gmm requires a continuous dataset")
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(features) < K:
        raise ValueError(f"need at least K={K} examples, got {len(features)}")
    X = features.features_matrix()
    n, d = X.shape
    rng = np.random.default_rng(seed)

    means = _kmeanspp_centers(X, K, rng)
    data_var = np.maximum(X.var(axis=0), VAR_FLOOR)
    variances = np.tile(data_var, (K, 1))
    weights = np.full(K, 1.0 / K)

    trace: list[float] = []
    reseeded = set()
    it = 0
    while it < max_iters:
        logp = _log_gaussian_diag(X, means, variances) + np.log(weights)[None, :]
        lse = _logsumexp(logp, axis=1)
        ll = float(lse.mean())
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0)

        degenerate = np.flatnonzero(nk < _DEGENERATE_RESP)
        if len(degenerate):
            for k in degenerate:
                if k in reseeded:
                    raise RuntimeError(
                        f"component {k} degenerate after re-seeding")
                reseeded.add(int(k))
                means[k] = X[rng.integers(n)]
                variances[k] = data_var
            weights = np.full(K, 1.0 / K)
            it += 1
            continue

        if trace and ll < trace[-1] - 1e-8 * (1.0 + abs(trace[-1])):
            raise RuntimeError(
                f"log-likelihood decreased at iteration {it}: "
                f"{trace[-1]} -> {ll}")
        converged = bool(trace) and ll - trace[-1] < tol
        trace.append(ll)
        if converged:
            break

        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        ex2 = (resp.T @ (X * X)) / nk[:, None]
        variances = np.maximum(ex2 - means * means, VAR_FLOOR)
        it += 1

    return GaussianMixture(weights=weights, means=means, variances=variances,
                           schema=features.schema, ll_trace=trace)


@dataclass
class ClassConditionalGaussianMixture:
    """One mixture per class plus the empirical class prior P(y)."""

    per_class: list[GaussianMixture]
    class_prior: np.ndarray
    schema: TaskSchema | None = None

    modality = "continuous"

    def __post_init__(self):
        self.class_prior = np.asarray(self.class_prior, dtype=np.float64)
        if abs(self.class_prior.sum() - 1.0) > 1e-9:
            raise ValueError("class prior must sum to 1")
        if len(self.per_class) != len(self.class_prior):
            raise ValueError("one mixture per class required")

    @property
    def num_classes(self) -> int:
        return len(self.per_class)

    def class_log_density(self, payload: tuple) -> np.ndarray:
        return np.asarray([g.log_density(payload) for g in self.per_class])

    def log_density(self, payload: tuple) -> float:
        logs = self.class_log_density(payload) + np.log(self.class_prior)
        return float(np.logaddexp.reduce(logs))

    def sample_payloads_for_class(self, num: int, class_index: int,
                                  rng: np.random.Generator) -> list[tuple]:
        if not 0 <= class_index < self.num_classes:
            raise ValueError(f"class {class_index} out of range")
        payloads, _ = self.per_class[class_index].sample_payloads(num, rng)
        return payloads

    def sample_labeled_payloads(self, num: int, rng: np.random.Generator,
                                ) -> tuple[list[tuple], np.ndarray]:
        """Draw y ~ P(y), then x ~ g(x|y); returns payloads with their labels."""
        ys = rng.choice(self.num_classes, size=num, p=self.class_prior)
        payloads: list[tuple] = [()] * num
        for c in range(self.num_classes):
            idx = np.flatnonzero(ys == c)
            if len(idx) == 0:
                continue
            drawn = self.sample_payloads_for_class(len(idx), c, rng)
            for i, p in zip(idx, drawn):
                payloads[i] = p
        return payloads, ys

    def sample_payloads(self, num: int, rng: np.random.Generator,
                        sampler_cfg=None) -> tuple[list[tuple], list[bool]]:
        payloads, _ys = self.sample_labeled_payloads(num, rng)
        return payloads, [False] * num


def fit_class_conditional_gmm(corpus: Dataset, K: int, max_iters: int = 200,
                              tol: float = 1e-7, seed: int = 0,
                              ) -> ClassConditionalGaussianMixture:
    """Per-class fit_gmm plus empirical P(y); every class must be populated."""
    labels = corpus.hard_labels()
    C = corpus.schema.num_classes
    counts = np.bincount(labels, minlength=C)
    if (counts == 0).any():
        raise ValueError(f"class {int(np.argmin(counts))} has no examples")
    per_class = []
    for c in range(C):
        sub = corpus.replace_examples(
            [ex for ex in corpus if ex.label == c], name=f"{corpus.name}/y={c}")
        per_class.append(fit_gmm(sub, K, max_iters=max_iters, tol=tol,
                                 seed=seed + c))
    return ClassConditionalGaussianMixture(
        per_class=per_class, class_prior=counts / counts.sum(),
        schema=corpus.schema)


def sample_gmm(g, num: int, seed: int, class_index: int | None = None,
               schema: TaskSchema | None = None) -> Dataset:
    """Ancestral sampling into an unlabeled synthetic Dataset."""
    if num < 1:
        raise ValueError("num must be >= 1")
    schema = schema if schema is not None else g.schema
    if schema is None:
        raise ValueError("no schema available for the sampled dataset")
    rng = np.random.default_rng(seed)
    if class_index is not None:
        if not isinstance(g, ClassConditionalGaussianMixture):
            raise ValueError("class index given but generator is unconditional")
        payloads = g.sample_payloads_for_class(num, class_index, rng)
    else:
        payloads, _ = g.sample_payloads(num, rng)
    examples = [Example(payload=p, provenance="synthetic") for p in payloads]
    return Dataset(schema=schema, examples=tuple(examples), name="gmm-samples")
