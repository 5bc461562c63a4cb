"""Categorical generators over a small explicit support.

Useful wherever a fully enumerable domain is needed to cross-check the
Monte-Carlo risk estimators against exact expectations.
"""

from __future__ import annotations

import numpy as np

from genlearn.corpus import TaskSchema


class TabularGenerator:
    """Finite-support generator; probs is (M,) or, class-conditionally, (C, M)."""

    modality = "continuous"

    def __init__(self, support: list[tuple], probs: np.ndarray,
                 class_prior: np.ndarray | None = None,
                 schema: TaskSchema | None = None):
        self.support = [tuple(float(v) for v in p) for p in support]
        self.probs = np.asarray(probs, dtype=np.float64)
        if self.probs.ndim not in (1, 2):
            raise ValueError("probs must be a vector or a (classes, points) matrix")
        if self.probs.shape[-1] != len(self.support):
            raise ValueError("one probability per support point required")
        if (self.probs < 0).any():
            raise ValueError("probabilities must be nonnegative")
        sums = self.probs.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError("each probability row must sum to 1")
        if self.is_conditional:
            if class_prior is None:
                raise ValueError("conditional generator needs a class prior")
            self.class_prior = np.asarray(class_prior, dtype=np.float64)
            if abs(self.class_prior.sum() - 1.0) > 1e-9:
                raise ValueError("class prior must sum to 1")
        else:
            self.class_prior = None
        self.schema = schema
        self._index = {p: i for i, p in enumerate(self.support)}

    @property
    def is_conditional(self) -> bool:
        return self.probs.ndim == 2

    @property
    def num_classes(self) -> int:
        if not self.is_conditional:
            raise ValueError("generator is unconditional")
        return self.probs.shape[0]

    def _locate(self, payload: tuple) -> int:
        key = tuple(float(v) for v in payload)
        if key not in self._index:
            raise ValueError(f"payload {key} outside the generator support")
        return self._index[key]

    def log_density(self, payload: tuple) -> float:
        i = self._locate(payload)
        if self.is_conditional:
            p = float(self.class_prior @ self.probs[:, i])
        else:
            p = float(self.probs[i])
        return float(np.log(p)) if p > 0 else -np.inf

    def class_log_density(self, payload: tuple) -> np.ndarray:
        if not self.is_conditional:
            raise ValueError("generator is unconditional")
        i = self._locate(payload)
        with np.errstate(divide="ignore"):
            return np.log(self.probs[:, i])

    def marginal_probs(self) -> np.ndarray:
        """P(x) over the support (prior-weighted for conditional generators)."""
        if self.is_conditional:
            return self.class_prior @ self.probs
        return self.probs.copy()

    def sample_payloads(self, num: int, rng: np.random.Generator,
                        sampler_cfg=None) -> tuple[list[tuple], list[bool]]:
        idx = rng.choice(len(self.support), size=num, p=self.marginal_probs())
        return [self.support[i] for i in idx], [False] * num

    def sample_payloads_for_class(self, num: int, class_index: int,
                                  rng: np.random.Generator) -> list[tuple]:
        if not self.is_conditional:
            raise ValueError("generator is unconditional")
        idx = rng.choice(len(self.support), size=num, p=self.probs[class_index])
        return [self.support[i] for i in idx]

    def sample_labeled_payloads(self, num: int, rng: np.random.Generator,
                                ) -> tuple[list[tuple], np.ndarray]:
        ys = rng.choice(self.num_classes, size=num, p=self.class_prior)
        payloads: list[tuple] = [()] * num
        for c in range(self.num_classes):
            rows = np.flatnonzero(ys == c)
            if len(rows) == 0:
                continue
            drawn = self.sample_payloads_for_class(len(rows), c, rng)
            for r, p in zip(rows, drawn):
                payloads[r] = p
        return payloads, ys
