"""Executable risk functionals over models, data, and generators.

Every estimator reports a Monte-Carlo standard error alongside its value so
stochastic comparisons can be made in std-error multiples. The inner
expectation over a soft target collapses to soft cross entropy (it is linear
in the target), so no label sampling is performed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from genlearn.classifier import PROB_CLAMP, predict_payloads
from genlearn.corpus import Dataset

__all__ = [
    "RiskEstimate", "VicinityConfig", "GenerativeBayesClassifier",
    "empirical_risk", "vicinal_risk", "generative_risk", "combined_risk",
    "class_conditional_risk", "bayes_posterior",
]


@dataclass(frozen=True)
class RiskEstimate:
    """Mean loss with its standard error (sample std / sqrt(n))."""

    value: float
    std_error: float
    num_samples: int

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")


def _from_losses(losses: np.ndarray) -> RiskEstimate:
    losses = np.asarray(losses, dtype=np.float64)
    n = len(losses)
    se = float(losses.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return RiskEstimate(value=float(losses.mean()), std_error=se, num_samples=n)


@dataclass(frozen=True)
class VicinityConfig:
    """Vicinity distribution: isotropic gaussian or mixup interpolation."""

    kind: str  # "gaussian" | "mixup"
    sigma: float = 0.1
    beta_alpha: float = 1.0
    mc_samples: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "mixup"):
            raise ValueError(f"unknown vicinity kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind == "mixup" and self.beta_alpha <= 0:
            raise ValueError("beta_alpha must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


def _soft(model, payloads) -> np.ndarray:
    fn = getattr(model, "predict_payloads", None)
    if fn is not None:
        return fn(payloads)
    return predict_payloads(model, payloads)


def _ce_rows(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    return -(Q * np.log(np.maximum(P, PROB_CLAMP))).sum(axis=1)


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    Q = np.zeros((len(labels), num_classes))
    Q[np.arange(len(labels)), labels] = 1.0
    return Q


def empirical_risk(f, labeled: Dataset) -> RiskEstimate:
    """Mean cross entropy of hard labels against f over the labeled set."""
    if len(labeled) == 0:
        raise ValueError("empirical_risk needs a non-empty dataset")
    y = labeled.hard_labels()
    P = _soft(f, [ex.payload for ex in labeled])
    losses = -np.log(np.maximum(P[np.arange(len(y)), y], PROB_CLAMP))
    return _from_losses(losses)


def vicinal_risk(f, labeled: Dataset, cfg: VicinityConfig,
                 gamma_override: float | None = None) -> RiskEstimate:
    """Risk under a vicinity distribution around each labeled point.

    Continuous modality only; a token-space vicinity is deliberately not
    defined. `gamma_override` pins the mixup coefficient (test hook for the
    degenerate-interpolation endpoint).
    """
    if labeled.schema.modality != "continuous":
        raise ValueError("vicinal_risk is defined for continuous features only")
    if len(labeled) == 0:
        raise ValueError("vicinal_risk needs a non-empty dataset")
    X = labeled.features_matrix()
    y = labeled.hard_labels()
    C = labeled.schema.num_classes
    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    losses = []
    if cfg.kind == "gaussian":
        Q = _one_hot(y, C)
        for _ in range(cfg.mc_samples):
            Xp = X + cfg.sigma * rng.standard_normal(X.shape)
            P = f.predict_matrix(np.hstack([Xp, np.ones((n, 1))]))
            losses.append(_ce_rows(Q, P))
    else:
        draws = cfg.mc_samples * n
        i = rng.integers(0, n, size=draws)
        j = rng.integers(0, n, size=draws)
        gam = (np.full(draws, gamma_override) if gamma_override is not None
               else rng.beta(cfg.beta_alpha, cfg.beta_alpha, size=draws))
        Xm = gam[:, None] * X[i] + (1.0 - gam[:, None]) * X[j]
        Qm = gam[:, None] * _one_hot(y[i], C) + (1.0 - gam[:, None]) * _one_hot(
            y[j], C)
        P = f.predict_matrix(np.hstack([Xm, np.ones((draws, 1))]))
        losses.append(_ce_rows(Qm, P))
    return _from_losses(np.concatenate(losses))


def generative_risk(f_next, f_t, g, mc_samples: int, seed: int,
                    sampler_cfg=None) -> RiskEstimate:
    """Expected soft cross entropy of f_t's predictions against f_next over
    draws from the generator."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    rng = np.random.default_rng(seed)
    payloads, _ = g.sample_payloads(mc_samples, rng, sampler_cfg)
    Pt = _soft(f_t, payloads)
    Pn = _soft(f_next, payloads)
    return _from_losses(_ce_rows(Pt, Pn))


def combined_risk(f_next, f_t, g, labeled: Dataset, lam: float,
                  mc_samples: int, seed: int, sampler_cfg=None) -> RiskEstimate:
    """lam-weighted sum of empirical and generative risk.

    The combined std error assumes the two estimates are independent; the
    value is exactly affine in lam for a fixed seed.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    emp = empirical_risk(f_next, labeled)
    gen = generative_risk(f_next, f_t, g, mc_samples, seed,
                          sampler_cfg=sampler_cfg)
    value = lam * emp.value + (1.0 - lam) * gen.value
    se = float(np.sqrt((lam * emp.std_error) ** 2
                       + ((1.0 - lam) * gen.std_error) ** 2))
    return RiskEstimate(value=value, std_error=se,
                        num_samples=emp.num_samples + gen.num_samples)


def class_conditional_risk(f, g_cond, prior: np.ndarray, mc_samples: int,
                           seed: int) -> RiskEstimate:
    """Risk when labels come from the generator: y ~ prior, x ~ g(x|y)."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    prior = np.asarray(prior, dtype=np.float64)
    if len(prior) != g_cond.num_classes:
        raise ValueError(
            f"prior has {len(prior)} entries for {g_cond.num_classes} classes")
    rng = np.random.default_rng(seed)
    ys = rng.choice(len(prior), size=mc_samples, p=prior)
    payloads: list[tuple] = [()] * mc_samples
    for c in range(len(prior)):
        rows = np.flatnonzero(ys == c)
        if len(rows) == 0:
            continue
        drawn = g_cond.sample_payloads_for_class(len(rows), c, rng)
        for r, p in zip(rows, drawn):
            payloads[r] = p
    P = _soft(f, payloads)
    losses = -np.log(np.maximum(P[np.arange(mc_samples), ys], PROB_CLAMP))
    return _from_losses(losses)


def bayes_posterior(g_cond, prior: np.ndarray, payload: tuple) -> np.ndarray:
    """Posterior over classes from the conditional densities, in log domain."""
    prior = np.asarray(prior, dtype=np.float64)
    if len(prior) != g_cond.num_classes:
        raise ValueError(
            f"prior has {len(prior)} entries for {g_cond.num_classes} classes")
    with np.errstate(divide="ignore"):
        logits = g_cond.class_log_density(payload) + np.log(prior)
    if not np.isfinite(logits).any():
        raise ValueError(f"all classes have zero density at {payload!r}")
    logits = logits - logits[np.isfinite(logits)].max()
    p = np.exp(logits)
    return p / p.sum()


class GenerativeBayesClassifier:
    """Classifier view of a conditional generator via the posterior rule."""

    def __init__(self, g_cond, prior: np.ndarray):
        self.g_cond = g_cond
        self.prior = np.asarray(prior, dtype=np.float64)

    @property
    def num_classes(self) -> int:
        return self.g_cond.num_classes

    def predict_payloads(self, payloads) -> np.ndarray:
        if not len(payloads):
            return np.zeros((0, self.num_classes))
        return np.vstack([
            bayes_posterior(self.g_cond, self.prior, p) for p in payloads])
