"""Risk functionals: estimators vs closed forms, quadrature, and enumeration."""

import math

import numpy as np
import pytest

from genlearn.classifier import (FeatureMap, LinearSoftmaxClassifier,
                                 predict_payloads)
from genlearn.corpus import Dataset, Example, TaskSchema
from genlearn.gmm import GaussianMixture
from genlearn.risk import (GenerativeBayesClassifier, RiskEstimate,
                           VicinityConfig, bayes_posterior,
                           class_conditional_risk, combined_risk,
                           empirical_risk, generative_risk, vicinal_risk)
from genlearn.tabular import TabularGenerator

FM1 = FeatureMap(kind="identity", dim=1)
FM2 = FeatureMap(kind="identity", dim=2)


def cont_dataset(X, labels, num_classes=2):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    schema = TaskSchema(modality="continuous", num_classes=num_classes,
                        feature_dim=X.shape[1])
    exs = tuple(Example(payload=tuple(map(float, x)), label=int(y))
                for x, y in zip(X, labels))
    return Dataset(schema=schema, examples=exs, name="d",
                   mixed_provenance=True)


def rand_linear(seed, num_classes=2, dim=1, scale=1.0):
    rng = np.random.default_rng(seed)
    fm = FM1 if dim == 1 else FM2
    return LinearSoftmaxClassifier(rng.normal(0, scale, (num_classes, dim + 1)),
                                   fm)


def eight_point_generator(seed=0, conditional=False):
    rng = np.random.default_rng(seed)
    support = [(float(i),) for i in range(8)]
    if conditional:
        probs = rng.dirichlet(np.ones(8), size=2)
        return TabularGenerator(support, probs, class_prior=[0.4, 0.6])
    return TabularGenerator(support, rng.dirichlet(np.ones(8)))


def enum_generative_risk(f_next, f_t, g):
    """Exact expectation over a tabular generator's support."""
    total = 0.0
    for x, px in zip(g.support, g.marginal_probs()):
        pt = predict_payloads(f_t, [x])[0]
        pn = predict_payloads(f_next, [x])[0]
        total += px * float(-(pt * np.log(np.maximum(pn, 1e-12))).sum())
    return total


def enum_class_conditional_risk(f, g, prior):
    total = 0.0
    P = (f.predict_payloads(g.support) if hasattr(f, "predict_payloads")
         else predict_payloads(f, g.support))
    for c, pc in enumerate(prior):
        for i, px in enumerate(g.probs[c]):
            total += pc * px * -math.log(max(P[i][c], 1e-12))
    return total


class TestEmpiricalRisk:
    def test_perfect_classifier_near_zero(self):
        data = cont_dataset([[-3.0], [3.0]], [0, 1])
        f = LinearSoftmaxClassifier(np.asarray([[-20.0, 0.0], [20.0, 0.0]]),
                                    FM1)
        assert empirical_risk(f, data).value < 1e-9

    def test_uniform_classifier_ln2(self):
        data = cont_dataset([[0.0], [1.0], [2.0]], [0, 1, 0])
        f = LinearSoftmaxClassifier(np.zeros((2, 2)), FM1)
        est = empirical_risk(f, data)
        assert est.value == pytest.approx(math.log(2.0), rel=1e-12)

    def test_matches_per_example_oracle(self):
        rng = np.random.default_rng(0)
        data = cont_dataset(rng.normal(0, 1, (20, 1)), rng.integers(0, 2, 20))
        f = rand_linear(1)
        est = empirical_risk(f, data)
        per = []
        for ex in data:
            p = predict_payloads(f, [ex.payload])[0]
            per.append(-math.log(max(p[ex.label], 1e-12)))
        assert est.value == pytest.approx(np.mean(per), abs=1e-12)
        assert est.std_error == pytest.approx(
            np.std(per, ddof=1) / math.sqrt(len(per)), abs=1e-12)

    def test_empty_rejected(self):
        f = rand_linear(0)
        with pytest.raises(ValueError, match="non-empty"):
            empirical_risk(f, cont_dataset(np.zeros((1, 1)), [0])
                           .replace_examples([]))


class TestVicinalRisk:
    def _setup(self, seed=0, n=10):
        rng = np.random.default_rng(seed)
        X = rng.normal(0, 1.5, (n, 1))
        y = (X[:, 0] > 0).astype(int)
        return cont_dataset(X, y), rand_linear(seed + 1)

    def test_vanishing_vicinity_matches_empirical(self):
        data, f = self._setup()
        emp = empirical_risk(f, data)
        vic = vicinal_risk(f, data, VicinityConfig(kind="gaussian", sigma=1e-8,
                                                   mc_samples=64, seed=0))
        assert abs(vic.value - emp.value) <= 3 * (vic.std_error
                                                  + emp.std_error) + 1e-9

    def test_mixup_gamma_one_matches_empirical(self):
        data, f = self._setup(seed=2)
        emp = empirical_risk(f, data)
        vic = vicinal_risk(f, data,
                           VicinityConfig(kind="mixup", beta_alpha=1.0,
                                          mc_samples=400, seed=0),
                           gamma_override=1.0)
        assert abs(vic.value - emp.value) <= 3 * vic.std_error + 1e-9

    def test_gaussian_matches_hermite_quadrature(self):
        data, f = self._setup(seed=3)
        sigma = 0.5
        est = vicinal_risk(f, data, VicinityConfig(kind="gaussian", sigma=sigma,
                                                   mc_samples=3000, seed=1))
        nodes, weights = np.polynomial.hermite.hermgauss(80)
        total = 0.0
        for ex in data:
            x = ex.payload[0]
            vals = []
            for t in nodes:
                p = predict_payloads(f, [(x + sigma * math.sqrt(2.0) * t,)])[0]
                vals.append(-math.log(max(p[ex.label], 1e-12)))
            total += float(weights @ vals) / math.sqrt(math.pi)
        quad = total / len(data)
        assert abs(est.value - quad) <= 3 * est.std_error

    def test_text_modality_unsupported(self):
        schema = TaskSchema(modality="text", num_classes=2, segment_count=1)
        ds = Dataset(schema=schema,
                     examples=(Example(payload=("a b",), label=0),),
                     name="t")
        with pytest.raises(ValueError, match="continuous"):
            vicinal_risk(rand_linear(0), ds,
                         VicinityConfig(kind="gaussian", sigma=0.1))


class TestGenerativeRisk:
    def test_self_consistency_equals_mean_entropy(self):
        g = eight_point_generator()
        f = rand_linear(5)
        est = generative_risk(f, f, g, mc_samples=500, seed=11)
        payloads, _ = g.sample_payloads(500, np.random.default_rng(11))
        P = predict_payloads(f, payloads)
        entropy = float(-(P * np.log(np.maximum(P, 1e-12))).sum(axis=1).mean())
        assert est.value == pytest.approx(entropy, abs=1e-12)

    def test_perturbations_never_beat_the_minimizer(self):
        g = eight_point_generator(seed=1)
        f = rand_linear(6)
        base = generative_risk(f, f, g, mc_samples=400, seed=3)
        rng = np.random.default_rng(7)
        for _ in range(20):
            fp = LinearSoftmaxClassifier(
                f.weights + 0.1 * rng.standard_normal(f.weights.shape), FM1)
            pert = generative_risk(fp, f, g, mc_samples=400, seed=3)
            assert pert.value >= base.value - 1e-12
            assert pert.value >= base.value - 3 * (pert.std_error
                                                   + base.std_error)

    def test_matches_enumeration_on_8_points(self):
        g = eight_point_generator(seed=2)
        f_t = rand_linear(8)
        f_n = rand_linear(9)
        est = generative_risk(f_n, f_t, g, mc_samples=4000, seed=0)
        exact = enum_generative_risk(f_n, f_t, g)
        assert abs(est.value - exact) <= 3 * est.std_error

    def test_mc_samples_validated(self):
        g = eight_point_generator()
        with pytest.raises(ValueError, match="mc_samples"):
            generative_risk(rand_linear(0), rand_linear(1), g, 0, seed=0)


class TestCombinedRisk:
    def _parts(self):
        rng = np.random.default_rng(1)
        data = cont_dataset(rng.normal(0, 1, (12, 1)), rng.integers(0, 2, 12))
        return rand_linear(2), rand_linear(3), eight_point_generator(), data

    def test_lambda_one_is_empirical(self):
        f_n, f_t, g, data = self._parts()
        got = combined_risk(f_n, f_t, g, data, 1.0, 200, seed=4)
        want = empirical_risk(f_n, data)
        assert got.value == pytest.approx(want.value, abs=1e-15)

    def test_lambda_zero_is_generative(self):
        f_n, f_t, g, data = self._parts()
        got = combined_risk(f_n, f_t, g, data, 0.0, 200, seed=4)
        want = generative_risk(f_n, f_t, g, 200, seed=4)
        assert got.value == pytest.approx(want.value, abs=1e-15)

    def test_half_is_arithmetic_mean(self):
        f_n, f_t, g, data = self._parts()
        a = empirical_risk(f_n, data).value
        b = generative_risk(f_n, f_t, g, 200, seed=4).value
        got = combined_risk(f_n, f_t, g, data, 0.5, 200, seed=4)
        assert got.value == pytest.approx((a + b) / 2.0, abs=1e-12)

    def test_affine_in_lambda(self):
        f_n, f_t, g, data = self._parts()
        a = empirical_risk(f_n, data).value
        b = generative_risk(f_n, f_t, g, 200, seed=4).value
        for lam in (0.1, 0.25, 0.7, 0.9):
            got = combined_risk(f_n, f_t, g, data, lam, 200, seed=4)
            assert got.value == lam * a + (1.0 - lam) * b

    def test_lambda_range_validated(self):
        f_n, f_t, g, data = self._parts()
        with pytest.raises(ValueError, match="lam"):
            combined_risk(f_n, f_t, g, data, 1.2, 10, seed=0)


class TestClassConditionalRisk:
    def test_bayes_beats_50_random_classifiers_on_same_draws(self):
        g = eight_point_generator(seed=3, conditional=True)
        bayes = GenerativeBayesClassifier(g, g.class_prior)
        base = class_conditional_risk(bayes, g, g.class_prior, 2000, seed=5)
        for seed in range(50):
            rival = rand_linear(100 + seed, scale=2.0)
            r = class_conditional_risk(rival, g, g.class_prior, 2000, seed=5)
            assert base.value <= r.value + 1e-12

    def test_single_class_prior_reduces_to_that_class(self):
        g = eight_point_generator(seed=4, conditional=True)
        f = rand_linear(12)
        est = class_conditional_risk(f, g, [1.0, 0.0], 3000, seed=6)
        exact = enum_class_conditional_risk(f, g, [1.0, 0.0])
        assert abs(est.value - exact) <= 3 * est.std_error

    def test_matches_enumeration_on_8_points(self):
        g = eight_point_generator(seed=5, conditional=True)
        f = rand_linear(13)
        est = class_conditional_risk(f, g, g.class_prior, 4000, seed=7)
        exact = enum_class_conditional_risk(f, g, g.class_prior)
        assert abs(est.value - exact) <= 3 * est.std_error

    def test_prior_dimension_validated(self):
        g = eight_point_generator(conditional=True)
        with pytest.raises(ValueError, match="prior"):
            class_conditional_risk(rand_linear(0), g, [1.0], 10, seed=0)


class _ScaledDensities:
    """Adapter multiplying every conditional density by a constant."""

    def __init__(self, inner, log_scale):
        self.inner = inner
        self.log_scale = log_scale

    @property
    def num_classes(self):
        return self.inner.num_classes

    def class_log_density(self, payload):
        return self.inner.class_log_density(payload) + self.log_scale


class TestBayesPosterior:
    def _gaussians(self):
        g0 = GaussianMixture(weights=[1.0], means=[[0.0]], variances=[[1.0]])
        g1 = GaussianMixture(weights=[1.0], means=[[2.0]], variances=[[1.0]])
        from genlearn.gmm import ClassConditionalGaussianMixture
        return ClassConditionalGaussianMixture(per_class=[g0, g1],
                                               class_prior=[0.5, 0.5])

    def test_symmetric_point_is_uniform(self):
        post = bayes_posterior(self._gaussians(), [0.5, 0.5], (1.0,))
        np.testing.assert_allclose(post, [0.5, 0.5], atol=1e-12)

    def test_closed_form_logistic(self):
        post = bayes_posterior(self._gaussians(), [0.5, 0.5], (0.0,))
        # log ratio of the two densities at x=0 is 2
        want = 1.0 / (1.0 + math.exp(-2.0))
        assert post[0] == pytest.approx(want, rel=1e-12)
        assert post[0] == pytest.approx(0.8808, abs=5e-5)

    def test_degenerate_prior(self):
        post = bayes_posterior(self._gaussians(), [1.0, 0.0], (5.0,))
        np.testing.assert_allclose(post, [1.0, 0.0], atol=1e-300)

    def test_scale_invariance_in_log_domain(self):
        g = self._gaussians()
        base = bayes_posterior(g, [0.3, 0.7], (0.7,))
        for scale in (1e-6, 1e6):
            scaled = _ScaledDensities(g, math.log(scale))
            got = bayes_posterior(scaled, [0.3, 0.7], (0.7,))
            np.testing.assert_allclose(got, base, atol=1e-12)
            assert np.argmax(got) == np.argmax(base)

    def test_valid_soft_label_everywhere(self):
        g = eight_point_generator(seed=6, conditional=True)
        for x in g.support:
            post = bayes_posterior(g, g.class_prior, x)
            assert abs(post.sum() - 1.0) < 1e-9
            assert (post >= 0).all()


class TestRiskEstimateType:
    def test_num_samples_validated(self):
        with pytest.raises(ValueError, match="num_samples"):
            RiskEstimate(value=0.0, std_error=0.0, num_samples=0)
