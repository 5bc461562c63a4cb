"""Pipelines: self-training, distillation, filtering, consistency steps."""

import numpy as np
import pytest

from genlearn.classifier import (ClassifierSpec, FeatureMap,
                                 LinearSoftmaxClassifier, TrainConfig, train)
from genlearn.corpus import Dataset, Example, TaskSchema
from genlearn.gmm import fit_gmm
from genlearn.ngram import SamplerConfig
from genlearn.pipelines import (AugmentationPair, DistillConfig,
                                SelfTrainConfig, confidence_filter, distill,
                                feature_space_augmentations, fixmatch_step,
                                fixmatch_train, self_distill, self_train)

FM2 = FeatureMap(kind="identity", dim=2)


def gaussian_task(n, seed, means=((0.0, 0.0), (2.0, 2.0)), sigma=1.0):
    rng = np.random.default_rng(seed)
    half = n // 2
    X0 = rng.normal(means[0], sigma, (half, 2))
    X1 = rng.normal(means[1], sigma, (n - half, 2))
    schema = TaskSchema(modality="continuous", num_classes=2, feature_dim=2)
    exs = [Example(payload=tuple(map(float, x)), label=0) for x in X0]
    exs += [Example(payload=tuple(map(float, x)), label=1) for x in X1]
    return Dataset(schema=schema, examples=tuple(exs), name=f"task{seed}",
                   mixed_provenance=True)


def soft_synth(probs_list):
    schema = TaskSchema(modality="continuous", num_classes=2, feature_dim=2)
    exs = tuple(
        Example(payload=(float(i), 0.0), soft_label=tuple(p),
                provenance="synthetic")
        for i, p in enumerate(probs_list))
    return Dataset(schema=schema, examples=exs, name="synth")


@pytest.fixture(scope="module")
def task():
    return {
        "L": gaussian_task(50, 100),
        "dev": gaussian_task(100, 101),
        "test": gaussian_task(400, 102),
    }


def _spec():
    return ClassifierSpec(family="linear", num_classes=2, feature_map=FM2)


def _cfg(seed=0, iterations=2):
    return SelfTrainConfig(
        iterations=iterations, k=4, lam=0.5, label_mode="soft",
        train_cfg=TrainConfig(learning_rate=0.5, epochs=12, batch_size=16,
                              seed=seed),
        sampler_cfg=SamplerConfig(seed=seed))


class TestSelfTrain:
    def test_report_structure(self, task):
        g = fit_gmm(task["L"], K=2, seed=0)
        _, report = self_train(task["L"], g, _spec(), _cfg(iterations=3),
                               task["dev"], task["test"])
        assert report.mode == "self_train"
        assert [r["iteration"] for r in report.iterations] == [1, 2, 3]
        assert report.baseline["test_accuracy"] > 0.5
        assert report.generation["accepted"] == 4 * len(task["L"])

    def test_pool_hash_identical_across_iterations(self, task):
        g = fit_gmm(task["L"], K=2, seed=0)
        _, report = self_train(task["L"], g, _spec(), _cfg(iterations=3),
                               task["dev"], task["test"])
        hashes = {r["pool_hash"] for r in report.iterations}
        hashes.add(report.generation["pool_hash"])
        assert len(hashes) == 1

    def test_byte_identical_reports(self, task):
        g = fit_gmm(task["L"], K=2, seed=1)
        _, r1 = self_train(task["L"], g, _spec(), _cfg(seed=3), task["dev"],
                           task["test"])
        _, r2 = self_train(task["L"], g, _spec(), _cfg(seed=3), task["dev"],
                           task["test"])
        assert r1.to_json() == r2.to_json()

    def test_single_iteration_contract(self, task):
        g = fit_gmm(task["L"], K=2, seed=0)
        models = []
        _, report = self_train(task["L"], g, _spec(), _cfg(iterations=1),
                               task["dev"], task["test"], model_sink=models)
        assert len(report.iterations) == 1
        assert [tag for tag, _ in models] == ["base", "iter_1"]
        assert report.iterations[0]["filtered_count"] == 0
        assert report.iterations[0]["synthetic_count"] == 4 * len(task["L"])

    def test_students_restart_from_same_init(self, task):
        # with lr=0 every student keeps the shared initialization
        g = fit_gmm(task["L"], K=2, seed=0)
        cfg = SelfTrainConfig(
            iterations=2, k=2, lam=0.5, label_mode="soft",
            train_cfg=TrainConfig(learning_rate=0.0, epochs=2, batch_size=16,
                                  seed=5),
            sampler_cfg=SamplerConfig(seed=5))
        models = []
        self_train(task["L"], g, _spec(), cfg, task["dev"], task["test"],
                   model_sink=models)
        w0 = models[0][1].weights
        for _, m in models[1:]:
            np.testing.assert_array_equal(m.weights, w0)

    def test_confidence_filter_integration(self, task):
        g = fit_gmm(task["L"], K=2, seed=0)
        cfg = SelfTrainConfig(
            iterations=1, k=2, lam=0.5, label_mode="soft", confidence_tau=0.6,
            train_cfg=TrainConfig(learning_rate=0.5, epochs=8, batch_size=16,
                                  seed=0),
            sampler_cfg=SamplerConfig(seed=0))
        _, report = self_train(task["L"], g, _spec(), cfg, task["dev"],
                               task["test"])
        rec = report.iterations[0]
        assert rec["filtered_count"] > 0
        assert rec["synthetic_count"] + rec["filtered_count"] == 2 * len(
            task["L"])

    def test_hard_label_mode_runs(self, task):
        g = fit_gmm(task["L"], K=2, seed=0)
        cfg = SelfTrainConfig(
            iterations=1, k=2, lam=0.5, label_mode="hard",
            train_cfg=TrainConfig(learning_rate=0.5, epochs=8, batch_size=16,
                                  seed=0),
            sampler_cfg=SamplerConfig(seed=0))
        _, report = self_train(task["L"], g, _spec(), cfg, task["dev"],
                               task["test"])
        assert len(report.iterations) == 1


class TestDistill:
    def test_teacher_to_student(self, task):
        g = fit_gmm(task["L"], K=2, seed=0)
        teacher_spec = ClassifierSpec(family="mlp", num_classes=2,
                                      feature_map=FM2, hidden_width=16)
        tc = TrainConfig(learning_rate=0.5, epochs=15, batch_size=16, seed=0)
        teacher, _ = train(teacher_spec, task["L"], tc, task["dev"])
        student, report = distill(task["L"], g, teacher, _spec(),
                                  DistillConfig(k=4, lam=0.2, train_cfg=tc,
                                                sampler_cfg=SamplerConfig(seed=0)),
                                  task["dev"], task["test"])
        assert report.mode == "distill"
        assert len(report.iterations) == 1
        assert isinstance(student, LinearSoftmaxClassifier)

    def test_default_lambda_is_point_two(self):
        assert DistillConfig().lam == 0.2

    def test_oversized_student_warns(self, task):
        g = fit_gmm(task["L"], K=2, seed=0)
        tc = TrainConfig(learning_rate=0.5, epochs=4, batch_size=16, seed=0)
        teacher, _ = train(_spec(), task["L"], tc, task["dev"])
        big_student = ClassifierSpec(family="mlp", num_classes=2,
                                     feature_map=FM2, hidden_width=32)
        with pytest.warns(UserWarning, match="parameters"):
            distill(task["L"], g, teacher, big_student,
                    DistillConfig(k=2, lam=0.2, train_cfg=tc,
                                  sampler_cfg=SamplerConfig(seed=0)),
                    task["dev"], task["test"])

    @pytest.mark.filterwarnings("ignore:student has at least")
    def test_matched_capacity_student_tracks_teacher(self):
        accs = []
        for seed in range(20):
            L = gaussian_task(60, 300 + seed, means=((-2, 0), (2, 0)),
                              sigma=0.5)
            dev = gaussian_task(60, 400 + seed, means=((-2, 0), (2, 0)),
                                sigma=0.5)
            test = gaussian_task(200, 500 + seed, means=((-2, 0), (2, 0)),
                                 sigma=0.5)
            g = fit_gmm(L, K=2, seed=seed)
            tc = TrainConfig(learning_rate=0.5, epochs=15, batch_size=16,
                             seed=seed)
            teacher, _ = train(_spec(), L, tc, dev)
            student, report = distill(
                L, g, teacher, _spec(),
                DistillConfig(k=4, lam=0.2, train_cfg=tc,
                              sampler_cfg=SamplerConfig(seed=seed)),
                dev, test)
            accs.append(report.iterations[0]["test_accuracy"]
                        - report.baseline["test_accuracy"])
        assert abs(float(np.mean(accs))) < 0.02


class TestSelfDistill:
    def test_degenerate_config_keeps_model(self, task):
        tc = TrainConfig(learning_rate=0.5, epochs=10, batch_size=16, seed=0)
        f, _ = train(_spec(), task["L"], tc, task["dev"])
        frozen = TrainConfig(learning_rate=0.0, epochs=2, batch_size=16,
                             seed=0)
        student, report = self_distill(task["L"], f, f, frozen, task["dev"],
                                       task["test"])
        np.testing.assert_array_equal(student.weights, f.weights)
        assert report.mode == "self_distill"

    def test_deterministic(self, task):
        tc = TrainConfig(learning_rate=0.5, epochs=10, batch_size=16, seed=1)
        f, _ = train(_spec(), task["L"], tc, task["dev"])
        _, r1 = self_distill(task["L"], f, _spec(), tc, task["dev"],
                             task["test"])
        _, r2 = self_distill(task["L"], f, _spec(), tc, task["dev"],
                             task["test"])
        assert r1.to_json() == r2.to_json()

    def test_uses_no_synthetic_data(self, task):
        tc = TrainConfig(learning_rate=0.5, epochs=5, batch_size=16, seed=0)
        f, _ = train(_spec(), task["L"], tc, task["dev"])
        _, report = self_distill(task["L"], f, _spec(), tc, task["dev"],
                                 task["test"])
        assert report.iterations[0]["synthetic_count"] == 0


class TestConfidenceFilter:
    def test_paper_threshold_examples(self):
        ds = soft_synth([(0.96, 0.04), (0.60, 0.40)])
        kept, dropped = confidence_filter(ds, 0.95)
        assert len(kept) == 1 and dropped == 1
        assert kept[0].soft_label == (0.96, 0.04)

    def test_tiny_tau_keeps_everything(self):
        ds = soft_synth([(0.5, 0.5), (0.9, 0.1), (0.2, 0.8)])
        kept, dropped = confidence_filter(ds, 1e-9)
        assert len(kept) == 3 and dropped == 0

    def test_uniform_predictions_all_dropped(self):
        ds = soft_synth([(0.5, 0.5)] * 4)
        kept, dropped = confidence_filter(ds, 0.95)
        assert len(kept) == 0 and dropped == 4

    def test_partition_identity(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet([1, 1], size=50)
        ds = soft_synth([tuple(p) for p in probs])
        kept, dropped = confidence_filter(ds, 0.7)
        assert len(kept) + dropped == len(ds)

    def test_hard_labels_rejected(self):
        schema = TaskSchema(modality="continuous", num_classes=2,
                            feature_dim=2)
        ds = Dataset(schema=schema,
                     examples=(Example(payload=(0.0, 0.0), label=1),))
        with pytest.raises(ValueError, match="soft"):
            confidence_filter(ds, 0.5)

    def test_tau_validated(self):
        ds = soft_synth([(0.6, 0.4)])
        for tau in (0.0, 1.0, -1.0):
            with pytest.raises(ValueError, match="tau"):
                confidence_filter(ds, tau)


def _manual_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class TestFixmatchStep:
    def _batches(self, B=4, mu=7, seed=0):
        rng = np.random.default_rng(seed)
        lb = gaussian_task(B, 600 + seed).examples[:B]
        pool = gaussian_task(mu * B * 2, 700 + seed)
        unl = tuple(Example(payload=ex.payload, provenance="synthetic")
                    for ex in pool.examples[: mu * B])
        return list(lb), list(unl)

    def test_mu_seven_batch_contract(self):
        lb, unl = self._batches(B=64, mu=7)
        assert len(unl) == 448
        f = _spec().build(np.random.default_rng(0))
        res = fixmatch_step(f, lb, unl, tau=0.95, mu=7,
                            aug=AugmentationPair(), learning_rate=0.1,
                            rng=np.random.default_rng(1))
        assert np.isfinite(res.loss)

    def test_wrong_ratio_rejected(self):
        lb, unl = self._batches(B=4, mu=7)
        f = _spec().build(np.random.default_rng(0))
        with pytest.raises(ValueError, match="mu"):
            fixmatch_step(f, lb, unl[:20], tau=0.9, mu=7,
                          aug=AugmentationPair(), learning_rate=0.1,
                          rng=np.random.default_rng(0))

    def test_zero_retained_still_steps_on_labeled(self):
        lb, unl = self._batches(B=4, mu=2, seed=1)
        f = _spec().build(np.random.default_rng(3))  # near-uniform predictions
        before = f.weights.copy()
        res = fixmatch_step(f, lb, unl, tau=0.999, mu=2,
                            aug=AugmentationPair(), learning_rate=0.5,
                            rng=np.random.default_rng(2))
        assert res.num_retained == 0
        assert res.unlabeled_loss == 0.0
        assert not np.array_equal(f.weights, before)

    def test_identity_aug_tau_zero_reduces_to_hard_self_training(self):
        lb, unl = self._batches(B=5, mu=2, seed=2)
        rng = np.random.default_rng(4)
        f = LinearSoftmaxClassifier(rng.normal(0, 0.5, (2, 3)), FM2)
        manual = f.weights.copy()

        Xl = np.asarray([ex.payload for ex in lb])
        yl = np.asarray([ex.label for ex in lb])
        Xu = np.asarray([ex.payload for ex in unl])
        B, M = len(Xl), len(Xu)
        Xla = np.hstack([Xl, np.ones((B, 1))])
        Xua = np.hstack([Xu, np.ones((M, 1))])
        Pl = _manual_softmax(Xla @ manual.T)
        Ql = np.zeros_like(Pl)
        Ql[np.arange(B), yl] = 1.0
        Pu = _manual_softmax(Xua @ manual.T)
        Qu = np.zeros_like(Pu)
        Qu[np.arange(M), Pu.argmax(axis=1)] = 1.0
        grad = ((Pl - Ql) / B).T @ Xla + ((Pu - Qu) / M).T @ Xua
        expected = manual - 0.1 * grad

        fixmatch_step(f, lb, unl, tau=0.0, mu=2, aug=AugmentationPair(),
                      learning_rate=0.1, rng=np.random.default_rng(9))
        np.testing.assert_allclose(f.weights, expected, atol=1e-12)

    def test_strong_aug_applies_only_to_unlabeled(self):
        # labeled rows enter the loss un-augmented: identical labeled batches
        # under different rng draws give identical labeled loss when the
        # unlabeled branch is empty
        lb, unl = self._batches(B=4, mu=2, seed=3)
        aug = feature_space_augmentations(np.ones(2))
        losses = []
        for seed in (1, 2):
            f = _spec().build(np.random.default_rng(5))
            res = fixmatch_step(f, lb, unl, tau=0.9999, mu=2, aug=aug,
                                learning_rate=0.1,
                                rng=np.random.default_rng(seed))
            losses.append(res.labeled_loss)
        assert losses[0] == losses[1]


class TestFixmatchTrain:
    def test_runs_and_reports(self):
        L = gaussian_task(40, 800)
        dev = gaussian_task(60, 801)
        test = gaussian_task(100, 802)
        pool = Dataset(
            schema=L.schema,
            examples=tuple(Example(payload=ex.payload, provenance="synthetic")
                           for ex in gaussian_task(200, 803).examples),
            name="pool")
        aug = feature_space_augmentations(L.features_matrix().std(axis=0))
        f, report = fixmatch_train(
            L, pool, _spec(),
            TrainConfig(learning_rate=0.2, epochs=5, batch_size=8, seed=0),
            tau=0.8, mu=3, aug=aug, dev=dev, test=test)
        assert report.mode == "fixmatch"
        assert report.iterations[0]["test_accuracy"] > 0.6
