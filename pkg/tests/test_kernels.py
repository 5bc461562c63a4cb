"""Backend equivalence: the compiled kernels and the numpy fallback must
produce bit-identical results from identical inputs."""

import numpy as np
import pytest

from genlearn._kernels import _py
from genlearn.corpus import Dataset, Example, TaskSchema, build_vocab
from genlearn.ngram import fit_ngram

try:
    from genlearn._kernels import _cy
except ImportError:
    _cy = None

needs_ext = pytest.mark.skipif(_cy is None,
                               reason="compiled kernels not available")


def fitted_lm(seed=0, n=3, k=0.4):
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(12)]
    sentences = [" ".join(rng.choice(words, rng.integers(2, 7)))
                 for _ in range(25)]
    schema = TaskSchema(modality="text", num_classes=2, segment_count=1)
    exs = tuple(Example(payload=(s,)) for s in sentences)
    ds = Dataset(schema=schema, examples=exs, name="c")
    ds = Dataset(schema=schema.with_vocab(build_vocab([ds])), examples=exs,
                 name="c")
    return fit_ngram(ds, n, k)


def kernel_args(lm):
    t = lm.tables()
    return t


class TestHashedCounts:
    @needs_ext
    def test_identical_accumulation(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            tokens = rng.integers(0, 2 ** 63, size=rng.integers(1, 40),
                                  dtype=np.uint64)
            orders = np.asarray([1, 2, 3], dtype=np.int64)
            a = np.zeros(97)
            b = np.zeros(97)
            _py.hashed_ngram_counts(tokens, orders, 97, np.uint64(trial), a)
            _cy.hashed_ngram_counts(tokens, orders, 97, np.uint64(trial), b)
            np.testing.assert_array_equal(a, b)

    def test_order_longer_than_input_is_noop(self):
        tokens = np.asarray([5], dtype=np.uint64)
        out = np.zeros(16)
        _py.hashed_ngram_counts(tokens, np.asarray([3], dtype=np.int64), 16,
                                np.uint64(0), out)
        assert (out == 0).all()


class TestLogprobs:
    @needs_ext
    def test_identical_logprobs(self):
        lm = fitted_lm()
        t = lm.tables()
        rng = np.random.default_rng(1)
        for _ in range(50):
            body = rng.integers(2, len(lm.vocab), size=rng.integers(1, 10),
                                dtype=np.int32)
            stream = np.concatenate([
                np.full(lm.n - 1, lm.vocab.bos_id, dtype=np.int32), body])
            a = np.empty(len(body))
            b = np.empty(len(body))
            args = (stream, lm.n - 1, t.n, t.base, t.ctx_keys, t.row_offsets,
                    t.id_tokens, t.id_counts, t.row_totals, lm.smoothing_k,
                    float(t.support_size))
            _py.ngram_logprobs(*args, a)
            _cy.ngram_logprobs(*args, b)
            np.testing.assert_array_equal(a, b)


class TestSampling:
    @needs_ext
    def test_identical_sequences_from_same_uniforms(self):
        lm = fitted_lm(seed=3, n=2, k=0.2)
        t = lm.tables()
        rng = np.random.default_rng(2)
        for top_k in (1, 3, t.support_size):
            for trial in range(30):
                uniforms = rng.random(24)
                out_a = np.empty(24, dtype=np.int32)
                out_b = np.empty(24, dtype=np.int32)
                wa = np.full(lm.n - 1, lm.vocab.bos_id, dtype=np.int32)
                wb = wa.copy()
                args = (t.n, t.base, t.ctx_keys, t.row_offsets, t.rank_tokens,
                        t.rank_counts, t.id_tokens, t.id_counts, t.row_totals,
                        lm.smoothing_k, float(t.support_size), t.excluded,
                        len(lm.vocab), top_k, np.int32(lm.vocab.eos_id),
                        uniforms)
                na, term_a = _py.sample_tokens(wa, *args, out_a)
                nb, term_b = _cy.sample_tokens(wb, *args, out_b)
                assert (na, term_a) == (nb, term_b)
                np.testing.assert_array_equal(out_a[:na], out_b[:nb])

    @needs_ext
    def test_backend_choice_does_not_change_fitted_model_sampling(self):
        import os
        import subprocess
        import sys
        from pathlib import Path

        code = (
            "import numpy as np\n"
            "from tests.test_kernels import fitted_lm\n"
            "from genlearn.ngram import SamplerConfig\n"
            "lm = fitted_lm(seed=5, n=3, k=0.3)\n"
            "rng = np.random.default_rng(77)\n"
            "out = [lm.sample(SamplerConfig(top_k=4, max_len=16, seed=0),"
            " rng=rng).token_ids for _ in range(40)]\n"
            "print(repr(out))\n"
        )
        outputs = []
        for pure in (False, True):
            env = dict(os.environ)
            env.pop("GENLEARN_PURE_PYTHON", None)
            if pure:
                env["GENLEARN_PURE_PYTHON"] = "1"
            proc = subprocess.run(
                [sys.executable, "-c", code], capture_output=True, text=True,
                env=env, cwd=str(Path(__file__).parent.parent))
            assert proc.returncode == 0, proc.stderr
            outputs.append(proc.stdout)
        assert outputs[0] == outputs[1]
