"""Count-based n-gram language models with top-k sampling.

Token streams are framed as [BOS] tokens... [EOS], with [SEP] joining the
segments of multi-segment examples. Smoothing is add-k at the longest
observed context, backing off to shorter contexts (down to the unigram)
only when a context was never seen. Class-conditional models insert a
per-class pseudo-token right after [BOS]; that token is conditioning, not
content, so it is excluded from sampling support and from densities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from genlearn import _kernels
from genlearn.corpus import Dataset, Vocabulary

UNCONDITIONAL = "unconditional"
CLASS_CONDITIONAL = "class_conditional"


@dataclass(frozen=True)
class SamplerConfig:
    """Top-k sampling hyperparameters. max_len counts all tokens, specials included."""

    top_k: int = 40
    max_len: int = 64
    seed: int = 0
    num_samples: int = 1

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_len < 3:
            raise ValueError("max_len must be >= 3 (BOS + one token + EOS)")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")


@dataclass(frozen=True)
class TextSample:
    """Sampled token ids (no BOS/EOS, SEP retained) plus a truncation flag."""

    token_ids: tuple[int, ...]
    truncated: bool


class _CompiledTables:
    """Flat, binary-searchable view of the count tables for the kernels."""

    def __init__(self, counts: dict, vocab_size: int, n: int, excluded: list[int]):
        base = vocab_size + 1
        if (n - 1) * math.log2(base) > 63:
            raise ValueError("context keys overflow uint64; reduce n or vocab")
        self.base = np.uint64(base)
        keyed = []
        for ctx, table in counts.items():
            key = 1
            for tok in ctx:
                key = key * base + (tok + 1)
            keyed.append((key, ctx, table))
        keyed.sort(key=lambda kv: kv[0])
        nrows = len(keyed)
        nnz = sum(len(t) for _, _, t in keyed)
        self.ctx_keys = np.empty(nrows, dtype=np.uint64)
        self.row_offsets = np.zeros(nrows + 1, dtype=np.int64)
        self.rank_tokens = np.empty(nnz, dtype=np.int32)
        self.rank_counts = np.empty(nnz, dtype=np.float64)
        self.id_tokens = np.empty(nnz, dtype=np.int32)
        self.id_counts = np.empty(nnz, dtype=np.float64)
        self.row_totals = np.empty(nrows, dtype=np.float64)
        pos = 0
        for r, (key, _ctx, table) in enumerate(keyed):
            self.ctx_keys[r] = key
            by_rank = sorted(table.items(), key=lambda tc: (-tc[1], tc[0]))
            by_id = sorted(table.items())
            for j, (tok, c) in enumerate(by_rank):
                self.rank_tokens[pos + j] = tok
                self.rank_counts[pos + j] = c
            for j, (tok, c) in enumerate(by_id):
                self.id_tokens[pos + j] = tok
                self.id_counts[pos + j] = c
            self.row_totals[r] = float(sum(table.values()))
            pos += len(table)
            self.row_offsets[r + 1] = pos
        self.excluded = np.asarray(sorted(excluded), dtype=np.int32)
        self.vocab_size = vocab_size
        self.support_size = vocab_size - len(excluded)
        self.n = n


class NGramLM:
    """Add-k smoothed n-gram model over a fixed vocabulary."""

    modality = "text"

    def __init__(self, n: int, smoothing_k: float, vocab: Vocabulary,
                 conditioning: str = UNCONDITIONAL,
                 class_prior: np.ndarray | None = None):
        if n < 1:
            raise ValueError("n must be >= 1")
        if smoothing_k < 0:
            raise ValueError("smoothing_k must be >= 0")
        if conditioning not in (UNCONDITIONAL, CLASS_CONDITIONAL):
            raise ValueError(f"unknown conditioning {conditioning!r}")
        if conditioning == CLASS_CONDITIONAL and vocab.num_class_tokens == 0:
            raise ValueError("class-conditional model needs class tokens in vocab")
        self.n = n
        self.smoothing_k = float(smoothing_k)
        self.vocab = vocab
        self.conditioning = conditioning
        self.class_prior = class_prior
        # context tuple (len 0..n-1) -> {next token id: count}
        self.counts: dict[tuple[int, ...], dict[int, int]] = {(): {}}
        self._tables: _CompiledTables | None = None

    @property
    def is_conditional(self) -> bool:
        return self.conditioning == CLASS_CONDITIONAL

    @property
    def num_classes(self) -> int:
        return self.vocab.num_class_tokens

    def _excluded_ids(self) -> list[int]:
        ids = [self.vocab.bos_id]
        ids += [self.vocab.class_token_id(c) for c in range(self.num_classes)]
        return ids

    def _prefix_ids(self, class_index: int | None) -> list[int]:
        prefix = [self.vocab.bos_id]
        if self.is_conditional:
            if class_index is None:
                raise ValueError("class index required for a conditional model")
            prefix.append(self.vocab.class_token_id(class_index))
        elif class_index is not None:
            raise ValueError("class index given but model is unconditional")
        return prefix

    def _padded_stream(self, body: list[int], class_index: int | None,
                       ) -> tuple[np.ndarray, int]:
        """BOS-padded full stream and the index where the body starts."""
        prefix = self._prefix_ids(class_index)
        pad = max(0, self.n - 1 - len(prefix))
        full = [self.vocab.bos_id] * pad + prefix + body
        return np.asarray(full, dtype=np.int32), pad + len(prefix)

    def observe(self, body: list[int], class_index: int | None = None) -> None:
        """Accumulate counts for one example body (token ids + EOS appended)."""
        self._tables = None
        stream, start = self._padded_stream(body + [self.vocab.eos_id], class_index)
        for p in range(start, len(stream)):
            tok = int(stream[p])
            for o in range(1, self.n + 1):
                ctx = tuple(int(t) for t in stream[p - (o - 1) : p])
                self.counts.setdefault(ctx, {})
                self.counts[ctx][tok] = self.counts[ctx].get(tok, 0) + 1

    def tables(self) -> _CompiledTables:
        if self._tables is None:
            self._tables = _CompiledTables(
                self.counts, len(self.vocab), self.n, self._excluded_ids())
        return self._tables

    def token_logprobs(self, body: list[int], class_index: int | None = None,
                       ) -> np.ndarray:
        """Log probability of each body token plus the closing EOS."""
        t = self.tables()
        stream, start = self._padded_stream(body + [self.vocab.eos_id], class_index)
        out = np.empty(len(stream) - start, dtype=np.float64)
        _kernels.ngram_logprobs(
            stream, start, t.n, t.base, t.ctx_keys, t.row_offsets, t.id_tokens,
            t.id_counts, t.row_totals, self.smoothing_k, float(t.support_size),
            out)
        return out

    def next_distribution(self, context: list[int] | tuple[int, ...],
                          ) -> np.ndarray:
        """Full smoothed next-token distribution given trailing context ids."""
        t = self.tables()
        ctx = tuple(int(c) for c in context)[max(0, len(context) - (self.n - 1)):]
        row = None
        for take in range(len(ctx), -1, -1):
            key = 1
            for tok in ctx[len(ctx) - take:]:
                key = key * int(t.base) + (tok + 1)
            idx = int(np.searchsorted(t.ctx_keys, np.uint64(key)))
            if idx < len(t.ctx_keys) and t.ctx_keys[idx] == np.uint64(key):
                row = idx
                break
        assert row is not None, "unigram row always present"
        probs = np.zeros(len(self.vocab), dtype=np.float64)
        allowed = np.ones(len(self.vocab), dtype=bool)
        allowed[t.excluded] = False
        probs[allowed] = self.smoothing_k
        off, end = t.row_offsets[row], t.row_offsets[row + 1]
        probs[t.id_tokens[off:end]] += t.id_counts[off:end]
        denom = t.row_totals[row] + self.smoothing_k * t.support_size
        if denom <= 0:
            raise ValueError("context row has zero mass and no smoothing")
        return probs / denom

    def sample(self, cfg: SamplerConfig, class_index: int | None = None,
               rng: np.random.Generator | None = None) -> TextSample:
        """One top-k sampled sequence (ids without BOS/EOS, SEP retained)."""
        t = self.tables()
        if cfg.top_k > t.support_size:
            raise ValueError(
                f"top_k={cfg.top_k} exceeds sampling support ({t.support_size})")
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        prefix = self._prefix_ids(class_index)
        window = np.full(max(self.n - 1, 0), self.vocab.bos_id, dtype=np.int32)
        for tok in prefix[1:]:  # BOS already fills the window
            if len(window):
                window[:-1] = window[1:]
                window[-1] = tok
        max_emit = cfg.max_len - len(prefix)
        if max_emit < 1:
            raise ValueError("max_len leaves no room for generated tokens")
        uniforms = rng.random(max_emit)
        out = np.empty(max_emit, dtype=np.int32)
        count, terminated = _kernels.sample_tokens(
            window, t.n, t.base, t.ctx_keys, t.row_offsets, t.rank_tokens,
            t.rank_counts, t.id_tokens, t.id_counts, t.row_totals,
            self.smoothing_k, float(t.support_size), t.excluded,
            len(self.vocab), cfg.top_k, np.int32(self.vocab.eos_id), uniforms,
            out)
        return TextSample(tuple(int(x) for x in out[:count]),
                          truncated=not terminated)

    # Generator protocol used by synthesis and the risk estimators.

    def sample_payloads(self, num: int, rng: np.random.Generator,
                        sampler_cfg: SamplerConfig | None = None,
                        ) -> tuple[list[tuple], list[bool]]:
        if sampler_cfg is None:
            raise ValueError("text generation requires a SamplerConfig")
        payloads: list[tuple] = []
        truncated: list[bool] = []
        for _ in range(num):
            class_index = None
            if self.is_conditional:
                class_index = int(rng.choice(self.num_classes, p=self.class_prior))
            s = self.sample(sampler_cfg, class_index=class_index, rng=rng)
            truncated.append(s.truncated)
            payloads.append(self.vocab.decode_to_segments(s.token_ids))
        return payloads, truncated

    def log_density(self, payload: tuple) -> float:
        if self.is_conditional:
            dens = self.class_log_density(payload)
            prior = np.log(np.asarray(self.class_prior, dtype=np.float64))
            return float(np.logaddexp.reduce(prior + dens))
        body = self.vocab.encode_segments(payload)
        return float(self.token_logprobs(body).sum())

    def class_log_density(self, payload: tuple) -> np.ndarray:
        """log g(x|y) for every class; the class pseudo-token is conditioning."""
        if not self.is_conditional:
            raise ValueError("model is unconditional")
        body = self.vocab.encode_segments(payload)
        return np.asarray([
            self.token_logprobs(body, class_index=c).sum()
            for c in range(self.num_classes)
        ])

    def to_dict(self) -> dict:
        return {
            "kind": "ngram",
            "n": self.n,
            "smoothing_k": self.smoothing_k,
            "conditioning": self.conditioning,
            "class_prior": None if self.class_prior is None
            else [float(p) for p in self.class_prior],
            "vocab_tokens": list(self.vocab.tokens[3:len(self.vocab)
                                                   - self.vocab.num_class_tokens]),
            "num_class_tokens": self.vocab.num_class_tokens,
            "counts": {
                " ".join(str(t) for t in ctx): {str(k): v for k, v in table.items()}
                for ctx, table in self.counts.items()
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NGramLM":
        vocab = Vocabulary(obj["vocab_tokens"])
        if obj["num_class_tokens"]:
            vocab = vocab.with_class_tokens(obj["num_class_tokens"])
        prior = obj.get("class_prior")
        lm = cls(obj["n"], obj["smoothing_k"], vocab,
                 conditioning=obj["conditioning"],
                 class_prior=None if prior is None else np.asarray(prior))
        lm.counts = {
            tuple(int(t) for t in ctx.split()) if ctx else (): {
                int(k): int(v) for k, v in table.items()
            }
            for ctx, table in obj["counts"].items()
        }
        lm.counts.setdefault((), {})
        return lm


def fit_ngram(corpus: Dataset, n: int, smoothing_k: float,
              class_conditional: bool = False) -> NGramLM:
    """Count-estimate an n-gram model from a text dataset (labels ignored
    unless class_conditional)."""
    if corpus.schema.modality != "text":
        raise ValueError("fit_ngram requires a text dataset")
    if len(corpus) == 0:
        raise ValueError("fit_ngram requires a non-empty corpus")
    if corpus.schema.vocab is None:
        raise ValueError("corpus schema carries no vocabulary")
    if class_conditional:
        vocab = corpus.schema.vocab.with_class_tokens(corpus.schema.num_classes)
        labels = corpus.hard_labels()
        prior = np.bincount(labels, minlength=corpus.schema.num_classes).astype(
            np.float64)
        if (prior == 0).any():
            empty = int(np.argmin(prior))
            raise ValueError(f"class {empty} has no examples")
        lm = NGramLM(n, smoothing_k, vocab, conditioning=CLASS_CONDITIONAL,
                     class_prior=prior / prior.sum())
        for ex in corpus:
            lm.observe(vocab.encode_segments(ex.payload), class_index=ex.label)
    else:
        lm = NGramLM(n, smoothing_k, corpus.schema.vocab)
        for ex in corpus:
            lm.observe(lm.vocab.encode_segments(ex.payload))
    return lm


def perplexity(lm: NGramLM, heldout: Dataset) -> float:
    """exp(mean negative log prob per token), SEP/EOS included.

    A zero-probability token (possible only with smoothing_k=0 and no
    backoff row) yields the float('inf') sentinel with a warning naming the
    offending token.
    """
    if len(heldout) == 0:
        raise ValueError("perplexity requires a non-empty dataset")
    if heldout.schema.modality != "text":
        raise ValueError("perplexity requires a text dataset")
    total = 0.0
    count = 0
    for ex in heldout:
        body = lm.vocab.encode_segments(ex.payload)
        lp = lm.token_logprobs(body, class_index=ex.label if lm.is_conditional
                               else None)
        if np.isneginf(lp).any():
            bad = int(np.argmax(np.isneginf(lp)))
            stream = body + [lm.vocab.eos_id]
            warnings.warn(
                f"zero probability for token {lm.vocab.token_of(stream[bad])!r} "
                f"in {heldout.name}; returning infinite perplexity")
            return math.inf
        total += float(lp.sum())
        count += len(lp)
    return math.exp(-total / count)


def sample_text(lm: NGramLM, cfg: SamplerConfig, class_index: int | None = None,
                rng: np.random.Generator | None = None) -> TextSample:
    """Module-level alias of NGramLM.sample."""
    return lm.sample(cfg, class_index=class_index, rng=rng)
