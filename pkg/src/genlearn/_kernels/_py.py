"""Numpy fallback for the compiled kernels.

Bit-compatible with genlearn._kernels._cy: both backends consume the same
pre-drawn uniforms and the same uint64 hash arithmetic, so outputs are
identical regardless of which backend is active.
"""

from __future__ import annotations

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MASK63 = np.uint64(0x7FFFFFFFFFFFFFFF)


def _mix(h):
    """splitmix64 finalizer; works on uint64 scalars and arrays (wrapping)."""
    h = (h ^ (h >> np.uint64(30))) * _M1
    h = (h ^ (h >> np.uint64(27))) * _M2
    return h ^ (h >> np.uint64(31))


def hashed_ngram_counts(tokens, orders, dim, seed, out):
    """Accumulate signed n-gram bucket counts for one token segment.

    tokens: uint64 stable token codes; orders: int64 n-gram orders;
    out: float64[dim], accumulated in place.
    """
    tokens = np.asarray(tokens, dtype=np.uint64)
    n = len(tokens)
    seed = np.uint64(seed)
    with np.errstate(over="ignore"):
        for o in np.asarray(orders, dtype=np.int64):
            o = int(o)
            if n < o:
                continue
            h = np.full(n - o + 1, _mix(seed + _GOLD * np.uint64(o)),
                        dtype=np.uint64)
            for j in range(o):
                h = _mix(h ^ (tokens[j : n - o + 1 + j] + np.uint64(1)))
            buckets = ((h & _MASK63) % np.uint64(dim)).astype(np.int64)
            signs = np.where((h >> np.uint64(63)) > 0, -1.0, 1.0)
            np.add.at(out, buckets, signs)


def _find_row(window, wlen, n, base, ctx_keys):
    """Longest-context row index; the empty context (key 1) is always present."""
    for o in range(n, 0, -1):
        clen = o - 1
        if clen > wlen:
            continue
        key = np.uint64(1)
        for j in range(wlen - clen, wlen):
            key = key * base + np.uint64(window[j] + 1)
        idx = int(np.searchsorted(ctx_keys, key))
        if idx < len(ctx_keys) and ctx_keys[idx] == key:
            return idx
    raise ValueError("no context row found; model is missing its unigram row")


def _row_count_of(token, off, end, id_tokens, id_counts):
    pos = int(np.searchsorted(id_tokens[off:end], token)) + off
    if pos < end and id_tokens[pos] == token:
        return float(id_counts[pos])
    return 0.0


def ngram_logprobs(stream, start, n, base, ctx_keys, row_offsets, id_tokens,
                   id_counts, row_totals, smoothing_k, support_size, out):
    """Per-token log probabilities for stream[start:]; -inf marks probability 0.

    stream is BOS-padded so every position has a full-length context window.
    """
    stream = np.asarray(stream, dtype=np.int32)
    base = np.uint64(base)
    for i in range(start, len(stream)):
        row = _find_row(stream, i, n, base, ctx_keys)
        off, end = int(row_offsets[row]), int(row_offsets[row + 1])
        c = _row_count_of(stream[i], off, end, id_tokens, id_counts)
        denom = float(row_totals[row]) + smoothing_k * support_size
        num = c + smoothing_k
        if num <= 0.0 or denom <= 0.0:
            out[i - start] = -np.inf
        else:
            out[i - start] = np.log(num) - np.log(denom)


def _binsearch_contains(arr, value):
    pos = int(np.searchsorted(arr, value))
    return pos < len(arr) and arr[pos] == value


def sample_tokens(window, n, base, ctx_keys, row_offsets, rank_tokens,
                  rank_counts, id_tokens, id_counts, row_totals, smoothing_k,
                  support_size, excluded, vocab_size, top_k, eos_id, uniforms,
                  out):
    """Emit tokens by top-k sampling until EOS or the budget runs out.

    window: int32 rolling context of length n-1 (mutated); uniforms: one
    pre-drawn uniform consumed per emitted token (EOS included). Returns
    (num_emitted, terminated_by_eos).
    """
    window = np.asarray(window, dtype=np.int32)
    base = np.uint64(base)
    wlen = len(window)
    emitted = 0
    max_emit = len(out)
    for step in range(max_emit):
        row = _find_row(window, wlen, n, base, ctx_keys)
        off, end = int(row_offsets[row]), int(row_offsets[row + 1])
        nnz = end - off
        m = min(top_k, nnz)
        cand = list(rank_tokens[off : off + m])
        weights = [float(rank_counts[off + j]) + smoothing_k for j in range(m)]
        if top_k > nnz:
            # pad with unseen tokens, smallest ids first (count ties break low)
            tok = 0
            while len(cand) < top_k and tok < vocab_size:
                if not _binsearch_contains(excluded, tok) and not _binsearch_contains(
                        id_tokens[off:end], tok):
                    cand.append(tok)
                    weights.append(smoothing_k)
                tok += 1
        total = float(sum(weights))
        if total <= 0.0:
            raise ValueError("next-token distribution has zero mass "
                             "(smoothing_k=0 with an empty context row)")
        target = uniforms[step] * total
        acc = 0.0
        chosen = cand[-1]
        for t, w in zip(cand, weights):
            acc += w
            if target < acc:
                chosen = t
                break
        if chosen == eos_id:
            return emitted, True
        out[emitted] = chosen
        emitted += 1
        if wlen > 0:
            window[:-1] = window[1:]
            window[wlen - 1] = chosen
    return emitted, False
