# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot per-token loops.

Bit-compatible with genlearn._kernels._py: identical uint64 hash arithmetic,
identical uniform consumption, identical float accumulation order.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, INFINITY

ctypedef cnp.uint64_t u64
ctypedef cnp.int64_t i64
ctypedef cnp.int32_t i32
ctypedef cnp.float64_t f64

cdef u64 _M1 = 0xBF58476D1CE4E5B9ULL
cdef u64 _M2 = 0x94D049BB133111EBULL
cdef u64 _GOLD = 0x9E3779B97F4A7C15ULL
cdef u64 _MASK63 = 0x7FFFFFFFFFFFFFFFULL


cdef inline u64 _mix(u64 h) nogil:
    h = (h ^ (h >> 30)) * _M1
    h = (h ^ (h >> 27)) * _M2
    return h ^ (h >> 31)


def hashed_ngram_counts(u64[:] tokens, i64[:] orders, i64 dim, u64 seed,
                        f64[:] out):
    cdef Py_ssize_t n = tokens.shape[0]
    cdef Py_ssize_t oi, i, j
    cdef i64 o
    cdef u64 h, udim = <u64>dim
    cdef i64 bucket
    for oi in range(orders.shape[0]):
        o = orders[oi]
        if n < o:
            continue
        for i in range(n - o + 1):
            h = _mix(seed + _GOLD * <u64>o)
            for j in range(o):
                h = _mix(h ^ (tokens[i + j] + 1))
            bucket = <i64>((h & _MASK63) % udim)
            if (h >> 63) > 0:
                out[bucket] -= 1.0
            else:
                out[bucket] += 1.0


cdef inline Py_ssize_t _key_search(u64[:] keys, u64 key) nogil:
    cdef Py_ssize_t lo = 0, hi = keys.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < keys.shape[0] and keys[lo] == key:
        return lo
    return -1


cdef inline Py_ssize_t _find_row(i32[:] window, Py_ssize_t wlen, i64 n,
                                 u64 base, u64[:] ctx_keys) nogil:
    cdef i64 o
    cdef Py_ssize_t clen, j, idx
    cdef u64 key
    for o in range(n, 0, -1):
        clen = <Py_ssize_t>(o - 1)
        if clen > wlen:
            continue
        key = 1
        for j in range(wlen - clen, wlen):
            key = key * base + <u64>(window[j] + 1)
        idx = _key_search(ctx_keys, key)
        if idx >= 0:
            return idx
    return -1


cdef inline Py_ssize_t _tok_search(i32[:] toks, Py_ssize_t off, Py_ssize_t end,
                                   i32 token) nogil:
    cdef Py_ssize_t lo = off, hi = end, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if toks[mid] < token:
            lo = mid + 1
        else:
            hi = mid
    if lo < end and toks[lo] == token:
        return lo
    return -1


def ngram_logprobs(i32[:] stream, Py_ssize_t start, i64 n, u64 base,
                   u64[:] ctx_keys, i64[:] row_offsets, i32[:] id_tokens,
                   f64[:] id_counts, f64[:] row_totals, f64 smoothing_k,
                   f64 support_size, f64[:] out):
    cdef Py_ssize_t i, row, off, end, pos
    cdef f64 c, num, denom
    for i in range(start, stream.shape[0]):
        row = _find_row(stream, i, n, base, ctx_keys)
        if row < 0:
            raise ValueError("no context row found; model is missing its "
                             "unigram row")
        off = <Py_ssize_t>row_offsets[row]
        end = <Py_ssize_t>row_offsets[row + 1]
        pos = _tok_search(id_tokens, off, end, stream[i])
        c = id_counts[pos] if pos >= 0 else 0.0
        denom = row_totals[row] + smoothing_k * support_size
        num = c + smoothing_k
        if num <= 0.0 or denom <= 0.0:
            out[i - start] = -INFINITY
        else:
            out[i - start] = log(num) - log(denom)


def sample_tokens(i32[:] window, i64 n, u64 base, u64[:] ctx_keys,
                  i64[:] row_offsets, i32[:] rank_tokens, f64[:] rank_counts,
                  i32[:] id_tokens, f64[:] id_counts, f64[:] row_totals,
                  f64 smoothing_k, f64 support_size, i32[:] excluded,
                  i64 vocab_size, i64 top_k, i32 eos_id, f64[:] uniforms,
                  i32[:] out):
    cdef Py_ssize_t wlen = window.shape[0]
    cdef Py_ssize_t max_emit = out.shape[0]
    cdef Py_ssize_t emitted = 0, step, row, off, end, nnz, m, j, ncand
    cdef i64 tok
    cdef i32 chosen
    cdef f64 total, target, acc
    cdef cnp.ndarray[i32, ndim=1] cand_arr = np.empty(max(top_k, 1),
                                                      dtype=np.int32)
    cdef cnp.ndarray[f64, ndim=1] w_arr = np.empty(max(top_k, 1),
                                                   dtype=np.float64)
    cdef i32[:] cand = cand_arr
    cdef f64[:] weights = w_arr
    cdef Py_ssize_t exc_lo, exc_hi, exc_mid
    cdef bint is_excluded

    for step in range(max_emit):
        row = _find_row(window, wlen, n, base, ctx_keys)
        if row < 0:
            raise ValueError("no context row found; model is missing its "
                             "unigram row")
        off = <Py_ssize_t>row_offsets[row]
        end = <Py_ssize_t>row_offsets[row + 1]
        nnz = end - off
        m = min(<Py_ssize_t>top_k, nnz)
        for j in range(m):
            cand[j] = rank_tokens[off + j]
            weights[j] = rank_counts[off + j] + smoothing_k
        ncand = m
        if top_k > nnz:
            tok = 0
            while ncand < top_k and tok < vocab_size:
                # excluded lookup
                is_excluded = False
                exc_lo = 0
                exc_hi = excluded.shape[0]
                while exc_lo < exc_hi:
                    exc_mid = (exc_lo + exc_hi) >> 1
                    if excluded[exc_mid] < tok:
                        exc_lo = exc_mid + 1
                    else:
                        exc_hi = exc_mid
                if exc_lo < excluded.shape[0] and excluded[exc_lo] == tok:
                    is_excluded = True
                if not is_excluded and _tok_search(id_tokens, off, end,
                                                   <i32>tok) < 0:
                    cand[ncand] = <i32>tok
                    weights[ncand] = smoothing_k
                    ncand += 1
                tok += 1
        total = 0.0
        for j in range(ncand):
            total += weights[j]
        if total <= 0.0:
            raise ValueError("next-token distribution has zero mass "
                             "(smoothing_k=0 with an empty context row)")
        target = uniforms[step] * total
        acc = 0.0
        chosen = cand[ncand - 1]
        for j in range(ncand):
            acc += weights[j]
            if target < acc:
                chosen = cand[j]
                break
        if chosen == eos_id:
            return emitted, True
        out[emitted] = chosen
        emitted += 1
        if wlen > 0:
            for j in range(wlen - 1):
                window[j] = window[j + 1]
            window[wlen - 1] = chosen
    return emitted, False
