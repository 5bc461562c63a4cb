"""Hot-loop kernels with a compiled core and a numpy fallback.

The Cython extension is preferred when importable; set GENLEARN_PURE_PYTHON=1
to force the fallback (used by the backend-equivalence tests and benchmark).
Both backends are bit-compatible.
"""

import os

if os.environ.get("GENLEARN_PURE_PYTHON"):
    from genlearn._kernels import _py as _impl

    BACKEND = "python"
else:
    try:
        from genlearn._kernels import _cy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from genlearn._kernels import _py as _impl

        BACKEND = "python"

hashed_ngram_counts = _impl.hashed_ngram_counts
ngram_logprobs = _impl.ngram_logprobs
sample_tokens = _impl.sample_tokens

__all__ = ["BACKEND", "hashed_ngram_counts", "ngram_logprobs", "sample_tokens"]
