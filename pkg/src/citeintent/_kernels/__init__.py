"""Hot-loop kernels: compiled extension when built, numpy fallback otherwise.

Set ``CITEINTENT_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("CITEINTENT_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

tokenize_words = _impl.tokenize_words
cosine_scores = _impl.cosine_scores
label_scores = _impl.label_scores
confusion_counts = _impl.confusion_counts

__all__ = ["BACKEND", "tokenize_words", "cosine_scores", "label_scores", "confusion_counts"]
