"""Pure-Python/numpy implementations of the hot loops.

Used when the compiled extension is unavailable or ``CITEINTENT_PURE_PYTHON=1``.
"""
from __future__ import annotations

import itertools
import re

import numpy as np

# letters plus non-decimal numerics; the rare numeric hits are re-split below
_ALPHA_RUN = re.compile(r"[^\W\d_]+")


def tokenize_words(text: str, stopwords, min_len: int) -> list[str]:
    out = []
    for tok in _ALPHA_RUN.findall(text.lower()):
        if not tok.isalpha():
            pieces = ("".join(g) for alpha, g in itertools.groupby(tok, str.isalpha) if alpha)
        else:
            pieces = (tok,)
        for piece in pieces:
            if len(piece) >= min_len and piece not in stopwords:
                out.append(piece)
    return out


def cosine_scores(anchor, matrix) -> np.ndarray:
    a = np.asarray(anchor, dtype=np.float64)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or a.shape[0] != m.shape[1]:
        raise ValueError(f"dimension mismatch: anchor {a.shape[0]} vs candidates {m.shape[-1]}")
    an = np.sqrt(a @ a)
    rn = np.sqrt(np.einsum("ij,ij->i", m, m))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (m @ a) / (an * rn)
    out[(rn == 0.0) | (an == 0.0)] = np.nan
    return out


def label_scores(probs, ids, weights, label_of, n_labels: int) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    lab = np.asarray(label_of, dtype=np.int64)
    keep = ids >= 0
    contrib = p[:, ids[keep]] * w[keep]
    out = np.zeros((p.shape[0], n_labels), dtype=np.float64)
    for col, label in enumerate(lab[keep]):
        out[:, label] += contrib[:, col]
    return out


def confusion_counts(gold, pred, n: int) -> np.ndarray:
    g = np.asarray(gold, dtype=np.int64)
    q = np.asarray(pred, dtype=np.int64)
    if g.shape != q.shape:
        raise ValueError("gold and predicted sequences differ in length")
    bad = (g < 0) | (g >= n) | (q < 0) | (q >= n)
    if bad.any():
        raise ValueError(f"label index out of range at position {int(np.argmax(bad))}")
    return np.bincount(g * n + q, minlength=n * n).reshape(n, n).astype(np.int64)
