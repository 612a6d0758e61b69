"""Time the compiled kernels against the numpy fallback on synthetic inputs.

    python benchmarks/bench_kernels.py --repeat 5
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from citeintent._kernels import _pykernels
from citeintent.corpus import STOPWORDS

try:
    from citeintent._kernels import _ckernels
except ImportError:
    _ckernels = None


def make_inputs(rng, n_words, dim, n_prompts, vocab, n_label_words, n_pred):
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    words = ["".join(rng.choice(letters, size=rng.integers(2, 9))) for _ in range(2000)]
    text = " ".join(rng.choice(words, size=n_words)) + " (see 3.1)."
    probs = rng.random((n_prompts, vocab))
    probs /= probs.sum(axis=1, keepdims=True)
    return {
        "tokenize_words": (text, STOPWORDS, 3),
        "cosine_scores": (rng.normal(size=dim), rng.normal(size=(n_words // 10, dim))),
        "label_scores": (probs, rng.integers(-1, vocab, n_label_words), rng.random(n_label_words),
                         np.sort(rng.integers(0, 6, n_label_words)), 6),
        "confusion_counts": (rng.integers(0, 6, n_pred), rng.integers(0, 6, n_pred), 6),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--words", type=int, default=200_000, help="tokens in the tokenizer input")
    parser.add_argument("--dim", type=int, default=300)
    parser.add_argument("--prompts", type=int, default=256)
    parser.add_argument("--vocab", type=int, default=30_000)
    parser.add_argument("--label-words", type=int, default=1_500)
    parser.add_argument("--predictions", type=int, default=1_000_000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    inputs = make_inputs(np.random.default_rng(args.seed), args.words, args.dim, args.prompts, args.vocab,
                         args.label_words, args.predictions)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the fallback only")

    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for kernel, call_args in inputs.items():
        times = {}
        results = {}
        for name, mod in backends.items():
            fn = getattr(mod, kernel)
            results[name] = fn(*call_args)
            times[name] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        if len(results) == 2:
            a, b = results["python"], results["cython"]
            same = a == b if isinstance(a, list) else np.allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)
            if not same:
                raise SystemExit(f"{kernel}: backends disagree")
        speedup = f"{times['python'] / times['cython']:>9.1f}x" if "cython" in times else f"{'-':>10}"
        print(f"{kernel:<18}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times.values()) + speedup)


if __name__ == "__main__":
    main()
