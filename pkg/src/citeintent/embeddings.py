"""Static word-embedding providers and cosine nearest-neighbour search."""
from __future__ import annotations

import gzip
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from ._kernels import cosine_scores
from .errors import ConfigError, DataError


@dataclass(frozen=True, eq=False)
class WordVector:
    word: str
    components: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.components.shape[0])

    def __eq__(self, other):
        return (
            isinstance(other, WordVector)
            and self.word == other.word
            and np.array_equal(self.components, other.components)
        )


class EmbeddingProvider:
    """Read-only word -> vector lookup backed by a dense matrix."""

    def __init__(self, words: list[str], matrix: np.ndarray, provider_id: str):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(words):
            raise DataError("embedding matrix shape does not match word list")
        self._index = {}
        for i, w in enumerate(words):
            self._index.setdefault(w, i)
        self._matrix = matrix
        self._matrix.setflags(write=False)
        self.provider_id = provider_id

    @property
    def dim(self) -> int:
        return int(self._matrix.shape[1])

    def __len__(self):
        return len(self._index)

    def __contains__(self, word):
        return word in self._index

    def embed(self, word: str) -> WordVector | None:
        i = self._index.get(word)
        if i is None:
            return None
        return WordVector(word, self._matrix[i])

    def rows(self, words: Iterable[str]) -> tuple[list[str], np.ndarray]:
        """Embeddable subset of ``words`` (order kept) and their stacked vectors."""
        kept, idx = [], []
        for w in words:
            i = self._index.get(w)
            if i is not None:
                kept.append(w)
                idx.append(i)
        return kept, self._matrix[np.asarray(idx, dtype=np.int64)].reshape(len(idx), self.dim)


class InMemoryProvider(EmbeddingProvider):
    def __init__(self, vectors: Mapping[str, Iterable[float]], provider_id: str = "in-memory"):
        words = list(vectors)
        rows = [np.asarray(list(vectors[w]), dtype=np.float64) for w in words]
        dims = {r.shape[0] for r in rows}
        if len(dims) > 1:
            raise DataError(f"vectors have mixed dimensions {sorted(dims)}")
        matrix = np.vstack(rows) if rows else np.zeros((0, 0))
        super().__init__(words, matrix, provider_id)


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return path.open("r", encoding="utf-8", errors="replace")


def load_text_vectors(path, limit: int | None = None) -> EmbeddingProvider:
    """Load the ``word v1 v2 ...`` text format, with or without a ``count dim`` header."""
    path = Path(path)
    words, rows, dim = [], [], None
    try:
        with _open_text(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").rstrip().split(" ")
                if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    dim = int(parts[1])
                    continue
                if len(parts) < 2:
                    continue
                if dim is None:
                    dim = len(parts) - 1
                if len(parts) - 1 != dim:
                    raise DataError(f"{path}:{lineno}: expected {dim} components, got {len(parts) - 1}")
                try:
                    rows.append([float(x) for x in parts[1:]])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric component") from None
                words.append(parts[0])
                if limit is not None and len(words) >= limit:
                    break
    except OSError as exc:
        raise ConfigError(f"cannot read vectors file {path}: {exc.strerror}") from None
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim or 0)
    return EmbeddingProvider(words, matrix, _provider_id(path))


def load_binary_vectors(path, limit: int | None = None) -> EmbeddingProvider:
    """Load the word2vec binary format (``count dim`` header, then word + float32 row)."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise DataError(f"{path}: missing 'count dim' header")
            count, dim = int(header[0]), int(header[1])
            if limit is not None:
                count = min(count, limit)
            words = []
            matrix = np.empty((count, dim), dtype=np.float64)
            for i in range(count):
                chars = bytearray()
                while True:
                    ch = fh.read(1)
                    if not ch:
                        raise DataError(f"{path}: truncated at entry {i}")
                    if ch == b" ":
                        break
                    if ch != b"\n":
                        chars.extend(ch)
                words.append(chars.decode("utf-8", errors="replace"))
                buf = fh.read(4 * dim)
                if len(buf) != 4 * dim:
                    raise DataError(f"{path}: truncated vector at entry {i}")
                matrix[i] = np.frombuffer(buf, dtype="<f4")
    except OSError as exc:
        raise ConfigError(f"cannot read vectors file {path}: {exc.strerror}") from None
    return EmbeddingProvider(words, matrix, _provider_id(path))


def _provider_id(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return f"vectors:{path.name}:{h.hexdigest()[:12]}"


def load_provider(spec: str, limit: int | None = None) -> EmbeddingProvider:
    """Resolve a provider config value: a path to a text (.txt/.vec/.gz) or binary (.bin) vectors file."""
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"embedding provider {spec!r} not found")
    if path.suffix == ".bin":
        return load_binary_vectors(path, limit)
    return load_text_vectors(path, limit)


def cosine(a: WordVector, b: WordVector) -> float:
    x = np.asarray(a.components, dtype=np.float64)
    y = np.asarray(b.components, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("cosine undefined for a zero-norm vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def top_k_similar(
    anchor: str,
    candidates: Iterable[str],
    k: int,
    provider: EmbeddingProvider,
    with_scores: bool = False,
):
    """The ``k`` candidates closest to ``anchor`` by cosine, best first.

    Ties are broken lexicographically. Unembeddable or zero-norm candidates
    are skipped, so fewer than ``k`` words may come back.
    """
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    vec = provider.embed(anchor)
    if vec is None:
        raise DataError(f"anchor word {anchor!r} is not embeddable")
    if not np.any(vec.components):
        raise DataError(f"anchor word {anchor!r} has a zero vector")
    words, matrix = provider.rows(dict.fromkeys(candidates))
    if not words:
        return []
    sims = cosine_scores(vec.components, matrix)
    ranked = sorted(
        ((-float(s), w) for s, w in zip(sims, words) if not np.isnan(s)),
    )[:k]
    if with_scores:
        return [(w, -s) for s, w in ranked]
    return [w for _, w in ranked]
