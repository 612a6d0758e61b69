"""Knowledge-expanded verbalizers: label -> weighted label words.

Construction expands each label's anchor words against the section corpora
mapped to that label; scoring aggregates mask-position probability mass over
each label's words.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from ._kernels import label_scores
from ._resources import load_resource
from .corpus import LabelSectionMap, SectionCorpus
from .dataset_io import BUILTIN_SCHEMAS, LabelSchema, get_schema
from .embeddings import EmbeddingProvider, top_k_similar
from .errors import ConfigError, DataError
from .mlm import MaskDistribution, Vocabulary

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
# relative gap under which two label scores count as tied
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class AnchorSet:
    anchors: dict

    def __post_init__(self):
        for label, words in self.anchors.items():
            if not words:
                raise ConfigError(f"label {label!r} has no anchor words")
            for w in words:
                if not isinstance(w, str) or not w or w != w.lower() or not w.isalpha():
                    raise ConfigError(f"anchor {w!r} for {label!r} must be a lowercase single word")

    def __getitem__(self, label):
        return tuple(self.anchors[label])

    def check_schema(self, schema: LabelSchema) -> None:
        missing = [lab for lab in schema.labels if lab not in self.anchors]
        if missing:
            raise ConfigError(f"anchor set lacks labels {missing}")

    def to_dict(self):
        return {lab: list(ws) for lab, ws in self.anchors.items()}


def default_anchors(schema: LabelSchema) -> AnchorSet:
    if schema.name not in BUILTIN_SCHEMAS:
        raise ConfigError(f"no default anchors for schema {schema.name!r}")
    table = load_resource("anchors.json")["labels"]
    return AnchorSet({lab: tuple(table[lab]) for lab in schema.labels})


@dataclass(frozen=True)
class LabelWordEntry:
    word: str
    weight: float
    anchor: str
    section: str | None = None

    @property
    def is_anchor(self) -> bool:
        return self.section is None and self.word == self.anchor


def _normalized(entries: Sequence[LabelWordEntry], label: str) -> tuple[LabelWordEntry, ...]:
    weights = np.array([e.weight for e in entries], dtype=np.float64)
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise DataError(f"label {label!r} has a negative or non-finite weight")
    total = math.fsum(weights)
    if total <= 0:
        raise DataError(f"label {label!r} has zero total weight")
    if abs(total - 1.0) <= 1e-12:
        return tuple(entries)
    return tuple(LabelWordEntry(e.word, e.weight / total, e.anchor, e.section) for e in entries)


@dataclass(frozen=True)
class Verbalizer:
    schema: LabelSchema
    entries: dict
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        fixed = {}
        for label in self.schema.labels:
            items = tuple(self.entries.get(label, ()))
            if not items:
                raise DataError(f"label {label!r} has no label words")
            words = [e.word for e in items]
            if len(set(words)) != len(words):
                raise DataError(f"label {label!r} has duplicate words")
            if any(not w for w in words):
                raise DataError(f"label {label!r} has an empty word")
            fixed[label] = _normalized(items, label)
        extra = set(self.entries) - set(self.schema.labels)
        if extra:
            raise DataError(f"verbalizer labels {sorted(extra)} are not in schema {self.schema.name!r}")
        object.__setattr__(self, "entries", fixed)

    def words(self, label: str) -> list[str]:
        return [e.word for e in self.entries[label]]

    def anchors(self, label: str) -> list[str]:
        return [e.word for e in self.entries[label] if e.is_anchor]

    def weights(self, label: str) -> np.ndarray:
        return np.array([e.weight for e in self.entries[label]], dtype=np.float64)

    def all_words(self) -> list[str]:
        return sorted({e.word for items in self.entries.values() for e in items})

    def set_sizes(self) -> dict[str, int]:
        return {lab: len(self.entries[lab]) for lab in self.schema.labels}

    def replace(self, entries: Mapping[str, Sequence[LabelWordEntry]], step: dict | None = None,
                **manifest_updates) -> "Verbalizer":
        manifest = copy.deepcopy(self.manifest)
        manifest.update(manifest_updates)
        if step is not None:
            manifest.setdefault("refinement_steps", []).append(step)
        new = Verbalizer(self.schema, dict(entries), manifest)
        new.manifest["set_sizes"] = new.set_sizes()
        return new

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "schema": {**self.schema.to_dict(), "hash": self.schema.digest()},
            "manifest": self.manifest,
            "labels": {
                lab: [{"word": e.word, "weight": e.weight, "anchor": e.anchor, "section": e.section}
                      for e in self.entries[lab]]
                for lab in self.schema.labels
            },
        }

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "Verbalizer":
        if not isinstance(data, dict) or "version" not in data:
            raise DataError("not a verbalizer document")
        if data["version"] != FORMAT_VERSION:
            raise DataError(f"verbalizer format version {data['version']!r} unsupported (expected {FORMAT_VERSION})")
        try:
            sch = data["schema"]
            schema = LabelSchema(sch["name"], tuple(sch["labels"]))
            if sch.get("hash") != schema.digest():
                raise DataError("verbalizer schema hash mismatch")
            if schema.name in BUILTIN_SCHEMAS:
                builtin = get_schema(schema.name)
                if builtin.labels != schema.labels:
                    raise DataError(f"verbalizer schema {schema.name!r} disagrees with the built-in label set")
                schema = builtin
            entries = {
                lab: [LabelWordEntry(e["word"], float(e["weight"]), e["anchor"], e.get("section"))
                      for e in items]
                for lab, items in data["labels"].items()
            }
            return cls(schema, entries, data.get("manifest", {}))
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"malformed verbalizer document: {exc!r}") from None


def save_verbalizer(verbalizer: Verbalizer, path) -> None:
    Path(path).write_text(json.dumps(verbalizer.to_dict(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def load_verbalizer(path) -> Verbalizer:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read verbalizer {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"verbalizer {path} is not valid JSON: {exc.msg}") from None
    return Verbalizer.from_dict(data)


def build_verbalizer(
    schema: LabelSchema,
    anchors: AnchorSet,
    section_map: LabelSectionMap,
    corpus: SectionCorpus,
    embedder: EmbeddingProvider,
    k: int = 100,
    extra_manifest: dict | None = None,
) -> Verbalizer:
    """Union of the top-``k`` corpus neighbours of every (anchor, mapped section) pair, plus the anchors."""
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    anchors.check_schema(schema)
    section_map.check_schema(schema)
    for label in schema.labels:
        for section in section_map[label]:
            if corpus.count(section) == 0:
                raise DataError(f"section {section!r} (mapped from {label!r}) is empty in the corpus")
        for a in anchors[label]:
            if embedder.embed(a) is None:
                raise DataError(f"anchor {a!r} for {label!r} is not embeddable")

    vocab_cache: dict[str, list[str]] = {}
    entries = {}
    for label in schema.labels:
        chosen: dict[str, LabelWordEntry] = {}
        for a in anchors[label]:
            chosen.setdefault(a, LabelWordEntry(a, 1.0, a, None))
        for a in anchors[label]:
            for section in section_map[label]:
                if section not in vocab_cache:
                    vocab_cache[section] = corpus.vocabulary(section)
                for w in top_k_similar(a, vocab_cache[section], k, embedder):
                    chosen.setdefault(w, LabelWordEntry(w, 1.0, a, section))
        entries[label] = list(chosen.values())

    manifest = {
        "tool_version": __version__,
        "k": k,
        "provider_id": embedder.provider_id,
        "corpus_hash": corpus.manifest()["content_sha256"],
        "corpus_quota": corpus.quota,
        "anchors": anchors.to_dict(),
        "section_map": section_map.to_dict(),
        "dedup": "exact-string within label",
        "refinement_steps": [],
        "learnable_weights": False,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    verb = Verbalizer(schema, entries, manifest)
    verb.manifest["set_sizes"] = verb.set_sizes()
    return verb


@dataclass(frozen=True)
class VerbalizerIndex:
    """Flat arrays describing a verbalizer against one vocabulary."""

    ids: np.ndarray
    weights: np.ndarray
    label_of: np.ndarray
    n_labels: int
    unresolved: tuple


def compile_index(verbalizer: Verbalizer, vocab: Vocabulary) -> VerbalizerIndex:
    ids, weights, label_of, unresolved = [], [], [], []
    for li, label in enumerate(verbalizer.schema.labels):
        for e in verbalizer.entries[label]:
            r = vocab.resolve(e.word)
            ids.append(-1 if r.token_id is None else r.token_id)
            if r.token_id is None:
                unresolved.append(e.word)
            weights.append(e.weight)
            label_of.append(li)
    return VerbalizerIndex(
        np.asarray(ids, dtype=np.int64),
        np.asarray(weights, dtype=np.float64),
        np.asarray(label_of, dtype=np.int64),
        len(verbalizer.schema.labels),
        tuple(unresolved),
    )


def score_matrix(probs: np.ndarray, vocab: Vocabulary, verbalizer: Verbalizer) -> np.ndarray:
    """Label scores for a batch of distributions, shape (batch, n_labels)."""
    idx = compile_index(verbalizer, vocab)
    if idx.unresolved:
        log.debug("%d label words unresolvable; scored as 0", len(idx.unresolved))
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    return label_scores(probs, idx.ids, idx.weights, idx.label_of, idx.n_labels)


def _check_schema(verbalizer: Verbalizer, schema: LabelSchema | None):
    if schema is not None and verbalizer.schema.labels != schema.labels:
        raise DataError(f"verbalizer schema {verbalizer.schema.name!r} does not match run schema {schema.name!r}")


def score_labels(dist: MaskDistribution, verbalizer: Verbalizer, schema: LabelSchema | None = None) -> dict[str, float]:
    _check_schema(verbalizer, schema)
    row = score_matrix(dist.probs, dist.vocab, verbalizer)[0]
    return {lab: float(s) for lab, s in zip(verbalizer.schema.labels, row)}


def argmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; scores within TIE_RTOL of the row max tie, first label wins."""
    scores = np.atleast_2d(scores)
    top = scores.max(axis=1, keepdims=True)
    return np.argmax(scores >= top - TIE_RTOL * np.abs(top), axis=1)


def predict(dist: MaskDistribution, verbalizer: Verbalizer, schema: LabelSchema | None = None) -> str:
    _check_schema(verbalizer, schema)
    row = score_matrix(dist.probs, dist.vocab, verbalizer)
    return verbalizer.schema.labels[int(argmax_rows(row)[0])]
