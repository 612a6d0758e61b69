"""Per-section word corpora built from parsed scientific papers.

The corpora are the external knowledge base that anchor words are expanded
against when building a verbalizer.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

from . import __version__
from ._kernels import tokenize_words
from ._resources import load_resource
from .dataset_io import LabelSchema
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

CANONICAL_SECTIONS = (
    "introduction",
    "related_work",
    "motivation",
    "methodology",
    "evaluation",
    "results",
    "discussion",
    "conclusion",
)
MIN_TOKEN_LEN = 3
STOPWORDS = frozenset(ENGLISH_STOP_WORDS)
TOKEN_POLICY = "running tokens after lowercasing, alphabetic split, len>=3, stopword removal"

_NUMBERING = re.compile(r"^\s*(?:\d+(?:\.\d+)*|[ivx]+)(?:[.):]\s*|\s+)")
_PUNCT = re.compile(r"[^\w\s/]+")
_WS = re.compile(r"\s+")


def _heading_key(raw: str) -> str:
    text = _NUMBERING.sub("", raw.strip().lower(), count=1)
    text = text.replace("&", " and ")
    text = _PUNCT.sub(" ", text)
    return _WS.sub(" ", text).strip()


class SectionAliases:
    """Heading alias table; extend() adds user entries on top of the shipped ones."""

    def __init__(self, table: Mapping[str, Iterable[str]] | None = None):
        self._lookup: dict[str, str] = {}
        source = table if table is not None else load_resource("section_aliases.json")["sections"]
        self.extend(source)

    def extend(self, table: Mapping[str, Iterable[str]]) -> "SectionAliases":
        for section, headings in table.items():
            if section not in CANONICAL_SECTIONS:
                raise ConfigError(f"{section!r} is not a canonical section")
            self._lookup[_heading_key(section.replace("_", " "))] = section
            for heading in headings:
                self._lookup[_heading_key(heading)] = section
        return self

    def lookup(self, raw: str) -> str | None:
        return self._lookup.get(_heading_key(raw))

    def __len__(self):
        return len(self._lookup)


_DEFAULT_ALIASES: SectionAliases | None = None


def normalize_section_name(raw: str, aliases: SectionAliases | None = None) -> str | None:
    """Canonical section for a free-form heading, or None when no alias matches."""
    global _DEFAULT_ALIASES
    if aliases is None:
        if _DEFAULT_ALIASES is None:
            _DEFAULT_ALIASES = SectionAliases()
        aliases = _DEFAULT_ALIASES
    if not isinstance(raw, str):
        return None
    return aliases.lookup(raw)


@dataclass(frozen=True)
class SectionCorpus:
    words: dict
    quota: int
    papers_read: int = 0
    papers_contributing: int = 0
    records_skipped: int = 0
    papers_filtered: int = 0
    meta: dict = field(default_factory=dict)

    def section_words(self, section: str) -> tuple[str, ...]:
        if section not in CANONICAL_SECTIONS:
            raise DataError(f"{section!r} is not a canonical section")
        return self.words.get(section, ())

    def count(self, section: str) -> int:
        return len(self.section_words(section))

    def fill_counts(self) -> dict[str, int]:
        return {s: self.count(s) for s in CANONICAL_SECTIONS}

    def counts(self, section: str) -> Counter:
        return Counter(self.section_words(section))

    def vocabulary(self, section: str) -> list[str]:
        """Distinct words of a section in first-occurrence order."""
        return list(dict.fromkeys(self.section_words(section)))

    def is_full(self) -> bool:
        return all(self.count(s) >= self.quota for s in CANONICAL_SECTIONS)

    def manifest(self) -> dict:
        return {
            "tool_version": __version__,
            "quota": self.quota,
            "token_policy": TOKEN_POLICY,
            "papers_read": self.papers_read,
            "papers_contributing": self.papers_contributing,
            "records_skipped": self.records_skipped,
            "papers_filtered": self.papers_filtered,
            "section_counts": self.fill_counts(),
            "content_sha256": self._content_hash(),
            **({"meta": self.meta} if self.meta else {}),
        }

    def _content_hash(self) -> str:
        h = hashlib.sha256()
        for s in CANONICAL_SECTIONS:
            h.update(s.encode())
            h.update(b"\0")
            h.update("\n".join(self.section_words(s)).encode())
            h.update(b"\1")
        return h.hexdigest()

    def digest(self) -> str:
        return self._content_hash()[:16]

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for s in CANONICAL_SECTIONS:
            words = self.section_words(s)
            (out / f"{s}.txt").write_text("".join(w + "\n" for w in words), encoding="utf-8")
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, in_dir) -> "SectionCorpus":
        src = Path(in_dir)
        manifest_path = src / "manifest.json"
        if not manifest_path.is_file():
            raise DataError(f"{src} is not a corpus archive (manifest.json missing)")
        try:
            manifest = json.loads(manifest_path.read_text())
            words = {}
            for s in CANONICAL_SECTIONS:
                path = src / f"{s}.txt"
                words[s] = tuple(path.read_text(encoding="utf-8").split()) if path.exists() else ()
            corpus = cls(
                words=words,
                quota=int(manifest["quota"]),
                papers_read=manifest.get("papers_read", 0),
                papers_contributing=manifest.get("papers_contributing", 0),
                records_skipped=manifest.get("records_skipped", 0),
                papers_filtered=manifest.get("papers_filtered", 0),
                meta=manifest.get("meta", {}),
            )
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"corrupt corpus archive {src}: {exc}") from None
        expected = manifest.get("content_sha256")
        if expected and expected != corpus._content_hash():
            raise DataError(f"corpus archive {src} does not match its manifest hash")
        return corpus


def field_matches(record: dict, wanted: str | None) -> bool:
    """Field-of-study filter; records without the metadata pass through."""
    if wanted is None:
        return True
    value = record.get("field_of_study", record.get("mag_field_of_study"))
    if value is None:
        return True
    values = [value] if isinstance(value, str) else list(value)
    return any(str(v).strip().lower() == wanted.strip().lower() for v in values)


def _paragraphs(record):
    body = record.get("body_text")
    if not isinstance(body, list):
        raise ValueError("body_text is not a list")
    for para in body:
        if not isinstance(para, dict) or not isinstance(para.get("text"), str):
            raise ValueError("malformed body_text entry")
        yield para.get("section") or "", para["text"]


def ingest_sections(
    papers: Iterable,
    quota: int,
    field_of_study: str | None = None,
    aliases: SectionAliases | None = None,
    stopwords: frozenset = STOPWORDS,
) -> SectionCorpus:
    """Fill each canonical section with up to ``quota`` filtered tokens, in stream order.

    ``papers`` yields dicts or JSON strings in the parsed-paper shape. Records
    that cannot be parsed are skipped and counted. Consumption stops as soon
    as every section is full.
    """
    if not isinstance(quota, int) or quota <= 0:
        raise ConfigError(f"quota must be a positive integer, got {quota!r}")
    buckets: dict[str, list[str]] = {s: [] for s in CANONICAL_SECTIONS}
    open_sections = set(CANONICAL_SECTIONS)
    read = contributing = skipped = filtered = 0
    for item in papers if open_sections else ():
        read += 1
        try:
            record = json.loads(item) if isinstance(item, (str, bytes)) else item
            if not isinstance(record, dict):
                raise ValueError("record is not an object")
            if not field_matches(record, field_of_study):
                filtered += 1
                continue
            paragraphs = list(_paragraphs(record))
        except ValueError as exc:
            skipped += 1
            log.debug("skipping unreadable record %d: %s", read, exc)
            continue
        added = False
        for heading, text in paragraphs:
            section = normalize_section_name(heading, aliases)
            if section is None or section not in open_sections:
                continue
            bucket = buckets[section]
            room = quota - len(bucket)
            tokens = tokenize_words(text, stopwords, MIN_TOKEN_LEN)
            if tokens:
                bucket.extend(tokens[:room])
                added = True
            if len(bucket) >= quota:
                open_sections.discard(section)
        contributing += added
        if not open_sections:
            break
    if skipped:
        log.warning("skipped %d unreadable records", skipped)
    return SectionCorpus(
        words={s: tuple(b) for s, b in buckets.items()},
        quota=quota,
        papers_read=read,
        papers_contributing=contributing,
        records_skipped=skipped,
        papers_filtered=filtered,
    )


def iter_jsonl(path) -> Iterable[str]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield line


@dataclass(frozen=True)
class LabelSectionMap:
    sections: dict

    def __post_init__(self):
        for label, secs in self.sections.items():
            if not secs:
                raise DataError(f"label {label!r} has no mapped sections")
            bad = [s for s in secs if s not in CANONICAL_SECTIONS]
            if bad:
                raise DataError(f"label {label!r} maps to non-canonical sections {bad}")

    def __getitem__(self, label: str) -> tuple[str, ...]:
        return self.sections[label]

    def check_schema(self, schema: LabelSchema) -> None:
        missing = [lab for lab in schema.labels if lab not in self.sections]
        if missing:
            raise DataError(f"section map lacks labels {missing}")

    def to_dict(self) -> dict:
        return {lab: list(secs) for lab, secs in self.sections.items()}


def default_section_map(schema: LabelSchema) -> LabelSectionMap:
    """Label-to-section table for the built-in schemas."""
    from .dataset_io import BUILTIN_SCHEMAS

    if schema.name not in BUILTIN_SCHEMAS:
        raise ConfigError(f"no default section map for schema {schema.name!r}; supply one")
    table = load_resource("section_map.json")["labels"]
    return LabelSectionMap({lab: tuple(table[lab]) for lab in schema.labels})
