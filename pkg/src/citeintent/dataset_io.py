"""Citation-intent datasets: label schemas, JSONL loading and k-shot sampling."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ._resources import load_resource
from .errors import ConfigError, DataError

SPLITS = ("train", "dev", "test")
_WS = re.compile(r"\s+")


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


@dataclass(frozen=True)
class LabelSchema:
    name: str
    labels: tuple[str, ...]
    aliases: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if not self.labels:
            raise DataError(f"schema {self.name!r} has no labels")
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"schema {self.name!r} has duplicate labels")
        if any(not lab for lab in self.labels):
            raise DataError(f"schema {self.name!r} has an empty label")

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.labels

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def canonical(self, raw: str) -> str:
        """Map a source-dataset spelling onto a schema label, or raise DataError."""
        key = str(raw).strip().lower()
        if key in self.labels:
            return key
        hit = self.aliases.get(key)
        if hit is None:
            raise DataError(f"unknown label {raw!r} for schema {self.name!r}")
        return hit

    def digest(self) -> str:
        payload = json.dumps({"name": self.name, "labels": list(self.labels)}, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"name": self.name, "labels": list(self.labels)}


BUILTIN_SCHEMAS = ("acl_arc", "scicite")
_SCHEMA_NAME_ALIASES = {"acl-arc": "acl_arc", "aclarc": "acl_arc", "acl_arc": "acl_arc", "scicite": "scicite"}


def get_schema(name: str) -> LabelSchema:
    key = _SCHEMA_NAME_ALIASES.get(name.strip().lower())
    if key is None:
        raise ConfigError(f"unknown schema {name!r}; built-ins are {', '.join(BUILTIN_SCHEMAS)}")
    spec = load_resource("schemas.json")["schemas"][key]
    aliases = {}
    for label, spellings in spec["aliases"].items():
        for s in spellings:
            aliases[s.lower()] = label
    return LabelSchema(key, tuple(spec["labels"]), aliases)


@dataclass(frozen=True)
class CitationInstance:
    text: str
    label: str | None
    instance_id: str
    section_hint: str | None = None


@dataclass(frozen=True)
class Dataset:
    schema: LabelSchema
    split: str
    instances: tuple[CitationInstance, ...]

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")
        seen = set()
        for inst in self.instances:
            if inst.label is not None and inst.label not in self.schema:
                raise DataError(f"label {inst.label!r} not in schema {self.schema.name!r}")
            if inst.instance_id in seen:
                raise DataError(f"duplicate instance id {inst.instance_id!r} in {self.split} split")
            seen.add(inst.instance_id)

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def texts(self) -> list[str]:
        return [inst.text for inst in self.instances]

    def label_counts(self) -> dict[str, int]:
        counts = {lab: 0 for lab in self.schema.labels}
        for inst in self.instances:
            if inst.label is not None:
                counts[inst.label] += 1
        return counts


def _field(record: dict, *keys):
    for key in keys:
        if key in record:
            return record[key]
    return None


def parse_records(lines: Iterable[str], schema: LabelSchema, split: str, source: str = "<stream>") -> Dataset:
    instances = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{source}:{lineno}: malformed record ({exc.msg})") from None
        if not isinstance(record, dict):
            raise DataError(f"{source}:{lineno}: record is not a JSON object")
        # ACL-ARC's public release spells the fields "text" and "intent"
        text = _field(record, "string", "text")
        if text is None:
            raise DataError(f"{source}:{lineno}: missing required field 'string'")
        text = normalize_whitespace(str(text))
        if not text:
            raise DataError(f"{source}:{lineno}: empty citation text")
        if "label" in record or "intent" in record:
            raw = _field(record, "label", "intent")
            try:
                label = None if raw is None else schema.canonical(raw)
            except DataError as exc:
                raise DataError(f"{source}:{lineno}: {exc}") from None
        else:
            raise DataError(f"{source}:{lineno}: missing required field 'label'")
        rid = _field(record, "id", "unique_id")
        instances.append(
            CitationInstance(
                text=text,
                label=label,
                instance_id=str(rid) if rid is not None else f"{split}-{lineno}",
                section_hint=record.get("sectionName"),
            )
        )
    return Dataset(schema, split, tuple(instances))


def load_dataset(path, schema: LabelSchema, split: str) -> Dataset:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            return parse_records(fh, schema, split, source=str(path))
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc.strerror}") from None


def save_dataset(dataset: Dataset, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in dataset.instances:
            record = {"id": inst.instance_id, "string": inst.text, "label": inst.label}
            if inst.section_hint is not None:
                record["sectionName"] = inst.section_hint
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def sample_few_shot(dataset: Dataset, k: int, seed: int) -> Dataset:
    """Draw min(k, available) instances per label without replacement.

    Selections keep the original instance order, so a k that covers every
    label returns the dataset unchanged.
    """
    if not isinstance(k, (int, np.integer)) or k <= 0:
        raise ConfigError(f"k must be a positive integer, got {k!r}")
    if dataset.split != "train":
        raise DataError(f"few-shot sampling draws from train only, got {dataset.split!r}")
    by_label: dict[str, list[int]] = {lab: [] for lab in dataset.schema.labels}
    for i, inst in enumerate(dataset.instances):
        if inst.label is not None:
            by_label[inst.label].append(i)
    missing = [lab for lab, idx in by_label.items() if not idx]
    if missing:
        raise DataError(f"labels absent from train split: {', '.join(missing)}")
    rng = np.random.default_rng(seed)
    chosen = []
    for lab in dataset.schema.labels:
        idx = by_label[lab]
        take = min(int(k), len(idx))
        chosen.extend(idx[j] for j in rng.choice(len(idx), size=take, replace=False))
    chosen.sort()
    return Dataset(dataset.schema, dataset.split, tuple(dataset.instances[i] for i in chosen))
