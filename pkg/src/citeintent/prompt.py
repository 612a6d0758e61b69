"""Prompt templates with literal ``[X]`` (input) and ``[MASK]`` (answer) slots."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConfigError

INPUT_SLOT = "[X]"
MASK_SLOT = "[MASK]"
DEFAULT_PATTERN = "[X] It has a citation of type [MASK]."

_TRAILING_PUNCT = re.compile(r"^[\s.!?;:,]*$")


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str
    kind: str = "prefix"

    def __post_init__(self):
        check_pattern(self.pattern)
        if self.kind not in ("prefix", "cloze"):
            raise ConfigError(f"template kind must be 'prefix' or 'cloze', got {self.kind!r}")
        if self.kind == "prefix" and self.pattern.index(MASK_SLOT) < self.pattern.index(INPUT_SLOT):
            raise ConfigError("a prefix template needs the [MASK] slot after the [X] slot")

    @classmethod
    def from_pattern(cls, pattern: str) -> "PromptTemplate":
        """Infer the kind: prefix when only punctuation follows a mask that follows the input."""
        check_pattern(pattern)
        x, m = pattern.index(INPUT_SLOT), pattern.index(MASK_SLOT)
        tail = pattern[m + len(MASK_SLOT):]
        kind = "prefix" if m > x and _TRAILING_PUNCT.match(tail) else "cloze"
        return cls(pattern, kind)

    @property
    def head(self) -> str:
        return self.pattern.split(INPUT_SLOT)[0]

    @property
    def tail(self) -> str:
        return self.pattern.split(INPUT_SLOT)[1]


def check_pattern(pattern: str) -> None:
    if not isinstance(pattern, str) or not pattern:
        raise ConfigError("template pattern is empty")
    for slot in (INPUT_SLOT, MASK_SLOT):
        n = pattern.count(slot)
        if n != 1:
            raise ConfigError(f"template must contain {slot} exactly once, found {n}")


def default_template() -> PromptTemplate:
    return PromptTemplate(DEFAULT_PATTERN, "prefix")


@dataclass(frozen=True)
class RenderedPrompt:
    """A filled template, kept in three pieces so backends can trim the instance alone."""

    head: str
    instance: str
    tail: str
    mask_position_hint: str = MASK_SLOT

    @property
    def text(self) -> str:
        return self.head + self.instance + self.tail


def render(template: PromptTemplate, instance) -> RenderedPrompt:
    """Substitute an instance (or raw sentence) into the input slot verbatim."""
    check_pattern(template.pattern)
    text = getattr(instance, "text", instance)
    if not text or not text.strip():
        raise ConfigError("cannot render an empty instance text")
    return RenderedPrompt(template.head, text, template.tail)


def truncate_front(head: list, instance: list, tail: list, budget: int) -> list:
    """Drop leading instance tokens until head+instance+tail fits ``budget``."""
    room = budget - len(head) - len(tail)
    if room < 0:
        raise ConfigError(f"template alone needs {len(head) + len(tail)} tokens, budget is {budget}")
    if len(instance) <= room:
        return instance
    return instance[len(instance) - room:] if room else []
