"""Verbalizer refinement for few-shot and zero-shot use.

Four steps, applied in this order:

1. ``frequency_refine`` drops words the model rarely predicts at the mask
   (per-label quantile cut on contextual priors).
2. ``relevance_refine`` drops words whose probability is not elevated on
   support prompts the verbalizer assigns to their label.
3. ``attach_learnable_weights`` turns per-word weights into trainable values.
4. ``calibrate`` divides mask distributions by the priors at inference time.

Anchors are never removed, and no label is cut below ``min_words_per_label``.
Each removal step records itself in the manifest; re-applying a step already
recorded with the same configuration and support returns the input unchanged.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .mlm import MaskDistribution, MaskedLanguageModel, Vocabulary
from .prompt import PromptTemplate, render
from .verbalizer import LabelWordEntry, Verbalizer, argmax_rows, score_matrix

log = logging.getLogger(__name__)

PRIOR_FLOOR = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class RefinementConfig:
    frequency_quantile: float = 0.25
    relevance_threshold: float = 1.0
    min_words_per_label: int = 3
    support_size: int = 200

    def __post_init__(self):
        if not 0.0 <= self.frequency_quantile < 1.0:
            raise ConfigError(f"frequency_quantile must lie in [0, 1), got {self.frequency_quantile}")
        if not self.relevance_threshold >= 0.0:
            raise ConfigError(f"relevance_threshold must be >= 0, got {self.relevance_threshold}")
        if int(self.min_words_per_label) < 1:
            raise ConfigError("min_words_per_label must be >= 1")
        if int(self.support_size) < 1:
            raise ConfigError("support_size must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PriorEstimate:
    priors: dict
    support_size: int

    def __post_init__(self):
        if self.support_size <= 0:
            raise DataError("prior estimate needs a non-empty support set")
        for w, p in self.priors.items():
            if not 0.0 <= p <= 1.0:
                raise DataError(f"prior for {w!r} is outside [0, 1]: {p}")

    def get(self, word: str) -> float:
        return self.priors.get(word, 0.0)

    def digest(self) -> str:
        payload = json.dumps(sorted(self.priors.items()), separators=(",", ":"))
        return hashlib.sha256(f"{self.support_size}:{payload}".encode()).hexdigest()[:16]

    def to_dict(self):
        return {"support_size": self.support_size, "priors": dict(sorted(self.priors.items()))}

    @classmethod
    def from_dict(cls, data):
        return cls({w: float(p) for w, p in data["priors"].items()}, int(data["support_size"]))


def support_probabilities(mlm: MaskedLanguageModel, template: PromptTemplate,
                          support_texts: Sequence[str], max_length: int | None = None) -> np.ndarray:
    if not support_texts:
        raise DataError("support set is empty")
    prompts = [render(template, t) for t in support_texts]
    return mlm.mask_probabilities(prompts, max_length)


def priors_from_probabilities(probs: np.ndarray, vocab: Vocabulary, words: Sequence[str]) -> PriorEstimate:
    mean = probs.mean(axis=0)
    priors = {}
    for w in words:
        r = vocab.resolve(w)
        if r.token_id is not None:
            priors[w] = float(min(1.0, max(0.0, mean[r.token_id])))
    return PriorEstimate(priors, int(probs.shape[0]))


def estimate_priors(mlm: MaskedLanguageModel, template: PromptTemplate, support_texts: Sequence[str],
                    words: Sequence[str] | Verbalizer, max_length: int | None = None) -> PriorEstimate:
    """Mean mask-position probability of each tracked word over the support prompts."""
    if isinstance(words, Verbalizer):
        words = words.all_words()
    probs = support_probabilities(mlm, template, support_texts, max_length)
    return priors_from_probabilities(probs, mlm.vocab, words)


def _already_applied(verbalizer: Verbalizer, step: dict) -> bool:
    return any(s == step for s in verbalizer.manifest.get("refinement_steps", []))


def _cut(entries, values: np.ndarray, drop: np.ndarray, floor: int) -> list[LabelWordEntry]:
    """Apply a drop mask, sparing anchors and restoring the best-valued words up to ``floor``."""
    anchors = np.array([e.is_anchor for e in entries])
    drop = drop & ~anchors
    keep = ~drop
    short = floor - int(keep.sum())
    if short > 0:
        candidates = [i for i in np.argsort(-values, kind="stable") if drop[i]]
        for i in candidates[:short]:
            keep[i] = True
    return [e for e, kept in zip(entries, keep) if kept]


def frequency_refine(verbalizer: Verbalizer, priors: PriorEstimate, config: RefinementConfig,
                     support_digest: str | None = None) -> Verbalizer:
    """Within each label, drop words whose prior is below the label's ``frequency_quantile`` quantile.

    The manifest step is keyed on ``support_digest`` when given, else on the priors.
    """
    source = {"support": support_digest} if support_digest is not None else {"priors": priors.digest()}
    step = {"step": "frequency", "config": config.to_dict(), **source}
    if _already_applied(verbalizer, step):
        return verbalizer
    new_entries = {}
    for label in verbalizer.schema.labels:
        entries = verbalizer.entries[label]
        values = np.array([priors.get(e.word) for e in entries], dtype=np.float64)
        threshold = np.quantile(values, config.frequency_quantile)
        new_entries[label] = _cut(entries, values, values < threshold, config.min_words_per_label)
    return verbalizer.replace(new_entries, step=step)


def relevance_scores(verbalizer: Verbalizer, probs: np.ndarray, vocab: Vocabulary) -> dict[str, np.ndarray | None]:
    """Per label, each word's mean probability on prompts predicted as that label over its overall mean.

    ``None`` marks labels that no support prompt was predicted as.
    """
    predicted = argmax_rows(score_matrix(probs, vocab, verbalizer))
    overall = probs.mean(axis=0)
    out = {}
    for li, label in enumerate(verbalizer.schema.labels):
        rows = probs[predicted == li]
        if rows.shape[0] == 0:
            out[label] = None
            continue
        conditional = rows.mean(axis=0)
        rel = []
        for e in verbalizer.entries[label]:
            r = vocab.resolve(e.word)
            if r.token_id is None:
                rel.append(0.0)
            else:
                rel.append(conditional[r.token_id] / max(overall[r.token_id], PRIOR_FLOOR))
        out[label] = np.asarray(rel, dtype=np.float64)
    return out


def relevance_refine_from_probabilities(verbalizer: Verbalizer, probs: np.ndarray, vocab: Vocabulary,
                                        config: RefinementConfig, support_digest: str = "") -> Verbalizer:
    step = {"step": "relevance", "config": config.to_dict(), "support": support_digest}
    if _already_applied(verbalizer, step):
        return verbalizer
    scores = relevance_scores(verbalizer, probs, vocab)
    new_entries = {}
    for label in verbalizer.schema.labels:
        entries = verbalizer.entries[label]
        rel = scores[label]
        if rel is None:
            log.warning("no support prompt predicted as %r; relevance refinement skipped for it", label)
            new_entries[label] = list(entries)
            continue
        new_entries[label] = _cut(entries, rel, rel < config.relevance_threshold, config.min_words_per_label)
    return verbalizer.replace(new_entries, step=step)


def _support_digest(texts: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(texts).encode()).hexdigest()[:16]


def relevance_refine(verbalizer: Verbalizer, mlm: MaskedLanguageModel, template: PromptTemplate,
                     support_texts: Sequence[str], config: RefinementConfig,
                     max_length: int | None = None) -> Verbalizer:
    probs = support_probabilities(mlm, template, support_texts, max_length)
    return relevance_refine_from_probabilities(
        verbalizer, probs, mlm.vocab, config, _support_digest(support_texts)
    )


def calibrate(dist: MaskDistribution, priors: PriorEstimate) -> MaskDistribution:
    """Divide by the priors over the tracked words and renormalise there; untracked words get 0."""
    probs = calibrate_rows(dist.probs[None, :], dist.vocab, priors)[0]
    return MaskDistribution(probs, dist.vocab)


def _tracked(vocab: Vocabulary, priors: PriorEstimate) -> tuple[np.ndarray, np.ndarray]:
    by_id: dict[int, float] = {}
    for w, p in priors.priors.items():
        r = vocab.resolve(w)
        if r.token_id is not None:
            by_id.setdefault(r.token_id, p)
    if not by_id:
        raise DataError("calibration needs at least one tracked word")
    ids = np.fromiter(sorted(by_id), dtype=np.int64)
    denom = np.array([max(by_id[i], PRIOR_FLOOR) for i in ids], dtype=np.float64)
    return ids, denom


def calibrate_rows(probs: np.ndarray, vocab: Vocabulary, priors: PriorEstimate) -> np.ndarray:
    ids, denom = _tracked(vocab, priors)
    ratio = probs[:, ids] / denom
    totals = ratio.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise DataError("distribution has no mass on the tracked words; cannot calibrate")
    out = np.zeros_like(probs, dtype=np.float64)
    out[:, ids] = ratio / totals
    return out


def attach_learnable_weights(verbalizer: Verbalizer) -> Verbalizer:
    """Uniform within-label weights, flagged trainable for fine-tuning."""
    entries = {
        label: [LabelWordEntry(e.word, 1.0, e.anchor, e.section) for e in verbalizer.entries[label]]
        for label in verbalizer.schema.labels
    }
    return verbalizer.replace(entries, learnable_weights=True)


def refine_pipeline(verbalizer: Verbalizer, mlm: MaskedLanguageModel, template: PromptTemplate,
                    support_texts: Sequence[str], config: RefinementConfig,
                    max_length: int | None = None) -> tuple[Verbalizer, PriorEstimate]:
    """frequency -> relevance -> learnable weights; returns the priors for inference-time calibration."""
    probs = support_probabilities(mlm, template, support_texts, max_length)
    digest = _support_digest(support_texts)
    priors = priors_from_probabilities(probs, mlm.vocab, verbalizer.all_words())
    refined = frequency_refine(verbalizer, priors, config, digest)
    refined = relevance_refine_from_probabilities(refined, probs, mlm.vocab, config, digest)
    if not refined.manifest.get("learnable_weights"):
        refined = attach_learnable_weights(refined)
    # calibration tracks the surviving label words only
    kept = set(refined.all_words())
    priors = PriorEstimate({w: p for w, p in priors.priors.items() if w in kept}, priors.support_size)
    return refined, priors
