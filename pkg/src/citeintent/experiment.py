"""Evaluation and seed-averaged experiment runs."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import __version__
from .classify import classify_batch
from .config import RunConfig
from .dataset_io import Dataset, get_schema, load_dataset, sample_few_shot
from .errors import DataError, ModelError
from .metrics import ConfusionMatrix, accuracy, confusion_report, macro_f1
from .mlm import MaskedLanguageModel, load_mlm
from .prompt import PromptTemplate
from .refine import PriorEstimate, estimate_priors
from .training import fine_tune
from .verbalizer import Verbalizer, load_verbalizer

log = logging.getLogger(__name__)


@dataclass
class EvalResult:
    accuracy: float
    macro_f1: float
    confusion: ConfusionMatrix
    predictions: list = field(default_factory=list)


def evaluate(mlm: MaskedLanguageModel, verbalizer: Verbalizer, template: PromptTemplate, test: Dataset,
             calibration: PriorEstimate | None = None, max_length: int | None = None,
             batch_size: int = 64) -> EvalResult:
    if len(test) == 0:
        raise DataError("test set is empty")
    if any(inst.label is None for inst in test):
        raise DataError("evaluation needs labelled instances")
    predicted, _ = classify_batch(test.texts, template, verbalizer, mlm, calibration, max_length, batch_size)
    cm = ConfusionMatrix.from_predictions([inst.label for inst in test], predicted, test.schema.labels)
    return EvalResult(accuracy(cm), macro_f1(cm), cm, predicted)


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


@dataclass
class EvalReport:
    labels: tuple
    per_seed: list
    config: dict
    tool_version: str = __version__

    @property
    def mean_accuracy(self) -> float:
        return _mean(r["accuracy"] for r in self.per_seed)

    @property
    def mean_macro_f1(self) -> float:
        return _mean(r["macro_f1"] for r in self.per_seed)

    @property
    def mean_confusion_pct(self) -> np.ndarray:
        stack = np.array([confusion_report(np.array(r["confusion"])) for r in self.per_seed])
        return stack.sum(axis=0) / len(self.per_seed)

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "labels": list(self.labels),
            "config": self.config,
            "per_seed": self.per_seed,
            "mean": {
                "accuracy": self.mean_accuracy,
                "macro_f1": self.mean_macro_f1,
                "confusion_pct": self.mean_confusion_pct.tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        try:
            return cls(tuple(data["labels"]), list(data["per_seed"]), dict(data["config"]),
                       data.get("tool_version", "unknown"))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed report: {exc!r}") from None

    def to_text(self) -> str:
        lines = [f"{'seed':>6}  {'accuracy':>9}  {'macro-F1':>9}"]
        for r in self.per_seed:
            lines.append(f"{r['seed']:>6}  {100 * r['accuracy']:>9.2f}  {100 * r['macro_f1']:>9.2f}")
        lines.append(f"{'mean':>6}  {100 * self.mean_accuracy:>9.2f}  {100 * self.mean_macro_f1:>9.2f}")
        lines.append("")
        lines.append("mean row-normalised confusion (%), rows = gold, columns = predicted")
        width = max(len(lab) for lab in self.labels)
        lines.append(" " * width + "  " + "  ".join(f"{lab[:8]:>8}" for lab in self.labels))
        for lab, row in zip(self.labels, self.mean_confusion_pct):
            lines.append(f"{lab:>{width}}  " + "  ".join(f"{v:>8.1f}" for v in row))
        return "\n".join(lines) + "\n"

    def confusion_csv(self, seed: int | None = None) -> str:
        """CSV of the mean percentage matrix, or of one seed's raw counts."""
        if seed is None:
            matrix = self.mean_confusion_pct.tolist()
        else:
            matches = [r for r in self.per_seed if r["seed"] == seed]
            if not matches:
                raise DataError(f"seed {seed} not in report")
            matrix = matches[0]["confusion"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gold\\predicted", *self.labels])
        for lab, row in zip(self.labels, matrix):
            writer.writerow([lab, *row])
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.txt").write_text(self.to_text())
        (out / "confusion_mean.csv").write_text(self.confusion_csv())
        for r in self.per_seed:
            (out / f"confusion_seed{r['seed']}.csv").write_text(self.confusion_csv(r["seed"]))
        return out


def support_texts(train: Dataset, size: int, seed: int) -> list[str]:
    """Unlabelled support sample from the train split."""
    texts = train.texts
    if len(texts) <= size:
        return texts
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(texts), size=size, replace=False))
    return [texts[i] for i in picks]


MLMFactory = Callable[[int], MaskedLanguageModel]


def run_experiment(config: RunConfig, data: Mapping[str, str] | None = None, verbalizer_path=None,
                   mlm_factory: MLMFactory | None = None, verbalizer: Verbalizer | None = None) -> EvalReport:
    """For every seed: (k-shot sample) -> (fine-tune unless zero-shot) -> (calibrate) -> evaluate.

    Any seed failing aborts the whole run.
    """
    if data:
        config = config.with_overrides(**{f"data.{k}": v for k, v in data.items()})
    if verbalizer_path is not None:
        config = config.with_overrides(verbalizer=str(verbalizer_path))
    tc = config.train
    schema = get_schema(config.schema)
    template = PromptTemplate.from_pattern(config.template)
    if verbalizer is None:
        config.require_paths("verbalizer")
        verbalizer = load_verbalizer(config.resolve(config.verbalizer))
    if verbalizer.schema.labels != schema.labels:
        raise DataError(f"verbalizer schema {verbalizer.schema.name!r} does not match {schema.name!r}")
    test = load_dataset(config.data_path("test"), schema, "test")
    needs_train = tc.regime != "zero_shot" or tc.use_calibration
    train = load_dataset(config.data_path("train"), schema, "train") if needs_train else None
    if mlm_factory is None:
        words = verbalizer.all_words()

        def mlm_factory(seed):
            return load_mlm(config.mlm_identity(), words, seed=seed, max_length=tc.max_sequence_length)

    per_seed = []
    for seed in tc.seeds:
        mlm = mlm_factory(seed)
        before = mlm.state_hash()
        verb = verbalizer
        losses = []
        n_train = 0
        if tc.regime != "zero_shot":
            subset = sample_few_shot(train, tc.k, seed) if tc.regime == "k_shot" else train
            n_train = len(subset)
            result = fine_tune(mlm, verb, template, subset, tc, seed=seed)
            mlm, verb, losses = result.mlm, result.verbalizer, result.epoch_losses
        priors = None
        if tc.use_calibration:
            support = support_texts(train, config.refinement.support_size, seed)
            priors = estimate_priors(mlm, template, support, verb, tc.max_sequence_length)
        res = evaluate(mlm, verb, template, test, priors, tc.max_sequence_length, tc.eval_batch_size)
        if tc.regime == "zero_shot" and mlm.state_hash() != before:
            raise ModelError("zero-shot evaluation mutated model parameters")
        per_seed.append({
            "seed": seed,
            "accuracy": res.accuracy,
            "macro_f1": res.macro_f1,
            "confusion": res.confusion.to_list(),
            "train_losses": losses,
            "n_train": n_train,
            "n_test": len(test),
            "calibrated": priors is not None,
        })
        log.info("seed %d: accuracy %.4f macro-F1 %.4f", seed, res.accuracy, res.macro_f1)
    return EvalReport(schema.labels, per_seed, config.to_dict())
