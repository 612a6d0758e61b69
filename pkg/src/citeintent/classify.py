"""render -> mask distribution -> (calibrate) -> label scores -> label."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .dataset_io import LabelSchema
from .mlm import MaskedLanguageModel, predict_mask
from .prompt import PromptTemplate, render
from .refine import PriorEstimate, calibrate, calibrate_rows
from .verbalizer import Verbalizer, _check_schema, argmax_rows, score_labels, score_matrix


def classify(instance, template: PromptTemplate, verbalizer: Verbalizer, mlm: MaskedLanguageModel,
             calibration: PriorEstimate | None = None, schema: LabelSchema | None = None,
             max_length: int | None = None) -> tuple[str, dict[str, float]]:
    _check_schema(verbalizer, schema)
    dist = predict_mask(mlm, render(template, instance), max_length)
    if calibration is not None:
        dist = calibrate(dist, calibration)
    scores = score_labels(dist, verbalizer)
    labels = verbalizer.schema.labels
    row = np.array([scores[lab] for lab in labels])
    return labels[int(argmax_rows(row)[0])], scores


def classify_batch(texts: Sequence[str], template: PromptTemplate, verbalizer: Verbalizer,
                   mlm: MaskedLanguageModel, calibration: PriorEstimate | None = None,
                   max_length: int | None = None, batch_size: int = 64) -> tuple[list[str], np.ndarray]:
    """Predicted labels and the (n, n_labels) score matrix for many sentences."""
    if not texts:
        return [], np.zeros((0, len(verbalizer.schema.labels)))
    prompts = [render(template, t) for t in texts]
    probs = mlm.mask_probabilities(prompts, max_length, batch_size=batch_size)
    if calibration is not None:
        probs = calibrate_rows(probs, mlm.vocab, calibration)
    scores = score_matrix(probs, mlm.vocab, verbalizer)
    labels = verbalizer.schema.labels
    return [labels[i] for i in argmax_rows(scores)], scores
