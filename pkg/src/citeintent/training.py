"""Fine-tuning the language model jointly with learnable verbalizer weights."""
from __future__ import annotations

import logging
import math
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .dataset_io import Dataset
from .errors import ConfigError, DataError, TrainingDiverged
from .mlm import MaskedLanguageModel
from .prompt import PromptTemplate, render
from .refine import attach_learnable_weights
from .verbalizer import LabelWordEntry, Verbalizer, compile_index

log = logging.getLogger(__name__)

REGIMES = ("supervised", "k_shot", "zero_shot")
PAPER_SHOTS = (1, 2, 5, 10)


@dataclass(frozen=True)
class TrainConfig:
    max_sequence_length: int = 512
    batch_size: int = 40
    epochs: int = 5
    learning_rate: float = 2e-5
    seeds: tuple = (1, 2, 3, 4, 5)
    regime: str = "supervised"
    k: int | None = None
    optimizer: str = "adamw"
    schedule: str = "linear"
    warmup_steps: int = 0
    weight_decay: float = 0.0
    # None: on for zero/k-shot, off for supervised
    calibrate: bool | None = None
    eval_batch_size: int = 64
    dump_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "k_shot":
            if self.k is None or int(self.k) <= 0:
                raise ConfigError("k_shot regime needs a positive k")
            if int(self.k) not in PAPER_SHOTS:
                log.info("k=%s is outside the 1/2/5/10 grid", self.k)
        if self.max_sequence_length < 16 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("max_sequence_length >= 16, batch_size >= 1 and epochs >= 0 are required")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer != "adamw" or self.schedule not in ("linear", "constant"):
            raise ConfigError("supported: optimizer 'adamw', schedule 'linear' or 'constant'")

    @property
    def use_calibration(self) -> bool:
        if self.calibrate is None:
            return self.regime != "supervised"
        return bool(self.calibrate)

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


class VerbalizerHead(torch.nn.Module):
    """Learnable label-word weights plus the scatter from word probabilities to label scores."""

    def __init__(self, verbalizer: Verbalizer, vocab, dtype=torch.float32):
        super().__init__()
        idx = compile_index(verbalizer, vocab)
        self.verbalizer = verbalizer
        self.n_labels = idx.n_labels
        self.register_buffer("ids", torch.from_numpy(np.where(idx.ids < 0, 0, idx.ids)))
        self.register_buffer("resolved", torch.from_numpy(idx.ids >= 0).to(dtype))
        self.register_buffer("label_of", torch.from_numpy(idx.label_of))
        self.weights = torch.nn.Parameter(torch.from_numpy(idx.weights).to(dtype))

    def label_scores(self, logits: torch.Tensor) -> torch.Tensor:
        probs = torch.softmax(logits, dim=-1)
        contrib = probs[:, self.ids] * (self.weights * self.resolved)
        out = torch.zeros(logits.shape[0], self.n_labels, dtype=contrib.dtype, device=contrib.device)
        return out.index_add(1, self.label_of, contrib)

    def loss(self, logits: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
        """Cross-entropy of the label distribution obtained by normalising the scores."""
        scores = self.label_scores(logits)
        return F.cross_entropy(torch.log(scores.clamp_min(1e-30)), gold)

    @torch.no_grad()
    def project(self) -> None:
        """Clamp at 0 and renormalise within each label (uniform if a label collapses)."""
        w = self.weights.clamp_(min=0.0)
        sums = torch.zeros(self.n_labels, dtype=w.dtype).index_add(0, self.label_of, w)
        counts = torch.zeros(self.n_labels, dtype=w.dtype).index_add(0, self.label_of, torch.ones_like(w))
        dead = sums[self.label_of] <= 0
        w.copy_(torch.where(dead, 1.0 / counts[self.label_of], w / sums[self.label_of].clamp_min(1e-300)))

    def to_verbalizer(self, **manifest_updates) -> Verbalizer:
        flat = self.weights.detach().cpu().double().numpy()
        entries, pos = {}, 0
        for label in self.verbalizer.schema.labels:
            items = []
            for e in self.verbalizer.entries[label]:
                items.append(LabelWordEntry(e.word, float(flat[pos]), e.anchor, e.section))
                pos += 1
            entries[label] = items
        return self.verbalizer.replace(entries, **manifest_updates)


@dataclass
class FineTuneResult:
    mlm: MaskedLanguageModel
    verbalizer: Verbalizer
    epoch_losses: list = field(default_factory=list)


def _dump(dump_dir, payload) -> str:
    directory = Path(dump_dir) if dump_dir else Path(tempfile.mkdtemp(prefix="citeintent-diverged-"))
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "divergence_state.pt"
    torch.save(payload, path)
    return str(path)


def fine_tune(mlm: MaskedLanguageModel, verbalizer: Verbalizer, template: PromptTemplate, train: Dataset,
              config: TrainConfig, seed: int | None = None) -> FineTuneResult:
    """Minimise label cross-entropy over ``config.epochs`` passes; the model is updated in place."""
    if config.regime == "zero_shot":
        raise ConfigError("fine_tune is not used in the zero-shot regime")
    if len(train) == 0:
        raise DataError("training set is empty")
    if any(inst.label is None for inst in train):
        raise DataError("training instances must be labelled")
    seed = config.seeds[0] if seed is None else int(seed)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    if not verbalizer.manifest.get("learnable_weights"):
        verbalizer = attach_learnable_weights(verbalizer)
    lm_params = mlm.parameters() if mlm.trainable else []
    dtype = lm_params[0].dtype if lm_params else torch.float64
    head = VerbalizerHead(verbalizer, mlm.vocab, dtype=dtype)
    labels = train.schema.labels
    if verbalizer.schema.labels != labels:
        raise DataError("verbalizer schema does not match the training data")

    prompts = [render(template, inst) for inst in train]
    gold = torch.tensor([labels.index(inst.label) for inst in train], dtype=torch.long)
    n = len(prompts)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = max(1, steps_per_epoch * config.epochs)

    groups = [{"params": lm_params}] if lm_params else []
    optimizer = torch.optim.AdamW(
        groups + [{"params": [head.weights]}],
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )

    def schedule(step):
        if step < config.warmup_steps:
            return (step + 1) / config.warmup_steps
        if config.schedule == "constant":
            return 1.0
        return max(0.0, (total_steps - step) / max(1, total_steps - config.warmup_steps))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, schedule)

    if config.epochs == 0:
        log.warning("epochs=0: model left unchanged")
    epoch_losses = []
    step = 0
    mlm.train(True)
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            running = 0.0
            for start in range(0, n, config.batch_size):
                batch = order[start:start + config.batch_size]
                logits = mlm.mask_logits([prompts[i] for i in batch], config.max_sequence_length)
                loss = head.loss(logits, gold[batch])
                if not torch.isfinite(loss):
                    path = _dump(config.dump_dir, {
                        "epoch": epoch, "step": step, "loss": float(loss.detach()),
                        "verbalizer_weights": head.weights.detach().cpu(),
                        "lm_state": [p.detach().cpu() for p in lm_params],
                    })
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}; state dumped to {path}", path)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                scheduler.step()
                head.project()
                running += float(loss.detach()) * len(batch)
                step += 1
            epoch_losses.append(running / n)
            log.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, epoch_losses[-1])
    finally:
        mlm.eval()
    trained = head.to_verbalizer(learnable_weights=True)
    return FineTuneResult(mlm, trained, epoch_losses)
