"""Masked language model port and backends.

Every backend maps a batch of rendered prompts to logits over its vocabulary
at the mask position. Three backends ship:

* ``KeywordMockMLM`` -- deterministic, weight-free; the mask distribution is
  proportional to smoothed counts of vocabulary words in the prompt.
* ``BagOfWordsMLM`` -- a small differentiable stub (one linear layer over
  bag-of-words counts) used to exercise training without real checkpoints.
* ``HuggingFaceMLM`` -- any ``AutoModelForMaskedLM`` checkpoint.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .errors import ConfigError, ModelError
from .prompt import MASK_SLOT, RenderedPrompt, truncate_front

log = logging.getLogger(__name__)

MIN_SEQUENCE_LENGTH = 16
SIMPLEX_TOL = 1e-6
_MARKER_FILE = "citeintent_mlm.json"


@dataclass(frozen=True)
class Resolution:
    token_id: int | None
    multi_piece: bool = False


class Vocabulary:
    """Word -> vocabulary position resolution, memoised per word."""

    size: int

    def __init__(self):
        self._cache: dict[str, Resolution] = {}

    def resolve(self, word: str) -> Resolution:
        hit = self._cache.get(word)
        if hit is None:
            hit = self._resolve(word) if word else Resolution(None)
            if hit.token_id is None and word:
                log.info("label word %r does not resolve to a vocabulary position", word)
            elif hit.multi_piece:
                log.info("label word %r is multi-piece; scored by its first piece", word)
            self._cache[word] = hit
        return hit

    def _resolve(self, word: str) -> Resolution:
        raise NotImplementedError

    def token(self, token_id: int) -> str:
        raise NotImplementedError


class TokenVocabulary(Vocabulary):
    """Whole-word vocabulary; an unknown word falls back to its longest known prefix."""

    def __init__(self, tokens: Sequence[str]):
        super().__init__()
        self.tokens = list(dict.fromkeys(tokens))
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.size = len(self.tokens)

    def _resolve(self, word):
        if word in self.index:
            return Resolution(self.index[word])
        for end in range(len(word) - 1, 1, -1):
            i = self.index.get(word[:end])
            if i is not None:
                return Resolution(i, True)
        return Resolution(None)

    def token(self, token_id):
        return self.tokens[token_id]


@dataclass(frozen=True, eq=False)
class MaskDistribution:
    """Scores over a vocabulary at the mask position.

    Backends always emit a probability simplex; test harnesses may build
    rescaled copies, so only non-negativity is enforced on construction.
    """

    probs: np.ndarray
    vocab: Vocabulary

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] != self.vocab.size:
            raise ValueError(f"distribution has shape {p.shape}, vocabulary size is {self.vocab.size}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("distribution entries must be finite and non-negative")
        object.__setattr__(self, "probs", p)

    def is_simplex(self, tol: float = SIMPLEX_TOL) -> bool:
        return abs(float(self.probs.sum()) - 1.0) <= tol

    def scaled(self, factor: float) -> "MaskDistribution":
        return MaskDistribution(self.probs * factor, self.vocab)

    def prob(self, word: str) -> float:
        r = self.vocab.resolve(word)
        return 0.0 if r.token_id is None else float(self.probs[r.token_id])


def _digest_state(items: Iterable[tuple[str, torch.Tensor]], extra: str = "") -> str:
    h = hashlib.sha256(extra.encode())
    for name, tensor in sorted(items, key=lambda kv: kv[0]):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class MaskedLanguageModel:
    identity: str = "abstract"
    max_length: int = 512
    trainable: bool = False
    vocab: Vocabulary

    def _check_max_length(self):
        if self.max_length < MIN_SEQUENCE_LENGTH:
            raise ConfigError(f"max sequence length must be >= {MIN_SEQUENCE_LENGTH}, got {self.max_length}")

    def mask_logits(self, prompts: Sequence[RenderedPrompt], max_length: int | None = None) -> torch.Tensor:
        raise NotImplementedError

    def parameters(self) -> list[torch.nn.Parameter]:
        return []

    def train(self, mode: bool = True) -> None:
        pass

    def eval(self) -> None:
        self.train(False)

    def state_hash(self) -> str:
        raise NotImplementedError

    def save(self, out_dir) -> Path:
        raise NotImplementedError

    def mask_probabilities(
        self, prompts: Sequence[RenderedPrompt], max_length: int | None = None, batch_size: int = 64
    ) -> np.ndarray:
        """Evaluation-mode softmax at the mask, float64, shape (len(prompts), vocab.size)."""
        self.eval()
        out = np.empty((len(prompts), self.vocab.size), dtype=np.float64)
        with torch.no_grad():
            for start in range(0, len(prompts), batch_size):
                chunk = prompts[start:start + batch_size]
                try:
                    logits = self.mask_logits(chunk, max_length)
                except (ConfigError, ModelError):
                    raise
                except Exception as exc:
                    raise ModelError(f"{self.identity}: forward pass failed: {exc}") from exc
                out[start:start + len(chunk)] = torch.softmax(logits.double(), dim=-1).cpu().numpy()
        return out


_TOKEN = re.compile(r"[^\W_]+")


def _words(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class _WordLevelModel(MaskedLanguageModel):
    """Shared word-level tokenisation and front truncation for the toy backends."""

    def __init__(self, vocab_words: Sequence[str], max_length: int):
        if not vocab_words:
            raise ConfigError("a toy backend needs a non-empty vocabulary")
        self.vocab = TokenVocabulary(sorted(set(vocab_words)))
        self.max_length = int(max_length)
        self._check_max_length()

    def prompt_tokens(self, prompt: RenderedPrompt, max_length: int | None = None) -> list[str]:
        """Words of the prompt after truncation; the mask marker counts as one token, plus 2 specials."""
        limit = min(max_length or self.max_length, self.max_length)
        head = _words(prompt.head.replace(MASK_SLOT, " "))
        tail = _words(prompt.tail.replace(MASK_SLOT, " "))
        inst = _words(prompt.instance)
        reserved = 2 + 1
        kept = truncate_front(head, inst, tail, limit - reserved)
        return head + kept + tail

    def counts(self, prompts: Sequence[RenderedPrompt], max_length: int | None = None) -> np.ndarray:
        out = np.zeros((len(prompts), self.vocab.size), dtype=np.float64)
        index = self.vocab.index
        for row, prompt in enumerate(prompts):
            for w in self.prompt_tokens(prompt, max_length):
                j = index.get(w)
                if j is not None:
                    out[row, j] += 1.0
        return out


class KeywordMockMLM(_WordLevelModel):
    def __init__(self, vocab_words: Sequence[str], smoothing: float = 0.1, max_length: int = 512,
                 identity: str = "mock"):
        super().__init__(vocab_words, max_length)
        if smoothing <= 0:
            raise ConfigError("mock smoothing must be positive")
        self.smoothing = float(smoothing)
        self.identity = identity

    def mask_logits(self, prompts, max_length=None):
        return torch.from_numpy(np.log(self.counts(prompts, max_length) + self.smoothing))

    def state_hash(self):
        return hashlib.sha256(
            json.dumps({"vocab": self.vocab.tokens, "smoothing": self.smoothing}).encode()
        ).hexdigest()

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"kind": "mock", "vocab": self.vocab.tokens, "smoothing": self.smoothing,
                "max_length": self.max_length, "identity": self.identity}
        (out / _MARKER_FILE).write_text(json.dumps(meta, indent=2) + "\n")
        return out


class BagOfWordsMLM(_WordLevelModel):
    trainable = True

    def __init__(self, vocab_words: Sequence[str], seed: int = 0, scale: float = 2.0, noise: float = 0.01,
                 dtype: torch.dtype = torch.float32, max_length: int = 512, identity: str = "toy-bow"):
        super().__init__(vocab_words, max_length)
        self.identity = identity
        self.scale, self.noise = float(scale), float(noise)
        v = self.vocab.size
        self.net = torch.nn.Linear(v, v, dtype=dtype)
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            self.net.weight.copy_(scale * torch.eye(v, dtype=dtype) + noise * torch.randn(v, v, generator=gen, dtype=dtype))
            self.net.bias.zero_()

    def mask_logits(self, prompts, max_length=None):
        feats = torch.from_numpy(self.counts(prompts, max_length)).to(self.net.weight.dtype)
        return self.net(feats)

    def parameters(self):
        return list(self.net.parameters())

    def train(self, mode=True):
        self.net.train(mode)

    def state_hash(self):
        return _digest_state(self.net.state_dict().items(), extra="\n".join(self.vocab.tokens))

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        torch.save(self.net.state_dict(), out / "toy_mlm.pt")
        meta = {"kind": "toy-bow", "vocab": self.vocab.tokens, "max_length": self.max_length,
                "identity": self.identity, "dtype": str(self.net.weight.dtype).replace("torch.", "")}
        (out / _MARKER_FILE).write_text(json.dumps(meta, indent=2) + "\n")
        return out

    @classmethod
    def load(cls, in_dir) -> "BagOfWordsMLM":
        src = Path(in_dir)
        meta = json.loads((src / _MARKER_FILE).read_text())
        model = cls(meta["vocab"], dtype=getattr(torch, meta.get("dtype", "float32")),
                    max_length=meta["max_length"], identity=meta.get("identity", "toy-bow"))
        model.net.load_state_dict(torch.load(src / "toy_mlm.pt", weights_only=True))
        return model


class HFVocabulary(Vocabulary):
    def __init__(self, tokenizer, size: int):
        super().__init__()
        self.tokenizer = tokenizer
        self.size = int(size)

    def _resolve(self, word):
        ids = self.tokenizer(" " + word, add_special_tokens=False)["input_ids"]
        if not ids or (len(ids) == 1 and ids[0] == self.tokenizer.unk_token_id):
            return Resolution(None)
        if ids[0] == self.tokenizer.unk_token_id:
            return Resolution(None)
        return Resolution(int(ids[0]), len(ids) > 1)

    def token(self, token_id):
        return self.tokenizer.convert_ids_to_tokens(int(token_id))


class HuggingFaceMLM(MaskedLanguageModel):
    trainable = True

    def __init__(self, name_or_path: str, max_length: int = 512, device: str = "cpu", model=None, tokenizer=None):
        try:
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:
            raise ConfigError("the transformers package is required for checkpoint backends") from exc
        try:
            self.tokenizer = tokenizer or AutoTokenizer.from_pretrained(name_or_path)
            self.model = model or AutoModelForMaskedLM.from_pretrained(name_or_path)
        except OSError as exc:
            raise ModelError(f"cannot load checkpoint {name_or_path!r}: {exc}") from exc
        if self.tokenizer.mask_token_id is None:
            raise ConfigError(f"{name_or_path!r} has no mask token")
        self.identity = str(name_or_path)
        self.device = torch.device(device)
        self.model.to(self.device)
        limit = getattr(self.model.config, "max_position_embeddings", max_length)
        self.max_length = int(min(max_length, limit))
        self._check_max_length()
        self.vocab = HFVocabulary(self.tokenizer, self.model.config.vocab_size)
        self._wrap: tuple[list[int], list[int]] | None = None

    def _ids(self, text: str) -> list[int]:
        if not text:
            return []
        text = text.replace(MASK_SLOT, self.tokenizer.mask_token)
        return self.tokenizer(text, add_special_tokens=False)["input_ids"]

    def _specials(self) -> tuple[list[int], list[int]]:
        """Special ids the tokenizer wraps around a single sequence, found by probing."""
        if self._wrap is None:
            probe = "citation"
            bare = self.tokenizer(probe, add_special_tokens=False)["input_ids"]
            full = self.tokenizer(probe, add_special_tokens=True)["input_ids"]
            for i in range(len(full) - len(bare) + 1):
                if full[i:i + len(bare)] == bare:
                    self._wrap = (full[:i], full[i + len(bare):])
                    break
            else:
                raise ModelError(f"{self.identity}: cannot locate special tokens around a sequence")
        return self._wrap

    def encode(self, prompt: RenderedPrompt, max_length: int | None = None) -> tuple[list[int], int]:
        """Token ids with specials and the mask index; the instance head is trimmed to fit."""
        limit = min(max_length or self.max_length, self.max_length)
        head, inst, tail = self._ids(prompt.head), self._ids(prompt.instance), self._ids(prompt.tail)
        prefix, suffix = self._specials()
        inst = truncate_front(head, inst, tail, limit - len(prefix) - len(suffix))
        ids = prefix + head + inst + tail + suffix
        mask_id = self.tokenizer.mask_token_id
        if ids.count(mask_id) != 1:
            raise ModelError("mask token lost or duplicated after truncation")
        return ids, ids.index(mask_id)

    def mask_logits(self, prompts, max_length=None):
        encoded = [self.encode(p, max_length) for p in prompts]
        width = max(len(ids) for ids, _ in encoded)
        pad = self.tokenizer.pad_token_id or 0
        input_ids = torch.full((len(encoded), width), pad, dtype=torch.long)
        attention = torch.zeros((len(encoded), width), dtype=torch.long)
        for row, (ids, _) in enumerate(encoded):
            input_ids[row, :len(ids)] = torch.tensor(ids)
            attention[row, :len(ids)] = 1
        out = self.model(input_ids=input_ids.to(self.device), attention_mask=attention.to(self.device))
        positions = torch.tensor([pos for _, pos in encoded], device=self.device)
        return out.logits[torch.arange(len(encoded), device=self.device), positions]

    def parameters(self):
        return list(self.model.parameters())

    def train(self, mode=True):
        self.model.train(mode)

    def state_hash(self):
        return _digest_state(self.model.state_dict().items())

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(out)
        self.tokenizer.save_pretrained(out)
        return out


def predict_mask(mlm: MaskedLanguageModel, rendered: RenderedPrompt, truncation: int | None = None) -> MaskDistribution:
    probs = mlm.mask_probabilities([rendered], truncation)[0]
    dist = MaskDistribution(probs, mlm.vocab)
    if not dist.is_simplex():
        raise ModelError(f"{mlm.identity}: mask distribution sums to {probs.sum()!r}")
    return dist


def resolve_word(mlm: MaskedLanguageModel, word: str) -> Resolution:
    return mlm.vocab.resolve(word)


def load_mlm(identity: str, vocab_words: Sequence[str] | None = None, seed: int = 0,
             max_length: int = 512) -> MaskedLanguageModel:
    """Resolve an identity string to a backend.

    ``mock`` and ``toy-bow`` build toy backends over ``vocab_words``; a
    directory saved by this package or any Hugging Face checkpoint directory
    loads from disk; ``hf:<name>`` defers to the Hugging Face resolver.
    """
    if identity in ("mock", "toy-bow"):
        if not vocab_words:
            raise ConfigError(f"backend {identity!r} needs a vocabulary (pass the verbalizer)")
        if identity == "mock":
            return KeywordMockMLM(vocab_words, max_length=max_length)
        return BagOfWordsMLM(vocab_words, seed=seed, max_length=max_length)
    if identity.startswith("hf:"):
        return HuggingFaceMLM(identity[3:], max_length=max_length)
    path = Path(identity)
    marker = path / _MARKER_FILE
    if marker.is_file():
        meta = json.loads(marker.read_text())
        if meta["kind"] == "mock":
            return KeywordMockMLM(meta["vocab"], smoothing=meta["smoothing"],
                                  max_length=min(max_length, meta["max_length"]), identity=meta["identity"])
        if meta["kind"] == "toy-bow":
            return BagOfWordsMLM.load(path)
        raise ConfigError(f"unknown saved backend kind {meta['kind']!r}")
    if (path / "config.json").is_file():
        return HuggingFaceMLM(str(path), max_length=max_length)
    raise ConfigError(f"cannot resolve language model {identity!r}")
