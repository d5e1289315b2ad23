"""Fine-tuning a pretrained bidirectional encoder for the binary
sentence task, with positive-class up-weighting in the cross-entropy.

The encoder is configurable: the production default is the uncased
large BERT release; ``tiny`` builds a small deterministic stand-in
locally (seeded initialization, bundled WordPiece vocab) so training
and tests run on CPU without any downloads. Fine-tuned checkpoints are
self-contained and reload without network access.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import DatasetSplit, Sentence, SlcLabel
from .errors import ValidationError

DEFAULT_ENCODER = "bert-large-uncased"
TINY_ENCODER = "tiny"

_TINY_INIT_SEED = 3407  # fixed so the stand-in's "pretrained" weights never vary
_CHECKPOINT_FORMAT = "propsent-checkpoint-v1"


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tuning recipe; defaults reproduce the reference setup."""

    epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    max_tokens: int = 129  # includes the boundary markers
    positive_weight: float = 5.0
    seed: int = 0
    encoder_ref: str = DEFAULT_ENCODER

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.max_tokens < 3:
            raise ValidationError(
                f"max_tokens must be >= 3 to fit the boundary markers, "
                f"got {self.max_tokens}"
            )
        if self.positive_weight < 1:
            raise ValidationError(
                f"positive_weight must be >= 1, got {self.positive_weight}"
            )

    def as_mapping(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "max_tokens": self.max_tokens,
            "positive_weight": self.positive_weight,
            "seed": self.seed,
            "encoder_ref": self.encoder_ref,
        }


def _build_tiny_tokenizer():
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.normalizers import BertNormalizer
    from tokenizers.pre_tokenizers import BertPreTokenizer
    from tokenizers.processors import TemplateProcessing
    from transformers import PreTrainedTokenizerFast

    vocab_text = resources.files("propsent").joinpath(
        "fixtures/tiny_vocab.txt"
    ).read_text(encoding="utf-8")
    vocab = {tok: i for i, tok in enumerate(vocab_text.splitlines()) if tok}
    backend = Tokenizer(WordPiece(vocab, unk_token="[UNK]",
                                  max_input_chars_per_word=100))
    backend.normalizer = BertNormalizer(lowercase=True)
    backend.pre_tokenizer = BertPreTokenizer()
    backend.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=backend,
        unk_token="[UNK]", pad_token="[PAD]", cls_token="[CLS]",
        sep_token="[SEP]", mask_token="[MASK]",
        model_max_length=512,
    )


def _build_tiny_encoder():
    from transformers import BertConfig, BertModel

    tokenizer = _build_tiny_tokenizer()
    config = BertConfig(
        vocab_size=len(tokenizer),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=192,
    )
    with torch.random.fork_rng():
        torch.manual_seed(_TINY_INIT_SEED)
        encoder = BertModel(config)
    return tokenizer, encoder


def load_encoder(encoder_ref: str, cache_dir: str | Path | None = None):
    """Resolve an encoder reference to (tokenizer, encoder module)."""
    if encoder_ref == TINY_ENCODER:
        return _build_tiny_encoder()
    from transformers import AutoModel, AutoTokenizer

    kwargs = {"cache_dir": str(cache_dir)} if cache_dir else {}
    try:
        tokenizer = AutoTokenizer.from_pretrained(encoder_ref, **kwargs)
        encoder = AutoModel.from_pretrained(encoder_ref, **kwargs)
    except (OSError, ValueError) as exc:
        raise ValidationError(
            f"encoder weights for {encoder_ref!r} are not available: {exc}. "
            f"Download them with network access (e.g. "
            f"`huggingface-cli download {encoder_ref}`), pass a local "
            f"directory as --encoder-ref, or use --encoder-ref tiny for the "
            f"built-in stand-in."
        ) from None
    return tokenizer, encoder


class SentenceClassifier(nn.Module):
    """Encoder plus a single-logit head on the pooled representation."""

    def __init__(self, encoder):
        super().__init__()
        self.encoder = encoder
        hidden = encoder.config.hidden_size
        dropout = getattr(encoder.config, "hidden_dropout_prob", 0.1)
        self.dropout = nn.Dropout(dropout)
        self.head = nn.Linear(hidden, 1)

    def forward(self, input_ids, attention_mask):
        output = self.encoder(input_ids=input_ids, attention_mask=attention_mask)
        pooled = getattr(output, "pooler_output", None)
        if pooled is None:
            pooled = output.last_hidden_state[:, 0]
        return self.head(self.dropout(pooled)).squeeze(-1)


@dataclass
class ClassifierModel:
    """An immutable trained classifier; prediction is thread-safe."""

    encoder_ref: str
    config: TrainConfig
    tokenizer: object = field(repr=False, compare=False)
    module: SentenceClassifier = field(repr=False, compare=False)
    training_fingerprint: str = ""
    training_articles: tuple[str, ...] = ()
    initial_loss: float | None = None
    final_loss: float | None = None
    num_optimizer_steps: int = 0

    def predict_proba(self, sentences: Sequence[Sentence],
                      batch_size: int = 32) -> list[float]:
        return predict_proba(self, sentences, batch_size=batch_size)

    def score_texts(self, texts: Sequence[str],
                    batch_size: int = 32) -> list[float]:
        return _score_texts(self, list(texts), batch_size=batch_size)


def tokenize_truncate(tokenizer, text: str, max_tokens: int) -> list[int]:
    """Token ids including boundary markers, truncated to max_tokens."""
    if max_tokens < 3:
        raise ValidationError(f"max_tokens must be >= 3, got {max_tokens}")
    return list(
        tokenizer(text, truncation=True, max_length=max_tokens)["input_ids"]
    )


def weighted_loss(probability: float, label: SlcLabel,
                  positive_weight: float) -> float:
    """Per-sample cross-entropy with the positive class up-weighted.

    positive: -w·ln(p); negative: -ln(1-p). Batch losses elsewhere are
    the mean of these per-sample values.
    """
    if not 0.0 < probability < 1.0:
        raise ValidationError(
            f"probability must be strictly inside (0, 1), got {probability}"
        )
    if label is SlcLabel.PROPAGANDA:
        return -positive_weight * math.log(probability)
    return -math.log(1.0 - probability)


def _encode_texts(tokenizer, texts: list[str], max_tokens: int):
    return [tokenize_truncate(tokenizer, t, max_tokens) for t in texts]


def _pad_batch(id_lists: list[list[int]], pad_id: int, device):
    width = max(len(ids) for ids in id_lists)
    input_ids = torch.full((len(id_lists), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(id_lists), width), dtype=torch.long)
    for row, ids in enumerate(id_lists):
        input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[row, : len(ids)] = 1
    return input_ids.to(device), mask.to(device)


def _mean_loss(module, encoded, targets, positive_weight, batch_size,
               pad_id, device) -> float:
    """Evaluation-mode mean weighted loss over the whole dataset."""
    was_training = module.training
    module.eval()
    pos_weight = torch.tensor(positive_weight, device=device)
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            ids, mask = _pad_batch(chunk, pad_id, device)
            logits = module(ids, mask)
            y = torch.tensor(targets[start : start + batch_size],
                             dtype=logits.dtype, device=device)
            loss = F.binary_cross_entropy_with_logits(
                logits, y, pos_weight=pos_weight, reduction="sum"
            )
            total += float(loss)
            count += len(chunk)
    if was_training:
        module.train()
    return total / count if count else 0.0


def _fingerprint(config: TrainConfig, split: DatasetSplit) -> str:
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "config": config.as_mapping(),
        "split": split.name.value,
        "data": [
            [s.article_id, s.index, split.labels[s.key].value]
            for s in split.sentences
        ],
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _resolve_device(device) -> torch.device:
    if device is not None:
        return torch.device(device)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def train(split: DatasetSplit, config: TrainConfig = TrainConfig(),
          *, device=None, cache_dir: str | Path | None = None) -> ClassifierModel:
    """Fine-tune the encoder on a labeled split.

    Runs exactly epochs·ceil(n/batch_size) optimizer steps with a
    seed-determined batch order, AdamW(lr, weight_decay), no schedule.
    Mean training loss is measured over the full split before and after.
    """
    if split.labels is None:
        raise ValidationError("training requires a labeled split")
    if not split.sentences:
        raise ValidationError("cannot train on an empty split")
    device = _resolve_device(device)

    tokenizer, encoder = load_encoder(config.encoder_ref, cache_dir)
    max_positions = getattr(encoder.config, "max_position_embeddings", None)
    if max_positions is not None and config.max_tokens > max_positions:
        raise ValidationError(
            f"max_tokens {config.max_tokens} exceeds the encoder's "
            f"{max_positions} positions"
        )

    torch.manual_seed(config.seed)
    random.seed(config.seed)
    np.random.seed(config.seed % 2**32)

    module = SentenceClassifier(encoder).to(device)
    pad_id = tokenizer.pad_token_id

    texts = [s.text for s in split.sentences]
    encoded = _encode_texts(tokenizer, texts, config.max_tokens)
    targets = [
        1.0 if split.labels[s.key] is SlcLabel.PROPAGANDA else 0.0
        for s in split.sentences
    ]

    initial_loss = _mean_loss(module, encoded, targets, config.positive_weight,
                              config.batch_size, pad_id, device)

    optimizer = torch.optim.AdamW(
        module.parameters(), lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    pos_weight = torch.tensor(config.positive_weight, device=device)
    generator = torch.Generator().manual_seed(config.seed)

    steps = 0
    module.train()
    n = len(encoded)
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=generator).tolist()
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            ids, mask = _pad_batch([encoded[i] for i in batch_idx], pad_id, device)
            logits = module(ids, mask)
            y = torch.tensor([targets[i] for i in batch_idx],
                             dtype=logits.dtype, device=device)
            loss = F.binary_cross_entropy_with_logits(
                logits, y, pos_weight=pos_weight, reduction="mean"
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            steps += 1

    final_loss = _mean_loss(module, encoded, targets, config.positive_weight,
                            config.batch_size, pad_id, device)
    module.eval()

    return ClassifierModel(
        encoder_ref=config.encoder_ref,
        config=config,
        tokenizer=tokenizer,
        module=module,
        training_fingerprint=_fingerprint(config, split),
        training_articles=tuple(split.articles),
        initial_loss=initial_loss,
        final_loss=final_loss,
        num_optimizer_steps=steps,
    )


def _score_texts(model: ClassifierModel, texts: list[str],
                 batch_size: int = 32) -> list[float]:
    if not texts:
        return []
    module = model.module
    module.eval()
    device = next(module.parameters()).device
    encoded = _encode_texts(model.tokenizer, texts, model.config.max_tokens)
    pad_id = model.tokenizer.pad_token_id
    probs: list[float] = []
    with torch.no_grad():
        for start in range(0, len(encoded), batch_size):
            ids, mask = _pad_batch(encoded[start : start + batch_size],
                                   pad_id, device)
            logits = module(ids, mask)
            probs.extend(torch.sigmoid(logits).tolist())
    return probs


def predict_proba(model: ClassifierModel, sentences: Sequence[Sentence],
                  batch_size: int = 32) -> list[float]:
    """One probability per sentence, order preserved."""
    return _score_texts(model, [s.text for s in sentences], batch_size=batch_size)


# ---------------------------------------------------------------------------
# Self-contained checkpoints, addressed by training fingerprint.

def save_checkpoint(model: ClassifierModel, directory: str | Path) -> Path:
    """Write a reloadable checkpoint under <directory>/<fingerprint>."""
    target = Path(directory) / model.training_fingerprint
    target.mkdir(parents=True, exist_ok=True)
    (target / "encoder").mkdir(exist_ok=True)
    model.module.encoder.config.save_pretrained(target / "encoder")
    model.tokenizer.save_pretrained(str(target / "tokenizer"))
    torch.save(model.module.state_dict(), target / "weights.pt")
    meta = {
        "format": _CHECKPOINT_FORMAT,
        "encoder_ref": model.encoder_ref,
        "config": model.config.as_mapping(),
        "training_fingerprint": model.training_fingerprint,
        "training_articles": list(model.training_articles),
        "initial_loss": model.initial_loss,
        "final_loss": model.final_loss,
        "num_optimizer_steps": model.num_optimizer_steps,
    }
    (target / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return target


def load_checkpoint(directory: str | Path, *, device=None) -> ClassifierModel:
    from transformers import AutoConfig, AutoModel, AutoTokenizer

    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise ValidationError(f"not a checkpoint directory: {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != _CHECKPOINT_FORMAT:
        raise ValidationError(
            f"{directory}: unsupported checkpoint format {meta.get('format')!r}"
        )
    device = _resolve_device(device)
    encoder_config = AutoConfig.from_pretrained(directory / "encoder")
    encoder = AutoModel.from_config(encoder_config)
    module = SentenceClassifier(encoder)
    state = torch.load(directory / "weights.pt", map_location=device,
                       weights_only=True)
    module.load_state_dict(state)
    module.to(device)
    module.eval()
    tokenizer = AutoTokenizer.from_pretrained(str(directory / "tokenizer"))
    config = TrainConfig(**meta["config"])
    return ClassifierModel(
        encoder_ref=meta["encoder_ref"],
        config=config,
        tokenizer=tokenizer,
        module=module,
        training_fingerprint=meta["training_fingerprint"],
        training_articles=tuple(meta["training_articles"]),
        initial_loss=meta["initial_loss"],
        final_loss=meta["final_loss"],
        num_optimizer_steps=meta["num_optimizer_steps"],
    )
