"""Classification fine-tuning: end-of-sequence head, attention-direction
toggle, and hyperparameter grid search."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Model, _gather_rows, forward_hidden
from .packing import Batch
from .seeds import substream
from .tensor import Tensor
from .tokenizer import TokenizerModel
from .trainer import AdamW
from .transform import TransformedExample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClsExample:
    text_a: str
    text_b: str | None
    label: int


@dataclass
class ClsDataset:
    train: list[ClsExample]
    dev: list[ClsExample]
    num_labels: int

    def __post_init__(self):
        if not self.train or not self.dev:
            raise ValueError("train and dev splits must both be nonempty")
        labels = {ex.label for ex in self.train} | {ex.label for ex in self.dev}
        if labels != set(range(self.num_labels)):
            raise ValueError(
                f"labels must be dense 0..{self.num_labels - 1}, got {sorted(labels)}"
            )


def load_cls_examples(path: str | Path) -> list[ClsExample]:
    """JSON-lines: {"text_a": str, "text_b": optional str, "label": int}."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    ClsExample(
                        text_a=rec["text_a"],
                        text_b=rec.get("text_b"),
                        label=int(rec["label"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc
    return out


@dataclass(frozen=True)
class FinetuneGrid:
    learning_rates: tuple[float, ...] = (5e-6, 1e-5, 2e-5, 5e-5)
    batch_sizes: tuple[int, ...] = (16, 32, 64)
    updates: int = 2000
    r_bidirs: tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self):
        if not (self.learning_rates and self.batch_sizes and self.r_bidirs):
            raise ValueError("grid must be nonempty")

    def cells(self):
        for lr in self.learning_rates:
            for bs in self.batch_sizes:
                for r in self.r_bidirs:
                    yield lr, bs, r


def attach_head(model: Model, num_labels: int, seed: int) -> Model:
    """Return a model with a fresh linear classification head over the
    final-slot hidden state; base weights are shared, not copied."""
    if num_labels < 2:
        raise ValueError("num_labels must be at least 2")
    if "head.w" in model.params:
        raise ValueError("head already present")
    rng = substream(seed, "head")
    dt = model.config.dtype
    params = dict(model.params)
    params["head.w"] = Tensor(
        (rng.normal(0, 0.02, size=(model.config.d, num_labels))).astype(dt),
        requires_grad=True,
    )
    params["head.b"] = Tensor(np.zeros(num_labels, dtype=dt), requires_grad=True)
    return Model(config=model.config, params=params)


def _encode_example(
    ex: ClsExample, tokenizer: TokenizerModel, max_len: int
) -> list[int]:
    """"text_a </s>" or "text_a </s> text_b </s>"; the final </s> slot is
    the classification slot."""
    ids = tokenizer.encode(ex.text_a) + [tokenizer.eos_id]
    if ex.text_b is not None:
        ids += tokenizer.encode(ex.text_b) + [tokenizer.eos_id]
    if len(ids) > max_len:
        ids = ids[: max_len - 1] + [tokenizer.eos_id]
    return ids


def _cls_batch(
    encoded: list[list[int]], r_bidir: float, pad_id: int
) -> tuple[Batch, np.ndarray]:
    """Batch of unpacked rows; returns (batch, final-slot index per row)."""
    length = max(len(ids) for ids in encoded)
    examples = []
    for ids in encoded:
        n = len(ids)
        examples.append(
            TransformedExample(
                inputs=np.asarray(ids, dtype=np.int32),
                positions=np.arange(1, n + 1, dtype=np.int32),
                target_ids=np.full(n, -1, dtype=np.int32),
                target_kinds=np.zeros(n, dtype=np.uint8),
                n_bidir=n if r_bidir >= 0.5 else 0,
            )
        )
    batch = Batch.from_examples(examples, pad_id=pad_id, length=length)
    finals = np.array([len(ids) - 1 for ids in encoded], dtype=np.int64)
    return batch, finals


def _head_logits(model: Model, batch: Batch, finals: np.ndarray) -> Tensor:
    hidden = forward_hidden(model, batch)
    B, L = batch.shape
    flat = hidden.reshape(B * L, model.config.d)
    rows = _gather_rows(flat, np.arange(B) * L + finals)
    return rows @ model.params["head.w"] + model.params["head.b"]


def classify(
    model: Model, text_a: str, r_bidir: float, tokenizer: TokenizerModel,
    text_b: str | None = None,
) -> tuple[int, np.ndarray]:
    """Deterministic label prediction plus class probabilities."""
    if "head.w" not in model.params:
        raise ValueError("no classification head attached")
    ids = _encode_example(
        ClsExample(text_a, text_b, 0), tokenizer, model.config.max_positions
    )
    batch, finals = _cls_batch([ids], r_bidir, tokenizer.pad_id)
    logits = _head_logits(model, batch, finals).data[0]
    shifted = np.exp(logits - logits.max())
    probs = shifted / shifted.sum()
    return int(np.argmax(probs)), probs


def _dev_accuracy(
    model: Model, dataset: ClsDataset, r_bidir: float,
    tokenizer: TokenizerModel, batch_size: int = 32,
) -> float:
    hits = 0
    max_len = model.config.max_positions
    for start in range(0, len(dataset.dev), batch_size):
        chunk = dataset.dev[start : start + batch_size]
        encoded = [_encode_example(ex, tokenizer, max_len) for ex in chunk]
        batch, finals = _cls_batch(encoded, r_bidir, tokenizer.pad_id)
        preds = np.argmax(_head_logits(model, batch, finals).data, axis=-1)
        hits += int(np.sum(preds == np.array([ex.label for ex in chunk])))
    return hits / len(dataset.dev)


def _finetune_cell(
    base: Model, dataset: ClsDataset, lr: float, batch_size: int, r_bidir: float,
    updates: int, tokenizer: TokenizerModel, seed: int,
) -> tuple[Model, float]:
    model = Model(config=base.config, params=copy.deepcopy(base.params))
    opt = AdamW(model)
    rng = substream(seed, "finetune", f"lr{lr}", f"bs{batch_size}", f"r{r_bidir}")
    max_len = model.config.max_positions
    order: list[int] = []
    for t in range(updates):
        if len(order) < batch_size:
            order.extend(rng.permutation(len(dataset.train)).tolist())
        take, order = order[:batch_size], order[batch_size:]
        chunk = [dataset.train[i] for i in take]
        encoded = [_encode_example(ex, tokenizer, max_len) for ex in chunk]
        batch, finals = _cls_batch(encoded, r_bidir, tokenizer.pad_id)
        labels = np.array([ex.label for ex in chunk])
        model.zero_grads()
        mean, _ = _head_logits(model, batch, finals).mean_nll(labels)
        mean.backward()
        grads = {
            k: (v.grad if v.grad is not None else np.zeros_like(v.data))
            for k, v in model.params.items()
        }
        # Polynomial (power 1) decay to zero over the update budget.
        opt.step(grads, lr * (1.0 - t / updates))
    return model, _dev_accuracy(model, dataset, r_bidir, tokenizer)


@dataclass
class FinetuneResult:
    best_accuracy: float
    best_setting: dict
    table: list[dict] = field(default_factory=list)
    best_model: Model | None = None


def finetune(
    model: Model, dataset: ClsDataset, grid: FinetuneGrid,
    tokenizer: TokenizerModel, seed: int,
) -> FinetuneResult:
    """Grid search over (lr, batch size, attention direction); reports the
    per-cell dev-accuracy table and the argmax cell."""
    if "head.w" not in model.params:
        model = attach_head(model, dataset.num_labels, seed)
    table: list[dict] = []
    best: FinetuneResult | None = None
    for lr, bs, r in grid.cells():
        tuned, acc = _finetune_cell(
            model, dataset, lr, bs, r, grid.updates, tokenizer, seed
        )
        row = {"lr": lr, "batch_size": bs, "r_bidir": r, "dev_accuracy": acc}
        table.append(row)
        log.info("grid cell %s -> %.4f", row, acc)
        if best is None or acc > best.best_accuracy:
            best = FinetuneResult(
                best_accuracy=acc, best_setting=row, best_model=tuned
            )
    assert best is not None
    best.table = table
    return best
