"""Optimization loop, learning-rate schedule, and the analytic training
cost estimator."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .data import Document
from .model import Model, ModelConfig, backward, param_count
from .model import load_checkpoint, save_checkpoint
from .packing import Batch, pack
from .seeds import substream
from .transform import transform
from .variants import VariantSpec, sample_plan

log = logging.getLogger(__name__)

ZFLOP = 1e21


@dataclass(frozen=True)
class TrainConfig:
    variant: str
    batch_size_tokens: int
    learning_rate: float
    warmup_tokens: int
    total_tokens: int
    max_len: int
    seed: int
    checkpoint_interval: int = 0  # steps; 0 = final checkpoint only
    log_interval: int = 10  # steps
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-8
    clip_norm: float = 1.0
    min_lr_fraction: float = 0.1

    def __post_init__(self):
        if self.total_tokens < self.batch_size_tokens:
            raise ValueError("total_tokens must cover at least one batch")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def lr_at(config: TrainConfig, tokens_consumed: int) -> float:
    """Linear warmup to peak, then linear decay to min_lr_fraction of peak
    at the end of the token budget."""
    peak = config.learning_rate
    if config.warmup_tokens > 0 and tokens_consumed < config.warmup_tokens:
        return peak * tokens_consumed / config.warmup_tokens
    span = config.total_tokens - config.warmup_tokens
    if span <= 0:
        return peak
    frac = (tokens_consumed - config.warmup_tokens) / span
    return peak * (1.0 - (1.0 - config.min_lr_fraction) * min(frac, 1.0))


def flops_estimate(config: ModelConfig, max_len: int, total_tokens: int) -> float:
    """Analytic training FLOPs: 3 x (2 N + 4 l d s) per token.

    2N multiply-accumulates per token for the dense weights (N counts all
    parameters, embeddings included), 4 l d s for attention score/value
    products at sequence length s, and a factor 3 for forward plus
    backward. An approximation, good to well within a factor of 2.
    """
    n_params = param_count(config)
    return 3.0 * (2.0 * n_params + 4.0 * config.l * config.d * max_len) * total_tokens


class AdamW:
    """Adaptive moments with decoupled weight decay and global-norm clipping.

    Weight decay applies to matrices only (biases and norm gains are
    exempt), following the usual convention.
    """

    def __init__(
        self,
        model: Model,
        betas: tuple[float, float] = (0.9, 0.98),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        clip_norm: float = 1.0,
    ):
        self.model = model
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        dt = model.config.dtype
        self.m = {k: np.zeros_like(v.data, dtype=dt) for k, v in model.params.items()}
        self.v = {k: np.zeros_like(v.data, dtype=dt) for k, v in model.params.items()}

    @classmethod
    def from_config(cls, model: Model, config: TrainConfig) -> "AdamW":
        return cls(
            model,
            betas=config.betas,
            eps=config.eps,
            weight_decay=config.weight_decay,
            clip_norm=config.clip_norm,
        )

    def step(self, grads: dict[str, np.ndarray], lr: float) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        gnorm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                                  for g in grads.values())))
        clip = min(1.0, self.clip_norm / (gnorm + 1e-12))
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.model.params.items():
            g = grads[name] * clip
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            if p.data.ndim >= 2 and self.weight_decay > 0:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update
        return gnorm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"opt_m.{k}": v for k, v in self.m.items()}
        out.update({f"opt_v.{k}": v for k, v in self.v.items()})
        out["opt_t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["opt_t"][0])
        for k in self.m:
            self.m[k] = arrays[f"opt_m.{k}"].astype(self.m[k].dtype).reshape(self.m[k].shape).copy()
            self.v[k] = arrays[f"opt_v.{k}"].astype(self.v[k].dtype).reshape(self.v[k].shape).copy()


def batch_stream(
    docs: list[Document],
    variant: VariantSpec,
    seed: int,
    mask_id: int,
    pad_id: int,
    max_len: int,
    rows_per_batch: int,
) -> Iterator[Batch]:
    """Endless deterministic stream: reshuffle documents each epoch, draw a
    fresh transformation per document per pass, pack greedily, group rows."""
    if not docs:
        raise ValueError("empty document set")
    epoch = 0
    while True:
        order_rng = substream(seed, "data", f"epoch{epoch}")
        mask_rng = substream(seed, "masks", f"epoch{epoch}")
        order = order_rng.permutation(len(docs))
        examples = (
            transform(docs[i], sample_plan(variant, len(docs[i]), mask_rng), mask_id)
            for i in order
        )
        rows = []
        for seq in pack(examples, max_len, pad_id):
            rows.append(seq)
            if len(rows) == rows_per_batch:
                yield Batch.from_sequences(rows)
                rows = []
        if rows:
            yield Batch.from_sequences(rows)
        epoch += 1


@dataclass
class TrainResult:
    model: Model
    metrics: list[dict] = field(default_factory=list)
    final_checkpoint: Path | None = None


def train(
    model: Model,
    config: TrainConfig,
    docs: list[Document],
    variant: VariantSpec,
    mask_id: int,
    pad_id: int,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the token-budget loop; returns the trained model and metrics.

    If out_dir is given, per-interval metrics go to metrics.jsonl and
    checkpoints to checkpoint_<step>.bin / checkpoint_final.bin.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    opt = AdamW.from_config(model, config)
    step = 0
    tokens = 0
    if resume_from is not None:
        loaded, step, tokens, extra = load_checkpoint(resume_from)
        model.params = loaded.params
        opt = AdamW.from_config(model, config)
        opt.load_state(extra)

    rows_per_batch = max(1, config.batch_size_tokens // config.max_len)
    stream = batch_stream(
        docs, variant, config.seed, mask_id, pad_id, config.max_len, rows_per_batch
    )
    # Deterministic resume: regenerate the stream and skip consumed batches.
    for _ in range(step):
        next(stream)

    metrics: list[dict] = []
    metrics_fh = None
    if out_path is not None:
        metrics_fh = open(out_path / "metrics.jsonl", "a")
    result = TrainResult(model=model)
    try:
        window_start = time.monotonic()
        window_tokens = 0
        while tokens < config.total_tokens:
            batch = next(stream)
            lr = lr_at(config, tokens)
            grads, breakdown = backward(model, batch)
            if not np.isfinite(breakdown.mean):
                raise RuntimeError(
                    f"non-finite loss {breakdown.mean} at step {step} "
                    f"(tokens={tokens}, lr={lr:.3g}); aborting"
                )
            opt.step(grads, lr)
            step += 1
            batch_tokens = int(batch.input_ids.size)
            tokens += batch_tokens
            window_tokens += batch_tokens

            if step % config.log_interval == 0 or tokens >= config.total_tokens:
                elapsed = max(time.monotonic() - window_start, 1e-9)
                loss_next = breakdown.mean_next
                loss_mask = breakdown.mean_mask
                entry = {
                    "step": step,
                    "tokens": tokens,
                    "loss": breakdown.mean,
                    "loss_next": None if np.isnan(loss_next) else loss_next,
                    "loss_mask": None if np.isnan(loss_mask) else loss_mask,
                    "lr": lr,
                    "tok_per_sec": window_tokens / elapsed,
                }
                metrics.append(entry)
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(entry) + "\n")
                    metrics_fh.flush()
                window_start = time.monotonic()
                window_tokens = 0

            if (
                out_path is not None
                and config.checkpoint_interval > 0
                and step % config.checkpoint_interval == 0
            ):
                save_checkpoint(
                    out_path / f"checkpoint_{step}.bin", model, step, tokens,
                    extra_arrays=opt.state_arrays(),
                )
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if out_path is not None:
        final = out_path / "checkpoint_final.bin"
        save_checkpoint(final, model, step, tokens, extra_arrays=opt.state_arrays())
        result.final_checkpoint = final
    result.metrics = metrics
    return result
