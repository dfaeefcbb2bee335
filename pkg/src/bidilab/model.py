"""Pre-norm decoder transformer with arbitrary attention masks.

Positional embeddings are learned and indexed by each slot's (possibly
permuted) position id, so moved mask slots keep the embedding of their
original position. The output projection is tied to the token embedding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .packing import Batch
from .seeds import substream
from .tensor import Tensor
from .transform import KIND_MASK, KIND_NEXT

CKPT_MAGIC = b"BDLCKPT1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    l: int  # layers
    d: int  # hidden width
    h: int  # attention heads
    max_positions: int
    vocab_size: int
    precision: str = "f32"  # "f32" train mode | "f64" exactness-test mode

    def __post_init__(self):
        if self.d % self.h != 0:
            raise ValueError(f"d={self.d} not divisible by h={self.h}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    @property
    def d_head(self) -> int:
        return self.d // self.h

    @property
    def d_ff(self) -> int:
        return 4 * self.d


# Full-scale presets follow the published GPT-3-family settings (50k-ish
# vocabulary, 1024-token sequences); "tiny" is the desk-scale default.
PRESETS: dict[str, dict] = {
    "tiny": dict(l=4, d=128, h=4, max_positions=256, vocab_size=4096),
    "125M": dict(l=12, d=768, h=12, max_positions=1024, vocab_size=50257),
    "355M": dict(l=24, d=1024, h=16, max_positions=1024, vocab_size=50257),
    "1.3B": dict(l=24, d=2048, h=32, max_positions=1024, vocab_size=50257),
    "2.7B": dict(l=32, d=2560, h=32, max_positions=1024, vocab_size=50257),
    "6.7B": dict(l=32, d=4096, h=32, max_positions=1024, vocab_size=50257),
}


def preset_config(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return ModelConfig(**{**PRESETS[name], **overrides})


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def num_params(self) -> int:
        return sum(v.data.size for v in self.params.values())

    def checksum(self) -> float:
        return float(sum(np.abs(v.data).sum() for v in self.params.values()))

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count (tied embeddings, no head)."""
    d, dff = config.d, config.d_ff
    per_layer = (
        (d * 3 * d + 3 * d)  # qkv
        + (d * d + d)  # attn out
        + (d * dff + dff) + (dff * d + d)  # ffn
        + 4 * d  # two layer norms
    )
    return (
        config.vocab_size * d
        + config.max_positions * d
        + config.l * per_layer
        + 2 * d  # final norm
    )


def init(config: ModelConfig, seed: int) -> Model:
    """Initialize parameters deterministically from the seed.

    Projection weights are N(0, 0.02^2) with residual output projections
    scaled down by 1/sqrt(2l); norms start at identity. Embeddings are
    N(0, 1): with the output projection tied to the token embedding, a
    0.02-scale table would start the logits two orders of magnitude too
    small, and small models then sit on a near-uniform loss plateau for
    tens of thousands of steps before any structure can emerge.
    """
    rng = substream(seed, "init")
    dt = config.dtype
    d, dff = config.d, config.d_ff
    res_scale = 1.0 / np.sqrt(2 * config.l)

    def normal(*shape, scale=1.0):
        return Tensor((rng.normal(0, 0.02, size=shape) * scale).astype(dt), requires_grad=True)

    def emb_normal(*shape):
        return Tensor(rng.normal(0, 1.0, size=shape).astype(dt), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dt), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dt), requires_grad=True)

    params: dict[str, Tensor] = {
        "tok_emb": emb_normal(config.vocab_size, d),
        "pos_emb": emb_normal(config.max_positions, d),
        "ln_f.g": ones(d),
        "ln_f.b": zeros(d),
    }
    for i in range(config.l):
        params[f"h{i}.ln1.g"] = ones(d)
        params[f"h{i}.ln1.b"] = zeros(d)
        params[f"h{i}.attn.wqkv"] = normal(d, 3 * d)
        params[f"h{i}.attn.bqkv"] = zeros(3 * d)
        params[f"h{i}.attn.wo"] = normal(d, d, scale=res_scale)
        params[f"h{i}.attn.bo"] = zeros(d)
        params[f"h{i}.ln2.g"] = ones(d)
        params[f"h{i}.ln2.b"] = zeros(d)
        params[f"h{i}.ffn.w1"] = normal(d, dff)
        params[f"h{i}.ffn.b1"] = zeros(dff)
        params[f"h{i}.ffn.w2"] = normal(dff, d, scale=res_scale)
        params[f"h{i}.ffn.b2"] = zeros(d)
    return Model(config=config, params=params)


def forward_hidden(model: Model, batch: Batch) -> Tensor:
    """Run the trunk; returns final hidden states (B, L, d)."""
    cfg = model.config
    p = model.params
    if batch.position_ids.max() >= cfg.max_positions:
        raise ValueError(
            f"position {int(batch.position_ids.max())} exceeds "
            f"max_positions {cfg.max_positions}"
        )
    B, L = batch.shape
    x = p["tok_emb"].take_rows(batch.input_ids) + p["pos_emb"].take_rows(batch.position_ids)
    allowed = batch.allowed[:, None, :, :]  # broadcast over heads
    scale = 1.0 / np.sqrt(cfg.d_head)

    for i in range(cfg.l):
        h = x.layer_norm(p[f"h{i}.ln1.g"], p[f"h{i}.ln1.b"])
        qkv = h @ p[f"h{i}.attn.wqkv"] + p[f"h{i}.attn.bqkv"]
        qkv = qkv.reshape(B, L, 3 * cfg.h, cfg.d_head).transpose(0, 2, 1, 3)
        q = qkv.narrow(1, 0, cfg.h)
        k = qkv.narrow(1, cfg.h, cfg.h)
        v = qkv.narrow(1, 2 * cfg.h, cfg.h)
        scores = (q @ k.transpose(0, 1, 3, 2)).scale(scale)
        probs = scores.masked_softmax(allowed)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, L, cfg.d)
        x = x + (ctx @ p[f"h{i}.attn.wo"] + p[f"h{i}.attn.bo"])

        h = x.layer_norm(p[f"h{i}.ln2.g"], p[f"h{i}.ln2.b"])
        h = (h @ p[f"h{i}.ffn.w1"] + p[f"h{i}.ffn.b1"]).gelu()
        x = x + (h @ p[f"h{i}.ffn.w2"] + p[f"h{i}.ffn.b2"])

    return x.layer_norm(p["ln_f.g"], p["ln_f.b"])


def forward(model: Model, batch: Batch) -> Tensor:
    """Logits (B, L, vocab) per slot; tied to the token embedding."""
    return forward_hidden(model, batch).linear_t(model.params["tok_emb"])


@dataclass
class LossBreakdown:
    mean: float
    per_slot: np.ndarray  # NLL per valid slot, aligned with valid_index
    valid_index: tuple[np.ndarray, np.ndarray]  # (row, col) of valid slots
    kinds: np.ndarray  # kind per valid slot

    @property
    def mean_next(self) -> float:
        sel = self.kinds == KIND_NEXT
        return float(self.per_slot[sel].mean()) if sel.any() else float("nan")

    @property
    def mean_mask(self) -> float:
        sel = self.kinds == KIND_MASK
        return float(self.per_slot[sel].mean()) if sel.any() else float("nan")


def loss(logits: Tensor, batch: Batch) -> tuple[Tensor, LossBreakdown]:
    """Mean NLL over valid target slots plus a per-slot breakdown."""
    valid = batch.valid
    rows, cols = np.nonzero(valid)
    if len(rows) == 0:
        raise ValueError("batch has no valid target slots")
    B, L = batch.shape
    flat = logits.reshape(B * L, logits.shape[-1])
    picked = _gather_rows(flat, rows * L + cols)
    targets = batch.target_ids[rows, cols]
    mean, per_slot = picked.mean_nll(targets)
    breakdown = LossBreakdown(
        mean=mean.item(),
        per_slot=per_slot,
        valid_index=(rows, cols),
        kinds=batch.target_kinds[rows, cols],
    )
    return mean, breakdown


def _gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    def grad_fn(g):
        out = np.zeros_like(x.data)
        np.add.at(out, indices, g)
        return (out,)

    return Tensor(x.data[indices], parents=(x,), grad_fn=grad_fn)


def backward(model: Model, batch: Batch) -> tuple[dict[str, np.ndarray], LossBreakdown]:
    """Forward + backward; returns gradients keyed like params."""
    model.zero_grads()
    mean, breakdown = loss(forward(model, batch), batch)
    mean.backward()
    grads = {
        k: (v.grad if v.grad is not None else np.zeros_like(v.data))
        for k, v in model.params.items()
    }
    return grads, breakdown


# -- checkpoint io ----------------------------------------------------------


def save_checkpoint(
    path, model: Model, step: int = 0, tokens: int = 0,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    """Versioned little-endian checkpoint: header + named raw tensors in
    sorted-name order."""
    arrays = dict(model.param_arrays())
    if extra_arrays:
        arrays.update({f"extra.{k}": v for k, v in extra_arrays.items()})
    header = json.dumps(
        {"config": asdict(model.config), "step": step, "tokens": tokens,
         "names": sorted(arrays)}
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(header)))
        fh.write(header)
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            meta = json.dumps({"dtype": str(arr.dtype), "shape": arr.shape}).encode()
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> tuple[Model, int, int, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(8) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen))
        config = ModelConfig(**header["config"])
        params: dict[str, Tensor] = {}
        extra: dict[str, np.ndarray] = {}
        for name in header["names"]:
            (mlen,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(mlen))
            dtype = np.dtype(meta["dtype"]).newbyteorder("<")
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            arr = arr.reshape(shape).astype(dtype.newbyteorder("="))
            if name.startswith("extra."):
                extra[name[len("extra."):]] = arr
            else:
                params[name] = Tensor(arr.copy(), requires_grad=True)
    model = Model(config=config, params=params)
    return model, header["step"], header["tokens"], extra
