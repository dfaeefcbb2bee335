"""The six training variants and per-document parameter sampling.

Each variant fixes how the three knobs are drawn for a document of
length n:

    n_mask    how many tokens are masked and moved to the end
    n_bidir   length of the bidirectional-attention prefix
    n_predict length of the loss window at the end of the sequence

NxtUni is a plain causal LM, MskBi a masked LM with full bidirectional
attention, NxtPre a prefix LM, and the Hyb* variants mix masking with
next-token prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BIDIR_ZERO = "zero"
BIDIR_FULL = "full"
BIDIR_UNIFORM = "uniform"  # Uniform(1, n)

PREDICT_ALL = "all"  # n
PREDICT_MASK = "n_mask"
PREDICT_REST = "n_minus_bidir"  # n - n_bidir
PREDICT_MAX = "max_rest_mask"  # max(n - n_bidir, n_mask)


@dataclass(frozen=True)
class VariantSpec:
    name: str
    mask_rate: float
    bidir_rule: str
    predict_rule: str
    fallback_prob: float = 0.0
    # Redraw zero-mask draws for variants whose only supervision is masks.
    require_mask: bool = False


VARIANTS: dict[str, VariantSpec] = {
    "NxtUni": VariantSpec("NxtUni", 0.0, BIDIR_ZERO, PREDICT_ALL),
    "NxtPre": VariantSpec("NxtPre", 0.0, BIDIR_UNIFORM, PREDICT_REST, fallback_prob=0.1),
    "MskUni": VariantSpec("MskUni", 0.15, BIDIR_ZERO, PREDICT_MASK, require_mask=True),
    "MskBi": VariantSpec("MskBi", 0.15, BIDIR_FULL, PREDICT_MASK, require_mask=True),
    "HybUni": VariantSpec("HybUni", 0.15, BIDIR_ZERO, PREDICT_ALL, fallback_prob=0.1),
    "HybPre": VariantSpec("HybPre", 0.15, BIDIR_UNIFORM, PREDICT_MAX, fallback_prob=0.1),
}


def get_variant(name: str) -> VariantSpec:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(
            f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}"
        ) from None


@dataclass(frozen=True)
class TransformPlan:
    """Sampled per-document parameters. Positions are 1-based; the final
    position (EOS) is never masked."""

    n: int
    n_mask: int
    mask_positions: tuple[int, ...]  # strictly increasing, all < n
    n_bidir: int
    n_predict: int

    def validate(self) -> None:
        if not 0 <= self.n_mask <= self.n - 1:
            raise ValueError(f"n_mask {self.n_mask} out of range for n={self.n}")
        if not 0 <= self.n_bidir <= self.n:
            raise ValueError(f"n_bidir {self.n_bidir} out of range for n={self.n}")
        if not self.n_mask <= self.n_predict <= self.n:
            raise ValueError(f"n_predict {self.n_predict} out of range")
        if self.n_predict > self.n - self.n_bidir + self.n_mask:
            raise ValueError("n_predict exceeds n - n_bidir + n_mask")
        if len(self.mask_positions) != self.n_mask:
            raise ValueError("mask_positions length != n_mask")
        if any(not 1 <= p < self.n for p in self.mask_positions):
            raise ValueError("mask position out of range (EOS is not maskable)")
        if list(self.mask_positions) != sorted(set(self.mask_positions)):
            raise ValueError("mask_positions must be strictly increasing")


def sample_plan(spec: VariantSpec, n: int, rng: np.random.Generator) -> TransformPlan:
    """Draw one TransformPlan for a document of length n.

    Draw order is fixed for reproducibility: fallback first (dagger
    variants only), then mask positions, then n_bidir. A triggered
    fallback forces n_mask = n_bidir = 0 before the predict rule applies.
    """
    if n < 2:
        raise ValueError(f"document too short to transform: n={n}")

    fallback = spec.fallback_prob > 0 and rng.random() < spec.fallback_prob

    mask_positions: tuple[int, ...] = ()
    if spec.mask_rate > 0 and not fallback:
        while True:
            draws = rng.random(n - 1) < spec.mask_rate
            mask_positions = tuple(int(i) + 1 for i in np.nonzero(draws)[0])
            if mask_positions or not spec.require_mask:
                break
    n_mask = len(mask_positions)

    if fallback or spec.bidir_rule == BIDIR_ZERO:
        n_bidir = 0
    elif spec.bidir_rule == BIDIR_FULL:
        n_bidir = n
    elif spec.bidir_rule == BIDIR_UNIFORM:
        n_bidir = int(rng.integers(1, n + 1))
    else:
        raise ValueError(f"unknown bidir rule {spec.bidir_rule!r}")

    if spec.predict_rule == PREDICT_ALL:
        n_predict = n
    elif spec.predict_rule == PREDICT_MASK:
        n_predict = n_mask
    elif spec.predict_rule == PREDICT_REST:
        n_predict = n - n_bidir
    elif spec.predict_rule == PREDICT_MAX:
        n_predict = max(n - n_bidir, n_mask)
    else:
        raise ValueError(f"unknown predict rule {spec.predict_rule!r}")

    plan = TransformPlan(
        n=n,
        n_mask=n_mask,
        mask_positions=mask_positions,
        n_bidir=n_bidir,
        n_predict=n_predict,
    )
    plan.validate()
    return plan
