"""Mask-and-move document transformation.

Starting from the original token sequence we (1) set next-token targets,
(2) replace the chosen positions with <mask> and switch their target to
the masked token itself, (3) move the mask slots, together with their
original positions, to the end, and (4) keep targets only on the last
n_predict slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Document
from .variants import TransformPlan

KIND_NONE = 0
KIND_NEXT = 1
KIND_MASK = 2

KIND_NAMES = {KIND_NONE: "-", KIND_NEXT: "next", KIND_MASK: "mask"}


@dataclass
class TransformedExample:
    """One transformed document, ready for packing.

    positions are 1-based original positions; target_ids is -1 and
    target_kinds is KIND_NONE where a slot carries no loss.
    """

    inputs: np.ndarray  # (n,) int32
    positions: np.ndarray  # (n,) int32
    target_ids: np.ndarray  # (n,) int32
    target_kinds: np.ndarray  # (n,) uint8
    n_bidir: int

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def n_mask(self) -> int:
        return int(np.sum(self.target_kinds == KIND_MASK))


def transform(doc: Document, plan: TransformPlan, mask_id: int) -> TransformedExample:
    """Apply the mask-and-move transformation under a sampled plan."""
    tokens = np.asarray(doc.tokens, dtype=np.int32)
    n = len(tokens)
    if plan.n != n:
        raise ValueError(f"plan is for n={plan.n}, document has n={n}")
    plan.validate()

    masked = np.zeros(n, dtype=bool)
    for p in plan.mask_positions:
        masked[p - 1] = True
    unmasked_pos = np.nonzero(~masked)[0] + 1  # 1-based, increasing
    mask_pos = np.nonzero(masked)[0] + 1

    positions = np.concatenate([unmasked_pos, mask_pos]).astype(np.int32)
    inputs = tokens[positions - 1].copy()
    inputs[n - plan.n_mask :] = mask_id

    target_ids = np.full(n, -1, dtype=np.int32)
    target_kinds = np.zeros(n, dtype=np.uint8)
    window_start = n - plan.n_predict  # 0-based slot index
    mask_start = n - plan.n_mask
    for k in range(window_start, n):
        p = int(positions[k])
        if k >= mask_start:
            # Predict the masked token itself.
            target_ids[k] = tokens[p - 1]
            target_kinds[k] = KIND_MASK
        elif p < n:
            # Predict the successor in the original document.
            target_ids[k] = tokens[p]
            target_kinds[k] = KIND_NEXT
        # p == n has no successor; the slot stays invalid.

    return TransformedExample(
        inputs=inputs,
        positions=positions,
        target_ids=target_ids,
        target_kinds=target_kinds,
        n_bidir=plan.n_bidir,
    )


def count_loss_slots(ex: TransformedExample) -> tuple[int, int]:
    """Return (next_count, mask_count) of valid loss slots."""
    next_count = int(np.sum(ex.target_kinds == KIND_NEXT))
    mask_count = int(np.sum(ex.target_kinds == KIND_MASK))
    return next_count, mask_count


def reconstruct(ex: TransformedExample, mask_id: int) -> np.ndarray:
    """Invert the transformation: reorder slots by original position and
    restore masked tokens from their targets."""
    n = len(ex)
    tokens = np.zeros(n, dtype=np.int32)
    for k in range(n):
        p = int(ex.positions[k]) - 1
        if ex.inputs[k] == mask_id:
            if ex.target_kinds[k] != KIND_MASK:
                raise ValueError("mask slot without a mask target cannot be restored")
            tokens[p] = ex.target_ids[k]
        else:
            tokens[p] = ex.inputs[k]
    return tokens


def trace_transform(doc: Document, plan: TransformPlan, mask_id: int) -> str:
    """Human-readable step-by-step trace of the transformation."""
    tokens = list(doc.tokens)
    n = len(tokens)
    lines = [
        f"document ({n} tokens): {tokens}",
        f"plan: n_mask={plan.n_mask} mask_positions={list(plan.mask_positions)} "
        f"n_bidir={plan.n_bidir} n_predict={plan.n_predict}",
        "step 1: next-token targets over the original sequence",
        f"  targets: {[tokens[p] if p < n else None for p in range(1, n + 1)]}",
    ]
    masked_inputs = [
        mask_id if (p in plan.mask_positions) else tokens[p - 1] for p in range(1, n + 1)
    ]
    lines.append("step 2: replace masked positions with <mask>, retarget to the masked token")
    lines.append(f"  inputs:  {masked_inputs}")
    ex = transform(doc, plan, mask_id)
    lines.append("step 3: move mask slots (with their positions) to the end")
    lines.append(f"  inputs:    {ex.inputs.tolist()}")
    lines.append(f"  positions: {ex.positions.tolist()}")
    lines.append(f"step 4: keep targets on the last n_predict={plan.n_predict} slots; "
                 f"bidirectional attention over the first n_bidir={plan.n_bidir}")
    rendered = [
        f"slot {k + 1}: "
        + (f"({int(ex.target_ids[k])},{KIND_NAMES[int(ex.target_kinds[k])]})"
           if ex.target_kinds[k] != KIND_NONE else "no target")
        for k in range(n)
    ]
    lines.append("  " + "; ".join(rendered))
    return "\n".join(lines)
