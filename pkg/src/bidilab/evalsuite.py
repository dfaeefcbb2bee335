"""Evaluation protocols: document and suffix perplexity, single-token
infilling (direct and full-sequence scoring), and multiple-choice scoring.

Every scorer feeds each document as its own sequence (no packing) with
positions starting at 0, and never mutates model parameters. Scorers
accept either a trained Model or any object exposing
`logits(batch) -> ndarray` (e.g. the uniform stub used in tests).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Document
from .model import Model, forward
from .packing import Batch
from .tokenizer import TokenizerModel
from .transform import KIND_NEXT, TransformedExample, transform
from .variants import TransformPlan


@dataclass(frozen=True)
class EvalConfig:
    r_bidir: float = 0.0
    suffix_ratio: float = 0.8  # fraction of each document used as prefix
    candidate_k: int = 32
    scoring_mode: str = "full"  # "full" | "infill"

    def __post_init__(self):
        if not 0.0 <= self.r_bidir <= 1.0:
            raise ValueError("r_bidir must lie in [0, 1]")
        if not 0.0 <= self.suffix_ratio <= 1.0:
            raise ValueError("suffix_ratio must lie in [0, 1]")
        if self.candidate_k < 1:
            raise ValueError("candidate_k must be at least 1")
        if self.scoring_mode not in ("full", "infill"):
            raise ValueError("scoring_mode must be 'full' or 'infill'")


class UniformStub:
    """Emits identical logits everywhere; perplexity equals vocab size."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def logits(self, batch: Batch) -> np.ndarray:
        B, L = batch.shape
        return np.zeros((B, L, self.vocab_size))


def _logits(model, batch: Batch) -> np.ndarray:
    if isinstance(model, Model):
        return forward(model, batch).data
    return model.logits(batch)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _identity_example(
    doc: Document, n_bidir: int, target_from: int, target_to: int
) -> TransformedExample:
    """Untransformed layout with next-token targets on predicted positions
    target_from..target_to (1-based, inclusive)."""
    tokens = np.asarray(doc.tokens, dtype=np.int32)
    n = len(tokens)
    target_ids = np.full(n, -1, dtype=np.int32)
    target_kinds = np.zeros(n, dtype=np.uint8)
    for predicted in range(target_from, target_to + 1):
        target_ids[predicted - 2] = tokens[predicted - 1]
        target_kinds[predicted - 2] = KIND_NEXT
    return TransformedExample(
        inputs=tokens.copy(),
        positions=np.arange(1, n + 1, dtype=np.int32),
        target_ids=target_ids,
        target_kinds=target_kinds,
        n_bidir=n_bidir,
    )


def _nll_terms(model, examples: list[TransformedExample], pad_id: int) -> np.ndarray:
    """Per-target NLL values over all valid slots of all examples."""
    batch = Batch.from_examples(examples, pad_id=pad_id)
    logits = _logits(model, batch)
    rows, cols = np.nonzero(batch.valid)
    picked = logits[rows, cols]
    row_max = picked.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(picked - row_max).sum(axis=-1)) + row_max[:, 0]
    return lse - picked[np.arange(len(rows)), batch.target_ids[rows, cols]]


def full_doc_perplexity(model, docs: list[Document], pad_id: int) -> float:
    """exp(mean causal NLL) over all next-token slots of all documents."""
    if not docs:
        raise ValueError("empty document set")
    terms = []
    for doc in docs:
        ex = _identity_example(doc, n_bidir=0, target_from=2, target_to=len(doc))
        terms.append(_nll_terms(model, [ex], pad_id))
    return float(np.exp(np.concatenate(terms).mean()))


def suffix_perplexity(model, docs: list[Document], cfg: EvalConfig, pad_id: int) -> float:
    """Perplexity at predicting each document's tail conditioned on its
    prefix, with a bidirectional prefix of n_bidir = round(r_bidir * n_prefix)."""
    if not docs:
        raise ValueError("empty document set")
    terms = []
    for doc in docs:
        n = len(doc)
        if n < 5:
            raise ValueError(f"{doc.source_id}: document too short for suffix scoring (n={n})")
        n_prefix = int(math.floor(cfg.suffix_ratio * n))
        n_bidir = round_half_up(cfg.r_bidir * n_prefix)
        ex = _identity_example(doc, n_bidir=n_bidir, target_from=n_prefix + 1, target_to=n)
        terms.append(_nll_terms(model, [ex], pad_id))
    return float(np.exp(np.concatenate(terms).mean()))


def infill_direct(
    model, doc: Document, mask_pos: int, cfg: EvalConfig, mask_id: int, pad_id: int
) -> tuple[np.ndarray, int]:
    """Predictive distribution at the relocated mask slot, plus its argmax.

    Applies the training-time transformation with a single mask at
    mask_pos (1-based, non-EOS) and n_bidir = round(r_bidir * n).
    """
    n = len(doc)
    if not 1 <= mask_pos < n:
        raise ValueError(f"mask_pos {mask_pos} must be a non-EOS position in [1, {n - 1}]")
    n_bidir = round_half_up(cfg.r_bidir * n)
    plan = TransformPlan(
        n=n, n_mask=1, mask_positions=(mask_pos,), n_bidir=n_bidir, n_predict=1
    )
    ex = transform(doc, plan, mask_id)
    batch = Batch.from_examples([ex], pad_id=pad_id)
    logits = _logits(model, batch)[0, n - 1]
    shifted = np.exp(logits - logits.max())
    probs = shifted / shifted.sum()
    return probs, int(np.argmax(probs))


def sequence_logprob(model, docs: list[Document], pad_id: int) -> np.ndarray:
    """Total autoregressive log-probability of each document (n_bidir=0)."""
    examples = [
        _identity_example(doc, n_bidir=0, target_from=2, target_to=len(doc)) for doc in docs
    ]
    batch = Batch.from_examples(examples, pad_id=pad_id)
    logits = _logits(model, batch)
    totals = np.zeros(len(docs))
    for i, doc in enumerate(docs):
        rows = np.nonzero(batch.valid[i])[0]
        picked = logits[i, rows]
        row_max = picked.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(picked - row_max).sum(axis=-1)) + row_max[:, 0]
        totals[i] = float((picked[np.arange(len(rows)), batch.target_ids[i, rows]] - lse).sum())
    return totals


def infill_full_scoring(
    model, doc: Document, mask_pos: int, candidates: list[int], pad_id: int
) -> int:
    """Substitute each candidate at mask_pos, score whole sequences
    autoregressively, return the best candidate (ties: lowest token id)."""
    if not candidates:
        raise ValueError("candidate set is empty")
    variants = []
    for cand in candidates:
        tokens = list(doc.tokens)
        tokens[mask_pos - 1] = int(cand)
        variants.append(Document(tokens=tuple(tokens), source_id=doc.source_id))
    scores = sequence_logprob(model, variants, pad_id)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i]))
    return int(candidates[order[0]])


def topk_candidates(
    masked_model, doc: Document, mask_pos: int, k: int,
    cfg: EvalConfig, mask_id: int, pad_id: int,
) -> list[int]:
    """The k most probable infill tokens under a masked model, descending."""
    probs, _ = infill_direct(masked_model, doc, mask_pos, cfg, mask_id, pad_id)
    if k > len(probs):
        raise ValueError(f"k={k} exceeds vocabulary size {len(probs)}")
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return [int(i) for i in order[:k]]


# -- multiple choice --------------------------------------------------------


@dataclass(frozen=True)
class McItem:
    template: str  # contains one "{}" placeholder
    options: tuple[str, ...]
    gold: int

    def __post_init__(self):
        if self.template.count("{}") != 1:
            raise ValueError("template must contain exactly one '{}' placeholder")
        if len(self.options) < 2:
            raise ValueError("need at least 2 options")
        if not 0 <= self.gold < len(self.options):
            raise ValueError("gold index out of range")


@dataclass(frozen=True)
class McTask:
    items: tuple[McItem, ...]
    mode: str = "full"  # "full" | "infill"


def load_mc_task(path: str | Path) -> McTask:
    items = []
    mode = "full"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                item = McItem(
                    template=rec["template"],
                    options=tuple(rec["options"]),
                    gold=int(rec["gold"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad task record ({exc})") from exc
            mode = rec.get("mode", mode)
            items.append(item)
    return McTask(items=tuple(items), mode=mode)


def mnli_prompts(premise: str, hypothesis: str) -> McItem:
    """Single-token-verbalizer entailment template with the option placed
    mid-prompt."""
    return McItem(
        template=f"{premise}, right? {{}}, {hypothesis}",
        options=("Yes", "No", "Also"),
        gold=0,
    )


@dataclass
class McResult:
    accuracy: float
    choices: list[int]
    scores: list[list[float]]
    mean_scores: list[list[float]]  # per-token mean log-prob, secondary metric


def score_multiple_choice(
    model, task: McTask, cfg: EvalConfig, tokenizer: TokenizerModel, pad_id: int
) -> McResult:
    choices: list[int] = []
    all_scores: list[list[float]] = []
    all_means: list[list[float]] = []
    mode = cfg.scoring_mode if cfg.scoring_mode else task.mode
    for item in task.items:
        if mode == "full":
            docs = []
            for opt in item.options:
                ids = tokenizer.encode(item.template.format(opt))
                docs.append(Document.from_content(ids, tokenizer.eos_id, "mc"))
            totals = sequence_logprob(model, docs, pad_id)
            means = [totals[i] / (len(docs[i]) - 1) for i in range(len(docs))]
            pick = int(min(range(len(totals)), key=lambda i: (-totals[i], i)))
            all_scores.append([float(t) for t in totals])
            all_means.append([float(m) for m in means])
        elif mode == "infill":
            prefix, suffix = item.template.split("{}")
            option_ids = []
            for opt in item.options:
                ids = tokenizer.encode(opt)
                if len(ids) != 1:
                    raise ValueError(
                        f"infill mode requires single-token options; {opt!r} "
                        f"encodes to {len(ids)} tokens"
                    )
                option_ids.append(ids[0])
            prefix_ids = tokenizer.encode(prefix)
            content = prefix_ids + [option_ids[0]] + tokenizer.encode(suffix)
            doc = Document.from_content(content, tokenizer.eos_id, "mc")
            probs, _ = infill_direct(
                model, doc, len(prefix_ids) + 1, cfg, tokenizer.mask_id, pad_id
            )
            opt_probs = [float(probs[t]) for t in option_ids]
            pick = int(min(range(len(opt_probs)), key=lambda i: (-opt_probs[i], i)))
            logp = [float(np.log(max(p, 1e-300))) for p in opt_probs]
            all_scores.append(logp)
            all_means.append(logp)
        else:
            raise ValueError(f"unknown scoring mode {mode!r}")
        choices.append(pick)
    golds = [item.gold for item in task.items]
    accuracy = float(np.mean([c == g for c, g in zip(choices, golds)]))
    return McResult(accuracy=accuracy, choices=choices, scores=all_scores, mean_scores=all_means)


# -- sweeps -----------------------------------------------------------------


def suffix_sweep(
    model, docs: list[Document], r_values: list[float], pad_id: int, suffix_ratio: float = 0.8
) -> list[dict]:
    return [
        {
            "r_bidir": r,
            "ppl": suffix_perplexity(
                model, docs, EvalConfig(r_bidir=r, suffix_ratio=suffix_ratio), pad_id
            ),
        }
        for r in r_values
    ]


def infill_accuracy(
    model, docs: list[Document], cfg: EvalConfig, mask_id: int, pad_id: int,
    rng: np.random.Generator, positions: list[int] | None = None,
) -> float:
    """Mask one random non-EOS token per document (or the given positions)
    and measure argmax accuracy."""
    hits = 0
    for i, doc in enumerate(docs):
        pos = positions[i] if positions is not None else int(rng.integers(1, len(doc)))
        _, pred = infill_direct(model, doc, pos, cfg, mask_id, pad_id)
        hits += pred == doc.tokens[pos - 1]
    return hits / len(docs)


def infill_sweep(
    model, docs: list[Document], r_values: list[float], mask_id: int, pad_id: int,
    rng: np.random.Generator,
) -> list[dict]:
    positions = [int(rng.integers(1, len(doc))) for doc in docs]
    return [
        {
            "r_bidir": r,
            "accuracy": infill_accuracy(
                model, docs, EvalConfig(r_bidir=r), mask_id, pad_id, rng, positions
            ),
        }
        for r in r_values
    ]
