"""Synthetic corpora for smoke tests and desk-scale experiments.

The infilling language uses a 32-symbol vocabulary: content ids 0..28,
then mask=29, eos=30, pad=31. Even positions carry independent uniform
tokens; each interior odd position p satisfies
token[p] = (token[p-1] + token[p+1]) mod 29, so predicting an odd token
requires both neighbors while the following even token is determined by
the two tokens before it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Document

MOD = 29


@dataclass(frozen=True)
class SyntheticVocab:
    vocab_size: int = 32
    mask_id: int = 29
    eos_id: int = 30
    pad_id: int = 31


SYNTH_VOCAB = SyntheticVocab()


def infill_language_doc(rng: np.random.Generator, length: int = 24, source_id: str = "synth") -> Document:
    """One document of `length` tokens (content plus final EOS)."""
    n_content = length - 1
    tokens = rng.integers(0, MOD, size=n_content).astype(int)
    for p in range(3, n_content - 1 + 1, 2):  # 1-based interior odd positions
        tokens[p - 1] = (tokens[p - 2] + tokens[p]) % MOD
    return Document(tokens=tuple(int(t) for t in tokens) + (SYNTH_VOCAB.eos_id,), source_id=source_id)


def infill_language_corpus(
    rng: np.random.Generator, n_docs: int, length: int = 24
) -> list[Document]:
    return [infill_language_doc(rng, length, f"synth#{i}") for i in range(n_docs)]


def constrained_positions(doc: Document) -> list[int]:
    """Interior odd positions (1-based) whose token is determined by its
    neighbors; the infilling targets."""
    n_content = len(doc) - 1
    return [p for p in range(3, n_content) if p % 2 == 1]


def repeated_text_corpus(rng: np.random.Generator, n_docs: int, words: int = 8) -> list[str]:
    """Simple word-salad texts for tokenizer and LM smoke tests."""
    lexicon = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"]
    return [
        " ".join(lexicon[i] for i in rng.integers(0, len(lexicon), size=words))
        for _ in range(n_docs)
    ]


def separable_cls_texts(
    rng: np.random.Generator, n_train: int, n_dev: int
) -> tuple[list[tuple[str, int]], list[tuple[str, int]]]:
    """Linearly separable 2-class task: the class token appears verbatim in
    the text."""

    def make(n):
        out = []
        for _ in range(n):
            label = int(rng.integers(0, 2))
            marker = "zig" if label == 0 else "zag"
            filler = " ".join(
                ["foo", "bar", "baz", "qux"][i] for i in rng.integers(0, 4, size=4)
            )
            out.append((f"{filler} {marker} {filler}", label))
        return out

    return make(n_train), make(n_dev)
