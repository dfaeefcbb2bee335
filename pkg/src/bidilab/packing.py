"""Sequence packing and the attention predicate.

Multiple transformed documents are packed back to back into fixed-length
sequences. Attention follows the per-document rule: within a document
with local 1-based indices (i, j), slot i may attend slot j iff
j <= max(i, n_bidir) for that document's n_bidir; any slot may attend
every slot of a previous document but nothing in a future document; PAD
slots neither attend nor are attended.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .transform import KIND_NONE, TransformedExample

PACK_MAGIC = b"BDLPACK1"
PACK_VERSION = 1


@dataclass
class AttentionSpec:
    """Document spans (0-based, half-open, contiguous from 0) and each
    document's bidirectional-prefix length."""

    doc_spans: list[tuple[int, int]]
    n_bidirs: list[int]

    def validate(self) -> None:
        prev_end = 0
        for (start, end), nb in zip(self.doc_spans, self.n_bidirs, strict=True):
            if start != prev_end or end <= start:
                raise ValueError(f"spans must be contiguous and nonempty, got {self.doc_spans}")
            if not 0 <= nb <= end - start:
                raise ValueError(f"n_bidir {nb} out of range for span ({start}, {end})")
            prev_end = end

    @property
    def content_length(self) -> int:
        return self.doc_spans[-1][1] if self.doc_spans else 0

    def doc_of(self, slot: int) -> int | None:
        for idx, (start, end) in enumerate(self.doc_spans):
            if start <= slot < end:
                return idx
        return None


def attention_allowed(spec: AttentionSpec, i: int, j: int, length: int) -> bool:
    """Slot-by-slot attention predicate over a packed sequence (0-based)."""
    if not (0 <= i < length and 0 <= j < length):
        raise IndexError(f"slot out of range: i={i}, j={j}, length={length}")
    di, dj = spec.doc_of(i), spec.doc_of(j)
    if di is None or dj is None:  # PAD
        return False
    if di != dj:
        return dj < di
    start = spec.doc_spans[di][0]
    li, lj = i - start + 1, j - start + 1  # 1-based local indices
    return lj <= max(li, spec.n_bidirs[di])


def build_allowed(spec: AttentionSpec, length: int) -> np.ndarray:
    """Vectorized (length, length) boolean attention mask."""
    allowed = np.zeros((length, length), dtype=bool)
    for di, ((start, end), nb) in enumerate(zip(spec.doc_spans, spec.n_bidirs)):
        allowed[start:end, :start] = True  # previous documents
        n = end - start
        li = np.arange(1, n + 1)
        allowed[start:end, start:end] = li[None, :] <= np.maximum(li[:, None], nb)
    return allowed


@dataclass
class PackedSequence:
    """One fixed-length packed row; PAD fills beyond the content."""

    input_ids: np.ndarray  # (L,) int32
    position_ids: np.ndarray  # (L,) int32, 0-based embedding indices
    target_ids: np.ndarray  # (L,) int32, -1 where none
    target_kinds: np.ndarray  # (L,) uint8
    attention: AttentionSpec

    def __len__(self) -> int:
        return len(self.input_ids)


def _make_sequence(
    examples: list[TransformedExample], max_len: int, pad_id: int
) -> PackedSequence:
    input_ids = np.full(max_len, pad_id, dtype=np.int32)
    position_ids = np.arange(max_len, dtype=np.int32)
    target_ids = np.full(max_len, -1, dtype=np.int32)
    target_kinds = np.zeros(max_len, dtype=np.uint8)
    spans: list[tuple[int, int]] = []
    n_bidirs: list[int] = []
    offset = 0
    for ex in examples:
        n = len(ex)
        input_ids[offset : offset + n] = ex.inputs
        # Packed-sequence indices, permuted with their tokens within the span.
        position_ids[offset : offset + n] = offset + ex.positions - 1
        target_ids[offset : offset + n] = ex.target_ids
        target_kinds[offset : offset + n] = ex.target_kinds
        spans.append((offset, offset + n))
        n_bidirs.append(ex.n_bidir)
        offset += n
    spec = AttentionSpec(doc_spans=spans, n_bidirs=n_bidirs)
    spec.validate()
    return PackedSequence(input_ids, position_ids, target_ids, target_kinds, spec)


def pack(
    examples: Iterable[TransformedExample], max_len: int, pad_id: int
) -> Iterator[PackedSequence]:
    """Greedy packing in arrival order; a new sequence starts whenever the
    next example does not fit."""
    pending: list[TransformedExample] = []
    used = 0
    for ex in examples:
        n = len(ex)
        if n > max_len:
            raise ValueError(f"example of length {n} exceeds max_len {max_len}")
        if used + n > max_len and pending:
            yield _make_sequence(pending, max_len, pad_id)
            pending, used = [], 0
        pending.append(ex)
        used += n
    if pending:
        yield _make_sequence(pending, max_len, pad_id)


@dataclass
class Batch:
    """Stacked packed sequences in array form, as consumed by the model."""

    input_ids: np.ndarray  # (B, L)
    position_ids: np.ndarray  # (B, L)
    target_ids: np.ndarray  # (B, L)
    target_kinds: np.ndarray  # (B, L)
    allowed: np.ndarray  # (B, L, L) bool
    specs: list[AttentionSpec]

    @classmethod
    def from_sequences(cls, seqs: list[PackedSequence]) -> "Batch":
        length = len(seqs[0])
        allowed = np.stack([build_allowed(s.attention, length) for s in seqs])
        return cls(
            input_ids=np.stack([s.input_ids for s in seqs]),
            position_ids=np.stack([s.position_ids for s in seqs]),
            target_ids=np.stack([s.target_ids for s in seqs]),
            target_kinds=np.stack([s.target_kinds for s in seqs]),
            allowed=allowed,
            specs=[s.attention for s in seqs],
        )

    @classmethod
    def from_examples(
        cls, examples: list[TransformedExample], pad_id: int, length: int | None = None
    ) -> "Batch":
        """One document per row (no packing), padded to a common length."""
        length = length or max(len(ex) for ex in examples)
        seqs = [_make_sequence([ex], length, pad_id) for ex in examples]
        return cls.from_sequences(seqs)

    @property
    def valid(self) -> np.ndarray:
        return self.target_kinds != KIND_NONE

    @property
    def shape(self) -> tuple[int, int]:
        return self.input_ids.shape


def write_packed(path, seqs: list[PackedSequence]) -> None:
    """Serialize packed sequences to a little-endian binary record file."""
    with open(path, "wb") as fh:
        length = len(seqs[0]) if seqs else 0
        fh.write(PACK_MAGIC)
        fh.write(struct.pack("<IIQ", PACK_VERSION, length, len(seqs)))
        for seq in seqs:
            spec = seq.attention
            fh.write(struct.pack("<I", len(spec.doc_spans)))
            for (start, end), nb in zip(spec.doc_spans, spec.n_bidirs):
                fh.write(struct.pack("<III", start, end, nb))
            fh.write(seq.input_ids.astype("<i4").tobytes())
            fh.write(seq.position_ids.astype("<i4").tobytes())
            fh.write(seq.target_ids.astype("<i4").tobytes())
            fh.write(seq.target_kinds.astype("u1").tobytes())


def read_packed(path) -> list[PackedSequence]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != PACK_MAGIC:
            raise ValueError(f"{path}: not a packed-batch file")
        version, length, count = struct.unpack("<IIQ", fh.read(16))
        if version != PACK_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        seqs = []
        for _ in range(count):
            (n_docs,) = struct.unpack("<I", fh.read(4))
            spans, n_bidirs = [], []
            for _ in range(n_docs):
                start, end, nb = struct.unpack("<III", fh.read(12))
                spans.append((start, end))
                n_bidirs.append(nb)
            input_ids = np.frombuffer(fh.read(4 * length), dtype="<i4").astype(np.int32)
            position_ids = np.frombuffer(fh.read(4 * length), dtype="<i4").astype(np.int32)
            target_ids = np.frombuffer(fh.read(4 * length), dtype="<i4").astype(np.int32)
            target_kinds = np.frombuffer(fh.read(length), dtype="u1").astype(np.uint8)
            seqs.append(
                PackedSequence(
                    input_ids, position_ids, target_ids, target_kinds,
                    AttentionSpec(spans, n_bidirs),
                )
            )
        return seqs
