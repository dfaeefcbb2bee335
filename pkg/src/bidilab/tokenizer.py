"""Byte-level BPE tokenizer: training, encoding, decoding, serialization.

Token id layout:
    0..255   raw byte symbols
    256      <mask>
    257      </s>   (end of document)
    258      <pad>
    259..    learned merges, in priority order

Byte-level means any input round-trips exactly; the special ids are never
produced by encoding raw text.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

N_BYTES = 256
MASK_ID = 256
EOS_ID = 257
PAD_ID = 258
MIN_VOCAB = 259

FORMAT_HEADER = "bidilab-bpe v1"

# Chunks never span a word boundary; a single leading space sticks to the
# following word so common " word" units can merge.
_CHUNK_RE = re.compile(rb" ?\S+| ?\s+")


@dataclass
class TokenizerModel:
    """Immutable after construction; safe to share across threads."""

    merges: list[tuple[bytes, bytes]]
    vocab_size: int

    mask_id: int = MASK_ID
    eos_id: int = EOS_ID
    pad_id: int = PAD_ID

    _ranks: dict[tuple[bytes, bytes], int] = field(init=False, repr=False)
    _token_ids: dict[bytes, int] = field(init=False, repr=False)
    _id_tokens: dict[int, bytes] = field(init=False, repr=False)

    def __post_init__(self):
        if self.vocab_size != MIN_VOCAB + len(self.merges):
            raise ValueError(
                f"vocab_size {self.vocab_size} inconsistent with {len(self.merges)} merges"
            )
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._token_ids = {bytes([b]): b for b in range(N_BYTES)}
        for i, (left, right) in enumerate(self.merges):
            self._token_ids[left + right] = MIN_VOCAB + i
        self._id_tokens = {i: tok for tok, i in self._token_ids.items()}

    def encode(self, text: str) -> list[int]:
        """Encode text to token ids; never emits special ids."""
        return self.encode_bytes(text.encode("utf-8", "surrogateescape"))

    def encode_bytes(self, data: bytes) -> list[int]:
        ids: list[int] = []
        for chunk in _CHUNK_RE.findall(data):
            ids.extend(self._token_ids[piece] for piece in self._bpe(chunk))
        return ids

    def decode(self, ids: list[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8", "surrogateescape")

    def decode_bytes(self, ids: list[int]) -> bytes:
        out = []
        for i in ids:
            if i in (self.mask_id, self.eos_id, self.pad_id):
                continue
            out.append(self._id_tokens[i])
        return b"".join(out)

    def _bpe(self, chunk: bytes) -> list[bytes]:
        parts = [bytes([b]) for b in chunk]
        while len(parts) > 1:
            best = None
            best_rank = None
            for pair in zip(parts, parts[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best, best_rank = pair, rank
            if best is None:
                break
            merged = best[0] + best[1]
            out: list[bytes] = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            parts = out
        return parts

    def save(self, path: str | Path) -> None:
        lines = [FORMAT_HEADER, f"vocab_size {self.vocab_size}"]
        lines.append("specials mask=256 eos=257 pad=258")
        for left, right in self.merges:
            lines.append(f"merge {left.hex()} {right.hex()}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TokenizerModel":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != FORMAT_HEADER:
            raise ValueError(f"{path}: not a {FORMAT_HEADER!r} file")
        vocab_size = int(lines[1].split()[1])
        merges = []
        for line in lines[2:]:
            if line.startswith("merge "):
                _, left, right = line.split()
                merges.append((bytes.fromhex(left), bytes.fromhex(right)))
        return cls(merges=merges, vocab_size=vocab_size)


def train_tokenizer(corpus_path: str | Path, vocab_size: int) -> TokenizerModel:
    """Learn a byte-level BPE model from a raw text corpus.

    Deterministic: ties in pair frequency break toward the
    lexicographically smallest pair.
    """
    if vocab_size < MIN_VOCAB:
        raise ValueError(
            f"vocab too small: need at least {MIN_VOCAB} "
            f"(256 bytes + 3 specials), got {vocab_size}"
        )
    data = Path(corpus_path).read_bytes()

    chunk_freqs = Counter(_CHUNK_RE.findall(data))
    words: list[tuple[list[bytes], int]] = [
        ([bytes([b]) for b in chunk], freq) for chunk, freq in chunk_freqs.items()
    ]

    merges: list[tuple[bytes, bytes]] = []
    for _ in range(vocab_size - MIN_VOCAB):
        pair_freqs: Counter = Counter()
        for parts, freq in words:
            for pair in zip(parts, parts[1:]):
                pair_freqs[pair] += freq
        if not pair_freqs:
            break
        best = min(pair_freqs, key=lambda p: (-pair_freqs[p], p))
        merges.append(best)
        merged = best[0] + best[1]
        for parts, _ in words:
            i = 0
            while i + 1 < len(parts):
                if (parts[i], parts[i + 1]) == best:
                    parts[i : i + 2] = [merged]
                else:
                    i += 1
    return TokenizerModel(merges=merges, vocab_size=MIN_VOCAB + len(merges))
