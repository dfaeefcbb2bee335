"""Corpus ingestion: turning text files into streams of token documents."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .tokenizer import TokenizerModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Document:
    """A token-id sequence ending with exactly one EOS token."""

    tokens: tuple[int, ...]
    source_id: str

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def from_content(content_ids: list[int], eos_id: int, source_id: str) -> "Document":
        if not content_ids:
            raise ValueError(f"{source_id}: empty document")
        if eos_id in content_ids:
            raise ValueError(f"{source_id}: interior EOS token")
        return Document(tokens=tuple(content_ids) + (eos_id,), source_id=source_id)

    def validate(self, eos_id: int) -> None:
        if len(self.tokens) < 2:
            raise ValueError(f"{self.source_id}: document shorter than 2 tokens")
        if self.tokens[-1] != eos_id or eos_id in self.tokens[:-1]:
            raise ValueError(f"{self.source_id}: malformed EOS placement")


def load_documents(
    path: str | Path,
    tokenizer: TokenizerModel,
    format: str = "plain-blankline",
    max_len: int | None = None,
) -> Iterator[Document]:
    """Yield one Document per source document, in file order.

    Formats: "plain-blankline" (documents separated by blank lines) or
    "jsonl-text" (one JSON object per line with a "text" field).
    Documents longer than max_len are truncated, keeping the final EOS.
    Empty documents are skipped with a warning.
    """
    path = Path(path)
    if format == "plain-blankline":
        texts = _iter_blankline(path)
    elif format == "jsonl-text":
        texts = _iter_jsonl(path)
    else:
        raise ValueError(f"unknown corpus format: {format!r}")

    for source_id, text in texts:
        ids = tokenizer.encode(text)
        if not ids:
            log.warning("%s: empty document, skipped", source_id)
            continue
        if max_len is not None and len(ids) + 1 > max_len:
            ids = ids[: max_len - 1]
        yield Document.from_content(ids, tokenizer.eos_id, source_id)


def _iter_blankline(path: Path) -> Iterator[tuple[str, str]]:
    buf: list[str] = []
    idx = 0
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        for line in fh:
            if line.strip():
                buf.append(line)
            elif buf:
                yield f"{path}#{idx}", "".join(buf).rstrip("\n")
                idx += 1
                buf = []
    if buf:
        yield f"{path}#{idx}", "".join(buf).rstrip("\n")


def _iter_jsonl(path: Path) -> Iterator[tuple[str, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            if not isinstance(record, dict) or not isinstance(record.get("text"), str):
                raise ValueError(f'{path}:{lineno}: record is missing a "text" string field')
            yield f"{path}:{lineno}", record["text"]


def split_documents(
    docs: list[Document], valid_fraction: float = 0.05, min_valid: int = 1
) -> tuple[list[Document], list[Document]]:
    """Deterministic tail split into train/validation."""
    n_valid = max(min_valid, int(len(docs) * valid_fraction))
    if n_valid >= len(docs):
        raise ValueError("not enough documents to split")
    return docs[:-n_valid], docs[-n_valid:]
