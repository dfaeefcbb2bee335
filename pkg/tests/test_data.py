import pytest

from bidilab.data import Document, load_documents, split_documents


def test_plain_blankline_two_docs(tmp_path, toy_tokenizer):
    path = tmp_path / "corpus.txt"
    path.write_text("hello\n\nworld")
    docs = list(load_documents(path, toy_tokenizer))
    assert len(docs) == 2
    for doc in docs:
        doc.validate(toy_tokenizer.eos_id)
        assert doc.tokens[-1] == toy_tokenizer.eos_id


def test_jsonl_three_docs(tmp_path, toy_tokenizer):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"text": "a"}\n{"text": "b"}\n{"text": "c"}\n')
    docs = list(load_documents(path, toy_tokenizer, format="jsonl-text"))
    assert len(docs) == 3


def test_jsonl_missing_text_field(tmp_path, toy_tokenizer):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"text": "ok"}\n{"body": "oops"}\n')
    with pytest.raises(ValueError, match=r":2:.*text"):
        list(load_documents(path, toy_tokenizer, format="jsonl-text"))


def test_jsonl_malformed_line_number(tmp_path, toy_tokenizer):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"text": "ok"}\nnot json\n')
    with pytest.raises(ValueError, match=":2:"):
        list(load_documents(path, toy_tokenizer, format="jsonl-text"))


def test_empty_document_skipped(tmp_path, toy_tokenizer, caplog):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"text": "keep"}\n{"text": ""}\n{"text": "keep2"}\n')
    with caplog.at_level("WARNING"):
        docs = list(load_documents(path, toy_tokenizer, format="jsonl-text"))
    assert len(docs) == 2
    assert any("skipped" in rec.message for rec in caplog.records)


def test_truncation_keeps_eos(tmp_path, toy_tokenizer):
    path = tmp_path / "corpus.txt"
    path.write_text("word " * 500)
    (doc,) = load_documents(path, toy_tokenizer, max_len=32)
    assert len(doc) <= 32
    assert doc.tokens[-1] == toy_tokenizer.eos_id
    assert toy_tokenizer.eos_id not in doc.tokens[:-1]


def test_unknown_format(tmp_path, toy_tokenizer):
    path = tmp_path / "corpus.txt"
    path.write_text("x")
    with pytest.raises(ValueError, match="unknown corpus format"):
        list(load_documents(path, toy_tokenizer, format="csv"))


def test_eos_discipline_many_docs(tmp_path, toy_tokenizer):
    path = tmp_path / "corpus.txt"
    path.write_text("\n\n".join(f"document number {i} with words" for i in range(50)))
    docs = list(load_documents(path, toy_tokenizer))
    assert len(docs) == 50
    for doc in docs:
        assert doc.tokens.count(toy_tokenizer.eos_id) == 1
        assert doc.tokens[-1] == toy_tokenizer.eos_id
        assert len(doc) >= 2


def test_document_invariants():
    with pytest.raises(ValueError, match="empty"):
        Document.from_content([], eos_id=1, source_id="s")
    with pytest.raises(ValueError, match="interior EOS"):
        Document.from_content([5, 1, 6], eos_id=1, source_id="s")


def test_split_documents():
    docs = [Document(tokens=(i, 1), source_id=str(i)) for i in range(2, 22)]
    train, valid = split_documents(docs, valid_fraction=0.1)
    assert len(train) == 18 and len(valid) == 2
    with pytest.raises(ValueError):
        split_documents(docs[:1])
