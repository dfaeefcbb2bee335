import numpy as np
import pytest

from bidilab.finetune import (
    ClsDataset,
    ClsExample,
    FinetuneGrid,
    attach_head,
    classify,
    finetune,
    load_cls_examples,
)
from bidilab.model import ModelConfig, init
from bidilab.synthetic import separable_cls_texts


@pytest.fixture(scope="module")
def ft_model(toy_tokenizer):
    cfg = ModelConfig(
        l=1, d=16, h=2, max_positions=64,
        vocab_size=toy_tokenizer.vocab_size, precision="f64",
    )
    return init(cfg, seed=9)


@pytest.fixture(scope="module")
def cls_dataset():
    rng = np.random.default_rng(0)
    train, dev = separable_cls_texts(rng, n_train=24, n_dev=12)
    return ClsDataset(
        train=[ClsExample(t, None, y) for t, y in train],
        dev=[ClsExample(t, None, y) for t, y in dev],
        num_labels=2,
    )


def test_dataset_validation():
    ok = [ClsExample("a", None, 0), ClsExample("b", None, 1)]
    with pytest.raises(ValueError, match="nonempty"):
        ClsDataset(train=ok, dev=[], num_labels=2)
    with pytest.raises(ValueError, match="dense"):
        ClsDataset(train=ok, dev=[ClsExample("c", None, 3)], num_labels=2)


def test_load_cls_examples(tmp_path):
    path = tmp_path / "cls.jsonl"
    path.write_text(
        '{"text_a": "p", "text_b": "h", "label": 0}\n'
        '{"text_a": "q", "label": 1}\n'
    )
    examples = load_cls_examples(path)
    assert examples == [ClsExample("p", "h", 0), ClsExample("q", None, 1)]
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"label": 1}\n')
    with pytest.raises(ValueError, match=":1:"):
        load_cls_examples(bad)


def test_attach_head(ft_model):
    headed = attach_head(ft_model, num_labels=3, seed=1)
    assert headed.params["head.w"].shape == (16, 3)
    assert headed.params["head.b"].shape == (3,)
    # base tensors are shared, not copied
    assert headed.params["tok_emb"] is ft_model.params["tok_emb"]
    assert "head.w" not in ft_model.params
    with pytest.raises(ValueError, match="at least 2"):
        attach_head(ft_model, num_labels=1, seed=1)
    with pytest.raises(ValueError, match="already present"):
        attach_head(headed, num_labels=3, seed=1)


def test_classify_probabilities(ft_model, toy_tokenizer):
    headed = attach_head(ft_model, num_labels=2, seed=1)
    label, probs = classify(headed, "the cat sat", r_bidir=1.0, tokenizer=toy_tokenizer)
    assert probs.shape == (2,)
    assert probs.sum() == pytest.approx(1.0, rel=1e-12)
    assert label == int(np.argmax(probs))
    # pairs route through the two-segment encoding
    label_b, _ = classify(
        headed, "the cat sat", r_bidir=0.0, tokenizer=toy_tokenizer, text_b="on the mat"
    )
    assert label_b in (0, 1)


def test_classify_requires_head(ft_model, toy_tokenizer):
    with pytest.raises(ValueError, match="no classification head"):
        classify(ft_model, "x", r_bidir=0.0, tokenizer=toy_tokenizer)


def test_grid_cells_cartesian_product():
    grid = FinetuneGrid(learning_rates=(1e-5, 2e-5), batch_sizes=(4,), r_bidirs=(0.0, 1.0))
    assert len(list(grid.cells())) == 4
    with pytest.raises(ValueError, match="nonempty"):
        FinetuneGrid(learning_rates=())


def test_finetune_grid_search(ft_model, cls_dataset, toy_tokenizer):
    grid = FinetuneGrid(
        learning_rates=(1e-3, 3e-3), batch_sizes=(8,), updates=25, r_bidirs=(0.0, 1.0)
    )
    before = ft_model.checksum()
    result = finetune(ft_model, cls_dataset, grid, toy_tokenizer, seed=4)
    # the pre-trained base is never mutated by the search
    assert ft_model.checksum() == before
    assert len(result.table) == 4
    assert {tuple(sorted(row)) for row in result.table} == {
        ("batch_size", "dev_accuracy", "lr", "r_bidir")
    }
    assert result.best_accuracy == max(row["dev_accuracy"] for row in result.table)
    assert result.best_setting in result.table
    assert result.best_model is not None and "head.w" in result.best_model.params
    # the marker word is in the text: a short run should beat chance
    assert result.best_accuracy >= 0.5


def test_finetune_deterministic(ft_model, cls_dataset, toy_tokenizer):
    grid = FinetuneGrid(learning_rates=(1e-3,), batch_sizes=(8,), updates=10, r_bidirs=(1.0,))
    a = finetune(ft_model, cls_dataset, grid, toy_tokenizer, seed=4)
    b = finetune(ft_model, cls_dataset, grid, toy_tokenizer, seed=4)
    assert a.table == b.table
    assert a.best_model.checksum() == b.best_model.checksum()
