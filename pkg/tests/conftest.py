import numpy as np
import pytest

from bidilab.data import Document
from bidilab.model import ModelConfig, init
from bidilab.tokenizer import train_tokenizer


@pytest.fixture(scope="session")
def toy_tokenizer(tmp_path_factory):
    path = tmp_path_factory.mktemp("tok") / "corpus.txt"
    path.write_text("the cat sat on the mat\nthe dog sat on the log\n" * 20)
    return train_tokenizer(path, 300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def worked_doc():
    # 6-token document used throughout: [5, 9, 2, 7, 4, EOS=1]
    return Document(tokens=(5, 9, 2, 7, 4, 1), source_id="worked")


@pytest.fixture
def tiny_model64():
    cfg = ModelConfig(l=2, d=16, h=2, max_positions=64, vocab_size=32, precision="f64")
    return init(cfg, seed=7)
