"""Shared fixture: a tiny randomly initialized BERT saved to disk so the
tests exercise the real tokenizer/encoder path without any downloads.
"""

from pathlib import Path

import pytest


VOCAB = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + [
    "the", "cat", "dog", "sat", "ran", "on", "a", "mat", "rug", "fast",
    "slow", "big", "small", "red", "blue", "happy", "sad", "bird", "fish",
    "##s", "##ly", "good", "bad", "film", "book",
]


@pytest.fixture(scope="session")
def tiny_encoder_dir(tmp_path_factory) -> str:
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    out = tmp_path_factory.mktemp("tiny-bert")
    (out / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizerFast(vocab_file=str(out / "vocab.txt"),
                                  model_max_length=32)
    tokenizer.save_pretrained(out)

    torch.manual_seed(0)
    config = BertConfig(vocab_size=len(VOCAB), hidden_size=16,
                        num_hidden_layers=4, num_attention_heads=2,
                        intermediate_size=32, max_position_embeddings=32)
    BertModel(config).save_pretrained(out)
    return str(out)


@pytest.fixture()
def sample_tsv(tmp_path) -> Path:
    lines = [
        "the cat sat on a mat\tpos",
        "a dog ran fast\tpos",
        "the sad bird\tneg",
        "big red fish\tneg",
        "a slow dog sat\tpos",
        "the happy cat\tpos",
        "small blue bird\tneg",
        "bad film\tneg",
        "good book\tpos",
        "the dog sat on a rug\tpos",
    ]
    path = tmp_path / "texts.tsv"
    path.write_text("\n".join(lines) + "\n")
    return path
