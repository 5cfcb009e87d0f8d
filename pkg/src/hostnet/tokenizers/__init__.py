"""Text cleaning and subword tokenizers (BPE, unigram LM).

``encode_ids`` / ``decode_ids`` give both schemes the same integer-id
surface used by the CLI. For unigram models trained through
:func:`train_model`, every word carries a leading ``WORD_START`` marker so
that decoding can restore spaces.
"""

from ..errors import DecodeError, LoadError
from .bpe import EOW, BpeModel, bpe_decode, bpe_encode, bpe_train, load_bpe, parse_bpe, save_bpe
from .clean import clean_text
from .unigram import (
    UnigramModel,
    UnigramTrainer,
    load_unigram,
    parse_unigram,
    save_unigram,
    sequence_probability,
    unigram_encode,
    unigram_train,
    viterbi,
)

WORD_START = "▁"
MAX_CODEPOINT = 0x10FFFF

__all__ = [
    "EOW", "WORD_START", "BpeModel", "UnigramModel", "UnigramTrainer",
    "bpe_decode", "bpe_encode", "bpe_train", "clean_text", "decode_ids",
    "encode_ids", "load_model", "save_model", "sequence_probability",
    "train_model", "unigram_encode", "unigram_train", "viterbi",
]


def _mark_words(line):
    return " ".join(WORD_START + w for w in line.split())


def train_model(lines, scheme, vocab_size, prune_fraction=0.2, seed_max_len=8):
    if scheme == "bpe":
        return bpe_train(lines, vocab_size)
    if scheme == "unigram":
        return unigram_train(
            [_mark_words(line) for line in lines], vocab_size, prune_fraction, seed_max_len
        )
    raise ValueError(f"unknown tokenizer scheme {scheme!r}")


def encode_ids(line, model):
    if isinstance(model, BpeModel):
        return bpe_encode(line, model)
    order = {p: i for i, p in enumerate(model.ordered())}
    base = len(order)
    return [order[p] if p in order else base + ord(p) for p in unigram_encode(_mark_words(line), model)]


def decode_ids(ids, model):
    if isinstance(model, BpeModel):
        return bpe_decode(ids, model)
    pieces = model.ordered()
    out = []
    for idx in ids:
        if 0 <= idx < len(pieces):
            out.append(pieces[idx])
        elif 0 <= idx - len(pieces) <= MAX_CODEPOINT:
            out.append(chr(idx - len(pieces)))
        else:
            raise DecodeError(f"unknown piece id {idx}")
    return "".join(out).replace(WORD_START, " ").strip(" ")


def save_model(model, path):
    if isinstance(model, BpeModel):
        save_bpe(model, path)
    else:
        save_unigram(model, path)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    header = text.split("\n", 1)[0]
    if header.startswith("bpe "):
        return parse_bpe(text)
    if header.startswith("unigram "):
        return parse_unigram(text)
    raise LoadError(f"{path}: unrecognized tokenizer model header {header!r}")
