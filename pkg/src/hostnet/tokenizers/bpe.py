"""Byte pair encoding over whitespace-split words with an end-of-word marker."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

from ..errors import ConfigError, DecodeError, LoadError, TrainingError

EOW = "</w>"
HEADER = f"bpe v1 eow={EOW}"
MAX_CODEPOINT = 0x10FFFF


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    alphabet: tuple[str, ...]
    eow_marker: str = EOW
    vocab: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        vocab = {self.eow_marker: 0}
        for sym in sorted(self.alphabet):
            vocab.setdefault(sym, len(vocab))
        for left, right in self.merges:
            vocab.setdefault(left + right, len(vocab))
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "_ranks", {pair: i for i, pair in enumerate(self.merges)})
        object.__setattr__(self, "_symbols", {i: s for s, i in vocab.items()})
        object.__setattr__(self, "_cache", lru_cache(maxsize=65536)(self._segment_word))

    def __len__(self):
        return len(self.vocab)

    def symbol(self, idx: int) -> str:
        if idx in self._symbols:
            return self._symbols[idx]
        code = idx - len(self.vocab)
        if 0 <= code <= MAX_CODEPOINT:
            return chr(code)
        raise DecodeError(f"unknown symbol id {idx}")

    def segment_word(self, word: str) -> tuple[str, ...]:
        return self._cache(word)

    def _segment_word(self, word):
        symbols = [*word, self.eow_marker]
        ranks = self._ranks
        while len(symbols) > 1:
            best = None
            for pair in zip(symbols, symbols[1:]):
                rank = ranks.get(pair)
                if rank is not None and (best is None or rank < best[0]):
                    best = (rank, pair)
            if best is None:
                break
            left, right = best[1]
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return tuple(symbols)


def _word_counts(lines):
    counts = Counter()
    for line in lines:
        counts.update(line.split())
    return counts


def bpe_train(corpus, vocab_size: int) -> BpeModel:
    """Learn merges until the vocabulary holds ``vocab_size`` symbols.

    Stops early once no adjacent pair occurs at least twice. Ties in pair
    frequency go to the lexicographically smallest pair.
    """
    counts = _word_counts(corpus)
    if not counts:
        raise TrainingError("cannot train BPE on an empty corpus")
    words = sorted(counts)
    freqs = [counts[w] for w in words]
    seqs = [[*w, EOW] for w in words]
    alphabet = sorted({ch for w in words for ch in w})
    vocab = {EOW, *alphabet}
    if vocab_size < len(vocab):
        raise ConfigError(
            f"vocab_size {vocab_size} is smaller than the {len(vocab)} initial symbols"
        )

    pair_counts = Counter()
    where = defaultdict(set)
    for idx, seq in enumerate(seqs):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += freqs[idx]
            where[pair].add(idx)

    merges = []
    while len(vocab) < vocab_size and pair_counts:
        pair, count = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if count < 2:
            break
        merges.append(pair)
        left, right = pair
        vocab.add(left + right)
        for idx in sorted(where[pair]):
            seq, f = seqs[idx], freqs[idx]
            for old in zip(seq, seq[1:]):
                pair_counts[old] -= f
                if pair_counts[old] == 0:
                    del pair_counts[old]
            merged, i = [], 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == left and seq[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            seqs[idx] = merged
            for new in zip(merged, merged[1:]):
                pair_counts[new] += f
                where[new].add(idx)
        del where[pair]
    return BpeModel(tuple(merges), tuple(alphabet))


def bpe_encode(text: str, model: BpeModel) -> list[int]:
    """Symbol ids for ``text``; unseen characters map past the vocabulary
    to ``len(vocab) + ord(char)``."""
    ids = []
    vocab, base = model.vocab, len(model.vocab)
    for word in text.split():
        for sym in model.segment_word(word):
            idx = vocab.get(sym)
            ids.append(idx if idx is not None else base + ord(sym))
    return ids


def bpe_decode(ids, model: BpeModel) -> str:
    text = "".join(model.symbol(int(i)) for i in ids)
    return text.replace(model.eow_marker, " ").rstrip(" ")


def save_bpe(model: BpeModel, path) -> None:
    lines = [HEADER, json.dumps(list(model.alphabet), ensure_ascii=False)]
    lines += [f"{left}\t{right}" for left, right in model.merges]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_bpe(text: str) -> BpeModel:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != HEADER:
        raise LoadError(f"not a BPE model file (expected header {HEADER!r})")
    if len(lines) < 2:
        raise LoadError("BPE model file is missing its alphabet line")
    try:
        alphabet = json.loads(lines[1])
    except json.JSONDecodeError as exc:
        raise LoadError(f"line 2: bad alphabet: {exc}") from None
    merges = []
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split("\t")
        if len(parts) != 2 or not all(parts):
            raise LoadError(f"line {lineno}: expected 'left<TAB>right'")
        merges.append((parts[0], parts[1]))
    return BpeModel(tuple(merges), tuple(alphabet))


def load_bpe(path) -> BpeModel:
    with open(path, encoding="utf-8") as fh:
        return parse_bpe(fh.read())
