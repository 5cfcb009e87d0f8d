"""Unigram language-model tokenizer: EM training with likelihood pruning,
Viterbi segmentation.

Pieces never cross whitespace. The likelihood of a line is the product of
its words' marginal likelihoods, so the trainer works on the multiset of
distinct words weighted by frequency.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from ..errors import ConfigError, LoadError, TrainingError, VocabularyError

HEADER = "unigram v1"
UNKNOWN_LOG_PROB = -1e9
NEG_INF = float("-inf")


def _logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _same_score(a, b):
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class UnigramModel:
    pieces: dict

    def __post_init__(self):
        if not self.pieces:
            raise ConfigError("unigram model needs at least one piece")
        total = math.fsum(math.exp(lp) for lp in self.pieces.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"piece probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "max_len", max(len(p) for p in self.pieces))

    def __len__(self):
        return len(self.pieces)

    def __contains__(self, piece):
        return piece in self.pieces

    def ordered(self) -> list[str]:
        """Pieces by descending probability, then by string; defines ids."""
        return sorted(self.pieces, key=lambda p: (-self.pieces[p], p))


def sequence_probability(pieces, model: UnigramModel) -> float:
    """Log-probability of a piece sequence under the unigram model."""
    total = 0.0
    for piece in pieces:
        try:
            total += model.pieces[piece]
        except KeyError:
            raise VocabularyError(f"piece {piece!r} is not in the vocabulary") from None
    return total


def viterbi(word: str, model: UnigramModel) -> list[str]:
    """Best segmentation of one whitespace-free string.

    Ties go to fewer pieces, then to the longest leftmost piece. Characters
    missing from the vocabulary become single pieces scored at
    ``UNKNOWN_LOG_PROB``.
    """
    n = len(word)
    if n == 0:
        return []
    pieces, max_len = model.pieces, model.max_len
    # best[i] = (score, piece count, end of first piece) for word[i:]
    best = [None] * (n + 1)
    best[n] = (0.0, 0, n)
    for i in range(n - 1, -1, -1):
        choice = None
        for j in range(i + 1, min(n, i + max_len) + 1):
            lp = pieces.get(word[i:j])
            if lp is None:
                if j != i + 1:
                    continue
                lp = UNKNOWN_LOG_PROB
            score = lp + best[j][0]
            count = best[j][1] + 1
            if choice is None:
                better = True
            elif _same_score(score, choice[0]):
                better = count <= choice[1]
            else:
                better = score > choice[0]
            if better:
                choice = (score, count, j)
        best[i] = choice
    out, i = [], 0
    while i < n:
        j = best[i][2]
        out.append(word[i:j])
        i = j
    return out


def unigram_encode(text: str, model: UnigramModel) -> list[str]:
    out = []
    for word in text.split():
        out.extend(viterbi(word, model))
    return out


def _forward(word, logp, max_len, exclude=None):
    n = len(word)
    alpha = [NEG_INF] * (n + 1)
    alpha[0] = 0.0
    for e in range(1, n + 1):
        acc = NEG_INF
        for s in range(max(0, e - max_len), e):
            piece = word[s:e]
            if piece == exclude or alpha[s] == NEG_INF:
                continue
            lp = logp.get(piece)
            if lp is not None:
                acc = _logaddexp(acc, alpha[s] + lp)
        alpha[e] = acc
    return alpha


def _backward(word, logp, max_len):
    n = len(word)
    beta = [NEG_INF] * (n + 1)
    beta[n] = 0.0
    for s in range(n - 1, -1, -1):
        acc = NEG_INF
        for e in range(s + 1, min(n, s + max_len) + 1):
            lp = logp.get(word[s:e])
            if lp is not None and beta[e] != NEG_INF:
                acc = _logaddexp(acc, lp + beta[e])
        beta[s] = acc
    return beta


def word_log_likelihood(word, logp, exclude=None):
    """log of the sum over all segmentations of ``word``."""
    max_len = max(len(p) for p in logp)
    return _forward(word, logp, max_len, exclude)[len(word)]


class UnigramTrainer:
    """EM state for the unigram tokenizer.

    ``logp`` holds the current vocabulary, ``history`` the corpus
    log-likelihood measured at each E-step.
    """

    def __init__(self, corpus, seed_max_len=8, max_seed_pieces=100_000, words=None):
        self.words = Counter(words) if words is not None else Counter(
            w for line in corpus for w in line.split()
        )
        if not self.words:
            raise TrainingError("cannot train a unigram model on an empty corpus")
        self.chars = sorted({ch for w in self.words for ch in w})
        self.logp = self._seed(seed_max_len, max_seed_pieces)
        self.history: list[float] = []
        self.likelihood = None

    def _seed(self, seed_max_len, max_seed_pieces):
        freq = Counter()
        for word, f in self.words.items():
            n = len(word)
            for s in range(n):
                for e in range(s + 2, min(n, s + seed_max_len) + 1):
                    freq[word[s:e]] += f
        char_freq = Counter()
        for word, f in self.words.items():
            for ch in word:
                char_freq[ch] += f
        multi = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:max_seed_pieces]
        counts = dict(char_freq)
        counts.update(multi)
        total = math.fsum(counts.values())
        return {p: math.log(c / total) for p, c in counts.items()}

    @property
    def vocab_size(self):
        return len(self.logp)

    def e_step(self):
        """Expected piece counts (as logs) and corpus log-likelihood under ``logp``.

        Counts are accumulated in log space so rarely used pieces keep a
        finite, if tiny, probability instead of underflowing to zero.
        """
        logp = self.logp
        max_len = max(len(p) for p in logp)
        log_counts = dict.fromkeys(logp, NEG_INF)
        total = 0.0
        for word in sorted(self.words):
            f = self.words[word]
            log_f = math.log(f)
            alpha = _forward(word, logp, max_len)
            beta = _backward(word, logp, max_len)
            log_z = alpha[len(word)]
            total += f * log_z
            for s in range(len(word)):
                if alpha[s] == NEG_INF:
                    continue
                for e in range(s + 1, min(len(word), s + max_len) + 1):
                    piece = word[s:e]
                    lp = logp.get(piece)
                    if lp is None or beta[e] == NEG_INF:
                        continue
                    log_counts[piece] = _logaddexp(
                        log_counts[piece], log_f + alpha[s] + lp + beta[e] - log_z
                    )
        return log_counts, total

    def m_step(self, log_counts):
        kept = {p: c for p, c in log_counts.items() if c != NEG_INF or len(p) == 1}
        finite = sorted(c for c in kept.values() if c != NEG_INF)
        log_total = finite[-1] + math.log(math.fsum(math.exp(c - finite[-1]) for c in finite))
        self.logp = {
            p: c - log_total if c != NEG_INF else UNKNOWN_LOG_PROB for p, c in kept.items()
        }

    def run_em(self, max_iter=20, tol=1e-9):
        """EM at fixed vocabulary until the likelihood gain drops below ``tol``
        (relative); returns the likelihood history of this run."""
        run = []
        for _ in range(max_iter):
            counts, likelihood = self.e_step()
            run.append(likelihood)
            self.history.append(likelihood)
            self.likelihood = likelihood
            if len(run) > 1 and likelihood - run[-2] <= tol * max(1.0, abs(likelihood)):
                break
            self.m_step(counts)
        return run

    def removal_losses(self):
        """Drop in corpus log-likelihood caused by deleting each multi-char
        piece (other probabilities left as they are)."""
        logp = self.logp
        max_len = max(len(p) for p in logp)
        loss = {p: 0.0 for p in logp if len(p) > 1}
        for word in sorted(self.words):
            f = self.words[word]
            n = len(word)
            alpha = _forward(word, logp, max_len)
            beta = _backward(word, logp, max_len)
            log_z = alpha[n]
            spans = {}
            for s in range(n):
                for e in range(s + 2, min(n, s + max_len) + 1):
                    piece = word[s:e]
                    if piece in loss:
                        spans.setdefault(piece, []).append((s, e))
            for piece, where in spans.items():
                if len(where) == 1:
                    s, e = where[0]
                    share = math.exp(alpha[s] + logp[piece] + beta[e] - log_z)
                    if share < 1.0 - 1e-9:
                        loss[piece] += -f * math.log1p(-share)
                        continue
                without = _forward(word, logp, max_len, exclude=piece)[n]
                loss[piece] += f * (log_z - without)
        return loss

    def prune(self, fraction, vocab_size):
        """Remove the lowest-loss share of multi-character pieces."""
        losses = self.removal_losses()
        excess = len(self.logp) - vocab_size
        if excess <= 0 or not losses:
            return []
        k = min(excess, max(1, int(fraction * len(losses))))
        ranked = sorted(losses, key=lambda p: (losses[p], p))
        dropped = ranked[:k]
        for piece in dropped:
            del self.logp[piece]
        return dropped

    def model(self) -> UnigramModel:
        return UnigramModel(dict(self.logp))


def unigram_train(corpus, vocab_size=20_000, prune_fraction=0.2, seed_max_len=8, max_em_iter=20):
    """Train a unigram model whose vocabulary has at most ``vocab_size`` pieces."""
    if not 0.0 < prune_fraction < 1.0:
        raise ConfigError("prune_fraction must lie in (0, 1)")
    if seed_max_len < 1:
        raise ConfigError("seed_max_len must be positive")
    trainer = UnigramTrainer(corpus, seed_max_len)
    if vocab_size < len(trainer.chars):
        raise ConfigError(
            f"vocab_size {vocab_size} is smaller than the {len(trainer.chars)} distinct characters"
        )
    trainer.run_em(max_em_iter)
    while trainer.vocab_size > vocab_size:
        if not trainer.prune(prune_fraction, vocab_size):
            break
        trainer.run_em(max_em_iter)
    return trainer.model()


def save_unigram(model: UnigramModel, path) -> None:
    lines = [HEADER] + [f"{p}\t{model.pieces[p]!r}" for p in model.ordered()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_unigram(text: str) -> UnigramModel:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != HEADER:
        raise LoadError(f"not a unigram model file (expected header {HEADER!r})")
    pieces = {}
    for lineno, line in enumerate(lines[1:], start=2):
        piece, sep, value = line.rpartition("\t")
        if not sep or not piece:
            raise LoadError(f"line {lineno}: expected 'piece<TAB>log_prob'")
        try:
            pieces[piece] = float(value)
        except ValueError:
            raise LoadError(f"line {lineno}: bad log-probability {value!r}") from None
    try:
        return UnigramModel(pieces)
    except ConfigError as exc:
        raise LoadError(str(exc)) from None


def load_unigram(path) -> UnigramModel:
    with open(path, encoding="utf-8") as fh:
        return parse_unigram(fh.read())
