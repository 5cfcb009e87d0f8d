"""CoNLL-U ingestion and three-relation dependency graphs.

Nodes are 0-based row indices into the feature matrix; token ``index`` is
1-based as in CoNLL-U, so token ``t`` lives at node ``t.index - 1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParseError, StructureError


class RelationKind(enum.IntEnum):
    FORWARD = 0  # head -> dependent
    INVERSE = 1  # dependent -> head
    SELF_LOOP = 2


RELATIONS = tuple(RelationKind)


@dataclass(frozen=True)
class Token:
    index: int
    surface: str
    head: int
    deprel: str


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    id: str = ""

    def __len__(self):
        return len(self.tokens)

    @property
    def heads(self):
        return [t.head for t in self.tokens]

    @property
    def surfaces(self):
        return [t.surface for t in self.tokens]


def validate_tree(sentence: Sentence) -> None:
    """Raise StructureError unless the head links form a single rooted tree."""
    n = len(sentence.tokens)
    name = sentence.id or "<unnamed>"
    if n == 0:
        raise StructureError(f"sentence {name}: no tokens")
    for pos, tok in enumerate(sentence.tokens, start=1):
        if tok.index != pos:
            raise StructureError(
                f"sentence {name}: token ids must run 1..{n}, got {tok.index} at position {pos}"
            )
        if not 0 <= tok.head <= n:
            raise StructureError(f"sentence {name}: token {tok.index} head {tok.head} out of range")
        if tok.head == tok.index:
            raise StructureError(f"sentence {name}: token {tok.index} is its own head")
    roots = [t.index for t in sentence.tokens if t.head == 0]
    if len(roots) != 1:
        raise StructureError(f"sentence {name}: expected exactly one root, found {len(roots)}")

    heads = [0] + [t.head for t in sentence.tokens]
    reaches_root = [False] * (n + 1)
    reaches_root[0] = True
    for start in range(1, n + 1):
        path = []
        node = start
        while not reaches_root[node]:
            if node in path:
                raise StructureError(f"sentence {name}: cyclic head links through token {node}")
            path.append(node)
            node = heads[node]
        for p in path:
            reaches_root[p] = True


def _parse_int(value, lineno, column):
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"column {column} is not an integer: {value!r}", lineno) from None


def parse_conllu(text: str) -> list[Sentence]:
    """Parse a CoNLL-U document into validated sentences.

    Comment lines, multiword-token ranges (``3-4``) and empty nodes
    (``5.1``) are skipped. A ``# sent_id = ...`` comment names the sentence;
    otherwise sentences are numbered from 1.
    """
    sentences = []
    tokens: list[Token] = []
    sent_id = None

    def flush():
        nonlocal tokens, sent_id
        if tokens:
            sentence = Sentence(tuple(tokens), sent_id or str(len(sentences) + 1))
            validate_tree(sentence)
            sentences.append(sentence)
        tokens = []
        sent_id = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if sep and key.strip() == "sent_id":
                sent_id = value.strip()
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"expected 10 tab-separated columns, found {len(cols)}", lineno)
        if "-" in cols[0] or "." in cols[0]:
            continue
        index = _parse_int(cols[0], lineno, 1)
        head = _parse_int(cols[6], lineno, 7)
        tokens.append(Token(index, cols[1], head, cols[7]))
    flush()
    return sentences


def sentence_edges(sentence: Sentence) -> list[tuple[int, int, RelationKind]]:
    """Edge list over 0-based nodes: forward/inverse per head link, then self-loops."""
    edges = []
    for tok in sentence.tokens:
        if tok.head == 0:
            continue
        head, dep = tok.head - 1, tok.index - 1
        edges.append((head, dep, RelationKind.FORWARD))
        edges.append((dep, head, RelationKind.INVERSE))
    edges.extend((i, i, RelationKind.SELF_LOOP) for i in range(len(sentence.tokens)))
    return edges


@dataclass(frozen=True, eq=False)
class DependencyGraph:
    n: int
    features: np.ndarray
    edges: tuple[tuple[int, int, RelationKind], ...]
    # per-edge arrays, derived
    src: np.ndarray = field(init=False, repr=False)
    dst: np.ndarray = field(init=False, repr=False)
    rel: np.ndarray = field(init=False, repr=False)
    inv_degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "features", np.array(self.features, dtype=np.float64))
        if self.features.ndim != 2 or self.features.shape[0] != self.n:
            raise DimensionError(
                f"feature matrix must have {self.n} rows, got shape {self.features.shape}"
            )
        e = np.array([(s, d, int(r)) for s, d, r in self.edges], dtype=np.int64).reshape(-1, 3)
        for name, col in (("src", e[:, 0]), ("dst", e[:, 1]), ("rel", e[:, 2])):
            col = np.ascontiguousarray(col)
            col.flags.writeable = False
            object.__setattr__(self, name, col)
        self.features.flags.writeable = False
        if len(e) and (e[:, :2].min() < 0 or e[:, :2].max() >= self.n):
            raise DimensionError("edge endpoint outside 0..n-1")
        # per-edge 1/c_{dst,rel}, with c floored at 1
        counts = np.bincount(e[:, 1] * len(RELATIONS) + e[:, 2], minlength=self.n * len(RELATIONS))
        inv = 1.0 / np.maximum(counts, 1)[e[:, 1] * len(RELATIONS) + e[:, 2]]
        inv.flags.writeable = False
        object.__setattr__(self, "inv_degree", inv)

    def count(self, relation: RelationKind) -> int:
        return int(np.sum(self.rel == int(relation)))

    def with_features(self, features) -> "DependencyGraph":
        return DependencyGraph(self.n, features, self.edges)


def build_graph(sentence: Sentence, features) -> DependencyGraph:
    """Attach an n x d0 feature matrix to the sentence's dependency edges."""
    features = np.array(features, dtype=np.float64)
    n = len(sentence.tokens)
    if features.ndim != 2 or features.shape[0] != n:
        raise DimensionError(
            f"sentence {sentence.id or '<unnamed>'} has {n} tokens but features have shape {features.shape}"
        )
    if features.shape[1] == 0:
        raise DimensionError("feature dimension must be positive")
    return DependencyGraph(n, features, tuple(sentence_edges(sentence)))


@dataclass(frozen=True)
class NeighborIndex:
    """In-neighbours per (node, relation) and the matching normalizers."""

    neighbors: dict
    degree: dict

    def __getitem__(self, key):
        return self.neighbors[key]


def neighbor_index(graph: DependencyGraph) -> NeighborIndex:
    neighbors = {(i, r): [] for i in range(graph.n) for r in RELATIONS}
    for src, dst, r in graph.edges:
        neighbors[(dst, RelationKind(r))].append(src)
    neighbors = {k: tuple(v) for k, v in neighbors.items()}
    degree = {k: max(1, len(v)) for k, v in neighbors.items()}
    return NeighborIndex(neighbors, degree)
