"""Synthetic datasets with labels planted in the node features.

Feature columns ``0..3`` are markers for fake, hate, defamation and
offensive. A post carries a fine label exactly when some token has the
matching marker set; a post is hostile exactly when it carries any fine
label. Remaining columns and the context embedding are noise.
"""

import numpy as np

from . import FINE_LABELS
from .graph import Sentence, Token
from .model import ExampleRecord, LabelVector

MARKER_VALUE = 6.0


def random_tree(rng, n):
    order = rng.permutation(n) + 1
    heads = {int(order[0]): 0}
    for k in range(1, n):
        heads[int(order[k])] = int(order[rng.integers(0, k)])
    return heads


def make_synthetic(n_examples=200, seed=0, d_node=16, d_ctx=8, min_len=3, max_len=8,
                   hostile_rate=0.6, noise=0.1):
    if d_node < len(FINE_LABELS):
        raise ValueError("d_node must leave room for the marker columns")
    rng = np.random.default_rng(seed)
    records = []
    for k in range(n_examples):
        n = int(rng.integers(min_len, max_len + 1))
        heads = random_tree(rng, n)
        tokens = [f"t{int(v)}" for v in rng.integers(0, 500, size=n)]
        sent = Sentence(tuple(Token(i, tokens[i - 1], heads[i], "dep") for i in range(1, n + 1)), f"syn{k}")
        nodes = rng.normal(scale=noise, size=(n, d_node))
        nodes[:, : len(FINE_LABELS)] = np.abs(nodes[:, : len(FINE_LABELS)]) * 0.1
        fine = np.zeros(len(FINE_LABELS), dtype=bool)
        if rng.random() < hostile_rate:
            count = int(rng.integers(1, 3))
            for c in rng.choice(len(FINE_LABELS), size=count, replace=False):
                fine[c] = True
                nodes[int(rng.integers(n)), c] = MARKER_VALUE
        gold = LabelVector(bool(fine.any()), *(bool(v) for v in fine))
        records.append(ExampleRecord(sent.id, tokens, sent, rng.normal(scale=noise, size=d_ctx), nodes, gold))
    return records
