"""Multi-label metrics, confusion counts, and PCA projections."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import FINE_LABELS, LABELS
from .errors import ConfigError, DimensionError, UndefinedMetricError


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


def _as_matrix(vectors):
    return np.array([v.to_array() for v in vectors], dtype=bool).reshape(-1, len(LABELS))


def _check(preds, golds):
    if len(preds) != len(golds):
        raise DimensionError(f"{len(preds)} predictions but {len(golds)} gold labels")
    if not preds:
        raise DimensionError("need at least one prediction")
    return _as_matrix(preds), _as_matrix(golds)


def _score(pred_col, gold_col) -> ClassScore:
    tp = int(np.sum(pred_col & gold_col))
    fp = int(np.sum(pred_col & ~gold_col))
    fn = int(np.sum(~pred_col & gold_col))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassScore(precision, recall, f1, tp + fn)


def f1_per_class(preds, golds) -> dict:
    p, g = _check(preds, golds)
    return {name: _score(p[:, k], g[:, k]) for k, name in enumerate(LABELS)}


def weighted_fine_f1(preds, golds) -> float:
    """Support-weighted mean F1 over the four fine-grained classes."""
    scores = f1_per_class(preds, golds)
    support = sum(scores[c].support for c in FINE_LABELS)
    if support == 0:
        raise UndefinedMetricError("no gold fine-grained labels; weighted F1 is undefined")
    return sum(scores[c].support * scores[c].f1 for c in FINE_LABELS) / support


def coarse_f1(preds, golds) -> float:
    """Support-weighted F1 over the hostile and non-hostile classes."""
    p, g = _check(preds, golds)
    pos = _score(p[:, 0], g[:, 0])
    neg = _score(~p[:, 0], ~g[:, 0])
    return (pos.support * pos.f1 + neg.support * neg.f1) / len(g)


@dataclass(frozen=True)
class Confusion:
    """Per-head 2x2 counts laid out as ``[[tn, fp], [fn, tp]]``."""

    counts: dict

    def table(self) -> str:
        rows = [f"{'class':<12}{'TP':>7}{'FP':>7}{'FN':>7}{'TN':>7}"]
        for name, ((tn, fp), (fn, tp)) in self.counts.items():
            rows.append(f"{name:<12}{tp:>7}{fp:>7}{fn:>7}{tn:>7}")
        return "\n".join(rows)


def confusion_matrix(preds, golds) -> Confusion:
    p, g = _check(preds, golds)
    counts = {}
    for k, name in enumerate(LABELS):
        pc, gc = p[:, k], g[:, k]
        counts[name] = (
            (int(np.sum(~pc & ~gc)), int(np.sum(pc & ~gc))),
            (int(np.sum(~pc & gc)), int(np.sum(pc & gc))),
        )
    return Confusion(counts)


@dataclass
class EvalReport:
    per_class: dict
    coarse_f1: float
    weighted_fine_f1: float | None
    confusion: dict
    n: int = 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "coarse_f1": self.coarse_f1,
            "weighted_fine_f1": self.weighted_fine_f1,
            "per_class": {
                name: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
                for name, s in self.per_class.items()
            },
            "confusion": {
                name: {"tp": tp, "fp": fp, "fn": fn, "tn": tn}
                for name, ((tn, fp), (fn, tp)) in self.confusion.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            per_class={name: ClassScore(**s) for name, s in data["per_class"].items()},
            coarse_f1=data["coarse_f1"],
            weighted_fine_f1=data["weighted_fine_f1"],
            confusion={
                name: ((c["tn"], c["fp"]), (c["fn"], c["tp"])) for name, c in data["confusion"].items()
            },
            n=data["n"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{'class':<12}{'precision':>11}{'recall':>9}{'f1':>9}{'support':>9}"]
        for name, s in self.per_class.items():
            lines.append(f"{name:<12}{s.precision:>11.4f}{s.recall:>9.4f}{s.f1:>9.4f}{s.support:>9d}")
        lines.append("")
        lines.append(f"coarse F1          {self.coarse_f1:.4f}")
        wf = "undefined" if self.weighted_fine_f1 is None else f"{self.weighted_fine_f1:.4f}"
        lines.append(f"weighted fine F1   {wf}")
        lines.append("")
        lines.append(Confusion(self.confusion).table())
        return "\n".join(lines) + "\n"


def evaluate(preds, golds) -> EvalReport:
    try:
        weighted = weighted_fine_f1(preds, golds)
    except UndefinedMetricError:
        weighted = None
    return EvalReport(
        per_class=f1_per_class(preds, golds),
        coarse_f1=coarse_f1(preds, golds),
        weighted_fine_f1=weighted,
        confusion=confusion_matrix(preds, golds).counts,
        n=len(preds),
    )


@dataclass(frozen=True)
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray
    explained_ratio: np.ndarray
    coordinates: np.ndarray = field(repr=False)

    def reconstruct(self) -> np.ndarray:
        return self.coordinates @ self.components + self.mean


def pca_project(embeddings, k: int) -> PcaProjection:
    """Project rows onto the top-k eigenvectors of their covariance.

    Each component is flipped so its largest-magnitude entry is positive.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("PCA needs a matrix with at least two rows")
    n, d = x.shape
    if not 1 <= k <= min(n - 1, d):
        raise ConfigError(f"k must lie in [1, {min(n - 1, d)}], got {k}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order].T
    pivots = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(d), pivots])
    vectors *= np.where(signs == 0, 1.0, signs)[:, None]
    total = values.sum()
    ratios = values / total if total > 0 else np.zeros_like(values)
    components = vectors[:k]
    return PcaProjection(mean, components, ratios[:k], centered @ components.T)
