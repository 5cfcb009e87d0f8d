"""Dual-branch multi-label classifier.

The context embedding (an external sentence vector) is concatenated with
the mean-pooled output of the gated R-GCN stack, in that order, and fed to
a single affine layer with five sigmoid heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import LABELS
from .errors import DimensionError, HierarchyError
from .graph import Sentence, build_graph
from .rgcn import RgcnLayerParams, gated_rgcn_backward, gated_rgcn_forward, mean_pool, sigmoid

PROB_EPS = 1e-7
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class LabelVector:
    hostile: bool = False
    fake: bool = False
    hate: bool = False
    defamation: bool = False
    offensive: bool = False

    def __post_init__(self):
        fine = [name for name in LABELS[1:] if getattr(self, name)]
        if fine and not self.hostile:
            raise HierarchyError(f"non-hostile label vector has fine labels set: {', '.join(fine)}")

    def to_array(self) -> np.ndarray:
        return np.array([float(getattr(self, name)) for name in LABELS])

    def as_dict(self) -> dict:
        return {name: bool(getattr(self, name)) for name in LABELS}

    @classmethod
    def from_array(cls, values):
        return cls(*(bool(v) for v in values))

    @property
    def name(self) -> str:
        """Readable class name for plots: fine labels joined by '+'."""
        if not self.hostile:
            return "non-hostile"
        fine = [name for name in LABELS[1:] if getattr(self, name)]
        return "+".join(fine) if fine else "hostile"


@dataclass(eq=False)
class ExampleRecord:
    id: str
    tokens: list
    parse: Sentence
    context_embedding: np.ndarray
    node_embeddings: np.ndarray
    gold: LabelVector | None = None

    def __post_init__(self):
        self.context_embedding = np.asarray(self.context_embedding, dtype=np.float64)
        self.node_embeddings = np.asarray(self.node_embeddings, dtype=np.float64)
        n = len(self.parse.tokens)
        if len(self.tokens) != n or self.node_embeddings.ndim != 2 or self.node_embeddings.shape[0] != n:
            raise DimensionError(
                f"record {self.id}: {len(self.tokens)} tokens, {n} parsed tokens and "
                f"node embeddings of shape {self.node_embeddings.shape} disagree"
            )
        if self.context_embedding.ndim != 1:
            raise DimensionError(f"record {self.id}: context embedding must be a vector")

    @cached_property
    def graph(self):
        return build_graph(self.parse, self.node_embeddings)


@dataclass
class ClassifierParams:
    rgcn_stack: list
    fc_weight: np.ndarray
    fc_bias: np.ndarray
    d_ctx: int = field(init=False)

    def __post_init__(self):
        self.fc_weight = np.asarray(self.fc_weight, dtype=np.float64)
        self.fc_bias = np.asarray(self.fc_bias, dtype=np.float64)
        if not self.rgcn_stack:
            raise DimensionError("classifier needs at least one R-GCN layer")
        for lower, upper in zip(self.rgcn_stack, self.rgcn_stack[1:]):
            if lower.d_out != upper.d_in:
                raise DimensionError(f"layer widths do not chain: {lower.d_out} -> {upper.d_in}")
        d_g = self.rgcn_stack[-1].d_out
        if self.fc_weight.ndim != 2 or self.fc_weight.shape[1] != len(LABELS) or self.fc_weight.shape[0] <= d_g:
            raise DimensionError(f"fc_weight must be (d_ctx + {d_g}, {len(LABELS)}), got {self.fc_weight.shape}")
        if self.fc_bias.shape != (len(LABELS),):
            raise DimensionError(f"fc_bias must have shape ({len(LABELS)},)")
        self.d_ctx = self.fc_weight.shape[0] - d_g

    @property
    def d_node(self):
        return self.rgcn_stack[0].d_in

    @property
    def widths(self):
        return [layer.d_out for layer in self.rgcn_stack]

    def tensors(self) -> dict:
        """Flat name -> array view, in a fixed order."""
        out = {}
        for i, layer in enumerate(self.rgcn_stack):
            for name, value in layer.tensors().items():
                out[f"rgcn.{i}.{name}"] = value
        out["fc.weight"] = self.fc_weight
        out["fc.bias"] = self.fc_bias
        return out

    @classmethod
    def from_tensors(cls, tensors: dict) -> "ClassifierParams":
        layers = []
        while f"rgcn.{len(layers)}.weight" in tensors:
            i = len(layers)
            layers.append(RgcnLayerParams(**{
                name: tensors[f"rgcn.{i}.{name}"]
                for name in ("weight", "bias", "gate_weight", "gate_bias")
            }))
        return cls(layers, tensors["fc.weight"], tensors["fc.bias"])

    def copy(self) -> "ClassifierParams":
        return ClassifierParams.from_tensors({k: v.copy() for k, v in self.tensors().items()})


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    labels: LabelVector


def decide(probabilities, threshold=DEFAULT_THRESHOLD) -> LabelVector:
    """Threshold the heads; fine labels only count when hostile is predicted."""
    hostile = bool(probabilities[0] >= threshold)
    return LabelVector(hostile, *(hostile and bool(p >= threshold) for p in probabilities[1:]))


def _check_example(params, example):
    if example.node_embeddings.shape[1] != params.d_node:
        raise DimensionError(
            f"record {example.id}: node embeddings have width {example.node_embeddings.shape[1]}, "
            f"model expects {params.d_node}"
        )
    if example.context_embedding.shape[0] != params.d_ctx:
        raise DimensionError(
            f"record {example.id}: context embedding has width {example.context_embedding.shape[0]}, "
            f"model expects {params.d_ctx}"
        )


def _forward(params: ClassifierParams, example: ExampleRecord):
    _check_example(params, example)
    graph = example.graph
    states = [graph.features]
    for layer in params.rgcn_stack:
        states.append(gated_rgcn_forward(layer, graph, states[-1]))
    pooled = mean_pool(states[-1])
    x = np.concatenate([example.context_embedding, pooled])
    z = x @ params.fc_weight + params.fc_bias
    return states, x, z


def embed(params: ClassifierParams, example: ExampleRecord) -> dict:
    """Sentence-level vectors: context branch, R-GCN branch, and their concatenation."""
    states, x, _ = _forward(params, example)
    return {"context": example.context_embedding, "rgcn": mean_pool(states[-1]), "concat": x}


def classify(params: ClassifierParams, example: ExampleRecord, threshold=DEFAULT_THRESHOLD) -> Prediction:
    _, _, z = _forward(params, example)
    probabilities = sigmoid(z)
    return Prediction(probabilities, decide(probabilities, threshold))


def bce_loss(probabilities, gold: LabelVector) -> float:
    """Mean binary cross-entropy over the five heads, probabilities clamped."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = gold.to_array()
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def classifier_backward(params: ClassifierParams, example: ExampleRecord, gold: LabelVector):
    """Loss and its gradient for every tensor of ``params`` (keyed as in
    :meth:`ClassifierParams.tensors`)."""
    states, x, z = _forward(params, example)
    p = sigmoid(z)
    loss = bce_loss(p, gold)
    # derivative of the clamped loss is zero where the clamp is active
    live = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    dz = np.where(live, (p - gold.to_array()) / len(LABELS), 0.0)

    grads = {"fc.weight": np.outer(x, dz), "fc.bias": dz}
    dx = params.fc_weight @ dz
    n = example.graph.n
    upstream = np.tile(dx[params.d_ctx:] / n, (n, 1))
    for i in range(len(params.rgcn_stack) - 1, -1, -1):
        layer_grads = gated_rgcn_backward(params.rgcn_stack[i], example.graph, states[i], upstream)
        for name, value in layer_grads.tensors().items():
            grads[f"rgcn.{i}.{name}"] = value
        upstream = layer_grads.inputs
    ordered = {name: grads[name] for name in params.tensors()}
    return loss, ordered
