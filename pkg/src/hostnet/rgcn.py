"""Gated relational graph convolution: forward passes and exact gradients.

Shapes, with R = 3 relations:

    weight       (R, d_in, d_out)
    bias         (R, d_out)
    gate_weight  (R, d_in)
    gate_bias    (R,)

The ungated layer adds each relation's bias once per node. The gated layer
puts the bias inside every gated edge message, so a node with no in-edges
under some relation receives nothing from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyGraphError, NumericError
from .graph import RELATIONS, DependencyGraph, RelationKind

N_REL = len(RELATIONS)
# sigmoid(+-36) is the last value strictly inside (0, 1) in float64
GATE_LOGIT_LIMIT = 36.0


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class RgcnLayerParams:
    weight: np.ndarray
    bias: np.ndarray
    gate_weight: np.ndarray
    gate_bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.gate_weight = np.asarray(self.gate_weight, dtype=np.float64)
        self.gate_bias = np.asarray(self.gate_bias, dtype=np.float64)
        if self.weight.ndim != 3 or self.weight.shape[0] != N_REL:
            raise DimensionError(f"weight must be ({N_REL}, d_in, d_out), got {self.weight.shape}")
        _, d_in, d_out = self.weight.shape
        expected = {
            "bias": (N_REL, d_out),
            "gate_weight": (N_REL, d_in),
            "gate_bias": (N_REL,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} must be {shape}, got {getattr(self, name).shape}")
        for name in ("weight", *expected):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"non-finite entries in {name}")

    @property
    def d_in(self):
        return self.weight.shape[1]

    @property
    def d_out(self):
        return self.weight.shape[2]

    @classmethod
    def zeros(cls, d_in, d_out):
        return cls(
            np.zeros((N_REL, d_in, d_out)),
            np.zeros((N_REL, d_out)),
            np.zeros((N_REL, d_in)),
            np.zeros(N_REL),
        )

    def tensors(self):
        return {
            "weight": self.weight,
            "bias": self.bias,
            "gate_weight": self.gate_weight,
            "gate_bias": self.gate_bias,
        }


@dataclass
class RgcnGradients:
    weight: np.ndarray
    bias: np.ndarray
    gate_weight: np.ndarray
    gate_bias: np.ndarray
    inputs: np.ndarray

    def tensors(self):
        return {
            "weight": self.weight,
            "bias": self.bias,
            "gate_weight": self.gate_weight,
            "gate_bias": self.gate_bias,
        }


def _check_inputs(params: RgcnLayerParams, graph: DependencyGraph, h):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != graph.n:
        raise DimensionError(f"node states must be ({graph.n}, d), got {h.shape}")
    if h.shape[1] != params.d_in:
        raise DimensionError(f"node state width {h.shape[1]} != layer input width {params.d_in}")
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite node states")
    return h


def _messages(params, graph, h):
    """Per-edge normalized linear messages W_r h_j / c_{i,r}, shape (E, d_out)."""
    projected = np.matmul(h, params.weight)  # (R, n, d_out)
    return projected[graph.rel, graph.src] * graph.inv_degree[:, None]


def rgcn_forward(params: RgcnLayerParams, graph: DependencyGraph, h, activation="relu"):
    """Ungated relational convolution with activation ``relu`` or ``identity``."""
    if activation not in ("relu", "identity"):
        raise ValueError(f"unknown activation {activation!r}")
    h = _check_inputs(params, graph, h)
    out = np.zeros((graph.n, params.d_out))
    np.add.at(out, graph.dst, _messages(params, graph, h))
    out += params.bias.sum(axis=0)
    return np.maximum(out, 0.0) if activation == "relu" else out


def gate_value(params: RgcnLayerParams, r: RelationKind, h_u) -> float:
    h_u = np.asarray(h_u, dtype=np.float64)
    if h_u.shape != (params.d_in,):
        raise DimensionError(f"expected vector of length {params.d_in}, got shape {h_u.shape}")
    r = int(r)
    logit = h_u @ params.gate_weight[r] + params.gate_bias[r]
    return float(sigmoid(np.clip(logit, -GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT)))


def _gate_logits(params, graph, h):
    logits = np.einsum("ed,ed->e", h[graph.src], params.gate_weight[graph.rel])
    return logits + params.gate_bias[graph.rel]


def edge_gates(params: RgcnLayerParams, graph: DependencyGraph, h) -> np.ndarray:
    """Gate for every edge, computed from the sending node's state."""
    logits = _gate_logits(params, graph, h)
    return sigmoid(np.clip(logits, -GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT))


def _gated_preactivation(params, graph, h):
    gates = edge_gates(params, graph, h)
    terms = _messages(params, graph, h) + params.bias[graph.rel]
    pre = np.zeros((graph.n, params.d_out))
    np.add.at(pre, graph.dst, gates[:, None] * terms)
    return pre, gates, terms


def gated_rgcn_forward(params: RgcnLayerParams, graph: DependencyGraph, h):
    h = _check_inputs(params, graph, h)
    pre, _, _ = _gated_preactivation(params, graph, h)
    return np.maximum(pre, 0.0)


def gated_preactivation(params: RgcnLayerParams, graph: DependencyGraph, h):
    """Pre-ReLU sums of the gated layer; used to avoid kinks in gradient checks."""
    h = _check_inputs(params, graph, h)
    return _gated_preactivation(params, graph, h)[0]


def mean_pool(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {h.shape}")
    if h.shape[0] == 0:
        raise EmptyGraphError("cannot pool an empty graph")
    return h.mean(axis=0)


def gated_rgcn_backward(params: RgcnLayerParams, graph: DependencyGraph, h, upstream_grad):
    """Gradients of ``sum(upstream_grad * gated_rgcn_forward(...))``.

    Covers every parameter and the input states, including the path through
    each edge gate's dependence on its sender.
    """
    h = _check_inputs(params, graph, h)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != (graph.n, params.d_out):
        raise DimensionError(
            f"upstream gradient must be {(graph.n, params.d_out)}, got {upstream_grad.shape}"
        )
    pre, gates, terms = _gated_preactivation(params, graph, h)
    d_pre = upstream_grad * (pre > 0)
    d_edge = d_pre[graph.dst]  # (E, d_out)

    # through the message term
    d_terms = gates[:, None] * d_edge
    d_bias = np.zeros_like(params.bias)
    np.add.at(d_bias, graph.rel, d_terms)
    d_msg = d_terms * graph.inv_degree[:, None]
    d_weight = np.zeros_like(params.weight)
    d_h = np.zeros_like(h)
    for r in range(N_REL):
        sel = graph.rel == r
        if not sel.any():
            continue
        senders = graph.src[sel]
        d_weight[r] = h[senders].T @ d_msg[sel]
        np.add.at(d_h, senders, d_msg[sel] @ params.weight[r].T)

    # through the gate
    d_gate = np.einsum("eo,eo->e", d_edge, terms)
    d_logit = d_gate * gates * (1.0 - gates)
    d_logit[np.abs(_gate_logits(params, graph, h)) > GATE_LOGIT_LIMIT] = 0.0
    d_gate_bias = np.bincount(graph.rel, weights=d_logit, minlength=N_REL)
    d_gate_weight = np.zeros_like(params.gate_weight)
    np.add.at(d_gate_weight, graph.rel, d_logit[:, None] * h[graph.src])
    np.add.at(d_h, graph.src, d_logit[:, None] * params.gate_weight[graph.rel])

    return RgcnGradients(d_weight, d_bias, d_gate_weight, d_gate_bias, d_h)
