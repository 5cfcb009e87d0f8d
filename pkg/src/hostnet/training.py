"""Dataset and embedding files, Adam, the training loop, and checkpoints."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import LABELS
from .errors import (
    ConfigError,
    DimensionError,
    HierarchyError,
    HostnetError,
    LoadError,
    NumericError,
    SchemaError,
    TrainingError,
)
from .evaluation import evaluate
from .graph import parse_conllu
from .model import ClassifierParams, ExampleRecord, LabelVector, classifier_backward, classify
from .rgcn import N_REL, RgcnLayerParams

log = logging.getLogger(__name__)

EMB_MAGIC = b"EMB1"
CKPT_MAGIC = b"HCK1"
CKPT_VERSION = 1
GATE_BIAS_INIT = 1.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    threshold: float = 0.5
    hidden: tuple = (256,)
    # tokenizer settings, carried for run records only
    vocab_size: int = 20_000
    prune_fraction: float = 0.2
    seed_max_len: int = 8

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if not (self.learning_rate > 0 and self.adam_eps > 0):
            raise ConfigError("learning_rate and adam_eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden must list at least one positive layer width")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- embeddings


def write_embeddings(matrix, path) -> None:
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise DimensionError("embedding matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC + struct.pack("<II", *matrix.shape))
        fh.write(matrix.tobytes())


def read_embeddings(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != EMB_MAGIC or len(data) < 12:
        raise LoadError(f"{path}: not an embedding file")
    rows, dim = struct.unpack_from("<II", data, 4)
    expected = 12 + 4 * rows * dim
    if len(data) != expected:
        raise LoadError(f"{path}: expected {expected} bytes for {rows}x{dim} floats, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, dim).astype(np.float64)


# ------------------------------------------------------------------ datasets


def _field_error(rid, name, message):
    return SchemaError(f"record {rid!r}: field {name!r}: {message}")


def _vector(value, rid, name):
    if not isinstance(value, list) or not value or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise _field_error(rid, name, "expected a non-empty list of numbers")
    return np.array(value, dtype=np.float64)


def _rows(table, refs, rid, name):
    if table is None:
        raise _field_error(rid, name, "refers to an embedding sidecar that was not found")
    for r in refs:
        if isinstance(r, bool) or not isinstance(r, int) or not 0 <= r < len(table):
            raise _field_error(rid, name, f"row {r!r} outside sidecar with {len(table)} rows")
    return table[refs]


def parse_record(obj, lineno, context_table=None, node_table=None) -> ExampleRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"line {lineno}: expected a JSON object")
    rid = obj.get("id")
    if not isinstance(rid, str):
        raise SchemaError(f"line {lineno}: field 'id' must be a string")
    tokens = obj.get("tokens")
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise _field_error(rid, "tokens", "expected a non-empty list of strings")
    if not isinstance(obj.get("conllu"), str):
        raise _field_error(rid, "conllu", "expected an inline CoNLL-U string")
    try:
        sentences = parse_conllu(obj["conllu"])
    except HostnetError as exc:
        raise _field_error(rid, "conllu", str(exc)) from None
    if len(sentences) != 1:
        raise _field_error(rid, "conllu", f"expected exactly one sentence, found {len(sentences)}")
    parse = sentences[0]
    if parse.surfaces != tokens:
        raise _field_error(rid, "tokens", "do not match the CoNLL-U word forms")

    if ("context_embedding" in obj) == ("context_ref" in obj):
        raise _field_error(rid, "context_embedding", "give exactly one of context_embedding / context_ref")
    if "context_embedding" in obj:
        context = _vector(obj["context_embedding"], rid, "context_embedding")
    else:
        ref = obj["context_ref"]
        context = _rows(context_table, [ref], rid, "context_ref")[0]

    if ("node_embeddings" in obj) == ("node_ref" in obj):
        raise _field_error(rid, "node_embeddings", "give exactly one of node_embeddings / node_ref")
    if "node_embeddings" in obj:
        rows = obj["node_embeddings"]
        if not isinstance(rows, list):
            raise _field_error(rid, "node_embeddings", "expected a list of rows")
        nodes = [_vector(r, rid, "node_embeddings") for r in rows]
        if len({len(r) for r in nodes}) > 1:
            raise _field_error(rid, "node_embeddings", "rows have different lengths")
        nodes = np.array(nodes).reshape(len(nodes), -1)
    else:
        refs = obj["node_ref"]
        if not isinstance(refs, list):
            raise _field_error(rid, "node_ref", "expected a list of row indices")
        nodes = _rows(node_table, refs, rid, "node_ref")
    if len(nodes) != len(tokens):
        raise DimensionError(f"record {rid!r}: {len(nodes)} node embeddings for {len(tokens)} tokens")

    gold = None
    if "labels" in obj:
        labels = obj["labels"]
        if not isinstance(labels, dict):
            raise _field_error(rid, "labels", "expected an object")
        for name in LABELS:
            if not isinstance(labels.get(name), bool):
                raise _field_error(rid, f"labels.{name}", "expected a boolean")
        extra = sorted(set(labels) - set(LABELS))
        if extra:
            raise _field_error(rid, "labels", f"unknown labels {extra}")
        try:
            gold = LabelVector(*(labels[name] for name in LABELS))
        except HierarchyError as exc:
            raise HierarchyError(f"record {rid!r}: field 'labels': {exc}") from None
    return ExampleRecord(rid, tokens, parse, context, nodes, gold)


def load_dataset(path, sidecar=None, node_sidecar=None) -> list[ExampleRecord]:
    """Read and validate a JSONL dataset.

    ``context_ref`` indexes ``sidecar`` (default: the dataset path with an
    ``.emb`` suffix); ``node_ref`` indexes ``node_sidecar``, falling back to
    the same file.
    """
    path = Path(path)
    sidecar = Path(sidecar) if sidecar else path.with_suffix(".emb")
    context_table = read_embeddings(sidecar) if sidecar.exists() else None
    node_table = read_embeddings(node_sidecar) if node_sidecar else context_table

    records, seen = [], set()
    d_ctx = d_node = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON: {exc.msg}") from None
            rec = parse_record(obj, lineno, context_table, node_table)
            if rec.id in seen:
                raise SchemaError(f"record {rec.id!r}: duplicate id")
            seen.add(rec.id)
            if d_ctx is None:
                d_ctx, d_node = rec.context_embedding.shape[0], rec.node_embeddings.shape[1]
            elif (rec.context_embedding.shape[0], rec.node_embeddings.shape[1]) != (d_ctx, d_node):
                raise DimensionError(
                    f"record {rec.id!r}: embedding widths ({rec.context_embedding.shape[0]}, "
                    f"{rec.node_embeddings.shape[1]}) differ from earlier records ({d_ctx}, {d_node})"
                )
            records.append(rec)
    return records


def record_to_json(rec: ExampleRecord) -> dict:
    lines = [
        "\t".join([str(t.index), t.surface, "_", "_", "_", "_", str(t.head), t.deprel, "_", "_"])
        for t in rec.parse.tokens
    ]
    obj = {
        "id": rec.id,
        "tokens": list(rec.tokens),
        "conllu": "\n".join(lines) + "\n",
        "context_embedding": rec.context_embedding.tolist(),
        "node_embeddings": rec.node_embeddings.tolist(),
    }
    if rec.gold is not None:
        obj["labels"] = rec.gold.as_dict()
    return obj


def save_dataset(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec), ensure_ascii=False) + "\n")


# ----------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns new params and the advanced state.

    ``params`` is a :class:`ClassifierParams` or a plain name -> array dict;
    the result has the same type.
    """
    tensors = params.tensors() if isinstance(params, ClassifierParams) else params
    if set(grads) != set(tensors):
        raise DimensionError("gradient names do not match parameter names")
    for name, g in grads.items():
        if np.shape(g) != np.shape(tensors[name]):
            raise DimensionError(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(tensors[name])}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_tensors, m_new, v_new = {}, {}, {}
    for name, theta in tensors.items():
        theta = np.asarray(theta, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        m = b1 * state.m.get(name, np.zeros_like(theta)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(theta)) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_tensors[name] = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        m_new[name], v_new[name] = m, v
    if isinstance(params, ClassifierParams):
        return ClassifierParams.from_tensors(new_tensors), AdamState(m_new, v_new, t)
    return new_tensors, AdamState(m_new, v_new, t)


# ------------------------------------------------------------ initialization


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: TrainConfig, d_node: int, d_ctx: int, rng) -> ClassifierParams:
    layers, d_in = [], d_node
    for d_out in config.hidden:
        layers.append(RgcnLayerParams(
            _glorot(rng, d_in, d_out, (N_REL, d_in, d_out)),
            np.zeros((N_REL, d_out)),
            _glorot(rng, d_in, 1, (N_REL, d_in)),
            np.full(N_REL, GATE_BIAS_INIT),
        ))
        d_in = d_out
    fc = _glorot(rng, d_ctx + d_in, len(LABELS), (d_ctx + d_in, len(LABELS)))
    return ClassifierParams(layers, fc, np.zeros(len(LABELS)))


# --------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    params: ClassifierParams
    config: TrainConfig
    labels: tuple = LABELS
    version: int = CKPT_VERSION
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format_version": self.version,
            "labels": list(self.labels),
            "config": self.config.to_dict(),
            "d_ctx": self.params.d_ctx,
            "d_node": self.params.d_node,
            "tensors": list(self.params.tensors()),
            "meta": self.meta,
        }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    header = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(CKPT_MAGIC + struct.pack("<II", ckpt.version, len(header)) + header)
    for name, tensor in ckpt.params.tensors().items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack(f"<I{tensor.ndim}I", tensor.ndim, *tensor.shape))
        buf.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise LoadError(f"{self.path}: truncated checkpoint while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(4, "magic") != CKPT_MAGIC:
        raise LoadError(f"{path}: not a checkpoint file")
    version, hlen = r.unpack("<II", "header")
    if version != CKPT_VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(hlen, "config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: corrupt config block: {exc}") from None
    if tuple(header.get("labels", ())) != LABELS:
        raise LoadError(f"{path}: label order {header.get('labels')} does not match {list(LABELS)}")
    tensors = {}
    while r.pos < len(data):
        (nlen,) = r.unpack("<H", "tensor name")
        name = r.take(nlen, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<I", f"rank of {name}")
        shape = r.unpack(f"<{rank}I", f"shape of {name}")
        count = int(np.prod(shape)) if rank else 1
        raw = r.take(8 * count, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    expected = header.get("tensors", [])
    if list(tensors) != expected:
        missing = [n for n in expected if n not in tensors]
        raise LoadError(f"{path}: truncated or inconsistent checkpoint; missing tensors {missing}")
    try:
        params = ClassifierParams.from_tensors(tensors)
        config = TrainConfig.from_dict(header["config"])
    except (HostnetError, KeyError) as exc:
        raise LoadError(f"{path}: invalid checkpoint contents: {exc}") from None
    return Checkpoint(params, config, LABELS, version, header.get("meta", {}))


# ------------------------------------------------------------------ training


def _example_grads(params, example):
    return classifier_backward(params, example, example.gold)


def predict(params, examples, threshold, workers=1):
    if workers > 1 and len(examples) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda ex: classify(params, ex, threshold), examples))
    return [classify(params, ex, threshold) for ex in examples]


def selection_score(report):
    """Weighted fine F1 when defined, else coarse F1."""
    return report.weighted_fine_f1 if report.weighted_fine_f1 is not None else report.coarse_f1


def train(config: TrainConfig, train_set, valid_set=(), workers=1):
    """Train from a seeded initialization; returns ``(checkpoint, log)``.

    The checkpoint holds the parameters of the epoch with the best
    validation score (the final epoch when there is no validation set).
    """
    if not train_set:
        raise TrainingError("training set is empty")
    missing = [ex.id for ex in train_set if ex.gold is None]
    if missing:
        raise SchemaError(f"training records without labels: {missing[:5]}")
    if valid_set and any(ex.gold is None for ex in valid_set):
        raise SchemaError("validation records must carry labels")

    rng = np.random.default_rng(config.seed)
    first = train_set[0]
    params = init_params(config, first.node_embeddings.shape[1], first.context_embedding.shape[0], rng)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    # non-finite values are detected in the loop and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_loop(config, train_set, valid_set, workers, rng, params, pool)


def _train_loop(config, train_set, valid_set, workers, rng, params, pool):
    state = AdamState()
    best_params, best_score, best_epoch = params, None, 0
    history = []
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_set))
            losses = []
            try:
                for start in range(0, len(order), config.batch_size):
                    batch = [train_set[i] for i in order[start:start + config.batch_size]]
                    if pool is not None:
                        results = list(pool.map(lambda ex, p=params: _example_grads(p, ex), batch))
                    else:
                        results = [_example_grads(params, ex) for ex in batch]
                    total = None
                    for loss, grads in results:
                        losses.append(loss)
                        if total is None:
                            total = {k: g.copy() for k, g in grads.items()}
                        else:
                            for k, g in grads.items():
                                total[k] += g
                    mean_grads = {k: g / len(batch) for k, g in total.items()}
                    params, state = adam_step(params, mean_grads, state, config)
            except NumericError as exc:
                raise NumericError(f"diverged in epoch {epoch} ({exc}); last finite epoch {epoch - 1}") from None
            train_loss = float(np.mean(losses))
            if not math.isfinite(train_loss):
                raise NumericError(f"non-finite training loss in epoch {epoch}; last finite epoch {epoch - 1}")
            entry = {"epoch": epoch, "train_loss": train_loss}
            if valid_set:
                preds = predict(params, valid_set, config.threshold, workers)
                report = evaluate([p.labels for p in preds], [ex.gold for ex in valid_set])
                score = selection_score(report)
                entry["valid"] = report.to_dict()
                entry["selection_score"] = score
                if best_score is None or score > best_score:
                    best_params, best_score, best_epoch = params, score, epoch
            else:
                best_params, best_epoch = params, epoch
            history.append(entry)
            log.info("epoch %d train_loss %.6f%s", epoch, train_loss,
                     f" valid {entry['selection_score']:.4f}" if valid_set else "")
    finally:
        if pool is not None:
            pool.shutdown()
    meta = {"best_epoch": best_epoch}
    if best_score is not None:
        meta["best_selection_score"] = best_score
    return Checkpoint(best_params, config, meta=meta), history
