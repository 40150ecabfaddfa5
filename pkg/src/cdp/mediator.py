"""Pair classifier: a small MLP trained on labeled-split candidate pairs.

Architecture is input -> 50 -> 50 -> 2 with ReLU hidden layers and a
softmax head, trained by plain SGD on cross-entropy. All math runs in
float64 so analytic gradients can be checked against finite differences.
Also hosts the committee-voting baseline and the first-layer weight report.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import EmbeddingSet, GroundTruth
from .errors import (
    ConfigError,
    DimensionMismatchError,
    FormatError,
    TruncationError,
    ValidationError,
)
from .features import BLOCK_NAMES, assemble_feature_matrix, block_slices, committee_size_for
from .knn import KnnGraph, build_knn_graph, candidate_pairs

log = logging.getLogger(__name__)

HIDDEN_WIDTH = 50
MODEL_MAGIC = b"CDPM"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 4
    lr_decay: float = 0.1
    decay_after_epoch: int = 3
    batch_size: int = 256
    seed: int = 0
    negative_downsample: float | None = None  # negatives kept per positive; None = all

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 < self.lr_decay <= 1):
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.negative_downsample is not None and self.negative_downsample <= 0:
            raise ConfigError(
                f"negative_downsample must be > 0, got {self.negative_downsample}"
            )


class SelectedEdge(NamedTuple):
    a: int
    b: int
    weight: float


@dataclass
class MediatorModel:
    """Weights and biases, layer order input->hidden1->hidden2->output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    history: list[float] = field(default_factory=list)  # full-data loss per epoch

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_committee(self) -> int:
        return committee_size_for(self.input_dim)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"model expects {self.input_dim} features, got {x.shape[1]}"
            )
        return x

    def forward(self, x) -> np.ndarray:
        """Class probabilities, one row per input; rows sum to 1."""
        x = self._check_input(x)
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        logits = h @ self.weights[-1] + self.biases[-1]
        return _softmax(logits)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _xavier(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(input_dim: int, seed: int) -> MediatorModel:
    """Fan-based uniform init, zero biases; deterministic given seed."""
    if input_dim < 1:
        raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    dims = [input_dim, HIDDEN_WIDTH, HIDDEN_WIDTH, 2]
    weights = [_xavier(i, o, rng) for i, o in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(o) for o in dims[1:]]
    return MediatorModel(weights=weights, biases=biases)


def cross_entropy(model: MediatorModel, features, targets) -> float:
    """Mean cross-entropy of the model on a batch."""
    probs = model.forward(features)
    y = np.asarray(targets, dtype=np.int64)
    return float(-np.mean(np.log(probs[np.arange(len(y)), y])))


def loss_and_gradients(model: MediatorModel, features, targets):
    """Mean cross-entropy plus gradients for every weight and bias."""
    x = model._check_input(features)
    y = np.asarray(targets, dtype=np.int64)
    batch = len(y)

    pre = []
    acts = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = h @ model.weights[-1] + model.biases[-1]
    probs = _softmax(logits)
    loss = float(-np.mean(np.log(probs[np.arange(batch), y])))

    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grads_w = [np.empty_like(w) for w in model.weights]
    grads_b = [np.empty_like(b) for b in model.biases]
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (pre[layer - 1] > 0.0)
    return loss, grads_w, grads_b


def train_mediator(features, targets, cfg: TrainConfig) -> MediatorModel:
    """SGD training; deterministic given cfg.seed.

    The learning rate drops by cfg.lr_decay once epoch cfg.decay_after_epoch
    finishes. Records full-data loss after every epoch in model.history.
    """
    cfg.validate()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValidationError("features must be (m, d) with one target per row")
    classes = np.unique(y)
    if not np.array_equal(classes, [0, 1]):
        raise ValidationError(
            f"need at least one example of each class, got classes {classes.tolist()}"
        )

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    if cfg.negative_downsample is not None:
        x, y = _downsample_negatives(x, y, cfg.negative_downsample, rng)

    model = init_model(x.shape[1], cfg.seed)
    order = np.arange(len(y))
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate * (cfg.lr_decay if epoch > cfg.decay_after_epoch else 1.0)
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, gw, gb = loss_and_gradients(model, x[idx], y[idx])
            for w, g in zip(model.weights, gw):
                w -= lr * g
            for b, g in zip(model.biases, gb):
                b -= lr * g
        model.history.append(cross_entropy(model, x, y))
        log.debug("epoch %d: lr=%g loss=%.6f", epoch, lr, model.history[-1])
    return model


def _downsample_negatives(x, y, ratio, rng):
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    keep_neg = int(round(ratio * len(pos)))
    if keep_neg >= len(neg):
        return x, y
    chosen = rng.choice(neg, size=keep_neg, replace=False)
    idx = np.sort(np.concatenate([pos, chosen]))
    log.info("downsampled negatives %d -> %d (%d positives)", len(neg), keep_neg, len(pos))
    return x[idx], y[idx]


def predict(model: MediatorModel, features) -> np.ndarray:
    """Positive-class probability per feature row."""
    return model.forward(features)[:, 1]


def build_training_pairs(
    labeled_sets: list[EmbeddingSet],
    truth: GroundTruth,
    k: int,
    workers: int = 1,
    graphs: list[KnnGraph] | None = None,
):
    """Candidate pairs and binary targets from the labeled split.

    Candidates are the base-view graph edges over the labeled samples;
    a pair is positive iff both samples share a ground-truth identity.
    Pass prebuilt graphs to skip the k-NN construction.
    """
    labels = truth.labels_of(labeled_sets[0].ids)
    if len(np.unique(labels)) < 2:
        raise ValidationError("labeled split must contain at least 2 identities")
    if graphs is None:
        graphs = [build_knn_graph(s, k, workers=workers) for s in labeled_sets]
    else:
        graphs = [g.truncated(k) for g in graphs]
    pairs = candidate_pairs(graphs[0])
    x = assemble_feature_matrix(pairs, graphs, labeled_sets)
    la = truth.labels_of(pairs[:, 0])
    lb = truth.labels_of(pairs[:, 1])
    y = (la == lb).astype(np.int64)
    return pairs, x, y


def select_pairs(pairs, probabilities, threshold: float = 0.96) -> list[SelectedEdge]:
    """Pairs whose positive probability reaches the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    pairs = np.asarray(pairs, dtype=np.uint64)
    probs = np.asarray(probabilities, dtype=np.float64)
    if len(pairs) != len(probs):
        raise ValidationError("pairs and probabilities must align")
    keep = probs >= threshold
    return [
        SelectedEdge(int(a), int(b), float(p))
        for (a, b), p in zip(pairs[keep], probs[keep])
    ]


def vote_count(pair, committee_graphs: list[KnnGraph]) -> int:
    a, b = pair
    return sum(1 for g in committee_graphs if g.has_edge(a, b))


def vote_select(
    pair, committee_graphs: list[KnnGraph], quorum: int | None = None
) -> SelectedEdge | None:
    """Committee-voting baseline for a single pair.

    Selected iff at least `quorum` members contain the undirected edge
    (default: all of them); the edge weight is the vote fraction.
    """
    n = len(committee_graphs)
    if quorum is None:
        quorum = n
    if not (1 <= quorum <= n):
        raise ConfigError(f"quorum must be in [1, {n}], got {quorum}")
    votes = vote_count(pair, committee_graphs)
    if votes < quorum:
        return None
    a, b = pair
    return SelectedEdge(int(a), int(b), votes / n)


def vote_select_pairs(
    pairs, committee_graphs: list[KnnGraph], quorum: int | None = None
) -> list[SelectedEdge]:
    """Vectorized vote_select over an (m, 2) pair array."""
    n = len(committee_graphs)
    if quorum is None:
        quorum = n
    if not (1 <= quorum <= n):
        raise ConfigError(f"quorum must be in [1, {n}], got {quorum}")
    pairs = np.asarray(pairs, dtype=np.uint64)
    votes = np.zeros(len(pairs), dtype=np.int64)
    for g in committee_graphs:
        votes += g.contains_pairs(pairs)
    keep = votes >= quorum
    return [
        SelectedEdge(int(a), int(b), v / n)
        for (a, b), v in zip(pairs[keep], votes[keep])
    ]


class BlockWeight(NamedTuple):
    block: str
    size: int
    mean_abs_weight: float


def inspect_first_layer(model: MediatorModel) -> list[BlockWeight]:
    """Mean absolute first-layer weight per input block.

    Summarizes how strongly each feature block drives the first hidden
    layer; empty blocks (N=0 relationship) report 0.
    """
    w = np.abs(model.weights[0])
    rows = []
    for name, cols in block_slices(model.num_committee).items():
        size = cols.stop - cols.start
        mean = float(w[cols, :].mean()) if size else 0.0
        rows.append(BlockWeight(block=name, size=size, mean_abs_weight=mean))
    assert [r.block for r in rows] == list(BLOCK_NAMES)
    return rows


def write_first_layer_csv(model: MediatorModel, path) -> None:
    """block,size,mean_abs_weight rows, one per input block."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "size", "mean_abs_weight"])
        for row in inspect_first_layer(model):
            writer.writerow([row.block, row.size, f"{row.mean_abs_weight:.9f}"])


def save_model(model: MediatorModel, path) -> None:
    """Binary model file: magic, version, N, layer dims, f64 weights/biases."""
    dims = [model.input_dim] + [w.shape[1] for w in model.weights]
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<III", MODEL_VERSION, model.num_committee, len(model.weights)))
        for i, o in zip(dims[:-1], dims[1:]):
            fh.write(struct.pack("<II", i, o))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MediatorModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"bad model magic {data[:4]!r}")
    if len(data) < 16:
        raise TruncationError("model header truncated")
    version, n_committee, n_layers = struct.unpack_from("<III", data, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    off = 16
    shapes = []
    for _ in range(n_layers):
        if off + 8 > len(data):
            raise TruncationError("model layer table truncated")
        i, o = struct.unpack_from("<II", data, off)
        shapes.append((i, o))
        off += 8
    if not shapes or committee_size_for(shapes[0][0]) != n_committee:
        raise FormatError("layer dims inconsistent with committee size")
    weights, biases = [], []
    for i, o in shapes:
        need = 8 * (i * o + o)
        if off + need > len(data):
            raise TruncationError("model payload truncated")
        w = np.frombuffer(data, dtype="<f8", count=i * o, offset=off).reshape(i, o)
        off += 8 * i * o
        b = np.frombuffer(data, dtype="<f8", count=o, offset=off)
        off += 8 * o
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes in model file")
    return MediatorModel(weights=weights, biases=biases)
