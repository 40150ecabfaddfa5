"""On-disk artifact formats.

Binary containers are little-endian throughout:

  embeddings (.cdpe): magic "CDPE", u32 version=1, u64 num_samples,
      u32 dim, num_samples u64 ids, num_samples*dim f32 values row-major.
  pair features (.cdpf): magic "CDPF", u32 version=1, u64 num_pairs,
      u32 feat_dim, num_pairs (u64 a, u64 b) index, num_pairs*feat_dim f32.

CSV artifacts are UTF-8 with a header row; floats are written with repr so
a load/save round trip is bit-exact.
"""

from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path

import numpy as np

from .dataset import EmbeddingSet, GroundTruth, Split
from .errors import (
    DimensionMismatchError,
    FormatError,
    MissingInputError,
    TruncationError,
    ValidationError,
)
from .knn import KnnGraph
from .propagation import LabelAssignment, SoftLabels

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"CDPE"
EMBEDDING_VERSION = 1
FEATURE_MAGIC = b"CDPF"
FEATURE_VERSION = 1

_EMB_HEADER = struct.Struct("<4sIQI")
_FEAT_HEADER = struct.Struct("<4sIQI")


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"file not found: {path}")
    return path.read_bytes()


def save_embeddings(emb: EmbeddingSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, emb.n, emb.dim))
        fh.write(np.ascontiguousarray(emb.ids, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())


def load_embeddings(path) -> EmbeddingSet:
    data = _read_bytes(path)
    if len(data) < _EMB_HEADER.size:
        raise TruncationError(f"embedding header truncated in {path}")
    magic, version, n, dim = _EMB_HEADER.unpack_from(data, 0)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"bad embedding magic {magic!r} in {path}")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"unsupported embedding version {version} in {path}")
    if dim < 1:
        raise DimensionMismatchError(f"embedding dim must be >= 1, got {dim}")
    off = _EMB_HEADER.size
    ids_bytes = 8 * n
    if off + ids_bytes > len(data):
        raise TruncationError(f"id table truncated in {path}")
    ids = np.frombuffer(data, dtype="<u8", count=n, offset=off)
    off += ids_bytes
    payload = len(data) - off
    expected = 4 * n * dim
    if payload < expected:
        rows = payload // (4 * dim)
        raise TruncationError(
            f"payload holds {rows} rows but header declares {n} in {path}"
        )
    if payload > expected:
        if payload % (4 * dim) == 0:
            raise DimensionMismatchError(
                f"payload holds {payload // (4 * dim)} rows of dim {dim} "
                f"but header declares {n} in {path}"
            )
        raise FormatError(f"{payload - expected} trailing bytes in {path}")
    vectors = np.frombuffer(data, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
    return EmbeddingSet(ids=ids.astype(np.uint64), vectors=vectors.copy())


def save_labels(truth: GroundTruth, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"])
        for i, lab in zip(truth.ids, truth.labels):
            writer.writerow([int(i), int(lab)])


def load_labels(path) -> GroundTruth:
    """Read an id,label CSV; non-contiguous labels are remapped with a warning."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"labels file not found: {path}")
    rows: list[tuple[int, int]] = []
    seen: set[int] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "label"]:
            raise FormatError(f"labels file must start with an id,label header: {path}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sample, label = int(row[0]), int(row[1])
            except (IndexError, ValueError):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            if sample in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate id {sample}")
            seen.add(sample)
            rows.append((sample, label))
    rows.sort()
    ids = np.array([r[0] for r in rows], dtype=np.uint64)
    raw = np.array([r[1] for r in rows], dtype=np.int64)
    uniq = np.unique(raw)
    if len(raw) and (raw.min() != 0 or len(uniq) != raw.max() + 1):
        log.warning(
            "labels in %s are not contiguous (%d distinct, max %d); remapping",
            path, len(uniq), raw.max() if len(raw) else -1,
        )
        raw = np.searchsorted(uniq, raw)
    return GroundTruth(ids=ids, labels=raw)


def save_split(split: Split, path) -> None:
    rows = [(int(i), "labeled") for i in split.labeled_ids] + [
        (int(i), "unlabeled") for i in split.unlabeled_ids
    ]
    rows.sort()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "partition"])
        writer.writerows(rows)


def load_split(path) -> Split:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"split file not found: {path}")
    labeled: list[int] = []
    unlabeled: list[int] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "partition"]:
            raise FormatError(f"split file must start with an id,partition header: {path}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sample = int(row[0])
                part = row[1].strip()
            except (IndexError, ValueError):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            if part == "labeled":
                labeled.append(sample)
            elif part == "unlabeled":
                unlabeled.append(sample)
            else:
                raise ValidationError(f"{path}:{lineno}: unknown partition {part!r}")
    return Split(labeled_ids=np.array(labeled, dtype=np.uint64),
                 unlabeled_ids=np.array(unlabeled, dtype=np.uint64))


def dump_graph_csv(graph: KnnGraph, path) -> None:
    """node,rank,neighbor,similarity rows; similarity via repr (lossless)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "rank", "neighbor", "similarity"])
        for row, node in enumerate(graph.node_ids):
            for rank in range(graph.neighbor_ids.shape[1]):
                writer.writerow([
                    int(node), rank,
                    int(graph.neighbor_ids[row, rank]),
                    repr(float(graph.similarities[row, rank])),
                ])


def load_graph_csv(path, k: int | None = None) -> KnnGraph:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"graph file not found: {path}")
    per_node: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["node", "rank", "neighbor", "similarity"]:
            raise FormatError(f"unexpected graph header in {path}: {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                node, rank, neigh, sim = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            except (IndexError, ValueError):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            per_node.setdefault(node, []).append((rank, neigh, sim))
    if not per_node:
        raise FormatError(f"graph file {path} has no rows")
    node_ids = np.array(sorted(per_node), dtype=np.uint64)
    widths = {len(v) for v in per_node.values()}
    if len(widths) != 1:
        raise FormatError(f"inconsistent neighbor counts in {path}")
    width = widths.pop()
    neighbor_ids = np.empty((len(node_ids), width), dtype=np.uint64)
    sims = np.empty((len(node_ids), width), dtype=np.float64)
    for i, node in enumerate(node_ids):
        entries = sorted(per_node[int(node)])
        if [e[0] for e in entries] != list(range(width)):
            raise FormatError(f"node {node} has gaps in neighbor ranks in {path}")
        neighbor_ids[i] = [e[1] for e in entries]
        sims[i] = [e[2] for e in entries]
    return KnnGraph(k=k if k is not None else width, node_ids=node_ids,
                    neighbor_ids=neighbor_ids, similarities=sims)


def save_pair_features(pairs: np.ndarray, features: np.ndarray, path) -> None:
    pairs = np.asarray(pairs, dtype=np.uint64)
    features = np.asarray(features)
    if len(pairs) != len(features):
        raise ValidationError("one feature row per pair required")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, len(pairs),
                                   features.shape[1] if features.ndim == 2 else 0))
        fh.write(np.ascontiguousarray(pairs, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def load_pair_features(path) -> tuple[np.ndarray, np.ndarray]:
    data = _read_bytes(path)
    if len(data) < _FEAT_HEADER.size:
        raise TruncationError(f"feature header truncated in {path}")
    magic, version, n, dim = _FEAT_HEADER.unpack_from(data, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad feature magic {magic!r} in {path}")
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version} in {path}")
    off = _FEAT_HEADER.size
    if off + 16 * n > len(data):
        raise TruncationError(f"pair index truncated in {path}")
    pairs = np.frombuffer(data, dtype="<u8", count=2 * n, offset=off).reshape(n, 2)
    off += 16 * n
    if off + 4 * n * dim > len(data):
        raise TruncationError(f"feature payload truncated in {path}")
    feats = np.frombuffer(data, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
    return pairs.astype(np.uint64), feats.astype(np.float64)


def save_selected_edges(edges, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a", "b", "weight"])
        for e in edges:
            writer.writerow([int(e[0]), int(e[1]), repr(float(e[2]))])


def load_selected_edges(path) -> list[tuple[int, int, float]]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"selected edges file not found: {path}")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["a", "b", "weight"]:
            raise FormatError(f"unexpected selected-edges header in {path}: {header}")
        for row in reader:
            if row:
                out.append((int(row[0]), int(row[1]), float(row[2])))
    return out


def save_assignment(assign: LabelAssignment, path, sidecar_path) -> None:
    """id,pseudo_label CSV plus a sidecar listing the unassigned ids."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "pseudo_label"])
        for node in sorted(assign.assignments):
            writer.writerow([node, assign.assignments[node]])
    with open(sidecar_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"])
        for node in assign.unlabeled_ids:
            writer.writerow([node])


def load_assignment(path, sidecar_path) -> LabelAssignment:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"assignment file not found: {path}")
    assignments: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "pseudo_label"]:
            raise FormatError(f"unexpected assignment header in {path}: {header}")
        for row in reader:
            if row:
                assignments[int(row[0])] = int(row[1])
    unlabeled: list[int] = []
    sidecar = Path(sidecar_path)
    if sidecar.is_file():
        with open(sidecar, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            unlabeled = [int(row[0]) for row in reader if row]
    return LabelAssignment(assignments=assignments, unlabeled_ids=unlabeled)


def save_soft_labels(soft: SoftLabels, path) -> None:
    """Soft labels reuse the embedding container with dim = label count."""
    emb = EmbeddingSet(ids=soft.ids, vectors=soft.probabilities.astype(np.float32))
    save_embeddings(emb, path)


def load_soft_labels(path, depth: int, decay: float) -> SoftLabels:
    emb = load_embeddings(path)
    probs = emb.vectors.astype(np.float64)
    probs = probs / probs.sum(axis=1, keepdims=True)  # re-normalize after f32 round trip
    return SoftLabels(ids=emb.ids, probabilities=probs, depth=depth, decay=decay)
