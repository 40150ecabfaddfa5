"""Cosine k-NN graphs and the candidate pair list.

Brute force with block-parallel query rows: vectors are normalized in
float64 and compared by dot product, so similarities are reproducible and
worker count never changes the result. Ties in similarity break toward the
smaller neighbor id.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import EmbeddingSet
from .errors import ConfigError, DimensionMismatchError, UnknownIdError, ValidationError

_QUERY_BLOCK = 512  # fixed block size; workers only map blocks to threads

# ids are packed two-per-uint64 for fast undirected edge membership tests
_ID_LIMIT = np.uint64(1) << np.uint64(32)
_LOW_MASK = _ID_LIMIT - np.uint64(1)


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors, clipped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatchError(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("cosine similarity undefined for zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass
class KnnGraph:
    """Per-node neighbor lists sorted by descending cosine similarity.

    neighbor_ids and similarities are (n, k') arrays with
    k' = min(k, n - 1); node_ids is sorted ascending.
    """

    k: int
    node_ids: np.ndarray
    neighbor_ids: np.ndarray
    similarities: np.ndarray
    _edge_keys: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def row_of(self, node_id) -> int:
        pos = int(np.searchsorted(self.node_ids, np.uint64(node_id)))
        if pos >= self.n or self.node_ids[pos] != np.uint64(node_id):
            raise UnknownIdError(f"node {node_id} not in graph")
        return pos

    def rows_of(self, node_ids) -> np.ndarray:
        query = np.asarray(node_ids, dtype=np.uint64)
        pos = np.searchsorted(self.node_ids, query)
        pos = np.minimum(pos, self.n - 1)
        if not np.all(self.node_ids[pos] == query):
            missing = query[self.node_ids[pos] != query]
            raise UnknownIdError(f"node {missing.flat[0]} not in graph")
        return pos

    def neighbors(self, node_id) -> list[tuple[int, float]]:
        row = self.row_of(node_id)
        return [
            (int(i), float(s))
            for i, s in zip(self.neighbor_ids[row], self.similarities[row])
        ]

    def truncated(self, k: int) -> "KnnGraph":
        """The graph this build would have produced for a smaller k.

        Valid because neighbor lists are fully ordered under the
        (similarity desc, id asc) tie-break, so a smaller k is a prefix.
        """
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        if k >= self.neighbor_ids.shape[1] and k >= self.k:
            return self
        kk = min(k, self.neighbor_ids.shape[1])
        return KnnGraph(
            k=k,
            node_ids=self.node_ids,
            neighbor_ids=self.neighbor_ids[:, :kk],
            similarities=self.similarities[:, :kk],
        )

    def edge_keys(self) -> np.ndarray:
        """Sorted packed keys of the symmetrized (undirected) edge set."""
        if self._edge_keys is None:
            if self.node_ids.size and self.node_ids[-1] >= _ID_LIMIT:
                raise ValidationError("edge keys require sample ids below 2**32")
            a = np.repeat(self.node_ids, self.neighbor_ids.shape[1])
            b = self.neighbor_ids.reshape(-1)
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            keys = (lo << np.uint64(32)) | hi
            self._edge_keys = np.unique(keys)
        return self._edge_keys

    def has_edge(self, a, b) -> bool:
        """Undirected membership: true if either endpoint lists the other."""
        a = np.uint64(a)
        b = np.uint64(b)
        self.row_of(a)
        self.row_of(b)
        lo, hi = (a, b) if a < b else (b, a)
        key = (lo << np.uint64(32)) | hi
        keys = self.edge_keys()
        pos = int(np.searchsorted(keys, key))
        return pos < len(keys) and keys[pos] == key

    def contains_pairs(self, pairs: np.ndarray) -> np.ndarray:
        """Vectorized undirected membership for an (m, 2) id array."""
        pairs = np.asarray(pairs, dtype=np.uint64)
        self.rows_of(pairs.reshape(-1))
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        keys = (lo << np.uint64(32)) | hi
        table = self.edge_keys()
        pos = np.minimum(np.searchsorted(table, keys), len(table) - 1)
        return table[pos] == keys

    def neighbor_means(self) -> np.ndarray:
        return self.similarities.mean(axis=1)

    def neighbor_vars(self) -> np.ndarray:
        # population variance, matching the divisor-k definition
        return self.similarities.var(axis=1)


def _topk_block(sims: np.ndarray, node_ids: np.ndarray, k: int):
    """Exact top-k of each row under the (sim desc, id asc) tie-break.

    Columns are ordered by ascending node id, so a stable sort on -sim
    resolves ties toward the smaller id.
    """
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top_sims = np.take_along_axis(sims, order, axis=1)
    top_ids = node_ids[order]
    return top_ids, top_sims


def build_knn_graph(
    emb: EmbeddingSet, k: int, workers: int = 1, _block: int = _QUERY_BLOCK
) -> KnnGraph:
    """Exact cosine k-NN graph over an embedding set.

    Each node gets its min(k, n-1) most similar other nodes. Query rows are
    processed in fixed-size blocks; `workers` only distributes blocks over
    threads and cannot change the output.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if emb.n < 2:
        raise ValidationError(f"need at least 2 samples to build a graph, got {emb.n}")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    normalized = emb.normalized()
    n = emb.n
    kk = min(k, n - 1)
    starts = list(range(0, n, _block))

    def compute(start: int):
        stop = min(start + _block, n)
        sims = normalized[start:stop] @ normalized.T
        np.clip(sims, -1.0, 1.0, out=sims)
        rows = np.arange(start, stop)
        sims[rows - start, rows] = -2.0  # exclude self
        return _topk_block(sims, emb.ids, kk)

    neighbor_ids = np.empty((n, kk), dtype=np.uint64)
    similarities = np.empty((n, kk), dtype=np.float64)
    if workers == 1 or len(starts) == 1:
        results = map(compute, starts)
        for start, (ids_blk, sims_blk) in zip(starts, results):
            neighbor_ids[start : start + len(ids_blk)] = ids_blk
            similarities[start : start + len(sims_blk)] = sims_blk
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for start, (ids_blk, sims_blk) in zip(starts, pool.map(compute, starts)):
                neighbor_ids[start : start + len(ids_blk)] = ids_blk
                similarities[start : start + len(sims_blk)] = sims_blk

    return KnnGraph(
        k=k, node_ids=emb.ids.copy(), neighbor_ids=neighbor_ids, similarities=similarities
    )


def candidate_pairs(base: KnnGraph) -> np.ndarray:
    """Deduplicated undirected edge set of the base graph.

    Returns an (m, 2) uint64 array with a < b per row, sorted
    lexicographically by (a, b).
    """
    a = np.repeat(base.node_ids, base.neighbor_ids.shape[1])
    b = base.neighbor_ids.reshape(-1)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    keys = np.unique((lo << np.uint64(32)) | hi)
    out = np.empty((len(keys), 2), dtype=np.uint64)
    out[:, 0] = keys >> np.uint64(32)
    out[:, 1] = keys & _LOW_MASK
    return out
