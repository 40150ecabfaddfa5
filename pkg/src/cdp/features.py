"""Consensus features for a candidate pair and the classifier input layout.

For N committee members the input vector concatenates, in this order:
  relationship  (N)        binary, undirected edge membership per member
  affinity      (N + 1)    cosine similarity per view, base view first
  mean          (2(N + 1)) neighbor-similarity mean, node a then node b
  var           (2(N + 1)) neighbor-similarity variance, same layout
for a total of 6N + 5 entries.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dataset import EmbeddingSet
from .errors import ValidationError
from .knn import KnnGraph

BLOCK_NAMES = ("relationship", "affinity", "mean", "var")


def feature_length(num_committee: int) -> int:
    if num_committee < 0:
        raise ValidationError(f"num_committee must be >= 0, got {num_committee}")
    return 6 * num_committee + 5


def committee_size_for(length: int) -> int:
    """Inverse of feature_length; rejects lengths that fit no layout."""
    n, rem = divmod(length - 5, 6)
    if length < 5 or rem != 0:
        raise ValidationError(f"{length} is not a valid feature length (6N+5)")
    return n


def block_slices(num_committee: int) -> dict[str, slice]:
    """Column ranges of each feature block for N committee members."""
    n = num_committee
    edges = np.cumsum([0, n, n + 1, 2 * (n + 1), 2 * (n + 1)])
    return {
        name: slice(int(lo), int(hi))
        for name, lo, hi in zip(BLOCK_NAMES, edges[:-1], edges[1:])
    }


class NodeNeighborStats(NamedTuple):
    mean: float
    var: float


def neighbor_stats(node_id, graph: KnnGraph) -> NodeNeighborStats:
    """Mean and population variance of a node's stored neighbor similarities."""
    row = graph.row_of(node_id)
    sims = graph.similarities[row]
    return NodeNeighborStats(mean=float(sims.mean()), var=float(sims.var()))


def relationship_vector(pair, committee_graphs: list[KnnGraph]) -> np.ndarray:
    """Per-member indicator of whether the pair is an undirected edge."""
    a, b = pair
    return np.array(
        [1.0 if g.has_edge(a, b) else 0.0 for g in committee_graphs], dtype=np.float64
    )


def affinity_vector(pair, all_sets: list[EmbeddingSet]) -> np.ndarray:
    """Cosine similarity of the pair under every view, base view first."""
    a, b = pair
    out = np.empty(len(all_sets), dtype=np.float64)
    for i, emb in enumerate(all_sets):
        nv = emb.normalized()
        out[i] = np.clip(nv[emb.row_of(a)] @ nv[emb.row_of(b)], -1.0, 1.0)
    return out


def assemble_mediator_input(
    pair, graphs: list[KnnGraph], sets: list[EmbeddingSet]
) -> np.ndarray:
    """The full (6N+5)-dim input vector for one candidate pair.

    graphs and sets hold the base view at index 0 followed by the N
    committee members, in the same order.
    """
    _check_views(graphs, sets)
    a, b = pair
    rel = relationship_vector(pair, graphs[1:])
    aff = affinity_vector(pair, sets)
    means_a = np.array([neighbor_stats(a, g).mean for g in graphs])
    means_b = np.array([neighbor_stats(b, g).mean for g in graphs])
    vars_a = np.array([neighbor_stats(a, g).var for g in graphs])
    vars_b = np.array([neighbor_stats(b, g).var for g in graphs])
    return np.concatenate([rel, aff, means_a, means_b, vars_a, vars_b])


def assemble_feature_matrix(
    pairs: np.ndarray, graphs: list[KnnGraph], sets: list[EmbeddingSet]
) -> np.ndarray:
    """Vectorized assemble_mediator_input for an (m, 2) pair array."""
    _check_views(graphs, sets)
    pairs = np.asarray(pairs, dtype=np.uint64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValidationError(f"pairs must be an (m, 2) array, got shape {pairs.shape}")
    m = len(pairs)
    n_committee = len(graphs) - 1
    out = np.empty((m, feature_length(n_committee)), dtype=np.float64)
    cols = block_slices(n_committee)

    rel = out[:, cols["relationship"]]
    for i, g in enumerate(graphs[1:]):
        rel[:, i] = g.contains_pairs(pairs)

    aff = out[:, cols["affinity"]]
    for i, emb in enumerate(sets):
        nv = emb.normalized()
        ra = emb.rows_of(pairs[:, 0])
        rb = emb.rows_of(pairs[:, 1])
        aff[:, i] = np.clip(np.einsum("ij,ij->i", nv[ra], nv[rb]), -1.0, 1.0)

    n_views = len(graphs)
    means = out[:, cols["mean"]]
    vars_ = out[:, cols["var"]]
    for i, g in enumerate(graphs):
        ra = g.rows_of(pairs[:, 0])
        rb = g.rows_of(pairs[:, 1])
        gmean = g.neighbor_means()
        gvar = g.neighbor_vars()
        means[:, i] = gmean[ra]
        means[:, n_views + i] = gmean[rb]
        vars_[:, i] = gvar[ra]
        vars_[:, n_views + i] = gvar[rb]
    return out


def _check_views(graphs, sets):
    if len(graphs) != len(sets):
        raise ValidationError(
            f"{len(graphs)} graphs for {len(sets)} embedding sets; views must align"
        )
    if not graphs:
        raise ValidationError("need at least the base view")
