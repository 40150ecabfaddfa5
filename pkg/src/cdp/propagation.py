"""Pseudo-label assignment over the consensus graph.

Components are pulled from a FIFO queue. Any component larger than the
size cap M has its weakest edges removed: with S_min the minimum edge
score in the component, the cut threshold is

    th = S_min + (1 - S_min) * step

and only edges with score strictly above th survive. Surviving edges are
re-decomposed into components and re-enqueued; nodes that lose every edge
are dropped as unlabeled. Components at or under the cap receive the next
pseudo-label. Each split removes at least the minimum-score edge, so the
procedure terminates on every finite graph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InternalError, ValidationError

DEFAULT_MAX_CLUSTER = 300
DEFAULT_STEP = 0.1


@dataclass
class ConsensusGraph:
    """Undirected weighted graph; edges are (a, b, score) with a < b."""

    nodes: np.ndarray
    edges: list[tuple[int, int, float]]

    def __post_init__(self):
        self.nodes = np.unique(np.asarray(self.nodes, dtype=np.uint64))
        node_set = set(int(n) for n in self.nodes)
        seen = set()
        canon = []
        for a, b, score in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValidationError(f"self-loop on node {a}")
            if a > b:
                a, b = b, a
            if (a, b) in seen:
                raise ValidationError(f"duplicate edge ({a}, {b})")
            if a not in node_set or b not in node_set:
                raise ValidationError(f"edge ({a}, {b}) references unknown node")
            if not (0.0 <= score <= 1.0):
                raise ValidationError(f"edge score {score} outside [0, 1]")
            seen.add((a, b))
            canon.append((a, b, float(score)))
        self.edges = canon

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_selected(cls, selected, nodes) -> "ConsensusGraph":
        """Build from SelectedEdge tuples over a node universe."""
        return cls(nodes=nodes, edges=[(e.a, e.b, e.weight) for e in selected])


@dataclass
class LabelAssignment:
    """Pseudo-label per kept node; dropped nodes listed separately."""

    assignments: dict[int, int]
    unlabeled_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.unlabeled_ids = sorted(int(i) for i in self.unlabeled_ids)
        if set(self.assignments) & set(self.unlabeled_ids):
            raise ValidationError("a node is both labeled and unlabeled")
        labels = set(self.assignments.values())
        if labels and labels != set(range(len(labels))):
            raise ValidationError("pseudo-labels must be contiguous from 0")

    @property
    def num_labels(self) -> int:
        return len(set(self.assignments.values()))

    def clusters(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_labels)]
        for node in sorted(self.assignments):
            out[self.assignments[node]].append(node)
        return out


@dataclass
class SoftLabels:
    """Per-node probability vector over pseudo-labels."""

    ids: np.ndarray
    probabilities: np.ndarray
    depth: int
    decay: float

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.uint64)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.probabilities.ndim != 2 or len(self.ids) != len(self.probabilities):
            raise ValidationError("one probability row per id required")
        if np.any(self.probabilities < 0):
            raise ValidationError("soft label probabilities must be nonnegative")
        sums = self.probabilities.sum(axis=1)
        if len(sums) and not np.allclose(sums, 1.0, atol=1e-6):
            raise ValidationError("soft label rows must sum to 1")


def _adjacency(edges) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = {}
    for a, b, *_ in edges:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    return adj


def _components(nodes, edges):
    """Connected components as (sorted node tuple, edge list) pairs,
    ordered by smallest member id."""
    adj = _adjacency(edges)
    comp_of: dict[int, int] = {}
    comps: list[list[int]] = []
    for start in sorted(int(n) for n in nodes):
        if start in comp_of:
            continue
        members = [start]
        comp_of[start] = len(comps)
        frontier = deque([start])
        while frontier:
            cur = frontier.popleft()
            for nxt in adj.get(cur, ()):
                if nxt not in comp_of:
                    comp_of[nxt] = len(comps)
                    members.append(nxt)
                    frontier.append(nxt)
        comps.append(sorted(members))
    comp_edges: list[list[tuple[int, int, float]]] = [[] for _ in comps]
    for edge in edges:
        comp_edges[comp_of[int(edge[0])]].append(edge)
    return [(tuple(m), e) for m, e in zip(comps, comp_edges)]


def connected_components(graph: ConsensusGraph) -> list[set[int]]:
    """Maximal connected node sets, ordered by smallest member id."""
    return [set(members) for members, _ in _components(graph.nodes, graph.edges)]


def propagate(
    graph: ConsensusGraph,
    max_size: int = DEFAULT_MAX_CLUSTER,
    step: float = DEFAULT_STEP,
    keep_singletons: bool = True,
) -> LabelAssignment:
    """Assign pseudo-labels by recursive component splitting (see module doc).

    keep_singletons=False sends single-node components to unlabeled_ids
    instead of giving them their own label.
    """
    if not (0.0 < step < 1.0):
        raise ConfigError(f"step must be in (0, 1), got {step}")
    if max_size < 1:
        raise ConfigError(f"max_size must be >= 1, got {max_size}")

    queue = deque(_components(graph.nodes, graph.edges))
    assignments: dict[int, int] = {}
    unlabeled: list[int] = []
    next_label = 0
    while queue:
        members, edges = queue.popleft()
        if len(members) > max_size:
            s_min = min(e[2] for e in edges)
            th = s_min + (1.0 - s_min) * step
            kept = [e for e in edges if e[2] > th]
            if len(kept) >= len(edges):
                raise InternalError("split failed to remove any edge")
            if kept:
                surviving = {e[0] for e in kept} | {e[1] for e in kept}
                unlabeled.extend(n for n in members if n not in surviving)
                queue.extend(_components(sorted(surviving), kept))
            else:
                unlabeled.extend(members)
        else:
            if len(members) == 1 and not keep_singletons:
                unlabeled.extend(members)
            else:
                for node in members:
                    assignments[node] = next_label
                next_label += 1
    return LabelAssignment(assignments=assignments, unlabeled_ids=unlabeled)


def soft_labels(
    hard: LabelAssignment, graph: ConsensusGraph, depth: int, decay: float
) -> SoftLabels:
    """Decayed breadth-first diffusion of the hard labels.

    For each labeled node, every node within BFS distance d <= depth adds
    decay**d to the bucket of its own hard label (unlabeled nodes relay the
    traversal but contribute nothing); the bucket vector is then normalized.
    depth=0 reproduces the one-hot hard labels exactly.
    """
    if depth < 0:
        raise ConfigError(f"depth must be >= 0, got {depth}")
    if not (0.0 < decay <= 1.0):
        raise ConfigError(f"decay must be in (0, 1], got {decay}")

    num_labels = hard.num_labels
    ids = sorted(hard.assignments)
    probs = np.zeros((len(ids), max(num_labels, 1)), dtype=np.float64)
    adj = _adjacency(graph.edges)
    weights = decay ** np.arange(depth + 1, dtype=np.float64)

    for row, node in enumerate(ids):
        probs[row, hard.assignments[node]] += 1.0  # distance 0, decay**0
        if depth == 0:
            continue
        dist = {node: 0}
        frontier = deque([node])
        while frontier:
            cur = frontier.popleft()
            d = dist[cur]
            if d == depth:
                continue
            for nxt in adj.get(cur, ()):
                if nxt in dist:
                    continue
                dist[nxt] = d + 1
                frontier.append(nxt)
                label = hard.assignments.get(nxt)
                if label is not None:
                    probs[row, label] += weights[d + 1]
    probs /= probs.sum(axis=1, keepdims=True)
    return SoftLabels(
        ids=np.array(ids, dtype=np.uint64), probabilities=probs, depth=depth, decay=decay
    )
