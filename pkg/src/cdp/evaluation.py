"""Pair-selection and assigned-label quality metrics, plus ablation sweeps.

Pairwise metrics are computed over unordered sample pairs: recall is the
fraction of same-identity pairs in the evaluated universe that end up
together, precision the fraction of same-cluster pairs that truly share an
identity. Unassigned nodes count against recall but never against
precision.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import MEDIATOR_INPUT_CHOICES, PipelineConfig, derive_seed
from .dataset import (
    HETEROGENEOUS,
    HOMOGENEOUS,
    EmbeddingSet,
    GroundTruth,
    SyntheticData,
    generate_synthetic,
)
from .errors import ConfigError, UnknownIdError, ValidationError
from .features import assemble_feature_matrix, block_slices
from .knn import KnnGraph, build_knn_graph, candidate_pairs
from .mediator import (
    MediatorModel,
    SelectedEdge,
    TrainConfig,
    build_training_pairs,
    predict,
    select_pairs,
    train_mediator,
    vote_select_pairs,
)
from .propagation import ConsensusGraph, LabelAssignment, propagate

log = logging.getLogger(__name__)


class PairMetrics(NamedTuple):
    pair_count: int
    recall: float
    precision: float


class ClusterMetrics(NamedTuple):
    pairwise_recall: float
    pairwise_precision: float


def _pairs_array(selected) -> np.ndarray:
    if isinstance(selected, np.ndarray):
        arr = selected.astype(np.uint64)
    else:
        arr = np.array([(p[0], p[1]) for p in selected], dtype=np.uint64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValidationError("selected pairs must be (a, b) rows")
    return arr[:, :2]


def _same_label_pair_count(labels: np.ndarray) -> int:
    _, counts = np.unique(labels, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def pair_metrics(selected, truth: GroundTruth, universe) -> PairMetrics:
    """Recall and precision of a selected pair set.

    Positives are all unordered same-identity pairs inside the universe.
    An empty selection has precision 1.0 by convention (logged).
    """
    universe = np.unique(np.asarray(universe, dtype=np.uint64))
    pairs = _pairs_array(selected)
    if pairs.size:
        pos = np.searchsorted(universe, pairs.reshape(-1))
        pos = np.minimum(pos, len(universe) - 1)
        if not np.all(universe[pos] == pairs.reshape(-1)):
            raise UnknownIdError("selected pair endpoint outside the evaluated universe")
    positives = _same_label_pair_count(truth.labels_of(universe))
    if pairs.size:
        tp = int((truth.labels_of(pairs[:, 0]) == truth.labels_of(pairs[:, 1])).sum())
    else:
        tp = 0
    if positives == 0:
        log.warning("no positive pairs in universe; reporting recall 1.0")
        recall = 1.0
    else:
        recall = tp / positives
    if len(pairs) == 0:
        log.warning("empty selection; reporting precision 1.0")
        precision = 1.0
    else:
        precision = tp / len(pairs)
    return PairMetrics(pair_count=len(pairs), recall=recall, precision=precision)


def cluster_metrics(assign: LabelAssignment, truth: GroundTruth) -> ClusterMetrics:
    """Pairwise recall/precision of a pseudo-label assignment.

    The recall denominator covers every id in `truth`, so nodes the
    assignment dropped still count as missed pairs.
    """
    assigned_ids = np.array(sorted(assign.assignments), dtype=np.uint64)
    pseudo = np.array([assign.assignments[int(i)] for i in assigned_ids], dtype=np.int64)
    true_labels = truth.labels_of(assigned_ids) if len(assigned_ids) else np.zeros(0, np.int64)

    same_truth_total = _same_label_pair_count(truth.labels)
    same_pseudo = _same_label_pair_count(pseudo)
    if len(assigned_ids):
        key = pseudo * np.int64(truth.num_identities + 1) + true_labels
        both = _same_label_pair_count(key)
    else:
        both = 0

    if same_truth_total == 0:
        log.warning("ground truth has no same-identity pairs; reporting recall 1.0")
        recall = 1.0
    else:
        recall = both / same_truth_total
    if same_pseudo == 0:
        log.warning("assignment has no same-cluster pairs; reporting precision 1.0")
        precision = 1.0
    else:
        precision = both / same_pseudo
    return ClusterMetrics(pairwise_recall=recall, pairwise_precision=precision)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def hierarchical_baseline(base: EmbeddingSet, threshold: float) -> LabelAssignment:
    """Single-linkage clustering at a cosine cut, singletons discarded.

    Connects every pair at or above the similarity threshold, labels the
    connected components, and drops single-node components.
    """
    if not (-1.0 <= threshold <= 1.0):
        raise ConfigError(f"clustering threshold must be in [-1, 1], got {threshold}")
    nv = base.normalized()
    sims = nv @ nv.T
    np.fill_diagonal(sims, -2.0)
    ii, jj = np.nonzero(np.triu(sims >= threshold, k=1))
    uf = _UnionFind(base.n)
    for a, b in zip(ii.tolist(), jj.tolist()):
        uf.union(a, b)
    members: dict[int, list[int]] = {}
    for row in range(base.n):
        members.setdefault(uf.find(row), []).append(row)
    assignments: dict[int, int] = {}
    unlabeled: list[int] = []
    next_label = 0
    for root in sorted(members):
        rows = members[root]
        if len(rows) == 1:
            unlabeled.append(int(base.ids[rows[0]]))
            continue
        for row in rows:
            assignments[int(base.ids[row])] = next_label
        next_label += 1
    return LabelAssignment(assignments=assignments, unlabeled_ids=unlabeled)


# --------------------------------------------------------------------------
# Ablation sweeps


class ReportRow(NamedTuple):
    config: str
    pair_count: int | None
    pair_recall: float | None
    pair_precision: float | None
    pairwise_recall: float
    pairwise_precision: float


def _input_columns(inputs: str, num_committee: int) -> slice:
    cols = block_slices(num_committee)
    if inputs == "relationship":
        return slice(0, cols["relationship"].stop)
    if inputs == "relationship+affinity":
        return slice(0, cols["affinity"].stop)
    if inputs == "relationship+affinity+distribution":
        return slice(0, cols["var"].stop)
    raise ConfigError(f"unknown mediator input subset {inputs!r}")


@dataclass
class ConsensusRunner:
    """Caches per-view graphs and feature matrices for sweep rows.

    Graphs are built once at the largest k a sweep needs and truncated per
    row, which is exact because neighbor lists are prefix-consistent.
    """

    data: SyntheticData
    k: int
    threshold: float
    train_cfg: TrainConfig
    max_cluster_size: int
    step: float
    keep_singletons: bool
    vote_similarity_threshold: float
    workers: int = 1
    k_max: int | None = None

    def __post_init__(self):
        split = self.data.split
        self._unlabeled_sets = [self.data.base.subset(split.unlabeled_ids)] + [
            m.subset(split.unlabeled_ids) for m in self.data.committee
        ]
        self._labeled_sets = [self.data.base.subset(split.labeled_ids)] + [
            m.subset(split.labeled_ids) for m in self.data.committee
        ]
        self.truth_unlabeled = self.data.truth.subset(split.unlabeled_ids)
        kmax = max(self.k, self.k_max or self.k)
        self._graphs_u = [
            build_knn_graph(s, kmax, workers=self.workers) for s in self._unlabeled_sets
        ]
        self._graphs_l = [
            build_knn_graph(s, kmax, workers=self.workers) for s in self._labeled_sets
        ]
        self._features: dict[tuple[int, int], tuple] = {}
        self._train_features: dict[tuple[int, int], tuple] = {}

    @property
    def num_committee(self) -> int:
        return len(self.data.committee)

    def unlabeled_graphs(self, k: int, members: int) -> list[KnnGraph]:
        return [g.truncated(k) for g in self._graphs_u[: members + 1]]

    def candidate_features(self, k: int, members: int):
        key = (k, members)
        if key not in self._features:
            graphs = self.unlabeled_graphs(k, members)
            pairs = candidate_pairs(graphs[0])
            x = assemble_feature_matrix(pairs, graphs, self._unlabeled_sets[: members + 1])
            self._features[key] = (pairs, x)
        return self._features[key]

    def training_features(self, k: int, members: int):
        key = (k, members)
        if key not in self._train_features:
            graphs = [g.truncated(k) for g in self._graphs_l[: members + 1]]
            pairs, x, y = build_training_pairs(
                self._labeled_sets[: members + 1], self.data.truth, k, graphs=graphs
            )
            self._train_features[key] = (pairs, x, y)
        return self._train_features[key]

    def run_mediator(
        self, k: int | None = None, members: int | None = None, inputs: str | None = None
    ) -> tuple[list[SelectedEdge], MediatorModel]:
        """Train on the labeled split and select unlabeled pairs."""
        k = self.k if k is None else k
        members = self.num_committee if members is None else members
        inputs = MEDIATOR_INPUT_CHOICES[-1] if inputs is None else inputs
        cols = _input_columns(inputs, members)
        _, x_train, y_train = self.training_features(k, members)
        model = train_mediator(x_train[:, cols], y_train, self.train_cfg)
        pairs, x = self.candidate_features(k, members)
        probs = predict(model, x[:, cols])
        return select_pairs(pairs, probs, self.threshold), model

    def run_voting(self, k: int | None = None, members: int | None = None) -> list[SelectedEdge]:
        """Committee voting at full quorum; with no members, plain
        similarity thresholding on the base graph's candidate edges."""
        k = self.k if k is None else k
        members = self.num_committee if members is None else members
        graphs = self.unlabeled_graphs(k, members)
        pairs = candidate_pairs(graphs[0])
        if members == 0:
            base = self._unlabeled_sets[0]
            nv = base.normalized()
            sims = np.einsum(
                "ij,ij->i", nv[base.rows_of(pairs[:, 0])], nv[base.rows_of(pairs[:, 1])]
            )
            sims = np.clip(sims, -1.0, 1.0)
            keep = sims >= self.vote_similarity_threshold
            return [
                SelectedEdge(int(a), int(b), float(s))
                for (a, b), s in zip(pairs[keep], sims[keep])
            ]
        return vote_select_pairs(pairs, graphs[1:], quorum=members)

    def evaluate_selection(self, tag: str, selected: list[SelectedEdge]) -> ReportRow:
        """Metrics row for a selection: pair quality plus propagated labels."""
        pm = pair_metrics(selected, self.truth_unlabeled, self.data.split.unlabeled_ids)
        graph = ConsensusGraph.from_selected(selected, self.data.split.unlabeled_ids)
        assignment = propagate(
            graph, self.max_cluster_size, self.step, keep_singletons=self.keep_singletons
        )
        cm = cluster_metrics(assignment, self.truth_unlabeled)
        return ReportRow(
            config=tag,
            pair_count=pm.pair_count,
            pair_recall=pm.recall,
            pair_precision=pm.precision,
            pairwise_recall=cm.pairwise_recall,
            pairwise_precision=cm.pairwise_precision,
        )

    def clustering_row(self, threshold: float) -> ReportRow:
        assignment = hierarchical_baseline(self._unlabeled_sets[0], threshold)
        cm = cluster_metrics(assignment, self.truth_unlabeled)
        return ReportRow(
            config=f"clustering/threshold={threshold:g}",
            pair_count=None,
            pair_recall=None,
            pair_precision=None,
            pairwise_recall=cm.pairwise_recall,
            pairwise_precision=cm.pairwise_precision,
        )


def _runner_for(cfg: PipelineConfig, data: SyntheticData, k_max: int | None = None) -> ConsensusRunner:
    train_cfg = TrainConfig(**{**cfg.train.__dict__, "seed": derive_seed(cfg.seed, "train")})
    return ConsensusRunner(
        data=data,
        k=cfg.k,
        threshold=cfg.threshold,
        train_cfg=train_cfg,
        max_cluster_size=cfg.propagation.max_cluster_size,
        step=cfg.propagation.step,
        keep_singletons=cfg.propagation.keep_singletons,
        vote_similarity_threshold=cfg.vote_similarity_threshold,
        workers=cfg.workers,
        k_max=k_max,
    )


def ablation_run(
    cfg: PipelineConfig, data: SyntheticData | None = None
) -> list[ReportRow]:
    """All sweep rows requested by cfg.sweep, in a fixed deterministic order:
    clustering baseline, voting by committee count, mediator by input subset,
    mediator by k, then the heterogeneity comparison."""
    cfg.validate()
    if data is None:
        if cfg.synthetic is None:
            raise ConfigError("ablation over file-sourced data needs the data passed in")
        data = generate_synthetic(_seeded_synthetic(cfg))
    n = len(data.committee)
    k_max = max([cfg.k, *cfg.sweep.k_values]) if cfg.sweep.k_values else cfg.k
    runner = _runner_for(cfg, data, k_max=k_max)

    rows: list[ReportRow] = []
    if cfg.include_clustering_row:
        rows.append(runner.clustering_row(cfg.clustering_threshold))

    for c in cfg.sweep.committee_counts:
        tag = f"voting/committee={c}/k={runner.k}"
        if c == 0:
            tag += f"/sim_threshold={cfg.vote_similarity_threshold:g}"
        rows.append(runner.evaluate_selection(tag, runner.run_voting(members=c)))

    for inputs in cfg.sweep.mediator_inputs:
        selected, _ = runner.run_mediator(inputs=inputs)
        rows.append(
            runner.evaluate_selection(
                f"mediator/committee={n}/k={runner.k}/inputs={inputs}", selected
            )
        )

    for k in cfg.sweep.k_values:
        selected, _ = runner.run_mediator(k=k)
        rows.append(
            runner.evaluate_selection(
                f"mediator/committee={n}/k={k}/inputs=relationship+affinity+distribution",
                selected,
            )
        )

    if cfg.sweep.heterogeneity:
        rows.extend(heterogeneity_rows(cfg))
    return rows


def _seeded_synthetic(cfg: PipelineConfig, mode: str | None = None, seed: int | None = None):
    from dataclasses import replace

    base_seed = cfg.seed if seed is None else seed
    return replace(
        cfg.synthetic,
        seed=derive_seed(base_seed, "generate"),
        committee_mode=mode or cfg.synthetic.committee_mode,
    )


def heterogeneity_rows(cfg: PipelineConfig, seed: int | None = None) -> list[ReportRow]:
    """Voting and mediator rows for a heterogeneous vs homogeneous committee
    built from the same latent samples and seed."""
    if cfg.synthetic is None:
        raise ConfigError("heterogeneity comparison requires synthetic data")
    rows = []
    for mode in (HOMOGENEOUS, HETEROGENEOUS):
        data = generate_synthetic(_seeded_synthetic(cfg, mode=mode, seed=seed))
        runner = _runner_for(cfg, data)
        n = runner.num_committee
        suffix = f"committee={n}/k={runner.k}/mode={mode}"
        if seed is not None:
            suffix += f"/seed={seed}"
        rows.append(runner.evaluate_selection(f"voting/{suffix}", runner.run_voting()))
        selected, _ = runner.run_mediator()
        rows.append(runner.evaluate_selection(f"mediator/{suffix}", selected))
    return rows


REPORT_HEADER = (
    "config,pair_count,pair_recall,pair_precision,pairwise_recall,pairwise_precision"
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_report(rows: list[ReportRow], csv_path, json_path=None) -> None:
    """The report CSV (and optional JSON mirror); byte-deterministic."""
    lines = [REPORT_HEADER]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if json_path is not None:
        payload = [
            {k: (None if v is None else v) for k, v in row._asdict().items()}
            for row in rows
        ]
        Path(json_path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def read_report(csv_path) -> list[ReportRow]:
    lines = Path(csv_path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValidationError(f"unexpected report header in {csv_path}")
    rows = []
    for line in lines[1:]:
        cfg, count, pr, pp, cr, cp = line.split(",")
        rows.append(ReportRow(
            config=cfg,
            pair_count=int(count) if count else None,
            pair_recall=float(pr) if pr else None,
            pair_precision=float(pp) if pp else None,
            pairwise_recall=float(cr),
            pairwise_precision=float(cp),
        ))
    return rows


def heterogeneity_comparison(cfg: PipelineConfig, seeds) -> tuple[float, float, list[ReportRow]]:
    """Mean mediator pairwise precision for (heterogeneous, homogeneous)
    committees over several seeds, plus all individual rows."""
    rows: list[ReportRow] = []
    hetero, homo = [], []
    for seed in seeds:
        seed_rows = heterogeneity_rows(cfg, seed=seed)
        rows.extend(seed_rows)
        for row in seed_rows:
            if row.config.startswith("mediator/"):
                if f"mode={HETEROGENEOUS}" in row.config:
                    hetero.append(row.pairwise_precision)
                else:
                    homo.append(row.pairwise_precision)
    return float(np.mean(hetero)), float(np.mean(homo)), rows
