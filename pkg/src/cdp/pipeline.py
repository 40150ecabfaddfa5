"""Staged pipeline: generate -> graph -> features -> train -> select ->
propagate -> evaluate.

Every stage writes its artifacts plus a stage.json recording the config
hash it was produced under. Downstream stages recompute the hash they
expect from the current config and refuse to consume stale artifacts, so
intermediates can be deleted and selectively rebuilt without silently
mixing runs. Stages are pure functions of their on-disk inputs; rerunning
one with an unchanged config rewrites byte-identical artifacts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .config import PipelineConfig, config_hash, derive_seed
from .dataset import SyntheticData, generate_synthetic
from .errors import MissingInputError, StaleArtifactError
from .evaluation import ReportRow, _runner_for, ablation_run, cluster_metrics, pair_metrics, write_report
from .features import assemble_feature_matrix
from .knn import build_knn_graph, candidate_pairs
from .mediator import (
    MODEL_VERSION,
    TrainConfig,
    load_model,
    predict,
    save_model,
    select_pairs,
    train_mediator,
    write_first_layer_csv,
)
from .propagation import ConsensusGraph, propagate, soft_labels

log = logging.getLogger(__name__)

STAGES = ("generate", "graph", "features", "train", "select", "propagate", "evaluate")


def expected_hashes(cfg: PipelineConfig) -> dict[str, str]:
    """Config hash of every stage, chained so downstream hashes cover
    everything that can influence their artifacts."""
    train_payload = {
        k: v for k, v in asdict(cfg.train).items() if k != "seed"
    }
    train_payload["derived_seed"] = derive_seed(cfg.seed, "train")
    h: dict[str, str] = {}
    h["generate"] = config_hash({
        "stage": "generate", "data": cfg.data_payload(),
        "embedding_version": io.EMBEDDING_VERSION,
    })
    h["graph"] = config_hash({"stage": "graph", "upstream": h["generate"], "k": cfg.k})
    h["features"] = config_hash({
        "stage": "features", "upstream": h["graph"],
        "feature_version": io.FEATURE_VERSION,
    })
    h["train"] = config_hash({
        "stage": "train", "upstream": h["features"], "train": train_payload,
        "model_version": MODEL_VERSION,
    })
    h["select"] = config_hash({
        "stage": "select", "upstream": h["train"], "threshold": cfg.threshold,
    })
    h["propagate"] = config_hash({
        "stage": "propagate", "upstream": h["select"],
        "propagation": asdict(cfg.propagation),
    })
    h["evaluate"] = config_hash({
        "stage": "evaluate", "upstream": h["propagate"],
        "sweep": asdict(cfg.sweep),
        "clustering_threshold": cfg.clustering_threshold,
        "vote_similarity_threshold": cfg.vote_similarity_threshold,
        "include_clustering_row": cfg.include_clustering_row,
    })
    return h


def _stage_dir(out_root, stage: str) -> Path:
    return Path(out_root) / stage


def _write_stage_meta(out_root, stage: str, hashes: dict[str, str], upstream: str | None):
    meta = {"stage": stage, "config_hash": hashes[stage]}
    if upstream:
        meta["inputs"] = {upstream: hashes[upstream]}
    path = _stage_dir(out_root, stage) / "stage.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_stage(out_root, stage: str, hashes: dict[str, str]):
    meta_path = _stage_dir(out_root, stage) / "stage.json"
    if not meta_path.is_file():
        raise MissingInputError(
            f"stage '{stage}' has not been run (missing {meta_path})"
        )
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("config_hash") != hashes[stage]:
        raise StaleArtifactError(
            f"stage '{stage}' artifacts were produced under a different config "
            f"({meta.get('config_hash')} != {hashes[stage]}); rerun it"
        )


def _dataset_paths(out_root, num_committee: int) -> dict:
    d = _stage_dir(out_root, "generate")
    return {
        "base": d / "base.cdpe",
        "committee": [d / f"committee_{i}.cdpe" for i in range(num_committee)],
        "labels": d / "labels.csv",
        "split": d / "split.csv",
    }


def load_dataset_artifacts(out_root, cfg: PipelineConfig) -> SyntheticData:
    paths = _dataset_paths(out_root, cfg.num_committee())
    base = io.load_embeddings(paths["base"])
    committee = [io.load_embeddings(p) for p in paths["committee"]]
    truth = io.load_labels(paths["labels"])
    split = io.load_split(paths["split"])
    return SyntheticData(base=base, committee=committee, truth=truth, split=split)


def run_generate(cfg: PipelineConfig, out_root) -> None:
    hashes = expected_hashes(cfg)
    d = _stage_dir(out_root, "generate")
    d.mkdir(parents=True, exist_ok=True)
    if cfg.synthetic is not None:
        syn = replace(cfg.synthetic, seed=derive_seed(cfg.seed, "generate"))
        data = generate_synthetic(syn)
    else:
        base = io.load_embeddings(cfg.files.base)
        committee = [io.load_embeddings(p) for p in cfg.files.committee]
        truth = io.load_labels(cfg.files.labels)
        split = io.load_split(cfg.files.split)
        data = SyntheticData(base=base, committee=committee, truth=truth, split=split)
    paths = _dataset_paths(out_root, len(data.committee))
    io.save_embeddings(data.base, paths["base"])
    for emb, path in zip(data.committee, paths["committee"]):
        io.save_embeddings(emb, path)
    io.save_labels(data.truth, paths["labels"])
    io.save_split(data.split, paths["split"])
    _write_stage_meta(out_root, "generate", hashes, None)
    log.info("generate: %d samples, %d committee views", data.base.n, len(data.committee))


def _graph_paths(out_root, num_committee: int) -> dict[str, list[Path]]:
    d = _stage_dir(out_root, "graph")
    return {
        "unlabeled": [d / "unlabeled_base.csv"]
        + [d / f"unlabeled_committee_{i}.csv" for i in range(num_committee)],
        "labeled": [d / "labeled_base.csv"]
        + [d / f"labeled_committee_{i}.csv" for i in range(num_committee)],
    }


def run_graph(cfg: PipelineConfig, out_root) -> None:
    hashes = expected_hashes(cfg)
    _require_stage(out_root, "generate", hashes)
    data = load_dataset_artifacts(out_root, cfg)
    d = _stage_dir(out_root, "graph")
    d.mkdir(parents=True, exist_ok=True)
    paths = _graph_paths(out_root, len(data.committee))
    sets = [data.base] + data.committee
    for emb, path in zip(sets, paths["unlabeled"]):
        graph = build_knn_graph(emb.subset(data.split.unlabeled_ids), cfg.k, workers=cfg.workers)
        io.dump_graph_csv(graph, path)
    for emb, path in zip(sets, paths["labeled"]):
        graph = build_knn_graph(emb.subset(data.split.labeled_ids), cfg.k, workers=cfg.workers)
        io.dump_graph_csv(graph, path)
    _write_stage_meta(out_root, "graph", hashes, "generate")
    log.info("graph: built %d k-NN graphs at k=%d", 2 * len(sets), cfg.k)


def run_features(cfg: PipelineConfig, out_root) -> None:
    hashes = expected_hashes(cfg)
    _require_stage(out_root, "generate", hashes)
    _require_stage(out_root, "graph", hashes)
    data = load_dataset_artifacts(out_root, cfg)
    gpaths = _graph_paths(out_root, len(data.committee))
    graphs_u = [io.load_graph_csv(p, k=cfg.k) for p in gpaths["unlabeled"]]
    graphs_l = [io.load_graph_csv(p, k=cfg.k) for p in gpaths["labeled"]]
    sets_u = [s.subset(data.split.unlabeled_ids) for s in [data.base] + data.committee]
    sets_l = [s.subset(data.split.labeled_ids) for s in [data.base] + data.committee]

    d = _stage_dir(out_root, "features")
    d.mkdir(parents=True, exist_ok=True)
    pairs_u = candidate_pairs(graphs_u[0])
    io.save_pair_features(pairs_u, assemble_feature_matrix(pairs_u, graphs_u, sets_u),
                          d / "candidates.cdpf")
    pairs_l = candidate_pairs(graphs_l[0])
    x_l = assemble_feature_matrix(pairs_l, graphs_l, sets_l)
    la = data.truth.labels_of(pairs_l[:, 0])
    lb = data.truth.labels_of(pairs_l[:, 1])
    io.save_pair_features(pairs_l, x_l, d / "training.cdpf")
    targets = (la == lb).astype(np.int64)
    lines = ["a,b,target"] + [
        f"{int(a)},{int(b)},{int(t)}" for (a, b), t in zip(pairs_l, targets)
    ]
    (d / "training_targets.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_stage_meta(out_root, "features", hashes, "graph")
    log.info("features: %d candidate pairs, %d training pairs", len(pairs_u), len(pairs_l))


def _load_training(out_root):
    d = _stage_dir(out_root, "features")
    pairs, x = io.load_pair_features(d / "training.cdpf")
    lines = (d / "training_targets.csv").read_text(encoding="utf-8").splitlines()
    y = np.array([int(line.rsplit(",", 1)[1]) for line in lines[1:]], dtype=np.int64)
    return pairs, x, y


def run_train(cfg: PipelineConfig, out_root) -> None:
    hashes = expected_hashes(cfg)
    _require_stage(out_root, "features", hashes)
    _, x, y = _load_training(out_root)
    train_cfg = TrainConfig(**{**cfg.train.__dict__, "seed": derive_seed(cfg.seed, "train")})
    model = train_mediator(x, y, train_cfg)
    d = _stage_dir(out_root, "train")
    d.mkdir(parents=True, exist_ok=True)
    save_model(model, d / "mediator.cdpm")
    write_first_layer_csv(model, d / "first_layer.csv")
    _write_stage_meta(out_root, "train", hashes, "features")
    log.info("train: final loss %.6f over %d pairs", model.history[-1], len(y))


def run_select(cfg: PipelineConfig, out_root) -> None:
    hashes = expected_hashes(cfg)
    _require_stage(out_root, "features", hashes)
    _require_stage(out_root, "train", hashes)
    model = load_model(_stage_dir(out_root, "train") / "mediator.cdpm")
    pairs, x = io.load_pair_features(_stage_dir(out_root, "features") / "candidates.cdpf")
    selected = select_pairs(pairs, predict(model, x), cfg.threshold)
    d = _stage_dir(out_root, "select")
    d.mkdir(parents=True, exist_ok=True)
    io.save_selected_edges(selected, d / "selected_edges.csv")
    _write_stage_meta(out_root, "select", hashes, "train")
    log.info("select: kept %d of %d candidate pairs at threshold %g",
             len(selected), len(pairs), cfg.threshold)


def run_propagate(cfg: PipelineConfig, out_root) -> None:
    hashes = expected_hashes(cfg)
    _require_stage(out_root, "generate", hashes)
    _require_stage(out_root, "select", hashes)
    data = load_dataset_artifacts(out_root, cfg)
    edges = io.load_selected_edges(_stage_dir(out_root, "select") / "selected_edges.csv")
    graph = ConsensusGraph(nodes=data.split.unlabeled_ids, edges=edges)
    assignment = propagate(
        graph,
        cfg.propagation.max_cluster_size,
        cfg.propagation.step,
        keep_singletons=cfg.propagation.keep_singletons,
    )
    d = _stage_dir(out_root, "propagate")
    d.mkdir(parents=True, exist_ok=True)
    io.save_assignment(assignment, d / "assignments.csv", d / "unassigned.csv")
    soft = soft_labels(assignment, graph, cfg.propagation.soft_depth, cfg.propagation.soft_decay)
    if len(soft.ids):
        io.save_soft_labels(soft, d / "soft_labels.cdpe")
    _write_stage_meta(out_root, "propagate", hashes, "select")
    log.info("propagate: %d labels over %d nodes (%d unassigned)",
             assignment.num_labels, len(assignment.assignments), len(assignment.unlabeled_ids))


def run_evaluate(cfg: PipelineConfig, out_root) -> list[ReportRow]:
    hashes = expected_hashes(cfg)
    for stage in ("generate", "select", "propagate"):
        _require_stage(out_root, stage, hashes)
    data = load_dataset_artifacts(out_root, cfg)
    truth_u = data.truth.subset(data.split.unlabeled_ids)
    edges = io.load_selected_edges(_stage_dir(out_root, "select") / "selected_edges.csv")
    d_prop = _stage_dir(out_root, "propagate")
    assignment = io.load_assignment(d_prop / "assignments.csv", d_prop / "unassigned.csv")

    pm = pair_metrics(np.array([e[:2] for e in edges], dtype=np.uint64).reshape(-1, 2),
                      truth_u, data.split.unlabeled_ids)
    cm = cluster_metrics(assignment, truth_u)
    rows = [ReportRow(
        config="pipeline",
        pair_count=pm.pair_count,
        pair_recall=pm.recall,
        pair_precision=pm.precision,
        pairwise_recall=cm.pairwise_recall,
        pairwise_precision=cm.pairwise_precision,
    )]
    if not cfg.sweep.is_empty() or cfg.include_clustering_row:
        rows.extend(ablation_run(cfg, data=data))

    d = _stage_dir(out_root, "evaluate")
    d.mkdir(parents=True, exist_ok=True)
    write_report(rows, d / "report.csv", d / "report.json")
    _write_stage_meta(out_root, "evaluate", hashes, "propagate")
    log.info("evaluate: wrote %d report rows", len(rows))
    return rows


_RUNNERS = {
    "generate": run_generate,
    "graph": run_graph,
    "features": run_features,
    "train": run_train,
    "select": run_select,
    "propagate": run_propagate,
    "evaluate": run_evaluate,
}


def run_stage(name: str, cfg: PipelineConfig, out_root) -> None:
    _RUNNERS[name](cfg, out_root)


def run_pipeline(cfg: PipelineConfig, out_root, from_stage: str | None = None) -> None:
    """Run all stages in order, optionally starting at from_stage."""
    start = STAGES.index(from_stage) if from_stage else 0
    for name in STAGES[start:]:
        run_stage(name, cfg, out_root)
