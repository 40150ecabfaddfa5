"""Pipeline configuration: a flat INI file with one section per stage.

Every random choice in a run flows from the single [run] seed through
derive_seed(seed, stage_name), so artifacts are reproducible stage by
stage and stale artifacts can be detected by config hash.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .dataset import HETEROGENEOUS, HOMOGENEOUS, SyntheticConfig
from .errors import ConfigError, MissingInputError
from .mediator import TrainConfig
from .propagation import DEFAULT_MAX_CLUSTER, DEFAULT_STEP

MEDIATOR_INPUT_CHOICES = (
    "relationship",
    "relationship+affinity",
    "relationship+affinity+distribution",
)


def derive_seed(seed: int, stage: str) -> int:
    """Per-stage RNG seed: stage name hashed into the global seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def config_hash(payload) -> str:
    """Stable short hash of a JSON-serializable payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class FileSource:
    """External embedding/label inputs instead of the synthetic generator."""

    base: str
    committee: list[str]
    labels: str
    split: str

    def validate(self):
        for label, path in [("base", self.base), ("labels", self.labels), ("split", self.split)]:
            if not Path(path).is_file():
                raise MissingInputError(f"data.{label} file not found: {path}")
        for path in self.committee:
            if not Path(path).is_file():
                raise MissingInputError(f"data.committee file not found: {path}")


@dataclass
class PropagationConfig:
    max_cluster_size: int = DEFAULT_MAX_CLUSTER
    step: float = DEFAULT_STEP
    keep_singletons: bool = True
    soft_depth: int = 0
    soft_decay: float = 0.5

    def validate(self):
        if self.max_cluster_size < 1:
            raise ConfigError(f"max_cluster_size must be >= 1, got {self.max_cluster_size}")
        if not (0.0 < self.step < 1.0):
            raise ConfigError(f"step must be in (0, 1), got {self.step}")
        if self.soft_depth < 0:
            raise ConfigError(f"soft_depth must be >= 0, got {self.soft_depth}")
        if not (0.0 < self.soft_decay <= 1.0):
            raise ConfigError(f"soft_decay must be in (0, 1], got {self.soft_decay}")


@dataclass
class SweepConfig:
    """Which ablation rows the evaluate stage appends to the report."""

    committee_counts: tuple[int, ...] = ()
    mediator_inputs: tuple[str, ...] = ()
    k_values: tuple[int, ...] = ()
    heterogeneity: bool = False

    def validate(self, num_committee: int):
        for c in self.committee_counts:
            if not (0 <= c <= num_committee):
                raise ConfigError(
                    f"sweep committee count {c} outside [0, {num_committee}]"
                )
        for inputs in self.mediator_inputs:
            if inputs not in MEDIATOR_INPUT_CHOICES:
                raise ConfigError(
                    f"unknown mediator input subset {inputs!r}; "
                    f"choices: {', '.join(MEDIATOR_INPUT_CHOICES)}"
                )
        for k in self.k_values:
            if k < 1:
                raise ConfigError(f"sweep k must be >= 1, got {k}")

    def is_empty(self) -> bool:
        return not (
            self.committee_counts or self.mediator_inputs or self.k_values or self.heterogeneity
        )


@dataclass
class PipelineConfig:
    synthetic: SyntheticConfig | None = None
    files: FileSource | None = None
    k: int = 20
    threshold: float = 0.96
    train: TrainConfig = field(default_factory=TrainConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    clustering_threshold: float = 0.75
    vote_similarity_threshold: float = 0.85
    include_clustering_row: bool = True
    seed: int = 7
    out_dir: str = "out"
    workers: int = 1

    def validate(self):
        if (self.synthetic is None) == (self.files is None):
            raise ConfigError("exactly one data source (synthetic or files) required")
        if self.synthetic is not None:
            self.synthetic.validate()
        else:
            self.files.validate()
        if self.k < 1:
            raise ConfigError(f"graph.k must be >= 1, got {self.k}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ConfigError(f"mediator.threshold must be in [0, 1], got {self.threshold}")
        self.train.validate()
        self.propagation.validate()
        self.sweep.validate(self.num_committee())
        if not (-1.0 <= self.clustering_threshold <= 1.0):
            raise ConfigError(
                f"clustering_threshold must be in [-1, 1], got {self.clustering_threshold}"
            )
        if not (0.0 <= self.vote_similarity_threshold <= 1.0):
            raise ConfigError(
                "vote_similarity_threshold must be in [0, 1], "
                f"got {self.vote_similarity_threshold}"
            )
        if self.sweep.heterogeneity and self.synthetic is None:
            raise ConfigError("sweep_heterogeneity requires a synthetic data source")
        if self.workers < 1:
            raise ConfigError(f"run.workers must be >= 1, got {self.workers}")
        if self.seed < 0:
            raise ConfigError(f"run.seed must be nonnegative, got {self.seed}")

    def num_committee(self) -> int:
        if self.synthetic is not None:
            return self.synthetic.num_committee
        return len(self.files.committee)

    def data_payload(self) -> dict:
        if self.synthetic is not None:
            payload = asdict(self.synthetic)
            payload["samples_per_identity"] = list(self.synthetic.samples_range())
            payload["labeled_identities"] = self.synthetic.resolved_labeled_identities()
            return {"synthetic": payload, "seed": self.seed}
        return {"files": asdict(self.files), "seed": self.seed}


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _to_int_list(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(tok) for tok in raw.split(","))


def _to_str_list(raw: str) -> tuple[str, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(tok.strip() for tok in raw.split(","))


def _to_samples(raw: str):
    if "-" in raw:
        lo, hi = raw.split("-", 1)
        return (int(lo), int(hi))
    return int(raw)


_KNOWN_KEYS = {
    "data": {
        "source", "num_identities", "samples_per_identity", "dim",
        "intra_class_sigma", "num_committee", "view_rotation_angle",
        "view_noise_sigma", "labeled_identities", "committee_mode",
        "base", "committee", "labels", "split",
    },
    "graph": {"k"},
    "mediator": {
        "threshold", "learning_rate", "epochs", "lr_decay", "decay_after_epoch",
        "batch_size", "negative_downsample",
    },
    "propagation": {
        "max_cluster_size", "step", "keep_singletons", "soft_depth", "soft_decay",
    },
    "evaluation": {
        "sweep_committee_counts", "sweep_mediator_inputs", "sweep_k",
        "sweep_heterogeneity", "clustering_threshold", "vote_similarity_threshold",
        "include_clustering_row",
    },
    "run": {"seed", "out", "workers"},
}


def load_config(path) -> PipelineConfig:
    """Parse and validate an INI pipeline config."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    source = _get(parser, "data", "source", str, "synthetic").strip().lower()
    synthetic = None
    files = None
    if source == "synthetic":
        synthetic = SyntheticConfig(
            num_identities=_get(parser, "data", "num_identities", int, 110),
            samples_per_identity=_get(parser, "data", "samples_per_identity", _to_samples, 50),
            dim=_get(parser, "data", "dim", int, 16),
            intra_class_sigma=_get(parser, "data", "intra_class_sigma", float, 0.12),
            num_committee=_get(parser, "data", "num_committee", int, 8),
            view_rotation_angle=_get(parser, "data", "view_rotation_angle", float, 0.35),
            view_noise_sigma=_get(parser, "data", "view_noise_sigma", float, 0.06),
            seed=0,  # replaced by the derived generate-stage seed at run time
            labeled_identities=_get(parser, "data", "labeled_identities", int, None),
            committee_mode=_get(parser, "data", "committee_mode", str, HETEROGENEOUS),
        )
        if synthetic.committee_mode not in (HETEROGENEOUS, HOMOGENEOUS):
            raise ConfigError(
                f"[data] committee_mode: unknown mode {synthetic.committee_mode!r}"
            )
    elif source == "files":
        files = FileSource(
            base=_get(parser, "data", "base", str, ""),
            committee=list(_get(parser, "data", "committee", _to_str_list, ())),
            labels=_get(parser, "data", "labels", str, ""),
            split=_get(parser, "data", "split", str, ""),
        )
        if not files.base or not files.labels or not files.split:
            raise ConfigError("[data] source=files requires base, labels and split paths")
    else:
        raise ConfigError(f"[data] source must be synthetic or files, got {source!r}")

    train = TrainConfig(
        learning_rate=_get(parser, "mediator", "learning_rate", float, 0.05),
        epochs=_get(parser, "mediator", "epochs", int, 4),
        lr_decay=_get(parser, "mediator", "lr_decay", float, 0.1),
        decay_after_epoch=_get(parser, "mediator", "decay_after_epoch", int, 3),
        batch_size=_get(parser, "mediator", "batch_size", int, 256),
        negative_downsample=_get(parser, "mediator", "negative_downsample", float, None),
    )
    if train.negative_downsample == 0:
        train.negative_downsample = None

    propagation = PropagationConfig(
        max_cluster_size=_get(parser, "propagation", "max_cluster_size", int, DEFAULT_MAX_CLUSTER),
        step=_get(parser, "propagation", "step", float, DEFAULT_STEP),
        keep_singletons=_get(parser, "propagation", "keep_singletons", _to_bool, True),
        soft_depth=_get(parser, "propagation", "soft_depth", int, 0),
        soft_decay=_get(parser, "propagation", "soft_decay", float, 0.5),
    )

    sweep = SweepConfig(
        committee_counts=_get(parser, "evaluation", "sweep_committee_counts", _to_int_list, ()),
        mediator_inputs=_get(parser, "evaluation", "sweep_mediator_inputs", _to_str_list, ()),
        k_values=_get(parser, "evaluation", "sweep_k", _to_int_list, ()),
        heterogeneity=_get(parser, "evaluation", "sweep_heterogeneity", _to_bool, False),
    )

    cfg = PipelineConfig(
        synthetic=synthetic,
        files=files,
        k=_get(parser, "graph", "k", int, 20),
        threshold=_get(parser, "mediator", "threshold", float, 0.96),
        train=train,
        propagation=propagation,
        sweep=sweep,
        clustering_threshold=_get(parser, "evaluation", "clustering_threshold", float, 0.75),
        vote_similarity_threshold=_get(
            parser, "evaluation", "vote_similarity_threshold", float, 0.85
        ),
        include_clustering_row=_get(parser, "evaluation", "include_clustering_row", _to_bool, True),
        seed=_get(parser, "run", "seed", int, 7),
        out_dir=_get(parser, "run", "out", str, "out"),
        workers=_get(parser, "run", "workers", int, 1),
    )
    cfg.validate()
    return cfg


def default_config_path() -> Path:
    return Path(__file__).parent / "configs" / "default.ini"


def smoke_config_path() -> Path:
    return Path(__file__).parent / "configs" / "smoke.ini"
