"""Embedding sets, ground truth, and the synthetic committee generator.

The generator emulates a heterogeneous committee without training any
models: one clean base view of Gaussian identity clusters on the unit
sphere, plus N perturbed views of the same latent samples. Each committee
view is a random rotation (strength in radians) composed with additive
Gaussian noise. A homogeneous committee shares a single rotation across
members so that only their noise draws differ.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import ConfigError, UnknownIdError, ValidationError

log = logging.getLogger(__name__)

HETEROGENEOUS = "heterogeneous"
HOMOGENEOUS = "homogeneous"

# Per-member scale factors for rotation strength and view noise span this
# range (linearly) in a heterogeneous committee; a homogeneous committee
# pins every member to 1.0.
_HETERO_SPREAD = (0.5, 1.5)


def _as_row_ids(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.uint64)
    if arr.ndim != 1:
        raise ValidationError("ids must be one-dimensional")
    return arr


@dataclass
class EmbeddingSet:
    """Sample ids plus one row vector per sample.

    ids are unique and sorted ascending; every row is finite with nonzero
    Euclidean norm. Vectors are stored unnormalized, cosine similarity
    normalizes on the fly.
    """

    ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.ids = _as_row_ids(self.ids)
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2:
            raise ValidationError("vectors must be a 2-D matrix")
        if len(self.ids) != self.vectors.shape[0]:
            raise ValidationError(
                f"{len(self.ids)} ids for {self.vectors.shape[0]} vector rows"
            )
        if len(self.ids) != len(np.unique(self.ids)):
            raise ValidationError("ids contain duplicates")
        if np.any(np.diff(self.ids.astype(np.int64)) < 0):
            raise ValidationError("ids must be sorted ascending")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("vectors contain non-finite entries")
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if np.any(norms == 0.0):
            raise ValidationError("vectors contain a zero-norm row")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row_of(self, sample_id) -> int:
        """Row index of a sample id; raises UnknownIdError if absent."""
        pos = int(np.searchsorted(self.ids, np.uint64(sample_id)))
        if pos >= len(self.ids) or self.ids[pos] != np.uint64(sample_id):
            raise UnknownIdError(f"sample id {sample_id} not in embedding set")
        return pos

    def rows_of(self, sample_ids) -> np.ndarray:
        """Vectorized row lookup for an array of ids."""
        query = np.asarray(sample_ids, dtype=np.uint64)
        pos = np.searchsorted(self.ids, query)
        pos = np.minimum(pos, len(self.ids) - 1)
        if not np.all(self.ids[pos] == query):
            missing = query[self.ids[pos] != query]
            raise UnknownIdError(f"sample id {missing.flat[0]} not in embedding set")
        return pos

    def normalized(self) -> np.ndarray:
        """Unit-norm rows in float64."""
        v = self.vectors.astype(np.float64)
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def subset(self, sample_ids) -> "EmbeddingSet":
        keep = np.sort(np.asarray(sample_ids, dtype=np.uint64))
        rows = self.rows_of(keep)
        return EmbeddingSet(ids=keep, vectors=self.vectors[rows].copy())


@dataclass
class GroundTruth:
    """Identity index per sample; labels form a contiguous 0..I-1 range."""

    ids: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.ids = _as_row_ids(self.ids)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.ids) != len(self.labels):
            raise ValidationError("ids and labels length mismatch")
        if len(self.ids) != len(np.unique(self.ids)):
            raise ValidationError("duplicate ids in ground truth")
        if np.any(np.diff(self.ids.astype(np.int64)) < 0):
            raise ValidationError("ground truth ids must be sorted ascending")
        if len(self.labels) and (
            self.labels.min() < 0
            or len(np.unique(self.labels)) != self.labels.max() + 1
        ):
            raise ValidationError("labels must form a contiguous range from 0")

    @property
    def num_identities(self) -> int:
        return 0 if len(self.labels) == 0 else int(self.labels.max()) + 1

    def label_of(self, sample_id) -> int:
        pos = int(np.searchsorted(self.ids, np.uint64(sample_id)))
        if pos >= len(self.ids) or self.ids[pos] != np.uint64(sample_id):
            raise UnknownIdError(f"sample id {sample_id} not in ground truth")
        return int(self.labels[pos])

    def labels_of(self, sample_ids) -> np.ndarray:
        query = np.asarray(sample_ids, dtype=np.uint64)
        pos = np.searchsorted(self.ids, query)
        pos = np.minimum(pos, len(self.ids) - 1)
        if not np.all(self.ids[pos] == query):
            missing = query[self.ids[pos] != query]
            raise UnknownIdError(f"sample id {missing.flat[0]} not in ground truth")
        return self.labels[pos]

    def subset(self, sample_ids) -> "GroundTruth":
        """Restrict to a universe of ids, remapping labels to stay contiguous."""
        keep = np.sort(np.asarray(sample_ids, dtype=np.uint64))
        pos = np.searchsorted(self.ids, keep)
        pos = np.minimum(pos, len(self.ids) - 1)
        if not np.all(self.ids[pos] == keep):
            raise UnknownIdError("subset ids not all present in ground truth")
        raw = self.labels[pos]
        _, remapped = np.unique(raw, return_inverse=True)
        return GroundTruth(ids=keep, labels=remapped)


@dataclass
class Split:
    """Partition of the sample ids into a labeled and an unlabeled part."""

    labeled_ids: np.ndarray
    unlabeled_ids: np.ndarray

    def __post_init__(self):
        self.labeled_ids = np.sort(_as_row_ids(self.labeled_ids))
        self.unlabeled_ids = np.sort(_as_row_ids(self.unlabeled_ids))
        if np.intersect1d(self.labeled_ids, self.unlabeled_ids).size:
            raise ValidationError("labeled and unlabeled ids overlap")


@dataclass
class SyntheticConfig:
    """Knobs for the synthetic committee benchmark.

    samples_per_identity may be a single count or an inclusive (min, max)
    range for imbalanced identities. labeled_identities defaults to roughly
    one eleventh of num_identities (an 1:10 labeled:unlabeled split by
    identity), never less than one.
    """

    num_identities: int = 110
    samples_per_identity: int | tuple[int, int] = 50
    dim: int = 16
    intra_class_sigma: float = 0.12
    num_committee: int = 8
    view_rotation_angle: float = 0.35
    view_noise_sigma: float = 0.06
    seed: int = 0
    labeled_identities: int | None = None
    committee_mode: str = HETEROGENEOUS

    def resolved_labeled_identities(self) -> int:
        if self.labeled_identities is not None:
            return self.labeled_identities
        return max(1, round(self.num_identities / 11))

    def samples_range(self) -> tuple[int, int]:
        if isinstance(self.samples_per_identity, tuple):
            return self.samples_per_identity
        return (self.samples_per_identity, self.samples_per_identity)

    def validate(self):
        if self.num_identities < 2:
            raise ConfigError(f"num_identities must be >= 2, got {self.num_identities}")
        lo, hi = self.samples_range()
        if lo < 1 or hi < lo:
            raise ConfigError(
                f"samples_per_identity must be >= 1 (got {self.samples_per_identity})"
            )
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        if self.num_committee < 0:
            raise ConfigError(f"num_committee must be >= 0, got {self.num_committee}")
        if self.intra_class_sigma < 0:
            raise ConfigError(f"intra_class_sigma must be >= 0, got {self.intra_class_sigma}")
        if self.view_rotation_angle < 0:
            raise ConfigError(f"view_rotation_angle must be >= 0, got {self.view_rotation_angle}")
        if self.view_noise_sigma < 0:
            raise ConfigError(f"view_noise_sigma must be >= 0, got {self.view_noise_sigma}")
        if self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed}")
        labeled = self.resolved_labeled_identities()
        if not (1 <= labeled < self.num_identities):
            raise ConfigError(
                f"labeled_identities must lie in [1, num_identities), got {labeled}"
            )
        if self.committee_mode not in (HETEROGENEOUS, HOMOGENEOUS):
            raise ConfigError(f"committee_mode must be heterogeneous or homogeneous, got {self.committee_mode!r}")


class SyntheticData(NamedTuple):
    base: EmbeddingSet
    committee: list[EmbeddingSet]
    truth: GroundTruth
    split: Split


def random_rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray | None:
    """Random orthogonal map of given strength, None when angle == 0.

    Draws a uniform rotation by QR of a Gaussian matrix, then shrinks it
    toward the identity so that its largest planar rotation angle equals
    `angle` radians.
    """
    if angle == 0.0:
        return None
    g = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    s = scipy.linalg.logm(q)
    s = np.real(s)
    s = (s - s.T) / 2.0  # kill numerical asymmetry, keep the skew part
    max_angle = np.linalg.norm(s, 2)
    if max_angle == 0.0:
        return None
    return scipy.linalg.expm((angle / max_angle) * s)


def _member_scales(cfg: SyntheticConfig) -> np.ndarray:
    n = cfg.num_committee
    if n == 0:
        return np.zeros(0)
    if cfg.committee_mode == HOMOGENEOUS or n == 1:
        return np.ones(n)
    return np.linspace(_HETERO_SPREAD[0], _HETERO_SPREAD[1], n)


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticData:
    """Deterministic synthetic benchmark: base view, committee views, truth, split.

    Identity means are uniform on the unit sphere; samples are mean plus
    isotropic Gaussian noise, renormalized. The labeled/unlabeled split is
    by identity, so no identity appears on both sides.
    """
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(4 + 2 * cfg.num_committee)
    means_rng = np.random.default_rng(children[0])
    counts_rng = np.random.default_rng(children[1])
    sample_rng = np.random.default_rng(children[2])
    shared_rot_rng = np.random.default_rng(children[3])

    n_ident = cfg.num_identities
    means = means_rng.standard_normal((n_ident, cfg.dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    lo, hi = cfg.samples_range()
    if lo == hi:
        counts = np.full(n_ident, lo, dtype=np.int64)
    else:
        counts = counts_rng.integers(lo, hi + 1, size=n_ident)

    total = int(counts.sum())
    latents = np.repeat(means, counts, axis=0)
    if cfg.intra_class_sigma > 0:
        latents = latents + cfg.intra_class_sigma * sample_rng.standard_normal(
            (total, cfg.dim)
        )
    latents = latents / np.linalg.norm(latents, axis=1, keepdims=True)
    latents32 = latents.astype(np.float32)

    ids = np.arange(total, dtype=np.uint64)
    labels = np.repeat(np.arange(n_ident, dtype=np.int64), counts)
    truth = GroundTruth(ids=ids.copy(), labels=labels)
    base = EmbeddingSet(ids=ids.copy(), vectors=latents32)

    scales = _member_scales(cfg)
    shared_rotation = None
    if cfg.committee_mode == HOMOGENEOUS and cfg.num_committee > 0:
        shared_rotation = random_rotation(cfg.dim, cfg.view_rotation_angle, shared_rot_rng)

    committee: list[EmbeddingSet] = []
    for i in range(cfg.num_committee):
        rot_rng = np.random.default_rng(children[4 + 2 * i])
        noise_rng = np.random.default_rng(children[5 + 2 * i])
        if cfg.committee_mode == HOMOGENEOUS:
            rotation = shared_rotation
            sigma = cfg.view_noise_sigma
        else:
            rotation = random_rotation(
                cfg.dim, cfg.view_rotation_angle * scales[i], rot_rng
            )
            sigma = cfg.view_noise_sigma * scales[i]
        view = latents if rotation is None else latents @ rotation.T
        if sigma > 0:
            view = view + sigma * noise_rng.standard_normal((total, cfg.dim))
        vectors = latents32.copy() if (rotation is None and sigma == 0) else view.astype(np.float32)
        committee.append(EmbeddingSet(ids=ids.copy(), vectors=vectors))

    n_labeled = cfg.resolved_labeled_identities()
    labeled_mask = labels < n_labeled
    split = Split(labeled_ids=ids[labeled_mask], unlabeled_ids=ids[~labeled_mask])
    log.debug(
        "generated %d samples over %d identities (%d labeled ids, %d unlabeled)",
        total, n_ident, len(split.labeled_ids), len(split.unlabeled_ids),
    )
    return SyntheticData(base=base, committee=committee, truth=truth, split=split)
