"""Data setups for the two skew experiments, plus a synthetic feature source.

Label skew: per class, client proportions drawn from a symmetric Dirichlet
and converted to exact counts by largest-remainder rounding, so the clients
partition the input exactly (disjoint cover, property-tested).

Feature skew: classes are split round-robin into per-client pools; each
client fills ``skew_fraction`` of its quota from its pool and the rest from
the other classes.  In IID mode every client draws from the same shared pool
(group 0), which makes the client distributions coincide.  All draws come
from one global without-replacement pool, so outputs stay pairwise disjoint.

The synthetic feature generator stands in for an external feature extractor:
isotropic Gaussian blobs with one uniformly placed mean per class.  Real
extractor output can be supplied instead through the same CSV schema.

Other skew families (same-label/different-features, quantity skew, temporal
skew) are out of scope; the Dataset/PartitionSpec surface is the natural
extension point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ecdf import Dataset, FEATURE, LABEL
from .errors import PartitionError, ValidationError


@dataclass
class PartitionSpec:
    k: int
    beta: float = 0.1
    skew_fraction: float = 0.75
    per_client_size: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"need at least one client, got k={self.k}")
        if self.beta <= 0:
            raise ValidationError(f"Dirichlet concentration must be positive, got {self.beta}")
        if not 0 <= self.skew_fraction <= 1:
            raise ValidationError(f"skew_fraction must lie in [0, 1], got {self.skew_fraction}")
        if self.per_client_size < 1:
            raise ValidationError("per_client_size must be at least 1")


@dataclass
class Partition:
    """Per-client datasets plus the source row indices backing each of them."""

    datasets: list
    indices: list


def _largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing exactly to total, closest to proportions*total."""
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_label_partition(labels: Dataset, spec: PartitionSpec) -> Partition:
    """Assign each class's samples to clients by Dirichlet(beta) proportions.

    A client may legitimately end up with zero samples of a class (or even
    zero samples overall) under small beta; that is the point of the setup.
    """
    if labels.kind != LABEL:
        raise ValidationError("dirichlet_label_partition expects a label dataset")
    if labels.n_samples == 0:
        raise ValidationError("cannot partition an empty dataset")
    rng = np.random.default_rng(spec.seed)
    per_client = [[] for _ in range(spec.k)]
    for cls in np.unique(labels.samples):
        rows = np.flatnonzero(labels.samples == cls)
        rng.shuffle(rows)
        proportions = rng.dirichlet(np.full(spec.k, spec.beta))
        counts = _largest_remainder_counts(proportions, len(rows))
        offset = 0
        for client, count in enumerate(counts):
            per_client[client].extend(rows[offset : offset + count])
            offset += count
    indices = [np.sort(np.array(rows, dtype=np.int64)) for rows in per_client]
    datasets = [
        Dataset(LABEL, labels.samples[rows], client_id=i)
        for i, rows in enumerate(indices)
    ]
    return Partition(datasets, indices)


def _starved_class(class_ids: np.ndarray, candidates: np.ndarray,
                   classes: np.ndarray) -> int:
    """The candidate class with the fewest rows still available."""
    remaining = {int(c): 0 for c in classes}
    for c in class_ids[candidates]:
        remaining[int(c)] += 1
    return min(remaining, key=lambda c: (remaining[c], c))


def feature_skew_partition(features: Dataset, spec: PartitionSpec,
                           iid: bool = False) -> Partition:
    """Fixed-size client datasets with class-concentrated (or shared) pools."""
    if features.kind != FEATURE:
        raise ValidationError("feature_skew_partition expects a feature dataset")
    if features.class_ids is None:
        raise ValidationError("feature dataset lacks class ids")
    rng = np.random.default_rng(spec.seed)
    classes = np.unique(features.class_ids)
    groups = [classes[g :: spec.k] for g in range(spec.k)]
    n_own = int(round(spec.skew_fraction * spec.per_client_size))
    n_out = spec.per_client_size - n_own
    available = np.ones(features.n_samples, dtype=bool)
    indices = []
    for client in range(spec.k):
        pool = groups[0] if iid else groups[client]
        others = np.setdiff1d(classes, pool)
        in_pool = np.isin(features.class_ids, pool)
        own_quota, out_quota = n_own, n_out
        if len(others) == 0:  # k=1: no other classes exist to draw from
            own_quota, out_quota = n_own + n_out, 0
        chosen = []
        for want, mask, member in ((own_quota, in_pool, pool),
                                   (out_quota, ~in_pool, others)):
            if want == 0:
                continue
            candidates = np.flatnonzero(available & mask)
            if len(candidates) < want:
                starved = _starved_class(features.class_ids, candidates, member)
                raise PartitionError(
                    f"client {client} needs {want} samples but only "
                    f"{len(candidates)} remain; class {starved} is starved"
                )
            take = rng.choice(candidates, size=want, replace=False)
            chosen.append(take)
        rows = np.sort(np.concatenate(chosen))
        available[rows] = False
        indices.append(rows)
    datasets = [
        Dataset(
            FEATURE,
            features.samples[rows],
            client_id=i,
            class_ids=features.class_ids[rows],
        )
        for i, rows in enumerate(indices)
    ]
    return Partition(datasets, indices)


def synth_labels(classes: int, per_class: int) -> Dataset:
    """Balanced label pool: every class exactly per_class times."""
    if classes < 1 or per_class < 1:
        raise ValidationError("classes and per_class must be at least 1")
    return Dataset(LABEL, np.repeat(np.arange(classes, dtype=np.int64), per_class))


def synth_features(classes: int, dims: int, per_class: int,
                   separation: float = 3.0, seed: int = 0) -> Dataset:
    """Gaussian blobs: one uniform mean per class in a separation-sized box,
    unit-variance coordinates."""
    if classes < 1 or dims < 1 or per_class < 1:
        raise ValidationError("classes, dims and per_class must be at least 1")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-separation / 2, separation / 2, size=(classes, dims))
    samples = np.concatenate(
        [means[c] + rng.standard_normal((per_class, dims)) for c in range(classes)]
    )
    class_ids = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    return Dataset(FEATURE, samples, class_ids=class_ids)


def write_manifest(path, partition: Partition):
    """client_id -> source row indices, one line per client."""
    with open(path, "w") as fh:
        fh.write("# client_id: row indices into the source dataset\n")
        for i, rows in enumerate(partition.indices):
            fh.write(f"client_{i}: {','.join(str(int(r)) for r in rows)}\n")
