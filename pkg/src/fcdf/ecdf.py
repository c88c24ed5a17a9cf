"""Empirical CDF machinery: domain extraction, policy merging, evaluation.

A client first summarizes its local value domain (label set, or per-dimension
feature ranges); the server merges the summaries into one evaluation grid
(the distribution policy) so that every client's CDF is sampled at the same
points and slot-wise aggregation makes sense.

Privacy note: domain summaries travel to the server in plaintext, exactly as
the protocol prescribes, so the server learns label sets and feature ranges
(though never distribution shapes).  This is a known, accepted leak.

Multi-dimensional feature data yields d independent one-dimensional CDFs,
one per dimension, evaluated separately.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, PolicyError, ValidationError

LABEL = "label"
FEATURE = "feature"

DEFAULT_GRID_SIZE = 100


@dataclass(eq=False)
class Dataset:
    """Raw client samples: integer labels, or rows of real-valued features.

    ``class_ids`` tags feature rows with their source class; only the
    partitioner reads it.
    """

    kind: str
    samples: np.ndarray
    client_id: int = 0
    class_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == LABEL:
            self.samples = np.asarray(self.samples, dtype=np.int64)
            if self.samples.ndim != 1:
                raise ValidationError("label samples must be one-dimensional")
        elif self.kind == FEATURE:
            self.samples = np.asarray(self.samples, dtype=np.float64)
            if self.samples.ndim != 2:
                raise ValidationError("feature samples must be rows of equal dimension")
            if self.samples.size and not np.isfinite(self.samples).all():
                raise ValidationError("feature samples contain NaN or infinity")
            if self.class_ids is not None:
                self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
                if self.class_ids.shape != (len(self.samples),):
                    raise ValidationError("class_ids length does not match samples")
        else:
            raise ValidationError(f"unknown dataset kind {self.kind!r}")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def n_dims(self) -> int:
        return 1 if self.kind == LABEL else self.samples.shape[1]


@dataclass(eq=False)
class DomainSummary:
    """What a client reveals about its domain: label set, or (min, max) ranges."""

    kind: str
    labels: np.ndarray | None = None
    ranges: np.ndarray | None = None  # shape (d, 2)

    @property
    def n_dims(self) -> int:
        return 1 if self.kind == LABEL else len(self.ranges)


@dataclass(eq=False)
class DistributionPolicy:
    """The merged evaluation grid: one strictly increasing axis per dimension."""

    kind: str
    grids: tuple

    def __post_init__(self):
        self.grids = tuple(np.asarray(g) for g in self.grids)
        if not self.grids:
            raise ValidationError("policy needs at least one dimension")
        for g in self.grids:
            if g.ndim != 1 or len(g) < 1:
                raise ValidationError("each policy grid needs at least one point")
            if (np.diff(g) <= 0).any():
                raise ValidationError("policy grids must be strictly increasing")
        if self.kind == LABEL:
            if len(self.grids) != 1 or self.grids[0].dtype.kind != "i":
                raise ValidationError("label policies hold one integer grid")

    @property
    def n_dims(self) -> int:
        return len(self.grids)

    @property
    def total_points(self) -> int:
        return sum(len(g) for g in self.grids)

    def __eq__(self, other):
        return (
            isinstance(other, DistributionPolicy)
            and self.kind == other.kind
            and len(self.grids) == len(other.grids)
            and all(np.array_equal(a, b) for a, b in zip(self.grids, other.grids))
        )


@dataclass(eq=False)
class Ecdf:
    """Cumulative values on a policy grid, one vector per dimension.

    ``sample_count`` is the evaluating dataset's size for sample-derived
    CDFs (whose values are then exact multiples of 1/n), and None for
    derived ones (averages, decrypted aggregates).
    """

    policy: DistributionPolicy
    values: tuple
    sample_count: int | None = None

    def __post_init__(self):
        self.values = tuple(np.asarray(v, dtype=np.float64) for v in self.values)
        if len(self.values) != self.policy.n_dims:
            raise ValidationError("one value vector per policy dimension required")
        for grid, vals in zip(self.policy.grids, self.values):
            if vals.shape != grid.shape:
                raise ValidationError("CDF length does not match its grid")
            if (np.diff(vals) < 0).any():
                raise ValidationError("CDF values must be monotone nondecreasing")
            if vals[0] < 0 or vals[-1] > 1 + 1e-9:
                raise ValidationError("CDF values must lie in [0, 1]")


def local_domain(d: Dataset) -> DomainSummary:
    """Step one of the protocol: the client's plaintext domain summary."""
    if d.n_samples == 0:
        raise ValidationError("cannot summarize an empty dataset")
    if d.kind == LABEL:
        return DomainSummary(LABEL, labels=np.unique(d.samples))
    ranges = np.stack([d.samples.min(axis=0), d.samples.max(axis=0)], axis=1)
    return DomainSummary(FEATURE, ranges=ranges)


def merge_domains(summaries: list[DomainSummary],
                  grid_size: int = DEFAULT_GRID_SIZE) -> DistributionPolicy:
    """Label sets union; feature ranges span a G-point inclusive grid per dim."""
    if not summaries:
        raise PolicyError("need at least one domain summary")
    if grid_size < 1:
        raise ValidationError("grid_size must be at least 1")
    kind = summaries[0].kind
    if any(s.kind != kind for s in summaries):
        raise PolicyError("clients disagree on dataset kind")
    if kind == LABEL:
        union = np.unique(np.concatenate([s.labels for s in summaries]))
        return DistributionPolicy(LABEL, (union,))
    dims = summaries[0].n_dims
    if any(s.n_dims != dims for s in summaries):
        raise PolicyError("clients disagree on feature dimensionality")
    grids = []
    for dim in range(dims):
        lo = min(float(s.ranges[dim, 0]) for s in summaries)
        hi = max(float(s.ranges[dim, 1]) for s in summaries)
        if lo == hi:
            grids.append(np.array([lo]))
        else:
            grids.append(np.linspace(lo, hi, grid_size))
    return DistributionPolicy(FEATURE, tuple(grids))


def policy_summary(policy: DistributionPolicy) -> DomainSummary:
    """View a policy as a domain summary (merge idempotence, tests)."""
    if policy.kind == LABEL:
        return DomainSummary(LABEL, labels=policy.grids[0].copy())
    ranges = np.stack(
        [[float(g[0]) for g in policy.grids], [float(g[-1]) for g in policy.grids]],
        axis=1,
    )
    return DomainSummary(FEATURE, ranges=ranges)


def ecdf_eval(d: Dataset, policy: DistributionPolicy) -> Ecdf:
    """F_j = #{samples <= x_j} / n per grid point, via sort + binary search."""
    if d.n_samples == 0:
        raise ValidationError("cannot evaluate the eCDF of an empty dataset")
    if d.kind != policy.kind:
        raise ContractError(f"dataset kind {d.kind} does not match policy {policy.kind}")
    if d.kind == FEATURE and d.n_dims != policy.n_dims:
        raise ContractError("dataset dimensionality does not match policy")
    n = d.n_samples
    values = []
    for dim, grid in enumerate(policy.grids):
        col = d.samples if d.kind == LABEL else d.samples[:, dim]
        ordered = np.sort(col)
        counts = np.searchsorted(ordered, grid, side="right")
        values.append(counts / n)
    return Ecdf(policy, tuple(values), sample_count=n)


def pdf_from_cdf(e: Ecdf) -> tuple:
    """Per-grid-point probability masses: first differences, p_1 = F_1."""
    return tuple(np.diff(v, prepend=0.0) for v in e.values)


def average_cdfs(cdfs: list[Ecdf]) -> Ecdf:
    """Pointwise arithmetic mean; the plaintext counterpart of the encrypted path."""
    if not cdfs:
        raise ValidationError("need at least one CDF to average")
    policy = cdfs[0].policy
    if any(c.policy != policy for c in cdfs):
        raise ContractError("CDFs evaluated on different policies cannot be averaged")
    k = len(cdfs)
    values = tuple(
        sum(c.values[dim] for c in cdfs) / k for dim in range(policy.n_dims)
    )
    return Ecdf(policy, values, sample_count=None)


def flatten_cdf(e: Ecdf) -> np.ndarray:
    """All dimensions' values concatenated in dimension order."""
    return np.concatenate(e.values)


def ecdf_from_flat(policy: DistributionPolicy, flat: np.ndarray,
                   sample_count: int | None = None) -> Ecdf:
    """Rebuild per-dimension vectors from a flattened CDF."""
    if len(flat) != policy.total_points:
        raise ContractError(
            f"flat CDF has {len(flat)} points, policy wants {policy.total_points}"
        )
    values = []
    offset = 0
    for g in policy.grids:
        values.append(np.asarray(flat[offset : offset + len(g)], dtype=np.float64))
        offset += len(g)
    return Ecdf(policy, tuple(values), sample_count=sample_count)


# --- CSV ingestion (shared with the CLI) ------------------------------------

def read_label_csv(path, client_id: int = 0) -> Dataset:
    """One integer label per line, no header."""
    labels = []
    with open(path, "r", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: not an integer label: {line!r}")
    return Dataset(LABEL, np.array(labels, dtype=np.int64), client_id=client_id)


def write_label_csv(path, d: Dataset):
    with open(path, "w", newline="") as fh:
        for v in d.samples:
            fh.write(f"{int(v)}\n")


def _feature_header(dims: int) -> list:
    return [f"f{i}" for i in range(dims)] + ["class"]


def read_feature_csv(path, client_id: int = 0) -> Dataset:
    """Header ``f0,...,f{d-1},class``, then d floats plus an integer class id."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty feature file")
        if len(header) < 2 or header[-1] != "class" or header[:-1] != _feature_header(len(header) - 1)[:-1]:
            raise ValidationError(f"{path}: malformed feature header {header!r}")
        dims = len(header) - 1
        rows, classes = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dims + 1:
                raise ValidationError(f"{path}:{lineno}: expected {dims + 1} columns")
            try:
                rows.append([float(v) for v in row[:-1]])
                classes.append(int(row[-1]))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: malformed row")
    samples = np.array(rows, dtype=np.float64).reshape(-1, dims)
    return Dataset(FEATURE, samples, client_id=client_id,
                   class_ids=np.array(classes, dtype=np.int64))


def write_feature_csv(path, d: Dataset):
    if d.class_ids is None:
        raise ValidationError("feature CSV requires class ids")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(_feature_header(d.n_dims)) + "\n")
        for row, cid in zip(d.samples, d.class_ids):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(cid)}\n")
