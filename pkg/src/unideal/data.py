"""Datasets for the simulator: synthetic cross-domain data, CSV ingestion,
feature subsetting, Dirichlet label skew and per-client train/test splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError, InvalidInputError

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "na", "nan", "null", "none"})


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    n_classes: int
    class_names: tuple[str, ...] = ()
    dropped_rows: int = 0

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidInputError("a dataset needs a non-empty 2-D feature matrix")
        if y.shape != (x.shape[0],):
            raise InvalidInputError("one label per row is required")
        if len(self.feature_names) != x.shape[1]:
            raise InvalidInputError("one name per feature column is required")
        if not np.isfinite(x).all():
            raise InvalidInputError("features contain non-finite values")
        if (y < 0).any() or (y >= self.n_classes).any():
            raise InvalidInputError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClientDataView:
    """A client's slice of a dataset: chosen columns, rows, and a split.

    ``train_idx`` and ``test_idx`` are absolute row indices into the dataset.
    """

    dataset: TabularDataset = field(repr=False)
    feature_idx: np.ndarray
    sample_idx: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    stratified: bool = True

    def __post_init__(self):
        for name in ("feature_idx", "sample_idx", "train_idx", "test_idx"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        d, n = self.dataset.n_features, self.dataset.n_samples
        if self.feature_idx.size == 0 or self.sample_idx.size == 0:
            raise InvalidInputError("a client view needs at least one feature and one sample")
        if self.feature_idx.min() < 0 or self.feature_idx.max() >= d:
            raise InvalidInputError("feature index out of range")
        if self.sample_idx.min() < 0 or self.sample_idx.max() >= n:
            raise InvalidInputError("sample index out of range")
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise InvalidInputError("train and test sets overlap")

    @property
    def n_features(self) -> int:
        return self.feature_idx.size

    def arrays(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = self.dataset.features[np.ix_(rows, self.feature_idx)]
        return np.ascontiguousarray(x), self.dataset.labels[rows]

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.arrays(self.train_idx)

    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.arrays(self.test_idx)


def full_view(ds: TabularDataset, sample_idx: np.ndarray | None = None) -> ClientDataView:
    rows = np.arange(ds.n_samples) if sample_idx is None else np.asarray(sample_idx)
    return ClientDataView(ds, np.arange(ds.n_features), rows)


# -- synthetic cross-domain data ---------------------------------------------


def rotation_matrix(dim: int, angle: float) -> np.ndarray:
    """Rotate every consecutive coordinate pair (0,1), (2,3), ... by ``angle``."""
    m = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    for i in range(0, dim - 1, 2):
        m[i, i], m[i, i + 1] = c, -s
        m[i + 1, i], m[i + 1, i + 1] = s, c
    return m


@dataclass(frozen=True)
class DomainSpec:
    """Shared class-conditional Gaussian latents seen through per-client
    affine maps ``x = A_k z + b_k``."""

    class_means: np.ndarray
    transforms: tuple[np.ndarray, ...]
    shifts: tuple[np.ndarray, ...]
    noise: float = 1.0

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        object.__setattr__(self, "class_means", means)
        if means.ndim != 2 or means.shape[0] < 2:
            raise ConfigurationError("need class means for at least two classes")
        d = means.shape[1]
        if len(self.transforms) != len(self.shifts) or not self.transforms:
            raise ConfigurationError("one transform and one shift per client are required")
        for a, b in zip(self.transforms, self.shifts):
            a = np.asarray(a)
            if a.shape != (d, d) or np.asarray(b).shape != (d,):
                raise ConfigurationError(f"transforms must be {d}x{d} with length-{d} shifts")
            if abs(np.linalg.det(a)) < 1e-12:
                raise ConfigurationError("domain transforms must be invertible")
        if not self.noise > 0:
            raise ConfigurationError("noise scale must be positive")

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @property
    def n_domains(self) -> int:
        return len(self.transforms)

    @classmethod
    def rotated(
        cls,
        n_clients: int,
        dim: int,
        n_classes: int,
        angle_step_deg: float = 90.0,
        separation: float = 2.0,
        noise: float = 1.0,
        seed: int = 0,
    ) -> DomainSpec:
        """Client k sees the latent space rotated by ``k * angle_step_deg``."""
        if dim < 2:
            raise ConfigurationError("rotated domains need at least two dimensions")
        rng = np.random.default_rng(seed)
        means = rng.standard_normal((n_classes, dim))
        means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
        transforms = tuple(rotation_matrix(dim, math.radians(k * angle_step_deg)) for k in range(n_clients))
        shifts = tuple(np.zeros(dim) for _ in range(n_clients))
        return cls(means, transforms, shifts, noise)

    @classmethod
    def identity(cls, n_clients: int, class_means: np.ndarray, noise: float = 1.0) -> DomainSpec:
        d = np.asarray(class_means).shape[1]
        return cls(class_means, tuple(np.eye(d) for _ in range(n_clients)), tuple(np.zeros(d) for _ in range(n_clients)), noise)


def _balanced_labels(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % n_classes)


def sample_domain(spec: DomainSpec, client: int, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    z = spec.class_means[labels] + spec.noise * rng.standard_normal((labels.size, spec.dim))
    return z @ np.asarray(spec.transforms[client]).T + spec.shifts[client]


def synth_cross_domain(spec: DomainSpec, n_clients: int, n_per_client: int, seed: int) -> list[TabularDataset]:
    """One dataset per client with a balanced class prior shared by all."""
    if n_clients < 1 or n_clients > spec.n_domains:
        raise ConfigurationError(f"domain layout has {spec.n_domains} domains, asked for {n_clients} clients")
    if n_per_client < spec.n_classes:
        raise ConfigurationError("need at least one sample per class per client")
    names = tuple(f"x{j}" for j in range(spec.dim))
    out = []
    for k in range(n_clients):
        rng = np.random.default_rng([seed, k])
        y = _balanced_labels(n_per_client, spec.n_classes, rng)
        x = sample_domain(spec, k, y, rng)
        out.append(TabularDataset(x, y, names, spec.n_classes))
    return out


# -- partitioning ------------------------------------------------------------


def feature_subsample(ds: TabularDataset, fraction: float, seed: int) -> ClientDataView:
    """Pick ``round(fraction * d)`` distinct columns (kept in original order)."""
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"feature fraction must lie in (0, 1], got {fraction}")
    n = int(math.floor(fraction * ds.n_features + 0.5))
    if n < 1:
        raise ConfigurationError("feature subsampling would select no features")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(ds.n_features, size=n, replace=False))
    return ClientDataView(ds, idx, np.arange(ds.n_samples))


def _largest_remainder(total: int, props: np.ndarray) -> np.ndarray:
    raw = props * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable order keeps ties deterministic
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_label_skew(labels, alpha: float, n_clients: int, seed: int, max_retries: int = 100) -> list[np.ndarray]:
    """Split sample indices across clients with per-class Dirichlet(alpha)
    proportions. Redraws when some client would end up empty."""
    y = np.asarray(labels, dtype=np.int64)
    if not alpha > 0:
        raise ConfigurationError("Dirichlet alpha must be positive")
    if n_clients < 1:
        raise ConfigurationError("need at least one client")
    if n_clients == 1:
        return [np.arange(y.size)]
    if y.size < n_clients:
        raise ConfigurationError(f"{y.size} samples cannot cover {n_clients} clients")
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    for _ in range(max_retries):
        parts: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(y == c))
            counts = _largest_remainder(idx.size, rng.dirichlet(np.full(n_clients, alpha)))
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(n_clients):
                parts[k].append(idx[bounds[k] : bounds[k + 1]])
        out = [np.sort(np.concatenate(p)) for p in parts]
        if all(o.size for o in out):
            return out
    raise ConfigurationError(f"Dirichlet split left a client empty after {max_retries} draws")


def uniform_partition(n_samples: int, n_clients: int, seed: int) -> list[np.ndarray]:
    """Random near-equal split of row indices."""
    if n_samples < n_clients:
        raise ConfigurationError(f"{n_samples} samples cannot cover {n_clients} clients")
    perm = np.random.default_rng(seed).permutation(n_samples)
    return [np.sort(p) for p in np.array_split(perm, n_clients)]


def train_test_split(view: ClientDataView, test_fraction: float, seed: int) -> ClientDataView:
    """Stratified split of the view's rows.

    The test size is ``round(test_fraction * n)`` overall, shared across classes
    by largest remainder. If any class has a single sample the split falls back
    to unstratified and the returned view has ``stratified=False``.
    """
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test fraction must lie in (0, 1), got {test_fraction}")
    rows = np.asarray(view.sample_idx)
    n = rows.size
    if n < 2:
        raise ConfigurationError("a split needs at least two samples")
    n_test = min(max(int(math.floor(test_fraction * n + 0.5)), 1), n - 1)
    rng = np.random.default_rng(seed)
    y = view.dataset.labels[rows]
    classes, class_counts = np.unique(y, return_counts=True)
    stratified = bool((class_counts >= 2).all())
    if stratified:
        per_class = _largest_remainder(n_test, class_counts / n)
        test_parts, train_parts = [], []
        for c, k in zip(classes, per_class):
            members = rng.permutation(rows[y == c])
            test_parts.append(members[:k])
            train_parts.append(members[k:])
        test = np.concatenate(test_parts)
        train = np.concatenate(train_parts)
    else:
        log.warning("class with a single sample; falling back to an unstratified split")
        perm = rng.permutation(rows)
        test, train = perm[:n_test], perm[n_test:]
    return replace(view, train_idx=np.sort(train), test_idx=np.sort(test), stratified=stratified)


# -- CSV ingestion -----------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    label_column: str
    numeric_columns: tuple[str, ...] = ()
    categorical_columns: tuple[str, ...] = ()


def load_csv_dataset(
    path: str | Path,
    schema: CsvSchema,
    *,
    max_bad_rows: int = 0,
    standardize: bool = True,
    fit_rows: Sequence[int] | None = None,
) -> TabularDataset:
    """Read a headered, comma-separated UTF-8 file.

    Rows with missing values are dropped and counted in ``dropped_rows``.
    Rows that cannot be parsed (wrong field count, non-numeric numeric cell)
    are malformed; more than ``max_bad_rows`` of them raises IngestionError
    listing their line numbers. Categorical columns become one-hot indicator
    columns named ``column=value``. Numeric columns are z-scored with the
    statistics of ``fit_rows`` (all rows by default) when ``standardize`` is set.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        wanted = [schema.label_column, *schema.numeric_columns, *schema.categorical_columns]
        missing_cols = [c for c in wanted if c not in header]
        if missing_cols:
            raise IngestionError(f"columns not found in header: {missing_cols}")
        pos = {name: header.index(name) for name in wanted}

        numeric: list[list[float]] = []
        cats: list[list[str]] = []
        labels: list[str] = []
        bad: list[int] = []
        dropped = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                bad.append(line_no)
                continue
            cells = {name: row[i].strip() for name, i in pos.items()}
            if any(v.lower() in MISSING_TOKENS for v in cells.values()):
                dropped += 1
                continue
            try:
                nums = [float(cells[c]) for c in schema.numeric_columns]
            except ValueError:
                bad.append(line_no)
                continue
            if not all(math.isfinite(v) for v in nums):
                bad.append(line_no)
                continue
            numeric.append(nums)
            cats.append([cells[c] for c in schema.categorical_columns])
            labels.append(cells[schema.label_column])

    if len(bad) > max_bad_rows:
        raise IngestionError(f"{len(bad)} malformed rows in {path} (tolerance {max_bad_rows})", bad)
    if not labels:
        raise IngestionError(f"{path} has no usable data rows")
    if bad:
        log.warning("skipped %d malformed rows in %s", len(bad), path)
    if dropped:
        log.info("dropped %d rows with missing values from %s", dropped, path)

    class_names = tuple(sorted(set(labels)))
    if len(class_names) < 2:
        raise IngestionError("the label column needs at least two distinct classes")
    class_of = {c: i for i, c in enumerate(class_names)}
    y = np.array([class_of[v] for v in labels], dtype=np.int64)

    n = len(labels)
    blocks = [np.array(numeric, dtype=np.float64).reshape(n, len(schema.numeric_columns))]
    names = list(schema.numeric_columns)
    for j, col in enumerate(schema.categorical_columns):
        values = [r[j] for r in cats]
        levels = sorted(set(values))
        onehot = np.zeros((n, len(levels)))
        index = {v: i for i, v in enumerate(levels)}
        onehot[np.arange(n), [index[v] for v in values]] = 1.0
        blocks.append(onehot)
        names.extend(f"{col}={v}" for v in levels)
    x = np.hstack(blocks)
    ds = TabularDataset(x, y, tuple(names), len(class_names), class_names, dropped)
    if standardize:
        ds = standardize_numeric(ds, len(schema.numeric_columns), fit_rows)
    return ds


def standardize_numeric(ds: TabularDataset, n_numeric: int, fit_rows: Sequence[int] | None = None) -> TabularDataset:
    """Z-score the first ``n_numeric`` columns using ``fit_rows`` statistics.

    Constant columns are only centred.
    """
    if n_numeric == 0:
        return ds
    rows = np.arange(ds.n_samples) if fit_rows is None else np.asarray(fit_rows, dtype=np.int64)
    if rows.size == 0:
        raise InvalidInputError("standardization needs at least one fit row")
    x = ds.features.copy()
    fit = x[rows, :n_numeric]
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    std[std == 0] = 1.0
    x[:, :n_numeric] = (x[:, :n_numeric] - mean) / std
    return replace(ds, features=x)
