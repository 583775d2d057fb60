"""Turn an experiment config and a seed into client datasets and models."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .data import (
    ClientDataView,
    CsvSchema,
    DomainSpec,
    TabularDataset,
    dirichlet_label_skew,
    feature_subsample,
    full_view,
    load_csv_dataset,
    sample_domain,
    standardize_numeric,
    synth_cross_domain,
    train_test_split,
    uniform_partition,
)
from .model import Architecture, generate_hetero_arch

ClientArrays = tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class Scenario:
    views: list[ClientDataView]
    architectures: list[Architecture]
    n_classes: int

    def client_arrays(self) -> list[ClientArrays]:
        out = []
        for v in self.views:
            xtr, ytr = v.train_arrays()
            xte, yte = v.test_arrays()
            out.append((xtr, ytr, xte, yte))
        return out


def _synthetic_datasets(cfg: ExperimentConfig, seed: int) -> list[TabularDataset]:
    ds = cfg.dataset
    K = cfg.n_clients
    domain_seed = seed if ds.domain_seed is None else ds.domain_seed
    spec = DomainSpec.rotated(K, ds.dim, ds.n_classes, ds.angle_step_deg, ds.separation, ds.noise, domain_seed)
    alpha = cfg.partition.niid2_alpha
    if alpha is None:
        return synth_cross_domain(spec, K, ds.n_per_client, seed)
    # label skew: split a balanced pool, then render each share in its client's domain
    rng = np.random.default_rng(derive_seed(seed, 1))
    pool = rng.permutation(np.arange(K * ds.n_per_client) % ds.n_classes)
    parts = dirichlet_label_skew(pool, alpha, K, derive_seed(seed, 2))
    names = tuple(f"x{j}" for j in range(ds.dim))
    out = []
    for k, idx in enumerate(parts):
        y = pool[idx]
        x = sample_domain(spec, k, y, np.random.default_rng([seed, k]))
        out.append(TabularDataset(x, y, names, ds.n_classes))
    return out


def _synthetic_views(cfg: ExperimentConfig, seed: int) -> list[ClientDataView]:
    views = []
    frac = cfg.partition.niid1_fraction
    for k, ds in enumerate(_synthetic_datasets(cfg, seed)):
        view = full_view(ds) if frac is None else feature_subsample(ds, frac, derive_seed(seed, k, 3))
        views.append(train_test_split(view, cfg.test_fraction, derive_seed(seed, k, 4)))
    return views


def _csv_views(cfg: ExperimentConfig, seed: int) -> list[ClientDataView]:
    d = cfg.dataset
    schema = CsvSchema(d.label_column, tuple(d.numeric_columns), tuple(d.categorical_columns))
    raw = load_csv_dataset(d.path, schema, max_bad_rows=d.max_bad_rows, standardize=False)
    K = cfg.n_clients
    if cfg.partition.niid2_alpha is not None:
        parts = dirichlet_label_skew(raw.labels, cfg.partition.niid2_alpha, K, derive_seed(seed, 2))
    else:
        parts = uniform_partition(raw.n_samples, K, derive_seed(seed, 2))
    frac = cfg.partition.niid1_fraction
    views = []
    for k, rows in enumerate(parts):
        if frac is None:
            cols = np.arange(raw.n_features)
        else:
            cols = feature_subsample(raw, frac, derive_seed(seed, k, 3)).feature_idx
        view = ClientDataView(raw, cols, rows)
        views.append(train_test_split(view, cfg.test_fraction, derive_seed(seed, k, 4)))
    # z-score with training rows only
    train_rows = np.unique(np.concatenate([v.train_idx for v in views]))
    ds = standardize_numeric(raw, len(schema.numeric_columns), train_rows)
    return [replace(v, dataset=ds) for v in views]


def build_scenario(cfg: ExperimentConfig, seed: int) -> Scenario:
    views = _synthetic_views(cfg, seed) if cfg.dataset.kind == "synthetic" else _csv_views(cfg, seed)
    n_classes = views[0].dataset.n_classes
    m = cfg.model
    archs = []
    for k, v in enumerate(views):
        if m.hetero:
            head_in = m.head_in_dim or (m.hidden[-1] if m.hidden else 64)
            archs.append(
                generate_hetero_arch(derive_seed(seed, k, 5), v.n_features, n_classes, m.depth_range, m.width_range, head_in)
            )
        else:
            archs.append(Architecture((v.n_features, *m.hidden, n_classes), m.head_depth))
    return Scenario(views, archs, n_classes)
