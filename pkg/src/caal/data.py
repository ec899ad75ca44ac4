"""Datasets: synthetic heteroscedastic generators, CSV ingestion, target transforms, splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .aerosol import CHEMICAL_SPECIES, mixing_state_index
from .errors import ConfigError, DataError, DomainError, SchemaError

CLIP_EPS = 1e-6
TRANSFORMS = ("identity", "logit", "log")


# --------------------------------------------------------------------------
# target transforms


def transform_target(kind: str, y):
    y = np.asarray(y, dtype=float)
    if kind == "identity":
        return y.copy()
    if kind == "logit":
        if np.any((y < 0) | (y > 1)):
            raise DomainError("logit transform needs targets in [0, 1]")
        c = np.clip(y, CLIP_EPS, 1.0 - CLIP_EPS)
        return np.log(c / (1.0 - c))
    if kind == "log":
        if np.any(y <= 0):
            raise DomainError("log transform needs strictly positive targets")
        return np.log(y)
    raise ConfigError(f"unknown target transform {kind!r}")


def inverse_transform(kind: str, z):
    z = np.asarray(z, dtype=float)
    if kind == "identity":
        return z.copy()
    if kind == "logit":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "log":
        return np.exp(z)
    raise ConfigError(f"unknown target transform {kind!r}")


# --------------------------------------------------------------------------


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray  # in transformed space
    group_id: np.ndarray
    feature_names: list
    target_transform: str = "identity"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        self.group_id = np.asarray(self.group_id, dtype=int).reshape(-1)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = self.features.shape[0]
        if self.targets.shape[0] != n or self.group_id.shape[0] != n:
            raise DataError("features, targets and group ids differ in length")
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("one name per feature column required")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise DataError("non-finite entries in dataset")
        if self.target_transform not in TRANSFORMS:
            raise ConfigError(f"unknown target transform {self.target_transform!r}")
        if n:
            starts = np.flatnonzero(np.r_[True, self.group_id[1:] != self.group_id[:-1]])
            if len(np.unique(self.group_id[starts])) != len(starts):
                raise DataError("rows of a group must be contiguous")

    def __len__(self):
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def groups(self) -> dict:
        """Group id -> row indices, in order of first appearance."""
        out = {}
        for i, g in enumerate(self.group_id.tolist()):
            out.setdefault(g, []).append(i)
        return {g: np.array(rows) for g, rows in out.items()}


# --------------------------------------------------------------------------
# synthetic families

SYNTHETIC = ("hetero_sine_1d", "noise_band_2d", "mixing_state_toy")
F_BOUNDS = {
    "hetero_sine_1d": 1.0 + 0.3 * 3.0,
    "noise_band_2d": 1.0 + 0.2 * 6.0,
    "mixing_state_toy": math.log((1.0 - CLIP_EPS) / CLIP_EPS),
}


@dataclass
class SyntheticSpec:
    name: str = "hetero_sine_1d"
    n: int = 1000
    seed: int = 0
    group_size: int = 1
    sigma_low: float = 0.05
    sigma_high: float = 0.5
    band: tuple = (0.5, 1.5)
    particles: int = 40

    def __post_init__(self):
        if self.name not in SYNTHETIC:
            raise ConfigError(f"unknown synthetic dataset {self.name!r}; expected one of {SYNTHETIC}")
        if self.n < 1 or self.group_size < 1:
            raise ConfigError("n and group_size must be >= 1")
        if not 0 <= self.sigma_low <= self.sigma_high:
            raise ConfigError("need 0 <= sigma_low <= sigma_high")
        self.band = tuple(float(b) for b in self.band)
        if len(self.band) != 2 or self.band[0] > self.band[1]:
            raise ConfigError("band must be an interval (lo, hi)")
        if self.particles < 2:
            raise ConfigError("particles must be >= 2")

    @property
    def d(self) -> int:
        return {"hetero_sine_1d": 1, "noise_band_2d": 2, "mixing_state_toy": 8}[self.name]


def hetero_sine_f(x):
    x = np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0]
    return np.sin(2.0 * x) + 0.3 * x


def noise_band_f(x):
    x = np.asarray(x, dtype=float)
    return np.sin(x[:, 0]) * np.cos(x[:, 1]) + 0.2 * (x[:, 0] + x[:, 1])


def make_sigma(spec: SyntheticSpec) -> Callable:
    """Closed-form noise standard deviation for a synthetic family."""
    lo, hi = spec.band
    extra = spec.sigma_high - spec.sigma_low

    if spec.name == "hetero_sine_1d":
        def sigma(x):
            x = np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0]
            return spec.sigma_low + extra * ((x >= lo) & (x <= hi))
    elif spec.name == "noise_band_2d":
        def sigma(x):
            r = np.linalg.norm(np.asarray(x, dtype=float), axis=1)
            return spec.sigma_low + extra * ((r >= lo) & (r <= hi))
    else:
        # noise in logit space grows with relative humidity (feature column 5)
        def sigma(x):
            rh = np.asarray(x, dtype=float)[:, 5]
            return spec.sigma_low + extra * (rh >= 0.8)
    return sigma


def _contiguous_groups(n, size):
    return np.arange(n) // size


def generate_synthetic(spec: SyntheticSpec):
    """Noise-free dataset plus the closed-form sigma_data(x) of its oracle."""
    rng = np.random.default_rng(spec.seed)
    sigma = make_sigma(spec)
    groups = _contiguous_groups(spec.n, spec.group_size)
    if spec.name == "hetero_sine_1d":
        x = rng.uniform(-3.0, 3.0, size=(spec.n, 1))
        ds = Dataset(x, hetero_sine_f(x), groups, ["x"])
    elif spec.name == "noise_band_2d":
        x = rng.uniform(-3.0, 3.0, size=(spec.n, 2))
        ds = Dataset(x, noise_band_f(x), groups, ["x1", "x2"])
    else:
        ds = _mixing_state_toy(spec, rng, groups)
    return ds, sigma


def _mixing_state_toy(spec: SyntheticSpec, rng, groups):
    """Scenario-structured populations that age from external towards internal mixing.

    Each group is one scenario whose rows are successive hours. Features are
    the five bulk species concentrations, relative humidity, temperature and
    hour; the target is the logit of the chemical mixing-state index.
    """
    n_species = len(CHEMICAL_SPECIES)
    n_groups = int(groups.max()) + 1
    composition = rng.dirichlet(np.ones(n_species), size=n_groups)
    load = rng.lognormal(1.0, 0.5, size=n_groups)
    rh = rng.uniform(0.1, 1.0, size=n_groups)
    temp = rng.uniform(260.0, 310.0, size=n_groups)
    rate = rng.uniform(0.02, 0.4, size=n_groups)

    hour = np.zeros(spec.n)
    for g in range(n_groups):
        rows = np.flatnonzero(groups == g)
        hour[rows] = np.arange(len(rows))

    features = np.empty((spec.n, 8))
    chi = np.empty(spec.n)
    for i in range(spec.n):
        g = groups[i]
        mixing = 1.0 - math.exp(-(rate[g] * (1.0 + hour[i]) * (0.5 + rh[g])))
        owner = rng.choice(n_species, size=spec.particles, p=composition[g])
        pure = np.eye(n_species)[owner]
        fractions = (1.0 - mixing) * pure + mixing * composition[g]
        masses = fractions * rng.lognormal(0.0, 0.3, size=(spec.particles, 1))
        chi[i] = mixing_state_index(masses).chi
        bulk = masses.sum(axis=0) / masses.sum() * load[g] * (1.0 + 0.05 * hour[i])
        features[i] = np.r_[bulk, rh[g], temp[g], hour[i]]
    names = list(CHEMICAL_SPECIES) + ["RH", "T", "hour"]
    return Dataset(features, transform_target("logit", chi), groups, names, "logit")


# --------------------------------------------------------------------------
# CSV ingestion


@dataclass
class CsvSchema:
    features: list
    target: str
    group: Optional[str] = None
    transform: str = "identity"

    def __post_init__(self):
        if not self.features:
            raise ConfigError("schema needs at least one feature column")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown target transform {self.transform!r}")


_REJECT_TOKENS = {"nan", "+nan", "-nan", "inf", "+inf", "-inf", "infinity", "+infinity", "-infinity"}


def _parse_cell(text, path, lineno, column):
    token = text.strip()
    if token.lower() in _REJECT_TOKENS:
        raise DataError(f"{path}:{lineno}: non-finite value in column {column!r}")
    try:
        return float(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse {text!r} in column {column!r}") from None


def load_csv(path, schema: CsvSchema) -> Dataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    wanted = list(schema.features) + [schema.target] + ([schema.group] if schema.group else [])
    for col in wanted:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    pos = {name: header.index(name) for name in wanted}
    feats, targets, groups = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        feats.append([_parse_cell(row[pos[c]], path, lineno, c) for c in schema.features])
        targets.append(_parse_cell(row[pos[schema.target]], path, lineno, schema.target))
        if schema.group:
            groups.append(row[pos[schema.group]].strip())
    if not feats:
        raise DataError(f"{path}: no data rows")
    if schema.group:
        ids, group_id = {}, []
        for label in groups:
            group_id.append(ids.setdefault(label, len(ids)))
    else:
        group_id = list(range(len(feats)))
    z = transform_target(schema.transform, np.array(targets))
    return Dataset(np.array(feats), z, np.array(group_id), list(schema.features), schema.transform)


def save_csv(dataset: Dataset, path, schema: CsvSchema) -> None:
    """Write features, the target in original units and (optionally) the group column."""
    y = inverse_transform(dataset.target_transform, dataset.targets)
    header = list(schema.features) + [schema.target] + ([schema.group] if schema.group else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]] + [repr(float(y[i]))]
            if schema.group:
                row.append(str(int(dataset.group_id[i])))
            w.writerow(row)


# --------------------------------------------------------------------------
# splits


@dataclass
class Splits:
    test: np.ndarray
    val: np.ndarray
    initial: np.ndarray
    pool: np.ndarray
    extra: dict = field(default_factory=dict)


def split_units(dataset: Dataset, n_test: int, n_val: int, n_initial: int, seed: int = 0,
                group_level: bool = False) -> Splits:
    """Random split of whole units (groups or single rows) into test/val/initial/pool row indices."""
    if group_level:
        groups = dataset.groups()
        units = [groups[g] for g in groups]
    else:
        units = [np.array([i]) for i in range(len(dataset))]
    need = n_test + n_val + n_initial
    if min(n_test, n_val, n_initial) < 1 or need >= len(units):
        raise ConfigError(
            f"split sizes test={n_test} val={n_val} initial={n_initial} need >= 1 each "
            f"and must leave a pool (have {len(units)} units)")
    order = np.random.default_rng(seed).permutation(len(units))

    def rows(sel):
        return np.sort(np.concatenate([units[u] for u in sel]))

    return Splits(
        test=rows(order[:n_test]),
        val=rows(order[n_test:n_test + n_val]),
        initial=rows(order[n_test + n_val:need]),
        pool=rows(order[need:]),
    )
