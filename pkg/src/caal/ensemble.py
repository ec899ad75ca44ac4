"""Deep ensembles: training, uncertainty decomposition, embeddings, snapshots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .net import HeteroNet, TrainSchedule, forward, train_member
from .objective import ObjectiveKind

SNAPSHOT_MAGIC = "caal-ensemble"
SNAPSHOT_VERSION = 1
LAYER_NORM_EPS = 1e-6


@dataclass
class EnsembleConfig:
    n_members: int = 5
    hidden: int = 64
    trunk_layers: int = 2
    head_hidden: tuple = ()
    schedule: TrainSchedule = field(default_factory=TrainSchedule)

    def __post_init__(self):
        if self.n_members < 1:
            raise ConfigError("an ensemble needs at least one member")
        self.head_hidden = tuple(self.head_hidden)


@dataclass
class Ensemble:
    members: list
    member_seeds: list
    objective: ObjectiveKind

    def __post_init__(self):
        if not self.members:
            raise ConfigError("an ensemble needs at least one member")
        if len(self.members) != len(self.member_seeds):
            raise ConfigError("one seed per member required")
        arch = self.members[0].architecture()
        if any(m.architecture() != arch for m in self.members[1:]):
            raise ConfigError("ensemble members must share one architecture")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class PredictiveSummary:
    """Per-input aggregates; arrays have one entry per input row.

    ``member_mu``/``member_sigma2`` have shape (n_inputs, M).
    """

    mean: np.ndarray
    epi: np.ndarray
    ale: np.ndarray
    member_mu: np.ndarray
    member_sigma2: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.epi + self.ale

    def subset(self, idx) -> "PredictiveSummary":
        return PredictiveSummary(self.mean[idx], self.epi[idx], self.ale[idx],
                                 self.member_mu[idx], self.member_sigma2[idx])


def member_seed_sequence(base_seed: int, n_members: int, round_index: int = 0) -> list:
    """Distinct per-member seeds derived from (base_seed, round, member)."""
    seeds = []
    for m in range(n_members):
        s = int(np.random.SeedSequence([base_seed, round_index, m]).generate_state(1)[0])
        while s in seeds:
            s = (s + 1) % 2**32
        seeds.append(s)
    return seeds


def train_ensemble(data_labelled, data_val, config: EnsembleConfig, objective: ObjectiveKind,
                   member_seeds: Optional[list] = None, base_seed: int = 0,
                   check_distinct: bool = True) -> Ensemble:
    """Train each member on identical data with its own init and shuffling seed."""
    x, y = data_labelled
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or len(x) == 0 or len(data_val[1]) == 0:
        raise ConfigError("labelled and validation sets must be non-empty 2-D arrays")
    if member_seeds is None:
        member_seeds = member_seed_sequence(base_seed, config.n_members)
    member_seeds = [int(s) for s in member_seeds]
    if len(member_seeds) != config.n_members:
        raise ConfigError("one seed per member required")
    if check_distinct and len(set(member_seeds)) != len(member_seeds):
        raise ConfigError("member seeds must be pairwise distinct")
    members = []
    for seed in member_seeds:
        init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
        net = HeteroNet.build(x.shape[1], config.hidden, config.trunk_layers, config.head_hidden,
                              natural=objective.natural, seed=init_ss)
        schedule = _with_seed(config.schedule, int(shuffle_ss.generate_state(1)[0]))
        trained, _ = train_member(net, (x, y), data_val, objective, schedule)
        members.append(trained)
    return Ensemble(members, member_seeds, objective)


def _with_seed(schedule: TrainSchedule, seed: int) -> TrainSchedule:
    params = dict(schedule.__dict__)
    params["seed"] = seed
    return TrainSchedule(**params)


def summarize(member_mu, member_sigma2) -> PredictiveSummary:
    """Mixture moments from per-member means and variances, shape (n, M)."""
    mu = np.atleast_2d(np.asarray(member_mu, dtype=float))
    s2 = np.atleast_2d(np.asarray(member_sigma2, dtype=float))
    mean = mu.mean(axis=1)
    # E[mu^2] - E[mu]^2 evaluated on values shifted by the first member; exact 0 when members agree
    d = mu - mu[:, :1]
    epi = np.maximum((d**2).mean(axis=1) - d.mean(axis=1) ** 2, 0.0)
    ale = s2.mean(axis=1)
    return PredictiveSummary(mean, epi, ale, mu, s2)


def predict(ensemble: Ensemble, x) -> PredictiveSummary:
    traces = [forward(m, x) for m in ensemble.members]
    mu = np.stack([t.mu for t in traces], axis=1)
    s2 = np.stack([t.sigma2 for t in traces], axis=1)
    return summarize(mu, s2)


def layer_norm(h):
    h = np.asarray(h, dtype=float)
    centred = h - h.mean(axis=-1, keepdims=True)
    return centred / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + LAYER_NORM_EPS)


def embed(ensemble: Ensemble, x) -> np.ndarray:
    """Member-averaged layer-normalised trunk outputs, shape (n, hidden)."""
    return np.mean([layer_norm(forward(m, x).hidden) for m in ensemble.members], axis=0)


# --------------------------------------------------------------------------
# snapshots: one JSON header line, then one line of parameters per member


def save_ensemble(ensemble: Ensemble, path) -> None:
    header = {
        "format": SNAPSHOT_MAGIC,
        "version": SNAPSHOT_VERSION,
        "architecture": ensemble.members[0].architecture(),
        "n_members": ensemble.size,
        "n_params": ensemble.members[0].n_params(),
        "member_seeds": ensemble.member_seeds,
        "objective": ensemble.objective.to_dict(),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for m in ensemble.members:
        lines.append(" ".join(repr(v) for v in m.params.tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ensemble(path) -> Ensemble:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        header = json.loads(text[0])
    except (IndexError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: not an ensemble snapshot") from exc
    if header.get("format") != SNAPSHOT_MAGIC or header.get("version") != SNAPSHOT_VERSION:
        raise DataError(f"{path}: unsupported snapshot format/version")
    rows = text[1:]
    if len(rows) != header["n_members"]:
        raise DataError(f"{path}: expected {header['n_members']} members, found {len(rows)}")
    obj = header["objective"]
    objective = ObjectiveKind(obj["kind"], obj["lambda"], obj["beta_nll"])
    members = []
    for row in rows:
        params = np.array([float(v) for v in row.split()])
        if params.size != header["n_params"]:
            raise DataError(f"{path}: parameter count mismatch")
        members.append(HeteroNet.from_architecture(header["architecture"], params))
    return Ensemble(members, header["member_seeds"], objective)
