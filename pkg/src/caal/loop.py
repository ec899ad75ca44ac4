"""Pool-based active learning driver."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import acquisition as acq
from .bench import LearningCurve, RoundRecord, emit_curve, r_squared, rmse
from .config import ExperimentConfig
from .data import Dataset, generate_synthetic, hetero_sine_f, inverse_transform, load_csv, noise_band_f, split_units
from .ensemble import (Ensemble, PredictiveSummary, embed, member_seed_sequence, predict,
                       save_ensemble, train_ensemble)
from .errors import BudgetError, DataError

log = logging.getLogger(__name__)

DUMP_COLUMNS = ("candidate_id", "group_id", "epi", "ale", "epi_norm", "ale_norm", "score", "selected")


# --------------------------------------------------------------------------
# oracles


@dataclass
class SyntheticFunction:
    """y = f(x) + sigma(x) * g with g drawn from a generator keyed on (seed, sample index).

    ``f`` is either a callable on feature rows or an array of noise-free
    values indexed by sample index.
    """

    f: Union[Callable, np.ndarray]
    sigma: Callable
    seed: int = 0

    def noise(self, indices) -> np.ndarray:
        return np.array([np.random.default_rng([self.seed, int(i)]).standard_normal() for i in indices])

    def query(self, indices, x) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        x = np.asarray(x, dtype=float)
        clean = self.f(x) if callable(self.f) else np.asarray(self.f)[indices]
        sig = np.asarray(self.sigma(x), dtype=float)
        if np.any(sig < 0):
            raise DataError("noise standard deviation must be >= 0")
        return clean + sig * self.noise(indices)


@dataclass
class LookupTable:
    labels: np.ndarray

    def query(self, indices, x=None) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        if indices.size and (indices.min() < 0 or indices.max() >= len(self.labels)):
            raise DataError("oracle has no label for the requested sample")
        return np.asarray(self.labels, dtype=float)[indices]


def query_oracle(oracle, x, index):
    """Label a single sample."""
    return float(oracle.query([index], np.atleast_2d(x))[0])


# --------------------------------------------------------------------------
# group aggregation


def aggregate_group_scores(sample_scores, group_index, groups=None):
    """Mean score per group. Returns (group ids in first-appearance order, scores)."""
    s = np.asarray(sample_scores, dtype=float).reshape(-1)
    gi = np.asarray(group_index)
    if s.shape[0] != gi.shape[0]:
        raise DataError("one group id per sample required")
    if groups is None:
        _, first = np.unique(gi, return_index=True)
        groups = gi[np.sort(first)]
    groups = np.asarray(groups)
    out = np.empty(len(groups))
    for k, g in enumerate(groups):
        members = gi == g
        if not members.any():
            raise DataError(f"group {g!r} has no samples")
        out[k] = s[members].mean()
    return groups, out


def _group_mean_rows(values, group_index, groups):
    return np.stack([values[group_index == g].mean(axis=0) for g in groups])


# --------------------------------------------------------------------------


@dataclass
class PoolState:
    labelled: np.ndarray
    pool: np.ndarray
    labels: dict
    round: int = 0
    history: list = field(default_factory=list)

    def check(self, total: int):
        if np.intersect1d(self.labelled, self.pool).size:
            raise DataError("labelled and pool sets overlap")
        if len(self.labelled) + len(self.pool) != total:
            raise DataError("labelled + pool no longer covers the initial sample count")


@dataclass
class ExperimentResult:
    curve: LearningCurve
    ensemble: Ensemble
    state: PoolState
    score_dumps: list
    reference_r2: Optional[float] = None
    reference_rmse: Optional[float] = None

    @property
    def records(self):
        return self.curve.records


class _Scaler:
    def __init__(self, x):
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)

    def __call__(self, x):
        return (x - self.mean) / self.std


def build_data(config: ExperimentConfig):
    """Dataset and oracle for a config."""
    dc = config.data
    if dc.source == "synthetic":
        spec = dc.synthetic
        if "seed" not in config.raw.get("data", {}):
            spec = replace(spec, seed=config.loop.base_seed)
        dataset, sigma = generate_synthetic(spec)
        oracle_seed = int(np.random.SeedSequence([config.loop.base_seed, 0x0AC1E]).generate_state(1)[0])
        f = {"hetero_sine_1d": hetero_sine_f, "noise_band_2d": noise_band_f}.get(spec.name, dataset.targets)
        return dataset, SyntheticFunction(f, sigma, oracle_seed)
    dataset = load_csv(dc.csv_path, dc.schema)
    return dataset, LookupTable(dataset.targets)


def _train(config, x, y, x_val, y_val, round_index):
    seeds = member_seed_sequence(config.loop.base_seed, config.model.n_members, round_index)
    return train_ensemble((x, y), (x_val, y_val), config.model, config.objective, member_seeds=seeds)


def _evaluate(ensemble, x_test, y_test, transform):
    summary = predict(ensemble, x_test)
    pred = inverse_transform(transform, summary.mean)
    truth = inverse_transform(transform, y_test)
    return r_squared(truth, pred), rmse(truth, pred)


def run_experiment(config: ExperimentConfig, dataset: Optional[Dataset] = None, oracle=None,
                   output_dir=None) -> ExperimentResult:
    """Run T acquisition rounds; writes outputs when ``output_dir`` is given."""
    loop = config.loop
    if dataset is None or oracle is None:
        dataset, oracle = build_data(config)
    split_seed = config.data.split_seed if config.data.split_seed is not None else loop.base_seed
    splits = split_units(dataset, config.data.n_test, config.data.n_val, config.data.n_initial,
                         split_seed, loop.group_level)
    n_units = len(np.unique(dataset.group_id[splits.pool])) if loop.group_level else len(splits.pool)
    if loop.B > n_units:
        raise BudgetError(f"batch size {loop.B} exceeds the {n_units} pool units")

    X, gid = dataset.features, dataset.group_id
    labels = {}

    def label(idx):
        missing = [i for i in idx.tolist() if i not in labels]
        if missing:
            m = np.array(missing)
            for i, v in zip(missing, oracle.query(m, X[m])):
                labels[i] = float(v)
        return np.array([labels[i] for i in idx.tolist()])

    y_test, y_val = label(splits.test), label(splits.val)
    state = PoolState(splits.initial.copy(), splits.pool.copy(), labels)
    total = len(state.labelled) + len(state.pool)
    curve = LearningCurve(total=total)
    dumps = []

    scaler = _Scaler(X[state.labelled])
    ensemble = _train(config, scaler(X[state.labelled]), label(state.labelled),
                      scaler(X[splits.val]), y_val, 0)
    r2, err = _evaluate(ensemble, scaler(X[splits.test]), y_test, dataset.target_transform)
    curve.records.append(RoundRecord(0, len(state.labelled), 0, r2, err))
    log.info("round 0: n=%d r2=%.4f rmse=%.4f", len(state.labelled), r2, err)

    rng_root = np.random.SeedSequence([loop.base_seed, 0x5E1EC7])
    round_rngs = rng_root.spawn(max(loop.T, 1))
    for t in range(1, loop.T + 1):
        if len(state.pool) == 0:
            break
        picked, dump = _select_round(config, ensemble, scaler, X, gid, state,
                                     np.random.default_rng(round_rngs[t - 1]))
        dumps.append(dump)
        new_rows = state.pool[np.isin(state.pool, picked)]
        label(new_rows)
        state.labelled = np.sort(np.concatenate([state.labelled, new_rows]))
        state.pool = state.pool[~np.isin(state.pool, new_rows)]
        state.round = t
        state.check(total)

        scaler = _Scaler(X[state.labelled])
        ensemble = _train(config, scaler(X[state.labelled]), label(state.labelled),
                          scaler(X[splits.val]), y_val, t)
        r2, err = _evaluate(ensemble, scaler(X[splits.test]), y_test, dataset.target_transform)
        sel = dump["selected"].astype(bool)
        n_units = len(np.unique(gid[new_rows])) if loop.group_level else len(new_rows)
        rec = RoundRecord(t, len(state.labelled), n_units, r2, err,
                          float(dump["epi"][sel].mean()), float(dump["ale"][sel].mean()))
        curve.records.append(rec)
        state.history.append(rec)
        log.info("round %d: n=%d r2=%.4f rmse=%.4f", t, len(state.labelled), r2, err)

    result = ExperimentResult(curve, ensemble, state, dumps)
    if loop.full_reference:
        everything = np.sort(np.concatenate([state.labelled, state.pool]))
        sc = _Scaler(X[everything])
        ref = _train(config, sc(X[everything]), label(everything), sc(X[splits.val]), y_val, 10**6)
        result.reference_r2, result.reference_rmse = _evaluate(ref, sc(X[splits.test]), y_test,
                                                               dataset.target_transform)
        curve.r2_full, curve.rmse_full = result.reference_r2, result.reference_rmse
    if output_dir is not None:
        write_outputs(result, config, output_dir)
    return result


def _select_round(config, ensemble, scaler, X, gid, state, rng):
    """Score the pool and choose the query rows for one round."""
    strategy, loop = config.strategy, config.loop
    xp = scaler(X[state.pool])
    summary = predict(ensemble, xp)
    needs_embedding = not strategy.score_based
    z_pool = embed(ensemble, xp) if needs_embedding else None
    stats = acq.PoolStats.from_summary(summary, z_pool)
    sample_scores = acq.score(strategy, stats, rng).score if strategy.score_based else np.full(len(xp), np.nan)

    if loop.group_level:
        pool_gid = gid[state.pool]
        groups, _ = aggregate_group_scores(np.zeros(len(pool_gid)), pool_gid)
        B = min(loop.B, len(groups))
        if strategy.kind == "random":
            unit_picks = acq.select_topB(rng.uniform(size=len(groups)), B)
        elif strategy.score_based:
            _, gscores = aggregate_group_scores(sample_scores, pool_gid, groups)
            unit_picks = acq.select_topB(gscores, B)
        else:
            gsummary = PredictiveSummary(
                _group_mean_rows(summary.mean, pool_gid, groups),
                _group_mean_rows(summary.epi, pool_gid, groups),
                _group_mean_rows(summary.ale, pool_gid, groups),
                _group_mean_rows(summary.member_mu, pool_gid, groups),
                _group_mean_rows(summary.member_sigma2, pool_gid, groups))
            gstats = acq.PoolStats.from_summary(gsummary, _group_mean_rows(z_pool, pool_gid, groups))
            lab_emb = None
            if strategy.kind == "coreset":
                lab_gid = gid[state.labelled]
                lab_groups, _ = aggregate_group_scores(np.zeros(len(lab_gid)), lab_gid)
                z_lab = embed(ensemble, scaler(X[state.labelled]))
                lab_emb = _group_mean_rows(z_lab, lab_gid, lab_groups)
            unit_picks, _ = acq.select(strategy, gstats, B, rng, lab_emb)
        picked = state.pool[np.isin(pool_gid, groups[unit_picks])]
    else:
        B = min(loop.B, len(state.pool))
        if strategy.score_based:
            unit_picks = acq.select_topB(sample_scores, B)
        else:
            lab_emb = embed(ensemble, scaler(X[state.labelled])) if strategy.kind == "coreset" else None
            unit_picks, _ = acq.select(strategy, stats, B, rng, lab_emb)
        picked = state.pool[unit_picks]

    selected = np.isin(state.pool, picked).astype(int)
    dump = {
        "candidate_id": state.pool.copy(),
        "group_id": gid[state.pool],
        "epi": summary.epi,
        "ale": summary.ale,
        "epi_norm": stats.epi_norm,
        "ale_norm": stats.ale_norm,
        "score": sample_scores,
        "selected": selected,
    }
    return picked, dump


def write_score_dump(dump: dict, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DUMP_COLUMNS)
        for i in range(len(dump["candidate_id"])):
            row = []
            for c in DUMP_COLUMNS:
                v = dump[c][i]
                row.append(str(int(v)) if c in ("candidate_id", "group_id", "selected") else repr(float(v)))
            w.writerow(row)


def read_score_dump(path) -> dict:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in DUMP_COLUMNS}


def write_outputs(result: ExperimentResult, config: ExperimentConfig, output_dir) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_curve(result.curve, out / "learning_curve.csv")
    if config.loop.dump_scores:
        sdir = out / "scores"
        sdir.mkdir(exist_ok=True)
        for t, dump in enumerate(result.score_dumps, start=1):
            write_score_dump(dump, sdir / f"round_{t:03d}.csv")
    if config.loop.save_ensemble:
        save_ensemble(result.ensemble, out / "ensemble.txt")
    (out / "config.json").write_text(json.dumps(config.raw, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
