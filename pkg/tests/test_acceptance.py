"""Acceptance suite. Each test appends one PASS/FAIL line to the run summary.

The active-learning comparisons (criteria 8 and 9) share one cache of
experiments, so the 50 runs they need are trained once per session.
"""

import time
import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr

from caal.acquisition import (PoolStats, StrategyKind, badge_embeddings, badge_select, bald_score,
                              kcenter_greedy, minmax_normalize, score, select_lcmd, select_topB)
from caal.aerosol import coating_volume_ratio, mixing_state_index
from caal.bench import LearningCurve, RoundRecord, curve_to_match
from caal.cli import main
from caal.config import ExperimentConfig
from caal.data import SyntheticSpec, generate_synthetic, hetero_sine_f, make_sigma
from caal.ensemble import EnsembleConfig, predict, summarize, train_ensemble
from caal.loop import SyntheticFunction, run_experiment
from caal.net import HeteroNet, TrainSchedule, backward
from caal.objective import ObjectiveKind

from conftest import VERDICTS
from oracles import (best_partition, central_difference, frozen_values, kcenter_bruteforce,
                     mixture_variance_bruteforce, nearest_to_mean, relative_error, surrogate_loss)

KINDS = ["nll", "decoupled", "beta_nll", "faithful", "natural"]
SEEDS = range(10)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def test_criterion_1_gradients():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for kind in KINDS:
        obj = ObjectiveKind(kind, lam=0.1, beta_nll=0.5)
        for _ in range(100):
            net = HeteroNet.build(3, hidden=8, trunk_layers=2, natural=kind == "natural",
                                  seed=int(rng.integers(2**31)))
            net.params[:] = rng.normal(scale=0.5, size=net.n_params())
            x, y = rng.normal(size=(1, 3)), rng.normal(size=1)
            _, g = backward(net, x, y, obj)
            arch = net.architecture()
            fr = frozen_values(net.params.copy(), arch, x)
            num = central_difference(lambda p: surrogate_loss(p, arch, x, y, kind, frozen=fr), net.params.copy())
            worst = max(worst, relative_error(g.flat, num))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10
    report(1, ok, f"max rel err {worst:.2e} over 500 draws, {elapsed:.1f}s")
    assert ok


def test_criterion_2_routing():
    rng = np.random.default_rng(7)
    ok = True
    for seed in range(20):
        x, y = rng.normal(size=(8, 3)), rng.normal(size=8)
        net = HeteroNet.build(3, hidden=8, seed=seed)
        net.params[:] = rng.normal(size=net.n_params())
        _, dec = backward(net, x, y, ObjectiveKind("decoupled"), part="var")
        _, fai = backward(net, x, y, ObjectiveKind("faithful"), part="var")
        ok &= bool(np.all(dec.mean_head == 0.0) and np.all(fai.trunk == 0.0))
    report(2, ok, "exact zeros over 20 nets")
    assert ok


def test_criterion_3_decomposition():
    rng = np.random.default_rng(3)
    worst, m1_ok = 0.0, True
    for i in range(1000):
        M = (1, 2, 5, 10)[i % 4]
        mus = rng.normal(scale=rng.uniform(0.1, 10), size=M)
        s2s = rng.uniform(1e-4, 5.0, size=M)
        s = summarize(mus[None, :], s2s[None, :])
        worst = max(worst, abs(s.epi[0] + s.ale[0] - mixture_variance_bruteforce(mus.tolist(), s2s.tolist())))
        if M == 1:
            m1_ok &= s.epi[0] == 0.0
    ok = worst <= 1e-10 and m1_ok
    report(3, ok, f"max abs err {worst:.1e}, M=1 epi exactly 0: {m1_ok}")
    assert ok


def test_criterion_4_acquisition():
    rng = np.random.default_rng(4)
    rank_ok, bald_ok, norm_ok = True, True, True
    for _ in range(1000):
        n, M = int(rng.integers(2, 40)), int(rng.integers(2, 6))
        mu, s2 = rng.normal(size=(n, M)), rng.uniform(1e-3, 3.0, size=(n, M))
        stats = PoolStats.from_summary(summarize(mu, s2))
        caal = score(StrategyKind("caal", beta=0.0), stats).score
        qbc = score(StrategyKind("qbc"), stats).score
        rank_ok &= np.array_equal(select_topB(caal, n), select_topB(qbc, n))
        # members agree: identical means and identical variances
        same_mu = np.repeat(rng.normal(size=(n, 1)), M, axis=1)
        same_s2 = np.repeat(rng.uniform(1e-3, 3.0, size=(n, 1)), M, axis=1)
        bald_ok &= bool(np.all(bald_score(summarize(same_mu, same_s2)) == 0.0))
        for v in (stats.epi, stats.ale, rng.normal(scale=1e3, size=n)):
            u = minmax_normalize(v)
            norm_ok &= bool(np.all((u >= 0) & (u < 1)))
    ok = rank_ok and bald_ok and norm_ok
    report(4, ok, f"ranking {rank_ok}, bald zero {bald_ok}, minmax in [0,1) {norm_ok}")
    assert ok


def _blobs(rng, sizes, d=2):
    centres = rng.normal(size=(len(sizes), d)) * 50.0
    return np.concatenate([c + rng.uniform(-0.1, 0.1, size=(s, d)) for c, s in zip(centres, sizes)])


def test_criterion_5_batch_selectors():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    kc_ok = km_ok = bg_ok = True
    for _ in range(200):
        n, B = int(rng.integers(3, 9)), int(rng.integers(1, 4))
        pool = rng.normal(size=(n, 2))
        lab = rng.normal(size=(int(rng.integers(0, 3)), 2))
        kc_ok &= kcenter_greedy(pool, lab, B).tolist() == kcenter_bruteforce(pool, lab, B)
    for _ in range(30):
        for k in (1, 2):
            sizes = [int(s) for s in rng.integers(1, 5, size=k)]
            seed = int(rng.integers(2**31))
            x = _blobs(rng, sizes)
            expect = {nearest_to_mean(x, idx) for idx in best_partition(x, k)}
            km_ok &= set(select_lcmd(x, k, seed=seed).tolist()) == expect
            epi = rng.uniform(0.5, 2.0, size=len(x))
            z = x / np.sqrt(epi)[:, None]
            mu = np.stack([np.sqrt(epi), -np.sqrt(epi)], axis=1)
            stats = PoolStats.from_summary(summarize(mu, np.ones_like(mu)), z)
            g = badge_embeddings(z, stats.epi)
            expect = {nearest_to_mean(g, idx) for idx in best_partition(g, k)}
            bg_ok &= set(badge_select(stats, k, seed=seed).tolist()) == expect
    elapsed = time.perf_counter() - t0
    ok = kc_ok and km_ok and bg_ok and elapsed < 5
    report(5, ok, f"k-center {kc_ok}, lcmd {km_ok}, badge {bg_ok}, {elapsed:.1f}s")
    assert ok


def test_criterion_6_physics():
    external = mixing_state_index([[1, 0], [0, 1]]).chi
    internal = mixing_state_index([[0.5, 0.5], [0.5, 0.5]]).chi
    mixed = mixing_state_index([[3, 1], [1, 3]]).chi
    vr = [coating_volume_ratio([2], [1]), coating_volume_ratio([1, 3], [1, 3]),
          coating_volume_ratio([2, 2], [1, 2])]
    rng = np.random.default_rng(6)
    in_range = True
    with warnings.catch_warnings():
        # single-species bulks are expected among random populations
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(10_000):
            n_p, n_a = int(rng.integers(1, 12)), int(rng.integers(2, 6))
            m = rng.exponential(size=(n_p, n_a)) * (rng.uniform(size=(n_p, n_a)) > 0.5)
            m[np.arange(n_p), rng.integers(0, n_a, size=n_p)] += 0.5
            chi = mixing_state_index(m).chi
            in_range &= 0.0 <= chi <= 1.0
    ok = (external == 0.0 and abs(internal - 1.0) < 1e-12 and abs(mixed - 0.75477) <= 1e-4
          and all(abs(a - b) <= 1e-12 for a, b in zip(vr, (7.0, 0.0, 7 / 9))) and in_range)
    report(6, ok, f"chi {external:g}/{internal:.12g}/{mixed:.5f}, VR {vr[0]:g}/{vr[1]:g}/{vr[2]:.12g}, "
                  f"range {in_range}")
    assert ok


def _calibration_seed(seed):
    spec = SyntheticSpec("hetero_sine_1d", n=1600, seed=seed)
    ds, sigma = generate_synthetic(spec)
    y = SyntheticFunction(hetero_sine_f, sigma, seed=seed + 1000).query(np.arange(len(ds)), ds.features)
    x = ds.features
    mean, std = x[:1500].mean(axis=0), x[:1500].std(axis=0)
    sched = TrainSchedule(max_epochs=150, batch_size=64, lr0=1e-2)
    ens = train_ensemble(((x[:1500] - mean) / std, y[:1500]), ((x[1500:] - mean) / std, y[1500:]),
                         EnsembleConfig(n_members=5, hidden=32, schedule=sched),
                         ObjectiveKind("decoupled", lam=0.1), base_seed=seed)
    grid = np.linspace(-3, 3, 200)[:, None]
    ale = predict(ens, (grid - mean) / std).ale
    return spearmanr(ale, make_sigma(spec)(grid) ** 2).correlation


def test_criterion_7_aleatoric_calibration():
    t0 = time.perf_counter()
    rhos = [_calibration_seed(s) for s in range(5)]
    elapsed = time.perf_counter() - t0
    rho = float(np.mean(rhos))
    ok = rho >= 0.8 and elapsed < 180
    report(7, ok, f"mean Spearman {rho:.3f} (seeds {', '.join(f'{r:.3f}' for r in rhos)}), {elapsed:.0f}s")
    assert ok


def bench_config(kind, seed):
    return ExperimentConfig.from_dict({
        "data": {"source": "synthetic", "name": "hetero_sine_1d", "n": 1000,
                 "splits": {"test": 200, "val": 100, "initial": 50}},
        "model": {"n_members": 5, "hidden": 32, "schedule": {"max_epochs": 150, "batch_size": 32, "lr0": 1e-2}},
        "objective": {"kind": "decoupled", "lambda": 0.1},
        "strategy": {"kind": kind, "beta": 1.0},
        "loop": {"T": 10, "B": 20, "base_seed": seed},
    })


class RunCache:
    def __init__(self):
        self.runs, self.seconds = {}, {}

    def get(self, kind, seed):
        key = (kind, seed)
        if key not in self.runs:
            t0 = time.perf_counter()
            self.runs[key] = run_experiment(bench_config(kind, seed)).records
            self.seconds[key] = time.perf_counter() - t0
        return self.runs[key]

    def cost(self, kinds):
        return sum(self.seconds[(k, s)] for k in kinds for s in SEEDS)


@pytest.fixture(scope="session")
def bench_runs():
    return RunCache()


def selected_mean(records, field):
    return float(np.mean([getattr(r, field) for r in records[1:]]))


@pytest.mark.slow
def test_criterion_8_mechanism(bench_runs):
    ale_wins = epi_wins = 0
    for s in SEEDS:
        caal, qbc, rnd = (bench_runs.get(k, s) for k in ("caal", "qbc", "random"))
        ale_wins += selected_mean(caal, "mean_ale_selected") < selected_mean(qbc, "mean_ale_selected")
        epi_wins += selected_mean(caal, "mean_epi_selected") > selected_mean(rnd, "mean_epi_selected")
    elapsed = bench_runs.cost(("caal", "qbc", "random"))
    ok = ale_wins >= 8 and epi_wins >= 8 and elapsed < 600
    report(8, ok, f"ale below QBC in {ale_wins}/10, epi above Random in {epi_wins}/10, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_9_outcome(bench_runs):
    kinds = ("caal", "ale", "alm", "random")
    final = {k: float(np.mean([bench_runs.get(k, s)[-1].rmse for s in SEEDS])) for k in kinds}
    elapsed = bench_runs.cost(kinds)
    ok = (final["caal"] <= final["ale"] and final["caal"] <= final["alm"]
          and final["caal"] <= 1.05 * final["random"] and elapsed < 900)
    report(9, ok, "final RMSE " + ", ".join(f"{k} {v:.4f}" for k, v in final.items()) + f", {elapsed:.0f}s")
    assert ok


def test_criterion_10_data_to_match():
    t = np.arange(21)
    budgets = (100 + 30 * t) / 900
    r2 = np.where(t < 13, 0.40 + 0.02 * t, 0.70 + 0.001 * (t - 13))
    curve = LearningCurve([RoundRecord(int(i), int(100 + 30 * i), 30 if i else 0, float(v), 1.0)
                           for i, v in zip(t, r2)], total=900, r2_full=0.6966)
    m = curve_to_match(curve)
    ok = str(m) == "54.4% (saved 45.6%)" and abs(m.fraction - budgets[13]) < 1e-15
    report(10, ok, f"data to match {m}")
    assert ok


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"data": {"source": "synthetic", "name": "hetero_sine_1d", "n": 300, '
                   '"splits": {"test": 50, "val": 30, "initial": 20}}, '
                   '"model": {"n_members": 3, "hidden": 16, "schedule": {"max_epochs": 20, "lr0": 0.01}}, '
                   '"loop": {"T": 3, "B": 10, "base_seed": 11}}')
    outputs = []
    for name in ("first", "second"):
        assert main(["run", str(cfg), "--output", str(tmp_path / name)]) == 0
        outputs.append((tmp_path / name / "learning_curve.csv").read_bytes())
    ok = outputs[0] == outputs[1]
    report(11, ok, f"learning_curve.csv identical across reruns ({len(outputs[0])} bytes)")
    assert ok
