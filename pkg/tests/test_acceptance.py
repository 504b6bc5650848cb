"""Acceptance criteria, one test each; the terminal summary lists PASS/FAIL per criterion."""

import dataclasses
import time
from pathlib import Path

import numpy as np

import oracles
from appl import gradcheck, harness
from appl.adapt import anneal_alpha, finetune_episode
from appl.cli import main
from appl.config import parse_config, replace
from appl.episodes import derive_seed, sample_episode
from appl.meta_train import meta_train
from appl.models import PcnParams
from appl.prototypes import cluster_reduce, mean_prototypes, pcn_prototypes

ROOT = Path(__file__).resolve().parent.parent


def _episodes(cfg, domain, n, purpose="eval"):
    h = cfg.harness
    return [sample_episode(domain, h.n_way, h.k_shot, h.q_per_class,
                           derive_seed(cfg.seed, purpose, i)) for i in range(n)]


def test_1_gradient_correctness(record):
    start = time.perf_counter()
    worst = gradcheck.run(n_episodes=20)
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    ok = top < 1e-4 and elapsed < 120 and set(worst) == set(gradcheck.TERMS)
    assert record(1, ok, f"max rel error {top:.2e} over {len(worst)} terms x 20 episodes, "
                         f"{elapsed:.0f}s")


def test_2_protonet_reduction(record, small_cfg, domains):
    cfg = harness.variant("protonet").apply(small_cfg)
    trained = meta_train(cfg, domains[0])
    weights, biases = trained.encoder.weights, trained.encoder.biases
    agree = total = 0
    for ep in _episodes(cfg, domains[1], 100):
        ours = finetune_episode(trained.encoder, trained.pcn, ep.task(), cfg.adapt).predictions
        ref = oracles.protonet_predict(weights, biases, ep.support_x, ep.support_y, ep.query_x,
                                       ep.n_way)
        agree += int((ours == np.array(ref)).sum())
        total += len(ref)
    assert record(2, agree == total, f"{agree}/{total} query predictions agree over 100 episodes")


def test_3_pcn_mean_bridge(record):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        k, d = int(rng.integers(1, 9)), int(rng.integers(1, 17))
        emb = rng.uniform(0, 5, size=(k, d))
        y = np.zeros(k, dtype=int)
        pcn = pcn_prototypes(emb, y, 1, PcnParams.averaging(k, d)).vectors.data
        worst = max(worst, float(np.abs(pcn - mean_prototypes(emb, y, 1).vectors.data).max()))
    assert record(3, worst <= 1e-12, f"max |pcn - mean| = {worst:.1e} over 50 classes")


def test_4_wma_algebra(record, small_cfg, domains, trained):
    a, alpha_err = small_cfg.adapt, 0.0
    alpha = a.alpha0
    for i in range(1, 1001):
        alpha = anneal_alpha(alpha, a.gamma)
        alpha_err = max(alpha_err, abs(alpha - a.alpha0 * a.gamma ** i))
    hull_ok = argmax_ok = True
    checked = 0

    def check(i, h, h_tilde, soft):
        nonlocal hull_ok, argmax_ok, running, checked
        running = h if running is None else np.maximum(running, h)
        hull_ok &= bool((h_tilde >= 0).all() and (h_tilde <= running + 1e-12).all())
        if i == 1:
            argmax_ok &= bool((soft.argmax(1) == (-h).argmax(1)).all())
        checked += 1

    for ep in _episodes(small_cfg, domains[1], 100):
        running = None
        finetune_episode(trained.encoder, trained.pcn, ep.task(), a, on_iteration=check)
    ok = alpha_err <= 1e-12 and hull_ok and argmax_ok
    assert record(4, ok, f"alpha err {alpha_err:.1e} over 1000 steps; hull bound {hull_ok} and "
                         f"iteration-1 argmax {argmax_ok} on {checked} iterations of 100 runs")


def test_5_gate_equivalence(record, small_cfg, domains, trained):
    cfg = replace(small_cfg, **{"harness.n_tasks": 20})
    closed = replace(cfg, **{"adapt.epsilon": 1.0})
    off = harness.variant("no_ce_transductive").apply(cfg)
    a = harness.evaluate(trained.encoder, trained.pcn, domains[1], closed)
    b = harness.evaluate(trained.encoder, trained.pcn, domains[1], off)
    same = a.traces == b.traces and harness.metrics_csv(a) == harness.metrics_csv(b)
    assert record(5, same, "eps=1.0 vs no_ce_transductive on 20 episodes: traces and metrics "
                           f"{'identical' if same else 'differ'}")


def test_6_transduction_contract(record, small_cfg, domains, trained):
    same = 0
    for i, ep in enumerate(_episodes(small_cfg, domains[1], 20)):
        perm = np.random.default_rng(i).permutation(ep.query_y)
        other = dataclasses.replace(ep, query_y=perm)
        r1 = finetune_episode(trained.encoder, trained.pcn, ep.task(), small_cfg.adapt)
        r2 = finetune_episode(trained.encoder, trained.pcn, other.task(), small_cfg.adapt)
        same += (r1.probabilities.tobytes() == r2.probabilities.tobytes() and r1.trace == r2.trace
                 and all(x.tobytes() == y.tobytes()
                         for x, y in zip(r1.encoder.arrays(), r2.encoder.arrays())))
    assert record(6, same == 20, f"{same}/20 episodes bitwise identical under label permutation")


def test_7_directional_efficacy(record):
    cfg = parse_config(ROOT / "benchmarks" / "desk.toml")
    start = time.perf_counter()
    table = harness.run_ablation(cfg, workers=harness.default_workers())
    minutes = (time.perf_counter() - start) / 60
    full = table["full"].mean
    gap = 100 * (full - table["protonet"].mean)
    best_other = max((m.mean, name) for name, m in table.items() if name != "full")
    shortfall = 100 * (best_other[0] - full)
    ok = gap >= 2.0 and shortfall <= 0.5 and minutes < 30
    means = ", ".join(f"{k} {100 * m.mean:.2f}" for k, m in table.items())
    assert record(7, ok, f"full - protonet = {gap:+.2f} pts (need >= +2); best other "
                         f"{best_other[1]} exceeds full by {shortfall:.2f} pts (need <= 0.5); "
                         f"{minutes:.1f} min; [{means}]")


def test_8_higher_shot(record, small_cfg, domains, trained):
    five = trained.pcn
    cfg = replace(small_cfg, **{"harness.k_shot": 50, "adapt.n_clusters": 5,
                                "adapt.max_iters": 5, "harness.n_tasks": 3})
    m = harness.evaluate(trained.encoder, trained.pcn, domains[1], cfg)
    ran = m.n_tasks == 3 and all(np.isfinite(m.per_task_accuracy))
    fresh = PcnParams.init(5, small_cfg.model.embed_dim, np.random.default_rng(0))
    ok = ran and five.n_params == fresh.n_params and five.k_in == 5
    assert record(8, ok, f"50-shot K'=5 ran {m.n_tasks} tasks (acc {100 * m.mean:.1f}); "
                         f"PCN params {five.n_params} == {fresh.n_params}")


SMALL_CLI = ["--set", "meta.max_iters=20", "--set", "adapt.max_iters=5", "--set",
             "adapt.lr=0.001", "--set", "harness.n_tasks=3", "--workers", "1"]
COMMANDS = [["gen-bench"], ["meta-train"], ["adapt-eval"], ["ablate"],
            ["sweep", "--param", "epsilon", "--grid", "0.2,0.4"], ["gradcheck", "--episodes", "2"]]


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_9_determinism(record, tmp_path, capsys):
    for run in ("a", "b"):
        for cmd in COMMANDS:
            assert main(cmd + ["--out", str(tmp_path / run)] + SMALL_CLI) == 0
        seed = derive_seed(0, "eval", 1)
        assert main(["replay", "--seed", str(seed), "--out", str(tmp_path / run)] + SMALL_CLI) == 0
    capsys.readouterr()
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    diff = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    assert record(9, not diff and len(a) > 0,
                  f"{len(a)} files from 7 subcommands, {len(diff)} differ on re-run")


def test_10_kmeans_oracle(record):
    matched = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 9))
        kp = int(rng.integers(1, min(3, k) + 1))
        pts = rng.standard_normal((k, int(rng.integers(1, 4))))
        ours = oracles.kmeans_sse(pts, cluster_reduce(pts, kp, derive_seed(seed, "kmeans")))
        matched += ours <= oracles.best_partition_sse(pts, kp) + 1e-9
    assert record(10, matched == 50, f"{matched}/50 instances reach the brute-force optimum")
