"""Benchmark evaluation, ablation matrix and hyper-parameter sweeps.

Every evaluation draws the same seeded task list from the root seed, so
variants and sweep points are compared on identical episodes.  Tasks can
run in worker processes; results are folded back in task-index order.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as config_mod
from ._jsonio import dumps, fmt
from .adapt import finetune_episode, trace_csv
from .config import RunConfig
from .episodes import BenchmarkSpec, Domain, derive_seed, make_benchmark, sample_episode
from .meta_train import MetaTrainResult, meta_train
from .models import EncoderParams, PcnParams

log = logging.getLogger(__name__)

VARIANTS = {
    "full": {},
    "no_pcn": {"meta.use_pcn": False, "adapt.use_pcn": False},
    "no_l_dis": {"meta.lambda_dis": 0.0, "adapt.lambda_dis": 0.0},
    "no_l_coh": {"meta.lambda_coh": 0.0, "adapt.lambda_coh": 0.0},
    "no_ce_support": {"adapt.use_ce_support": False},
    "no_ce_transductive": {"adapt.use_ce_transductive": False},
    "no_wma": {"adapt.use_wma": False},
    "protonet": {
        "meta.use_pcn": False, "adapt.use_pcn": False,
        "meta.lambda_dis": 0.0, "adapt.lambda_dis": 0.0,
        "meta.lambda_coh": 0.0, "adapt.lambda_coh": 0.0,
        "adapt.max_iters": 0, "adapt.use_wma": False, "adapt.epsilon": 1.0,
    },
}

SWEEP_KEYS = {
    "alpha0": ("adapt.alpha0",),
    "epsilon": ("adapt.epsilon",),
    "lambda_coh": ("meta.lambda_coh", "adapt.lambda_coh"),
    "lambda_dis": ("meta.lambda_dis", "adapt.lambda_dis"),
}


@dataclass
class AblationVariant:
    id: str
    toggles: dict

    def apply(self, cfg: RunConfig) -> RunConfig:
        return config_mod.replace(cfg, **self.toggles)


def variant(name: str) -> AblationVariant:
    if name not in VARIANTS:
        raise KeyError(f"unknown ablation variant {name!r}; choose from {sorted(VARIANTS)}")
    return AblationVariant(name, dict(VARIANTS[name]))


@dataclass
class Metrics:
    per_task_accuracy: list
    task_seeds: list
    mean: float
    ci95: float
    n_tasks: int
    config_hash: str
    ci_undefined: bool = False
    traces: list = field(default_factory=list, repr=False)


def summarize(accuracies, seeds=None, config_hash: str = "", traces=None) -> Metrics:
    acc = [float(a) for a in accuracies]
    n = len(acc)
    mean = math.fsum(acc) / n
    if n > 1:
        std = math.sqrt(math.fsum((a - mean) ** 2 for a in acc) / (n - 1))
        ci, undefined = 1.96 * std / math.sqrt(n), False
    else:
        ci, undefined = 0.0, True
    return Metrics(acc, list(seeds or []), mean, ci, n, config_hash, undefined, traces or [])


def domains_for(cfg: RunConfig) -> tuple[Domain, Domain]:
    d = cfg.data
    return make_benchmark(cfg.seed, BenchmarkSpec(**d.__dict__))


def task_seeds(cfg: RunConfig, n_tasks: int | None = None) -> list[int]:
    n = cfg.harness.n_tasks if n_tasks is None else n_tasks
    return [derive_seed(cfg.seed, "eval", i) for i in range(n)]


def eval_task(encoder, pcn, domain, cfg: RunConfig, seed: int):
    h = cfg.harness
    episode = sample_episode(domain, h.n_way, h.k_shot, h.q_per_class, seed)
    result = finetune_episode(encoder, pcn, episode.task(), cfg.adapt)
    correct = int((result.predictions == episode.query_y).sum())
    return correct / len(episode.query_y), result.trace


def _eval_chunk(args):
    encoder, pcn, domain, cfg, seeds = args
    return [eval_task(encoder, pcn, domain, cfg, s) for s in seeds]


def default_workers() -> int:
    return os.cpu_count() or 1


def evaluate(encoder: EncoderParams, pcn: PcnParams, domain: Domain, cfg: RunConfig,
             n_tasks: int | None = None, workers: int = 1) -> Metrics:
    """Fine-tune and score every seeded task; any failing task aborts the run."""
    seeds = task_seeds(cfg, n_tasks)
    if not seeds:
        raise ValueError("evaluation needs at least one task")
    if workers <= 1 or len(seeds) == 1:
        results = _eval_chunk((encoder, pcn, domain, cfg, seeds))
    else:
        chunks = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_eval_chunk, [(encoder, pcn, domain, cfg, c) for c in chunks]))
        results = [None] * len(seeds)
        for w, part in enumerate(parts):
            for j, r in enumerate(part):
                results[w + j * workers] = r
    acc = [r[0] for r in results]
    return summarize(acc, seeds, cfg.config_hash, [r[1] for r in results])


def meta_signature(cfg: RunConfig) -> str:
    """Hash of everything meta-training depends on."""
    base = config_mod.RunConfig(seed=cfg.seed, model=cfg.model, data=cfg.data, meta=cfg.meta)
    return base.config_hash


class CheckpointCache:
    """Meta-train once per distinct meta-training configuration."""

    def __init__(self, source: Domain):
        self.source = source
        self._store: dict[str, MetaTrainResult] = {}

    def get(self, cfg: RunConfig) -> MetaTrainResult:
        key = meta_signature(cfg)
        if key not in self._store:
            log.info("meta-training for signature %s", key)
            self._store[key] = meta_train(cfg, self.source)
        return self._store[key]

    def put(self, cfg: RunConfig, result: MetaTrainResult) -> None:
        self._store[meta_signature(cfg)] = result


def run_ablation(cfg: RunConfig, variants=None, workers: int = 1,
                 cache: CheckpointCache | None = None, domains=None) -> dict[str, Metrics]:
    """Evaluate each variant on the identical seeded task list."""
    source, target = domains or domains_for(cfg)
    cache = cache or CheckpointCache(source)
    names = list(variants or VARIANTS)
    table = {}
    for name in names:
        vcfg = variant(name).apply(cfg)
        trained = cache.get(vcfg)
        table[name] = evaluate(trained.encoder, trained.pcn, target, vcfg, workers=workers)
        log.info("variant %s mean %.4f", name, table[name].mean)
    return table


def sweep(cfg: RunConfig, param: str, grid, workers: int = 1,
          cache: CheckpointCache | None = None, domains=None) -> list[tuple]:
    """``(value, Metrics)`` per grid point; lambda sweeps retrain, the others reuse a checkpoint."""
    if param not in SWEEP_KEYS:
        raise KeyError(f"cannot sweep {param!r}; choose from {sorted(SWEEP_KEYS)}")
    source, target = domains or domains_for(cfg)
    cache = cache or CheckpointCache(source)
    rows = []
    for value in grid:
        pcfg = config_mod.replace(cfg, **{k: float(value) for k in SWEEP_KEYS[param]})
        trained = cache.get(pcfg)
        rows.append((float(value), evaluate(trained.encoder, trained.pcn, target, pcfg,
                                            workers=workers)))
    return rows


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def metrics_csv(m: Metrics) -> str:
    lines = ["task_index,seed,accuracy"]
    for i, (s, a) in enumerate(zip(m.task_seeds, m.per_task_accuracy)):
        lines.append(f"{i},{s},{fmt(a)}")
    return "\n".join(lines) + "\n"


def summary_json(m: Metrics, cfg: RunConfig, variant_id: str = "full") -> str:
    return dumps({
        "config_hash": m.config_hash,
        "root_seed": cfg.seed,
        "variant_id": variant_id,
        "n_tasks": m.n_tasks,
        "mean": m.mean,
        "ci95": m.ci95,
        "ci95_undefined": m.ci_undefined,
        "config": config_mod.hashed_dict(cfg),
    }) + "\n"


def write_metrics(directory, m: Metrics, cfg: RunConfig, variant_id: str = "full",
                  traces: bool = True) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "metrics.csv").write_text(metrics_csv(m))
    (directory / "summary.json").write_text(summary_json(m, cfg, variant_id))
    if traces and m.traces:
        tdir = directory / "traces"
        tdir.mkdir(exist_ok=True)
        for i, tr in enumerate(m.traces):
            (tdir / f"task_{i:04d}.csv").write_text(trace_csv(tr))
    return directory


def ablation_csv(table: dict[str, Metrics]) -> str:
    lines = ["variant,synthetic_mean,synthetic_ci95,n_tasks"]
    for name, m in table.items():
        lines.append(f"{name},{fmt(m.mean)},{fmt(m.ci95)},{m.n_tasks}")
    return "\n".join(lines) + "\n"


def ablation_markdown(table: dict[str, Metrics]) -> str:
    lines = ["| Variant | Synthetic |", "|---|---|"]
    for name, m in table.items():
        lines.append(f"| {name} | {100 * m.mean:.2f} ({100 * m.ci95:.2f}) |")
    return "\n".join(lines) + "\n"


def sweep_csv(param: str, rows) -> str:
    lines = ["param,value,mean,ci95,n_tasks"]
    for value, m in rows:
        lines.append(f"{param},{fmt(value)},{fmt(m.mean)},{fmt(m.ci95)},{m.n_tasks}")
    return "\n".join(lines) + "\n"
