"""Command-line entry point.

Every subcommand reads one config (``--config``, defaults otherwise), writes
its artifacts under ``<out>/<config_hash>/`` next to a materialized
``config.toml`` echo, and exits with 0 on success, 2 for configuration or
usage errors, 3 for numeric failures and 4 for file errors.  Nothing written
depends on the clock, so re-running a command reproduces its files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gradcheck as gradcheck_mod
from . import harness
from ._jsonio import dumps, fmt
from .adapt import finetune_episode, trace_csv
from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, replace, to_text
from .episodes import sample_episode, write_episodes
from .exceptions import ConfigError, FormatError, NumericError
from .meta_train import meta_train, write_curve

log = logging.getLogger("appl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _run_dir(cfg: RunConfig, args) -> Path:
    root = Path(args.out) if args.out is not None else Path(cfg.out_dir)
    d = root / cfg.config_hash
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.toml").write_text(to_text(cfg))
    return d


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config)
    overrides = {}
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides[key.strip()] = value
    return replace(cfg, **overrides) if overrides else cfg


def _checkpoint(args, run_dir: Path, cfg: RunConfig):
    path = Path(args.checkpoint) if args.checkpoint else run_dir / "checkpoint.json"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path} (run meta-train first)")
    encoder, pcn, ckpt_hash = load_checkpoint(path)
    if ckpt_hash != cfg.config_hash:
        log.warning("checkpoint %s was written by config %s, evaluating with %s",
                    path, ckpt_hash, cfg.config_hash)
    check_compatible(encoder, pcn, input_dim=cfg.data.input_dim, k_shot=cfg.harness.k_shot,
                     clustering=cfg.adapt.clustering, n_clusters=cfg.adapt.n_clusters)
    return encoder, pcn


def cmd_gen_bench(args, cfg):
    d = _run_dir(cfg, args)
    source, target = harness.domains_for(cfg)
    domains = {dom.spec.name: {k: v for k, v in vars(dom.spec).items()}
               for dom in (source, target)}
    (d / "domains.json").write_text(dumps(domains) + "\n")
    h = cfg.harness
    episodes = [sample_episode(target, h.n_way, h.k_shot, h.q_per_class, s)
                for s in harness.task_seeds(cfg)]
    write_episodes(d / "eval_episodes.jsonl", episodes)
    print(f"wrote {len(episodes)} evaluation episodes to {d}")


def cmd_meta_train(args, cfg):
    d = _run_dir(cfg, args)
    source, _ = harness.domains_for(cfg)
    result = meta_train(cfg, source)
    save_checkpoint(d / "checkpoint.json", result.encoder, result.pcn, cfg.config_hash)
    write_curve(d / "curve.csv", result.curve)
    last = result.curve[-1][-1] if result.curve else float("nan")
    print(f"meta-trained {len(result.curve)} episodes, final loss {last:.6g}; checkpoint in {d}")


def _n_tasks(args, cfg) -> int:
    n = cfg.harness.n_tasks if args.tasks is None else args.tasks
    if n < 1:
        raise UsageError(f"adapt-eval needs at least one task, got {n}")
    return n


def cmd_adapt_eval(args, cfg):
    n = _n_tasks(args, cfg)
    if n != cfg.harness.n_tasks:
        cfg = replace(cfg, **{"harness.n_tasks": n})
    d = _run_dir(cfg, args)
    encoder, pcn = _checkpoint(args, d, cfg)
    _, target = harness.domains_for(cfg)
    metrics = harness.evaluate(encoder, pcn, target, cfg, workers=args.workers)
    harness.write_metrics(d, metrics, cfg)
    print(f"accuracy {100 * metrics.mean:.2f} +- {100 * metrics.ci95:.2f} over {metrics.n_tasks} tasks")


def cmd_ablate(args, cfg):
    d = _run_dir(cfg, args)
    names = args.variants.split(",") if args.variants else list(harness.VARIANTS)
    for name in names:
        if name not in harness.VARIANTS:
            raise UsageError(f"unknown variant {name!r}; choose from {', '.join(harness.VARIANTS)}")
    table = harness.run_ablation(cfg, names, workers=args.workers)
    for name, m in table.items():
        harness.write_metrics(d / "ablation" / name, m, harness.variant(name).apply(cfg), name)
    (d / "ablation.csv").write_text(harness.ablation_csv(table))
    (d / "ablation.md").write_text(harness.ablation_markdown(table))
    sys.stdout.write(harness.ablation_markdown(table))


def cmd_sweep(args, cfg):
    if args.param not in harness.SWEEP_KEYS:
        raise UsageError(f"cannot sweep {args.param!r}; choose from {', '.join(harness.SWEEP_KEYS)}")
    try:
        grid = [float(v) for v in args.grid.split(",")]
    except ValueError:
        raise UsageError(f"--grid must be comma-separated numbers, got {args.grid!r}") from None
    d = _run_dir(cfg, args)
    rows = harness.sweep(cfg, args.param, grid, workers=args.workers)
    text = harness.sweep_csv(args.param, rows)
    (d / f"sweep_{args.param}.csv").write_text(text)
    sys.stdout.write(text)


def cmd_gradcheck(args, cfg):
    d = _run_dir(cfg, args)
    worst = gradcheck_mod.run(args.episodes, cfg.seed)
    lines = ["term,max_rel_error"] + [f"{k},{fmt(v)}" for k, v in worst.items()]
    (d / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    ok = True
    for term, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{term:16s} {err:.3e} {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_replay(args, cfg):
    d = _run_dir(cfg, args)
    encoder, pcn = _checkpoint(args, d, cfg)
    _, target = harness.domains_for(cfg)
    h = cfg.harness
    episode = sample_episode(target, h.n_way, h.k_shot, h.q_per_class, args.seed)
    result = finetune_episode(encoder, pcn, episode.task(), cfg.adapt)
    out = d / "replay"
    out.mkdir(exist_ok=True)
    (out / f"trace_{args.seed}.csv").write_text(trace_csv(result.trace))
    acc = float((result.predictions == episode.query_y).mean())
    print(f"episode {args.seed}: accuracy {100 * acc:.2f}; trace in {out}")


COMMANDS = {
    "gen-bench": (cmd_gen_bench, "write the synthetic domains and the seeded evaluation episodes"),
    "meta-train": (cmd_meta_train, "episodic source-domain training; writes checkpoint.json"),
    "adapt-eval": (cmd_adapt_eval, "fine-tune and score every evaluation task"),
    "ablate": (cmd_ablate, "evaluate ablation variants on identical tasks"),
    "sweep": (cmd_sweep, "evaluate a hyper-parameter grid on identical tasks"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every loss term"),
    "replay": (cmd_replay, "re-run one evaluation episode from its seed"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="appl", description="Parametric prototype learning with transductive fine-tuning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="config file of `key = value` lines (defaults if omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key, e.g. --set adapt.epsilon=1.0 (repeatable)")
        p.add_argument("--out", help="output root; artifacts go to OUT/<config_hash>/ "
                                     "(default: out_dir from the config)")
        p.add_argument("--workers", type=int, default=harness.default_workers(),
                       help="worker processes for task evaluation (default: logical CPUs)")
        if name in ("adapt-eval", "replay"):
            p.add_argument("--checkpoint", help="checkpoint file (default: OUT/<hash>/checkpoint.json)")
        if name == "adapt-eval":
            p.add_argument("--tasks", type=int, help="number of evaluation tasks (overrides the config)")
        if name == "ablate":
            p.add_argument("--variants", help=f"comma-separated subset of {', '.join(harness.VARIANTS)}")
        if name == "sweep":
            p.add_argument("--param", required=True, choices=sorted(harness.SWEEP_KEYS))
            p.add_argument("--grid", required=True, help="comma-separated values, e.g. 0,0.2,0.4")
        if name == "gradcheck":
            p.add_argument("--episodes", type=int, default=20, help="toy episodes (default 20)")
            p.add_argument("--tol", type=float, default=1e-4, help="pass threshold (default 1e-4)")
        if name == "replay":
            p.add_argument("--seed", type=int, required=True, help="episode seed, as logged in metrics.csv")
    return parser


def _fail(kind: str, code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        if args.workers < 1:
            raise UsageError(f"--workers must be >= 1, got {args.workers}")
        cfg = _load_config(args)
        code = handler(args, cfg)
    except (ConfigError, UsageError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except NumericError as exc:
        return _fail("numeric", EXIT_NUMERIC, exc)
    except (OSError, FormatError) as exc:
        return _fail("io", EXIT_IO, exc)
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    raise SystemExit(main())
