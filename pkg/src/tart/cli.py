"""Command-line entry point: ``tart {train,eval,compare,plot,dump-codebook}``.

Exit codes: 0 success, 2 configuration / input error, 3 runtime abort.
The ``TART_OUT`` environment variable sets the default output root.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3

log = logging.getLogger("tart")


def _cmd_train(args) -> int:
    from tart.config import load_config, resolve
    from tart.harness import run_dir, train

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    cfg = resolve(cfg)
    res = train(cfg, run_dir(cfg), progress=args.verbose)
    summary = {"run_dir": str(res.out_dir), "checkpoint": str(res.final_checkpoint),
               "updates": len(res.records),
               "final_return_mean": res.final_eval.mean_return if res.final_eval else None}
    print(json.dumps(summary))
    return EXIT_OK


def _cmd_eval(args) -> int:
    from tart.harness import evaluate, load_checkpoint

    _, cfg, _ = load_checkpoint(args.ckpt)
    summary = evaluate(args.ckpt, env=args.env, episodes=args.episodes, seed=args.seed,
                       maze=args.maze, keep_logs=True)
    env = args.env or cfg.env
    data = {"checkpoint": str(args.ckpt), "env": env, "maze": args.maze or cfg.maze if env == "maze" else None,
            "variant": cfg.variant, "episodes": args.episodes, "seed": args.seed,
            **summary.to_dict(with_logs=True)}
    out = Path(args.out) if args.out else Path(args.ckpt).with_name("eval.json")
    out.write_text(json.dumps(data, indent=1))
    brief = {k: v for k, v in data.items() if k != "episode_logs"}
    brief["episode_logs_file"] = str(out)
    print(json.dumps(brief))
    return EXIT_OK


def _cmd_compare(args) -> int:
    from tart.baselines import format_summary, run_comparison
    from tart.config import ConfigError, RunConfig, load_config

    base = load_config(args.config) if args.config else RunConfig()
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"seeds must be integers: {args.seeds!r}") from exc
    budget = args.steps if args.steps is not None else base.total_steps
    res = run_comparison(args.env, variants, seeds, budget, base, args.out, concurrent=args.concurrent)
    print(format_summary(res.summary))
    print(json.dumps({"table": str(res.table_csv), "json": str(res.table_json),
                      "plot": str(res.plot) if res.plot else None}))
    return EXIT_OK


def _cmd_plot(args) -> int:
    from tart.plotting import plot_inputs

    for p in plot_inputs(args.inputs, args.out):
        print(p)
    return EXIT_OK


def _cmd_dump_codebook(args) -> int:
    from tart.harness import load_checkpoint

    agent, cfg, _ = load_checkpoint(args.ckpt)
    cb = getattr(agent, "codebook", None)
    if cb is None:
        print(f"variant {cfg.variant!r} has no codebook", file=sys.stderr)
        return EXIT_CONFIG
    entries = cb.entries.detach().tolist()
    usage = cb.usage.tolist()
    dead = cb.dead_mask().tolist()
    print(json.dumps({
        "variant": cfg.variant, "num_codes": cb.num_codes, "dim": cb.dim, "beta": cb.beta, "ema": cb.ema,
        "codes": [{"index": k, "usage_ema": usage[k], "dead": dead[k], "entry": entries[k]}
                  for k in range(cb.num_codes)],
    }, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tart", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="run directory (default: $TART_OUT/<env>-<variant>-seed<N>)")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--env", choices=("maze", "combat"))
    e.add_argument("--maze", help="maze name or file (defaults to the training maze)")
    e.add_argument("--out", help="episode-log JSON path (default: eval.json beside the checkpoint)")
    e.set_defaults(func=_cmd_eval)

    c = sub.add_parser("compare", help="multi-seed comparison of variants")
    c.add_argument("--env", required=True, help="maze, combat, or a maze name/file")
    c.add_argument("--variants", required=True, help="comma-separated variant names")
    c.add_argument("--seeds", required=True, help="comma-separated seeds (at least 2)")
    c.add_argument("--steps", type=int, help="environment steps per run (default: config total_steps)")
    c.add_argument("--config", help="base config file")
    c.add_argument("--out", help="output directory (default: $TART_OUT/compare-<env>)")
    c.add_argument("--concurrent", action="store_true", help="run every (variant, seed) as its own process")
    c.set_defaults(func=_cmd_compare)

    pl = sub.add_parser("plot", help="figures from metrics logs / eval files")
    pl.add_argument("--in", dest="inputs", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_cmd_plot)

    d = sub.add_parser("dump-codebook", help="print codebook entries and usage as JSON")
    d.add_argument("--ckpt", required=True)
    d.set_defaults(func=_cmd_dump_codebook)
    return p


def main(argv: list[str] | None = None) -> int:
    from tart.config import ConfigError
    from tart.envs.maze import MazeConfigError
    from tart.harness import CheckpointMismatch, TrainingAbort
    from tart.plotting import EmptyLogError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MazeConfigError, CheckpointMismatch, EmptyLogError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (RuntimeError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
