"""Baseline and ablation variants, and the multi-seed comparison runner.

Variants:

``tart``              tactic codes condition the maneuver head; InfoNCE + VQ losses.
``hppo``              plain hybrid PPO, no representation learning.
``hyar_lite``         PPO over a continuous latent action decoded to hybrid actions.
``tart_no_vq``        the continuous anchor latent conditions the policy (no quantization).
``tart_no_contrast``  tart with the InfoNCE weight set to 0.

Results table columns (``results.csv`` / ``results.json``, one row per
variant x seed):

=====================  ===========================================================
variant                variant name
seed                   run seed
status                 ``ok`` or ``failed``
steps                  environment steps consumed
final_return_mean      mean greedy return at the last evaluation
final_return_std       std of those returns
best_return_mean       best evaluation mean seen during training
final_mi_estimate      MI estimate at the last update (empty if not applicable)
final_perplexity       codebook perplexity at the last update (empty if not applicable)
final_dead_codes       dead codes at the last update (empty if not applicable)
wall_clock_s           training wall-clock seconds
run_dir                directory holding the run's artifacts
error                  exception text for failed runs
=====================  ===========================================================
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tart.config import VARIANT_OVERRIDES, VARIANTS, ConfigError, RunConfig
from tart.envs.maze import MazeConfigError, load_maze

log = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "variant", "seed", "status", "steps", "final_return_mean", "final_return_std", "best_return_mean",
    "final_mi_estimate", "final_perplexity", "final_dead_codes", "wall_clock_s", "run_dir", "error",
)
DETERMINISTIC_COLUMNS = tuple(c for c in RESULT_COLUMNS if c not in ("wall_clock_s", "run_dir"))


@dataclass(frozen=True)
class VariantSpec:
    name: str
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ConfigError(f"unknown variant {self.name!r}; expected one of {VARIANTS}")

    def apply(self, base: RunConfig) -> RunConfig:
        return base.for_variant(self.name).replace(**self.overrides)


def build_variant(spec: VariantSpec | str, base: RunConfig | None = None):
    """Agent for ``spec`` built from ``base`` (defaults if omitted)."""
    from tart.harness import build_agent

    if isinstance(spec, str):
        spec = VariantSpec(spec)
    return build_agent(spec.apply(base or RunConfig()))


def variant_config_diff(a: str, b: str, base: RunConfig | None = None) -> dict:
    """Keys (other than the variant name) whose resolved values differ."""
    base = base or RunConfig()
    da, db = base.for_variant(a).to_dict(), base.for_variant(b).to_dict()
    return {k: (da[k], db[k]) for k in da if k != "variant" and da[k] != db[k]}


def env_config(env: str, base: RunConfig) -> RunConfig:
    """Accept ``maze``, ``combat``, or a maze name / maze file."""
    if env in ("maze", "combat"):
        return base.replace(env=env)
    try:
        load_maze(env)
    except MazeConfigError as exc:
        raise ConfigError(f"unknown environment {env!r}: {exc}") from exc
    return base.replace(env="maze", maze=env)


def _run_one(cfg_dict: dict, out_dir: str) -> dict:
    from tart.harness import train

    cfg = RunConfig(**{**cfg_dict, "seeds": tuple(cfg_dict["seeds"])})
    row = {c: None for c in RESULT_COLUMNS}
    row.update(variant=cfg.variant, seed=cfg.seed, run_dir=out_dir, status="failed")
    t0 = time.perf_counter()
    try:
        res = train(cfg, out_dir)
        recs = res.records
        evals = [r["eval_return_mean"] for r in recs if r.get("eval_return_mean") is not None]
        last = recs[-1] if recs else {}
        row.update(
            status="ok", steps=last.get("step", 0),
            final_return_mean=res.final_eval.mean_return if res.final_eval else None,
            final_return_std=res.final_eval.std_return if res.final_eval else None,
            best_return_mean=max(evals) if evals else None,
            final_mi_estimate=last.get("mi_estimate"), final_perplexity=last.get("perplexity"),
            final_dead_codes=last.get("dead_codes"),
        )
    except Exception as exc:  # a crashed variant is recorded, the sweep goes on
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.error("run %s seed %s failed:\n%s", cfg.variant, cfg.seed, traceback.format_exc())
    row["wall_clock_s"] = time.perf_counter() - t0
    return row


@dataclass
class ComparisonResult:
    rows: list[dict]
    summary: dict[str, dict]
    table_csv: Path
    table_json: Path
    plot: Path | None

    def mean_final(self, variant: str) -> float | None:
        return self.summary.get(variant, {}).get("final_return_mean")


def summarize(rows: list[dict]) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for v in dict.fromkeys(r["variant"] for r in rows):
        ok = [r for r in rows if r["variant"] == v and r["status"] == "ok" and r["final_return_mean"] is not None]
        finals = np.asarray([r["final_return_mean"] for r in ok], dtype=float)
        wall = [r["wall_clock_s"] for r in rows if r["variant"] == v]
        out[v] = {
            "runs": sum(r["variant"] == v for r in rows),
            "failed": sum(r["variant"] == v and r["status"] != "ok" for r in rows),
            "final_return_mean": float(finals.mean()) if finals.size else None,
            "final_return_std": float(finals.std()) if finals.size else None,
            "wall_clock_s_mean": float(np.mean(wall)) if wall else None,
        }
    return out


def write_table(rows: list[dict], summary: dict, out_dir: Path) -> tuple[Path, Path]:
    csv_path, json_path = out_dir / "results.csv", out_dir / "results.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(RESULT_COLUMNS))
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r.get(k) is None else r[k] for k in RESULT_COLUMNS})
    json_path.write_text(json.dumps({"columns": list(RESULT_COLUMNS), "rows": rows, "summary": summary},
                                    indent=2, default=str))
    return csv_path, json_path


def run_comparison(env: str, variants: list[str], seeds: list[int], budget: int,
                   base: RunConfig | None = None, out_dir: str | Path | None = None,
                   concurrent: bool = False) -> ComparisonResult:
    """Train every (variant, seed) pair with the same budget and tabulate the results.

    Seeds run sequentially unless ``concurrent`` is set, in which case each
    run is an independent process with its own output directory.
    """
    from tart.config import default_out_root
    from tart.harness import read_metrics
    from tart.plotting import EmptyLogError, learning_curves

    if len(seeds) < 2:
        raise ConfigError("a comparison needs at least 2 seeds")
    specs = [VariantSpec(v) for v in variants]
    base = env_config(env, (base or RunConfig()).replace(total_steps=budget, seeds=tuple(seeds)))
    out = Path(out_dir) if out_dir is not None else Path(default_out_root()) / f"compare-{Path(env).stem}"
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for spec in specs:
        for s in seeds:
            cfg = spec.apply(base).replace(seed=s)
            jobs.append((cfg.to_dict(), str(out / f"{spec.name}-seed{s}")))
    if concurrent:
        import multiprocessing as mp

        with ProcessPoolExecutor(max_workers=len(jobs), mp_context=mp.get_context("spawn")) as ex:
            rows = list(ex.map(_run_one, *zip(*jobs)))
    else:
        rows = [_run_one(*job) for job in jobs]
    summary = summarize(rows)
    csv_path, json_path = write_table(rows, summary, out)
    runs = {}
    for r in rows:
        m = Path(r["run_dir"]) / "metrics.jsonl"
        if r["status"] == "ok" and m.exists():
            runs.setdefault(r["variant"], []).append(read_metrics(m))
    plot = None
    try:
        plot = learning_curves(runs, out / "comparison.png", title=f"{env}: {budget} steps")
    except EmptyLogError:
        log.warning("no successful runs to plot")
    return ComparisonResult(rows, summary, csv_path, json_path, plot)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    return f"{x:.3f}" if isinstance(x, float) else str(x)


def format_summary(summary: dict) -> str:
    lines = [f"{'variant':<18} {'runs':>4} {'failed':>6} {'final return':>18}"]
    for v, s in summary.items():
        ret = f"{_fmt(s['final_return_mean'])} +- {_fmt(s['final_return_std'])}"
        lines.append(f"{v:<18} {s['runs']:>4} {s['failed']:>6} {ret:>18}")
    return "\n".join(lines)


__all__ = ["VARIANTS", "VARIANT_OVERRIDES", "VariantSpec", "build_variant", "run_comparison",
           "variant_config_diff", "ComparisonResult", "RESULT_COLUMNS", "format_summary"]
