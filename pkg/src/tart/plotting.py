"""Figures from metrics logs and evaluation episode logs.

All figures are written with the Agg backend and without a timestamped
``Software`` tag, so identical inputs give byte-identical PNG files.
"""

from __future__ import annotations

import json
from pathlib import Path
from types import SimpleNamespace

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PANELS = (
    ("eval_return_mean", "eval return"),
    ("mi_estimate", "MI estimate (nats)"),
    ("perplexity", "codebook perplexity"),
)


class EmptyLogError(ValueError):
    pass


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _series(records: list[dict], key: str) -> tuple[np.ndarray, np.ndarray]:
    pts = [(r["step"], r[key]) for r in records if r.get(key) is not None]
    if not pts:
        return np.empty(0), np.empty(0)
    s, v = zip(*pts)
    return np.asarray(s, dtype=float), np.asarray(v, dtype=float)


def _aggregate(logs: list[list[dict]], key: str):
    """Mean and std across seeds on the steps every seed reported."""
    series = [_series(lg, key) for lg in logs]
    series = [s for s in series if s[0].size]
    if not series:
        return None
    common = sorted(set.intersection(*(set(s[0].tolist()) for s in series)))
    if not common:
        return None
    vals = np.stack([[dict(zip(s[0].tolist(), s[1].tolist()))[c] for c in common] for s in series])
    return np.asarray(common), vals.mean(0), vals.std(0), len(series)


def learning_curves(runs: dict[str, list[list[dict]]], path: str | Path, title: str | None = None) -> Path:
    """Return, MI and perplexity panels; one line per label, shaded +-std over seeds.

    A panel is drawn only if some log carries that column. Raises
    EmptyLogError if there is nothing to draw at all.
    """
    if not runs or all(not lg for logs in runs.values() for lg in logs):
        raise EmptyLogError("no metrics records to plot")
    panels = [(k, name) for k, name in PANELS
              if any(_aggregate(logs, k) is not None for logs in runs.values())]
    if not panels:
        raise EmptyLogError("metrics logs contain none of the plotted columns")
    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 3.5), dpi=100, squeeze=False)
    for ax, (key, name) in zip(axes[0], panels):
        for label in sorted(runs):
            agg = _aggregate(runs[label], key)
            if agg is None:
                continue
            x, mean, std, n = agg
            line, = ax.plot(x, mean, label=f"{label} (n={n})")
            if n > 1:
                ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2)
        ax.set_xlabel("environment steps")
        ax.set_ylabel(name)
        ax.grid(True, linewidth=0.3)
    axes[0][0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, Path(path))


def code_usage_timeline(episode_logs: list[list[dict]], path: str | Path, num_codes: int | None = None) -> Path:
    """Tactic code per step for each episode; resource events are marked."""
    if not episode_logs or all(not ep for ep in episode_logs):
        raise EmptyLogError("no episode records to plot")
    fig, ax = plt.subplots(figsize=(7, 1.0 + 0.4 * len(episode_logs)), dpi=100)
    top = num_codes or 1 + max((rec.get("code", -1) for ep in episode_logs for rec in ep), default=0)
    for i, ep in enumerate(episode_logs):
        codes = np.asarray([rec.get("code", -1) for rec in ep], dtype=float)
        codes[codes < 0] = np.nan
        ax.scatter(np.arange(len(ep)), np.full(len(ep), i), c=codes, cmap="tab20", vmin=0,
                   vmax=max(1, top - 1), marker="s", s=18)
        ev = [t for t, rec in enumerate(ep) if rec.get("events", {}).get("resource_used")]
        ax.scatter(ev, np.full(len(ev), i + 0.3), marker="v", color="k", s=10)
    ax.set_xlabel("step")
    ax.set_ylabel("episode")
    ax.set_yticks(range(len(episode_logs)))
    ax.set_title("tactic code per step (triangles: resource used)")
    fig.tight_layout()
    return _save(fig, Path(path))


def maze_renders(maze_name: str, episode_logs: list[list[dict]], out_dir: str | Path, limit: int = 4) -> list[Path]:
    from tart.envs.maze import load_maze, render_trajectory

    if not episode_logs:
        raise EmptyLogError("no episode records to plot")
    cfg = load_maze(maze_name)
    out = []
    for i, ep in enumerate(episode_logs[:limit]):
        steps = [SimpleNamespace(info={"pos": rec["pos"], "dashed": bool(rec.get("events", {}).get("dashed"))})
                 for rec in ep]
        out.append(render_trajectory(cfg, steps, Path(out_dir) / f"trajectory_{i}.png",
                                     title=f"{cfg.name} episode {i}"))
    return out


# ------------------------------------------------------------ discovery ---

def _label_for(run_dir: Path) -> str:
    cfg = run_dir / "config.txt"
    if cfg.exists():
        for line in cfg.read_text().splitlines():
            if line.startswith("variant="):
                return line.split("=", 1)[1]
    return run_dir.name


def _metrics_files(p: Path) -> list[Path]:
    if p.is_file():
        return [p] if p.suffix == ".jsonl" else []
    return sorted(p.rglob("metrics.jsonl"))


def plot_inputs(inputs: list[str | Path], out_dir: str | Path) -> list[Path]:
    """Plot every metrics log and evaluation file found under ``inputs``.

    Metrics logs are grouped by their run's variant; ``*.json`` evaluation
    summaries carrying ``episode_logs`` yield code timelines and, for mazes,
    trajectory renders.
    """
    from tart.harness import read_metrics

    out_dir = Path(out_dir)
    runs: dict[str, list[list[dict]]] = {}
    evals: list[Path] = []
    for raw in inputs:
        p = Path(raw)
        if not p.exists():
            raise FileNotFoundError(p)
        for f in _metrics_files(p):
            runs.setdefault(_label_for(f.parent), []).append(read_metrics(f))
        if p.is_file() and p.suffix == ".json":
            evals.append(p)
        elif p.is_dir():
            evals += sorted(p.rglob("eval*.json"))
    written: list[Path] = []
    if runs:
        written.append(learning_curves(runs, out_dir / "learning_curves.png"))
    for i, f in enumerate(evals):
        data = json.loads(f.read_text())
        logs = data.get("episode_logs")
        if not logs:
            continue
        stem = f"{f.stem}_{i}"
        written.append(code_usage_timeline(logs, out_dir / f"{stem}_codes.png"))
        if data.get("env") == "maze" and data.get("maze"):
            written += maze_renders(data["maze"], logs, out_dir / stem)
    if not written:
        raise EmptyLogError(f"no plottable logs under {', '.join(map(str, inputs))}")
    return written
