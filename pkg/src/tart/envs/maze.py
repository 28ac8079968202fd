"""Budgeted maze navigation.

The agent moves continuously (cell units) and may spend a limited budget of
DASH actions that jump ``dash_cells`` cells, passing over walls but landing on
a free cell. An exact BFS over (cell, budget_left) serves as optimality oracle
for the discretized problem.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from tart.pamdp import ActionSpec, HybridAction, Transition, validate_action

MOVE, DASH = 0, 1
STEP_REWARD = -0.01
GOAL_REWARD = 1.0
OBS_DIM = 13

ACTION_SPEC = ActionSpec.uniform(2, [2, 2])
RESOURCE_IDS = frozenset({DASH})


class MazeConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MazeConfig:
    grid: np.ndarray  # (rows, cols) bool, True = wall; indexed grid[y, x]
    start_cell: tuple[int, int]  # (x, y)
    goal_cell: tuple[int, int]
    budget: int = 1
    dash_cells: int = 3
    max_steps: int = 50
    step_scale: float = 1.0
    name: str = "maze"

    @property
    def width(self) -> int:
        return int(self.grid.shape[1])

    @property
    def height(self) -> int:
        return int(self.grid.shape[0])

    def is_free(self, cx: int, cy: int) -> bool:
        return 0 <= cx < self.width and 0 <= cy < self.height and not self.grid[cy, cx]

    def validate(self) -> None:
        if self.grid.ndim != 2 or self.grid.size == 0:
            raise MazeConfigError("grid must be a non-empty 2-D matrix")
        if not self.is_free(*self.start_cell):
            raise MazeConfigError(f"start cell {self.start_cell} is not a free cell")
        if not self.is_free(*self.goal_cell):
            raise MazeConfigError(f"goal cell {self.goal_cell} is not a free cell")
        if self.budget < 0:
            raise MazeConfigError("budget must be >= 0")
        if self.dash_cells < 1:
            raise MazeConfigError("dash_cells must be >= 1")
        if self.max_steps < 1:
            raise MazeConfigError("max_steps must be >= 1")
        if not 0 < self.step_scale <= 1.0:
            # larger steps could tunnel through one-cell walls
            raise MazeConfigError("step_scale must be in (0, 1]")

    def describe(self) -> dict:
        return {
            "name": self.name, "width": self.width, "height": self.height,
            "start": list(self.start_cell), "goal": list(self.goal_cell),
            "budget": self.budget, "dash_cells": self.dash_cells,
            "max_steps": self.max_steps, "step_scale": self.step_scale,
            "walls": self.to_text(),
        }

    def to_text(self) -> str:
        header = f"budget={self.budget} dash={self.dash_cells} max_steps={self.max_steps}"
        if self.step_scale != 1.0:
            header += f" step_scale={self.step_scale}"
        rows = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                if (x, y) == self.start_cell:
                    row.append("S")
                elif (x, y) == self.goal_cell:
                    row.append("G")
                else:
                    row.append("#" if self.grid[y, x] else ".")
            rows.append("".join(row))
        return header + "\n" + "\n".join(rows) + "\n"


@dataclass(frozen=True)
class MazeState:
    pos: tuple[float, float]
    budget_left: int
    t: int = 0


def parse_maze(text: str, name: str = "maze") -> MazeConfig:
    """Parse the plain-text maze format.

    First non-empty line is a header such as ``budget=2 dash=3 max_steps=50``
    (``step_scale=`` optional); remaining lines are the grid with ``#`` wall,
    ``.`` free, ``S`` start and ``G`` goal.
    """
    lines = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MazeConfigError("empty maze text")
    header: dict[str, str] = {}
    for tok in lines[0].split():
        if "=" not in tok:
            raise MazeConfigError(f"bad header token {tok!r}")
        k, v = tok.split("=", 1)
        header[k] = v
    rows = [ln.strip() for ln in lines[1:]]
    if not rows or len({len(r) for r in rows}) != 1:
        raise MazeConfigError("grid rows must be non-empty and of equal length")
    grid = np.zeros((len(rows), len(rows[0])), dtype=bool)
    start = goal = None
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                grid[y, x] = True
            elif ch == "S":
                start = (x, y)
            elif ch == "G":
                goal = (x, y)
            elif ch != ".":
                raise MazeConfigError(f"unknown maze symbol {ch!r}")
    if start is None or goal is None:
        raise MazeConfigError("maze needs one S and one G")
    try:
        cfg = MazeConfig(
            grid=grid, start_cell=start, goal_cell=goal,
            budget=int(header.get("budget", 1)),
            dash_cells=int(header.get("dash", 3)),
            max_steps=int(header.get("max_steps", 50)),
            step_scale=float(header.get("step_scale", 1.0)),
            name=name,
        )
    except ValueError as exc:
        raise MazeConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_maze(path_or_name: str | Path) -> MazeConfig:
    """Load a maze file by path, or a shipped maze by bare name (e.g. ``bench7``)."""
    p = Path(path_or_name)
    if p.exists():
        return parse_maze(p.read_text(), name=p.stem)
    res = resources.files("tart.envs").joinpath("mazes", f"{path_or_name}.txt")
    if not res.is_file():
        raise MazeConfigError(f"no maze file or shipped maze named {path_or_name!r}")
    return parse_maze(res.read_text(), name=str(path_or_name))


def shipped_mazes() -> list[str]:
    d = resources.files("tart.envs").joinpath("mazes")
    return sorted(f.name[:-4] for f in d.iterdir() if f.name.endswith(".txt"))


def _cell(pos: tuple[float, float]) -> tuple[int, int]:
    return int(math.floor(pos[0])), int(math.floor(pos[1]))


def observe(config: MazeConfig, state: MazeState) -> np.ndarray:
    """13-dim observation.

    Layout: position (2), goal offset from position (2), both divided by the
    larger maze side; fraction of budget left (1); occupancy of the 8
    neighbouring cells, row-major around the current cell, out-of-bounds
    counted as wall (8).
    """
    scale = float(max(config.width, config.height))
    x, y = state.pos
    gx, gy = config.goal_cell[0] + 0.5, config.goal_cell[1] + 0.5
    cx, cy = _cell(state.pos)
    local = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            local.append(0.0 if config.is_free(cx + dx, cy + dy) else 1.0)
    return np.array([x / scale, y / scale, (gx - x) / scale, (gy - y) / scale,
                     state.budget_left / max(1, config.budget), *local], dtype=np.float64)


def reset(config: MazeConfig, seed: int = 0) -> tuple[MazeState, np.ndarray]:
    # The maze itself is deterministic; seed is accepted for API symmetry.
    config.validate()
    sx, sy = config.start_cell
    state = MazeState(pos=(sx + 0.5, sy + 0.5), budget_left=config.budget, t=0)
    return state, observe(config, state)


def _move(config: MazeConfig, pos: tuple[float, float], dx: float, dy: float) -> tuple[float, float]:
    x, y = pos
    nx = x + config.step_scale * dx
    if 0.0 <= nx < config.width and config.is_free(int(math.floor(nx)), int(math.floor(y))):
        x = nx
    ny = y + config.step_scale * dy
    if 0.0 <= ny < config.height and config.is_free(int(math.floor(x)), int(math.floor(ny))):
        y = ny
    return x, y


def _dash(config: MazeConfig, pos: tuple[float, float], dx: float, dy: float) -> tuple[float, float]:
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        return pos
    ux, uy = dx / norm, dy / norm
    # full-length landing first, then back off one cell-length at a time
    for dist in range(config.dash_cells, 0, -1):
        nx, ny = pos[0] + dist * ux, pos[1] + dist * uy
        if 0.0 <= nx < config.width and 0.0 <= ny < config.height and config.is_free(
                int(math.floor(nx)), int(math.floor(ny))):
            return nx, ny
    return pos


def step(config: MazeConfig, state: MazeState, a: HybridAction) -> tuple[MazeState, float, bool, dict]:
    a, _ = validate_action(ACTION_SPEC, a)
    dx, dy = a.params
    budget = state.budget_left
    wasted = False
    dashed = False
    if a.discrete == DASH and budget > 0:
        pos = _dash(config, state.pos, dx, dy)
        budget -= 1
        dashed = True
    else:
        wasted = a.discrete == DASH
        pos = _move(config, state.pos, dx, dy)
    t = state.t + 1
    new_state = MazeState(pos=pos, budget_left=budget, t=t)
    reached = _cell(pos) == tuple(config.goal_cell)
    reward = STEP_REWARD + (GOAL_REWARD if reached else 0.0)
    done = reached or t >= config.max_steps
    info = {"budget_left": budget, "wasted_resource": wasted, "dashed": dashed,
            "reached_goal": reached, "resource_used": dashed}
    return new_state, reward, done, info


class MazeEnv:
    """Stateful wrapper around :func:`reset` / :func:`step`."""

    obs_dim = OBS_DIM
    action_spec = ACTION_SPEC
    resource_ids = RESOURCE_IDS
    name = "maze"

    def __init__(self, config: MazeConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.state: MazeState | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state, obs = reset(self.config, 0 if seed is None else seed)
        return obs

    def step(self, a: HybridAction) -> tuple[np.ndarray, float, bool, dict]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        self.state, r, done, info = step(self.config, self.state, a)
        info["pos"] = list(self.state.pos)
        return observe(self.config, self.state), r, done, info

    def log_record(self) -> dict:
        s = self.state
        return {"pos": list(s.pos), "budget_left": s.budget_left, "t": s.t}

    def signature(self) -> dict:
        return {"env": "maze", **self.config.describe()}


# ---------------------------------------------------------------- oracle ---

_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _dash_landing(config: MazeConfig, cell: tuple[int, int], d: tuple[int, int]) -> tuple[int, int]:
    for dist in range(config.dash_cells, 0, -1):
        c = (cell[0] + dist * d[0], cell[1] + dist * d[1])
        if config.is_free(*c):
            return c
    return cell


@dataclass
class OracleResult:
    reachable: bool
    steps: int
    ret: float
    plan: list[HybridAction] = field(default_factory=list)


def solve(config: MazeConfig) -> OracleResult:
    """BFS over (cell, budget_left) with unit-cost MOVE and DASH edges."""
    config.validate()
    start = (tuple(config.start_cell), config.budget)
    goal = tuple(config.goal_cell)
    if start[0] == goal:
        return OracleResult(True, 0, GOAL_REWARD, [])
    parent: dict = {start: None}
    queue = deque([start])
    found = None
    while queue and found is None:
        node = queue.popleft()
        cell, b = node
        edges = []
        for d in _DIRS:
            nc = (cell[0] + d[0], cell[1] + d[1])
            if config.is_free(*nc):
                edges.append(((nc, b), HybridAction.make(MOVE, d)))
        if b > 0:
            for d in _DIRS:
                edges.append(((_dash_landing(config, cell, d), b - 1), HybridAction.make(DASH, d)))
        for nxt, act in edges:
            if nxt in parent:
                continue
            parent[nxt] = (node, act)
            if nxt[0] == goal:
                found = nxt
                break
            queue.append(nxt)
    if found is None:
        return OracleResult(False, -1, STEP_REWARD * config.max_steps, [])
    plan = []
    node = found
    while parent[node] is not None:
        node, act = parent[node]
        plan.append(act)
    plan.reverse()
    if len(plan) > config.max_steps:
        return OracleResult(False, -1, STEP_REWARD * config.max_steps, [])
    return OracleResult(True, len(plan), GOAL_REWARD + STEP_REWARD * len(plan), plan)


def oracle_return(config: MazeConfig) -> float:
    """Optimal undiscounted return of the discretized maze (unit-cell moves)."""
    return solve(config).ret


def oracle_actions(config: MazeConfig) -> list[HybridAction]:
    return solve(config).plan


def rollout(config: MazeConfig, actions: list[HybridAction], seed: int = 0) -> list[Transition]:
    state, obs = reset(config, seed)
    traj = []
    for a in actions:
        nstate, r, done, info = step(config, state, a)
        nobs = observe(config, nstate)
        traj.append(Transition(obs, a, r, nobs, done, {**info, "pos": list(nstate.pos)}))
        state, obs = nstate, nobs
        if done:
            break
    return traj


# ------------------------------------------------------------- rendering ---

def render_trajectory(config: MazeConfig, trajectory: list[Transition], path: str | Path,
                      title: str | None = None) -> Path:
    """Draw walls, the path and DASH events (star at the dash origin)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    ax.imshow(config.grid.astype(float), cmap="Greys", origin="upper", vmin=0, vmax=1,
              extent=(0, config.width, config.height, 0))
    sx, sy = config.start_cell
    gx, gy = config.goal_cell
    ax.add_patch(plt.Rectangle((sx, sy), 1, 1, color="tab:green", alpha=0.4))
    ax.add_patch(plt.Rectangle((gx, gy), 1, 1, color="tab:red", alpha=0.4))
    pos = (sx + 0.5, sy + 0.5)
    for tr in trajectory:
        nxt = tuple(tr.info["pos"]) if "pos" in tr.info else pos
        dashed = bool(tr.info.get("dashed", False))
        ax.plot([pos[0], nxt[0]], [pos[1], nxt[1]],
                color="tab:orange" if dashed else "tab:blue",
                linestyle="--" if dashed else "-", linewidth=2)
        if dashed:
            ax.plot([pos[0]], [pos[1]], marker="*", markersize=14, color="tab:orange")
        pos = nxt
    ax.set_xlim(0, config.width)
    ax.set_ylim(config.height, 0)
    ax.set_xticks(range(config.width + 1))
    ax.set_yticks(range(config.height + 1))
    ax.grid(True, linewidth=0.3)
    ax.set_title(title or config.name)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def with_budget(config: MazeConfig, budget: int) -> MazeConfig:
    return replace(config, budget=budget)
