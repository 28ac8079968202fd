"""Resource-budgeted environments and a small factory."""

from __future__ import annotations

from tart.envs.combat import CombatConfig, CombatEnv
from tart.envs.maze import MazeConfig, MazeEnv, load_maze


def make_env(name: str, seed: int = 0, maze: str = "bench7", combat: dict | None = None):
    if name == "maze":
        return MazeEnv(load_maze(maze), seed=seed)
    if name == "combat":
        return CombatEnv(CombatConfig(**(combat or {})), seed=seed)
    raise ValueError(f"unknown env {name!r}")


__all__ = ["CombatConfig", "CombatEnv", "MazeConfig", "MazeEnv", "load_maze", "make_env"]
