"""Parameterized-action data model shared by environments, encoders and policies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


class ActionError(ValueError):
    """Raised when a hybrid action does not fit its ActionSpec."""


@dataclass(frozen=True)
class ActionSpec:
    num_discrete: int
    param_dims: tuple[int, ...]
    # one (lo, hi) pair per parameter dimension of each discrete action
    param_bounds: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self):
        if self.num_discrete < 1:
            raise ValueError("num_discrete must be >= 1")
        if len(self.param_dims) != self.num_discrete:
            raise ValueError("param_dims needs one entry per discrete action")
        if len(self.param_bounds) != self.num_discrete:
            raise ValueError("param_bounds needs one entry per discrete action")
        for dim, bounds in zip(self.param_dims, self.param_bounds):
            if dim < 0:
                raise ValueError("param dims must be non-negative")
            if len(bounds) != dim:
                raise ValueError("bounds length must match param dim")
            for lo, hi in bounds:
                if not lo < hi:
                    raise ValueError(f"invalid bound [{lo}, {hi}]")

    @classmethod
    def uniform(cls, num_discrete: int, param_dims: Sequence[int], lo: float = -1.0, hi: float = 1.0) -> "ActionSpec":
        dims = tuple(int(d) for d in param_dims)
        bounds = tuple(tuple((lo, hi) for _ in range(d)) for d in dims)
        return cls(num_discrete, dims, bounds)

    @property
    def max_param_dim(self) -> int:
        return max(self.param_dims) if self.param_dims else 0

    @property
    def flat_dim(self) -> int:
        return self.num_discrete + self.max_param_dim

    def lows(self, k: int) -> np.ndarray:
        return np.array([b[0] for b in self.param_bounds[k]], dtype=np.float64)

    def highs(self, k: int) -> np.ndarray:
        return np.array([b[1] for b in self.param_bounds[k]], dtype=np.float64)


@dataclass(frozen=True)
class HybridAction:
    discrete: int
    params: tuple[float, ...] = ()

    @classmethod
    def make(cls, discrete: int, params: Iterable[float] = ()) -> "HybridAction":
        return cls(int(discrete), tuple(float(p) for p in params))

    def to_dict(self) -> dict:
        return {"discrete": self.discrete, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "HybridAction":
        return cls.make(d["discrete"], d["params"])


@dataclass
class Transition:
    state: np.ndarray
    action: HybridAction
    reward: float
    next_state: np.ndarray
    done: bool
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")


@dataclass
class TrajectorySegment:
    anchor_t: int
    anchor_context: tuple[np.ndarray, HybridAction]
    window: list[tuple[np.ndarray, HybridAction]]


def validate_action(spec: ActionSpec, a: HybridAction) -> tuple[HybridAction, bool]:
    """Check ``a`` against ``spec`` and clip its parameters into bounds.

    Returns the (possibly clipped) action and whether any clipping happened.
    Out-of-range discrete indices and wrong parameter lengths are rejected.
    """
    if not 0 <= a.discrete < spec.num_discrete:
        raise ActionError(f"discrete index {a.discrete} outside [0, {spec.num_discrete})")
    dim = spec.param_dims[a.discrete]
    if len(a.params) != dim:
        raise ActionError(f"expected {dim} params for action {a.discrete}, got {len(a.params)}")
    if dim == 0:
        return a, False
    p = np.asarray(a.params, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ActionError("non-finite action parameters")
    clipped = np.clip(p, spec.lows(a.discrete), spec.highs(a.discrete))
    was_clipped = bool(np.any(clipped != p))
    if not was_clipped:
        return a, False
    return HybridAction.make(a.discrete, clipped), True


def flatten_action(spec: ActionSpec, a: HybridAction) -> np.ndarray:
    """One-hot discrete index followed by zero-padded parameters."""
    out = np.zeros(spec.flat_dim, dtype=np.float64)
    out[a.discrete] = 1.0
    if a.params:
        out[spec.num_discrete:spec.num_discrete + len(a.params)] = a.params
    return out


def extract_segments(traj: Sequence[Transition], H: int, resource_ids: Iterable[int]) -> list[TrajectorySegment]:
    """Cut a fixed-horizon window after every resource event.

    A segment anchored at ``t`` covers steps ``t+1 .. t+H`` and is kept only
    when ``t+H < len(traj)`` and no step in ``t .. t+H-1`` ends the episode.
    """
    if H < 1:
        raise ValueError("horizon must be >= 1")
    resource_ids = set(resource_ids)
    n = len(traj)
    # done_prefix[i] = number of done flags in traj[:i]
    done_prefix = np.zeros(n + 1, dtype=np.int64)
    for i, tr in enumerate(traj):
        done_prefix[i + 1] = done_prefix[i] + int(tr.done)
    segments = []
    for t, tr in enumerate(traj):
        if tr.action.discrete not in resource_ids or t + H >= n:
            continue
        if done_prefix[t + H] - done_prefix[t] > 0:
            continue
        window = [(traj[s].state, traj[s].action) for s in range(t + 1, t + H + 1)]
        segments.append(TrajectorySegment(t, (tr.state, tr.action), window))
    return segments


def segment_arrays(spec: ActionSpec, seg: TrajectorySegment) -> tuple[np.ndarray, np.ndarray]:
    """Encoder inputs for a segment: anchor vector and (H, obs+flat) window matrix."""
    s, a = seg.anchor_context
    anchor = np.concatenate([np.asarray(s, dtype=np.float64), flatten_action(spec, a)])
    window = np.stack([np.concatenate([np.asarray(ws, dtype=np.float64), flatten_action(spec, wa)])
                       for ws, wa in seg.window])
    return anchor, window


# Trajectory persistence: one JSON object per line with keys, in this order,
# state, action{discrete, params}, reward, next_state, done, info.
TRANSITION_FIELDS = ("state", "action", "reward", "next_state", "done", "info")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def transition_to_record(tr: Transition) -> dict:
    return {
        "state": _jsonable(np.asarray(tr.state)),
        "action": tr.action.to_dict(),
        "reward": float(tr.reward),
        "next_state": _jsonable(np.asarray(tr.next_state)),
        "done": bool(tr.done),
        "info": _jsonable(tr.info),
    }


def save_trajectory(path: str | Path, traj: Iterable[Transition]) -> None:
    with open(path, "w") as fh:
        for tr in traj:
            fh.write(json.dumps(transition_to_record(tr)) + "\n")


def load_trajectory(path: str | Path) -> list[Transition]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            out.append(Transition(
                state=np.asarray(r["state"], dtype=np.float64),
                action=HybridAction.from_dict(r["action"]),
                reward=float(r["reward"]),
                next_state=np.asarray(r["next_state"], dtype=np.float64),
                done=bool(r["done"]),
                info=r.get("info", {}),
            ))
    return out
