"""Run configuration: flat ``key=value`` text with ``include=`` support.

Example::

    # bench.cfg
    include=base.cfg
    env=maze
    maze=bench7
    variant=tart
    total_steps=200000
    combat.missiles=4

Lines starting with ``#`` are comments. Later keys override earlier ones,
including keys pulled in by ``include``. Tuple-valued keys use commas.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from tart.agents import CONDITIONS, AgentConfig
from tart.policy import PPOConfig

VARIANTS = ("tart", "hppo", "hyar_lite", "tart_no_vq", "tart_no_contrast")

# Resolved on top of whatever the base config says.
VARIANT_OVERRIDES: dict[str, dict[str, Any]] = {
    "tart": {},
    "hppo": {"condition": "none", "w_nce": 0.0, "w_vq": 0.0, "w_commit": 0.0},
    "hyar_lite": {"condition": "none", "w_nce": 0.0, "w_vq": 0.0, "w_commit": 0.0},
    "tart_no_vq": {"condition": "latent", "w_vq": 0.0, "w_commit": 0.0},
    "tart_no_contrast": {"w_nce": 0.0},
}

ENV_KEYS = ("env", "maze", "combat")


class ConfigError(ValueError):
    pass


def default_out_root() -> str:
    return os.environ.get("TART_OUT", "runs")


@dataclass
class RunConfig:
    env: str = "maze"
    maze: str = "bench7"
    combat: dict = field(default_factory=dict)
    variant: str = "tart"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    total_steps: int = 200_000
    n_envs: int = 16
    rollout_steps: int = 4096
    workers: int = 4
    # policy optimisation
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    epochs: int = 4
    minibatch: int = 256
    lr: float = 3e-4
    max_grad_norm: float = 0.5
    hidden: int = 64
    # representation
    condition: str = "code"
    latent_dim: int = 16
    window: int = 8
    temperature: float = 0.1
    num_codes: int = 16
    beta: float = 0.25
    ema: bool = False
    code_commit: int = 1
    w_nce: float = 1.0
    w_vq: float = 1.0
    w_commit: float = 0.25
    repr_lr: float = 1e-3
    repr_epochs: int = 4
    repr_batch: int = 256
    schedule: str = "joint"
    pretrain_updates: int = 0
    hyar_embed: int = 4
    # evaluation / output
    eval_every: int = 5
    eval_episodes: int = 20
    out_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ("maze", "combat"):
            raise ConfigError(f"env must be maze or combat, got {self.env!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.condition not in CONDITIONS:
            raise ConfigError(f"condition must be one of {CONDITIONS}")
        if min(self.w_nce, self.w_vq, self.w_commit) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.n_envs < 1 or self.workers < 1 or self.rollout_steps < self.n_envs:
            raise ConfigError("need n_envs >= 1, workers >= 1, rollout_steps >= n_envs")
        if self.schedule not in ("joint", "pretrain"):
            raise ConfigError("schedule must be joint or pretrain")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.combat:
            from tart.envs.combat import CombatConfig
            try:
                CombatConfig(**self.combat).validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad combat settings: {exc}") from exc

    # ---------------------------------------------------------- derived
    @property
    def steps_per_env(self) -> int:
        return self.rollout_steps // self.n_envs

    @property
    def num_updates(self) -> int:
        return self.total_steps // (self.steps_per_env * self.n_envs)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            hidden=self.hidden, condition=self.condition, num_codes=self.num_codes,
            latent_dim=self.latent_dim, window=self.window, temperature=self.temperature,
            beta=self.beta, ema=self.ema, code_commit=self.code_commit,
            w_nce=self.w_nce, w_vq=self.w_vq, w_commit=self.w_commit,
            repr_epochs=self.repr_epochs, repr_batch=self.repr_batch,
            hyar=self.variant == "hyar_lite", hyar_embed=self.hyar_embed,
        )

    def ppo_config(self) -> PPOConfig:
        return PPOConfig(self.clip, self.epochs, self.minibatch, self.vf_coef, self.ent_coef, self.max_grad_norm)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def for_variant(self, name: str) -> "RunConfig":
        if name not in VARIANT_OVERRIDES:
            raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
        return self.replace(variant=name, **VARIANT_OVERRIDES[name])

    # ----------------------------------------------------- serialisation
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "combat":
                for k in sorted(v):
                    lines.append(f"combat.{k}={_fmt(v[k])}")
                continue
            lines.append(f"{f.name}={_fmt(v)}")
        return "\n".join(lines) + "\n"

    def env_signature(self) -> dict:
        from tart.envs import make_env
        return make_env(self.env, 0, self.maze, self.combat).signature()

    def env_hash(self) -> str:
        return _hash(self.env_signature())

    def config_hash(self) -> str:
        return _hash({k: v for k, v in self.to_dict().items() if k not in ("out_dir", "workers")})


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, default: Any, name: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw.strip()


def _auto(raw: str):
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


def parse_pairs(text: str, base_dir: Path | None = None, _depth: int = 0) -> dict[str, str]:
    if _depth > 16:
        raise ConfigError("include depth exceeded (cycle?)")
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "include":
            p = Path(val)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"included file not found: {p}")
            out.update(parse_pairs(p.read_text(), p.parent, _depth + 1))
        else:
            out[key] = val
    return out


def from_pairs(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(RunConfig)}
    kw: dict[str, Any] = {}
    combat = dict(base.combat)
    for key, raw in pairs.items():
        if key.startswith("combat."):
            combat[key[len("combat."):]] = _auto(raw)
            continue
        if key not in defaults or key == "combat":
            raise ConfigError(f"unknown config key {key!r}")
        kw[key] = _coerce(raw, defaults[key], key)
    kw["combat"] = combat
    try:
        return dataclasses.replace(base, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    return from_pairs(parse_pairs(text, base_dir))


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), p.parent)


def resolve(cfg: RunConfig) -> RunConfig:
    """Apply the variant's overrides to a loaded configuration."""
    return cfg.for_variant(cfg.variant)
