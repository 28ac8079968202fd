"""Tactic-conditioned hybrid actor-critic and its clipped policy-gradient update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tart.pamdp import ActionSpec

LOGSTD_MIN, LOGSTD_MAX = -5.0, 2.0
LOG2 = math.log(2.0)


class NonFiniteLoss(RuntimeError):
    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics


def _layer(i, o, std=math.sqrt(2.0)):
    lin = nn.Linear(i, o)
    nn.init.orthogonal_(lin.weight, std)
    nn.init.zeros_(lin.bias)
    return lin


def _trunk(in_dim: int, hidden: int, depth: int = 2) -> nn.Sequential:
    layers: list[nn.Module] = []
    d = in_dim
    for _ in range(depth):
        layers += [_layer(d, hidden), nn.Tanh()]
        d = hidden
    return nn.Sequential(*layers)


# ---------------------------------------------------------- squashed normal ---

def squash(u: torch.Tensor, lo: torch.Tensor, hi: torch.Tensor) -> torch.Tensor:
    return lo + 0.5 * (torch.tanh(u) + 1.0) * (hi - lo)


def log_tanh_jacobian(u: torch.Tensor) -> torch.Tensor:
    """log(1 - tanh(u)^2) evaluated without cancellation."""
    return 2.0 * (LOG2 - u - F.softplus(-2.0 * u))


def squashed_log_prob(u, mean, logstd, lo, hi, mask) -> torch.Tensor:
    """Log-density of ``squash(u)`` under N(mean, exp(logstd)) pushed through the squash."""
    var = torch.exp(2.0 * logstd)
    normal = -0.5 * (u - mean) ** 2 / var - logstd - 0.5 * math.log(2.0 * math.pi)
    per_dim = normal - log_tanh_jacobian(u) - torch.log(0.5 * (hi - lo))
    return (per_dim * mask).sum(-1)


def gaussian_entropy(logstd, mask) -> torch.Tensor:
    return ((0.5 + 0.5 * math.log(2.0 * math.pi) + logstd) * mask).sum(-1)


def bound_logstd(x: torch.Tensor) -> torch.Tensor:
    return LOGSTD_MIN + 0.5 * (torch.tanh(x) + 1.0) * (LOGSTD_MAX - LOGSTD_MIN)


@dataclass
class PolicyOutput:
    discrete_probs: torch.Tensor
    code_probs: torch.Tensor | None
    maneuver_mean: torch.Tensor
    maneuver_logstd: torch.Tensor
    value: torch.Tensor


class SpecBounds(nn.Module):
    """Per-discrete-action bound and mask tables padded to the widest branch."""

    def __init__(self, spec: ActionSpec):
        super().__init__()
        p = max(1, spec.max_param_dim)
        lo = torch.zeros(spec.num_discrete, p)
        hi = torch.ones(spec.num_discrete, p)
        mask = torch.zeros(spec.num_discrete, p)
        for k in range(spec.num_discrete):
            d = spec.param_dims[k]
            if d:
                lo[k, :d] = torch.as_tensor(spec.lows(k), dtype=torch.float32)
                hi[k, :d] = torch.as_tensor(spec.highs(k), dtype=torch.float32)
                mask[k, :d] = 1.0
        self.register_buffer("lo", lo)
        self.register_buffer("hi", hi)
        self.register_buffer("mask", mask)
        self.width = p


class TacticPolicy(nn.Module):
    """Actor-critic over hybrid actions.

    ``cond_dim`` > 0 adds a conditioning vector (a codebook entry or a
    continuous latent) to the maneuver head input; ``num_codes`` > 0 adds a
    categorical head that picks which code to condition on.
    """

    def __init__(self, obs_dim: int, spec: ActionSpec, hidden: int = 64,
                 num_codes: int = 0, cond_dim: int = 0):
        super().__init__()
        self.obs_dim = obs_dim
        self.spec = spec
        self.num_codes = num_codes
        self.cond_dim = cond_dim
        self.bounds = SpecBounds(spec)
        p = self.bounds.width
        self.trunk = _trunk(obs_dim, hidden)
        self.discrete_head = _layer(hidden, spec.num_discrete, 0.01)
        self.code_head = _layer(hidden, num_codes, 0.01) if num_codes else None
        self.maneuver = _trunk(obs_dim + spec.num_discrete + cond_dim, hidden)
        self.mean_head = _layer(hidden, p, 0.01)
        self.logstd_head = _layer(hidden, p, 0.01)
        self.critic = nn.Sequential(_trunk(obs_dim, hidden), _layer(hidden, 1, 1.0))

    def check_obs(self, obs: torch.Tensor) -> None:
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != {self.obs_dim}")

    def heads(self, obs: torch.Tensor):
        self.check_obs(obs)
        h = self.trunk(obs)
        code_logits = self.code_head(h) if self.code_head is not None else None
        return self.discrete_head(h), code_logits, self.critic(obs).squeeze(-1)

    def maneuver_params(self, obs: torch.Tensor, discrete: torch.Tensor, cond: torch.Tensor | None):
        parts = [obs, F.one_hot(discrete, self.spec.num_discrete).to(obs.dtype)]
        if self.cond_dim:
            parts.append(cond)
        h = self.maneuver(torch.cat(parts, -1))
        # pre-activation clamp keeps the mean inside tanh's useful range
        mean = 3.0 * torch.tanh(self.mean_head(h) / 3.0)
        return mean, bound_logstd(self.logstd_head(h))

    def output(self, obs, discrete, cond=None) -> PolicyOutput:
        d_logits, c_logits, value = self.heads(obs)
        mean, logstd = self.maneuver_params(obs, discrete, cond)
        return PolicyOutput(
            torch.softmax(d_logits, -1),
            torch.softmax(c_logits, -1) if c_logits is not None else None,
            mean, logstd, value,
        )


# ---------------------------------------------------------------- GAE ---

def gae_advantages(rewards, values, dones, gamma: float, lam: float, last_value=0.0):
    """Generalized advantage estimates and value targets along the first axis.

    ``dones[t]`` cuts the bootstrap from step t to t+1. ``last_value`` is the
    critic estimate for the state following the final step.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must have equal shapes")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lambda must lie in [0, 1]")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.broadcast_to(np.asarray(last_value, dtype=np.float64), rewards.shape[1:]).copy()
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------- PPO ---

@dataclass
class RolloutBatch:
    """Flattened on-policy data. ``actions`` holds the agent-specific stored tensors."""

    obs: torch.Tensor
    actions: dict[str, torch.Tensor]
    log_probs: torch.Tensor
    rewards: torch.Tensor
    value_targets: torch.Tensor
    advantages: torch.Tensor
    dones: torch.Tensor

    def __post_init__(self):
        n = self.obs.shape[0]
        for name in ("log_probs", "rewards", "value_targets", "advantages", "dones"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length differs from obs")
        for k, v in self.actions.items():
            if v.shape[0] != n:
                raise ValueError(f"action field {k} length differs from obs")
        if not torch.all(torch.isfinite(self.advantages)):
            raise ValueError("advantages must be finite")

    def __len__(self):
        return self.obs.shape[0]

    def subset(self, idx: torch.Tensor) -> "RolloutBatch":
        return RolloutBatch(self.obs[idx], {k: v[idx] for k, v in self.actions.items()},
                            self.log_probs[idx], self.rewards[idx], self.value_targets[idx],
                            self.advantages[idx], self.dones[idx])


@dataclass
class PPOConfig:
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    max_grad_norm: float = 0.5


def normalize_advantages(adv: torch.Tensor) -> torch.Tensor:
    # a single sample has no spread to normalise by; keep its sign
    if adv.numel() < 2:
        return adv
    return (adv - adv.mean()) / torch.clamp(adv.std(), min=1e-8)


def ppo_loss(agent, mb: RolloutBatch, cfg: PPOConfig, adv: torch.Tensor):
    """Clipped surrogate + value loss - entropy bonus, plus diagnostics."""
    logp, entropy, values = agent.evaluate_actions(mb.obs, mb.actions)
    log_ratio = logp - mb.log_probs
    ratio = torch.exp(log_ratio)
    pg = -torch.min(ratio * adv, torch.clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv).mean()
    v_loss = 0.5 * ((values - mb.value_targets) ** 2).mean()
    ent = entropy.mean()
    loss = pg + cfg.vf_coef * v_loss - cfg.ent_coef * ent
    with torch.no_grad():
        kl = ((ratio - 1.0) - log_ratio).mean()
        clip_frac = ((ratio - 1.0).abs() > cfg.clip).float().mean()
    return loss, {"policy_loss": pg.detach(), "value_loss": v_loss.detach(),
                  "entropy": ent.detach(), "kl": kl, "clip_fraction": clip_frac}


def ppo_update(agent, batch: RolloutBatch, optimizer: torch.optim.Optimizer, cfg: PPOConfig,
               generator: torch.Generator | None = None) -> dict[str, float]:
    """Run ``cfg.epochs`` passes of minibatch clipped-surrogate updates.

    Returns means of the per-minibatch statistics. Raises NonFiniteLoss
    (before stepping) if any minibatch loss is not finite.
    """
    adv_all = normalize_advantages(batch.advantages)
    n = len(batch)
    params = [p for g in optimizer.param_groups for p in g["params"]]
    sums: dict[str, float] = {}
    count = 0
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=generator)
        for start in range(0, n, cfg.minibatch):
            idx = perm[start:start + cfg.minibatch]
            mb = batch.subset(idx)
            loss, stats = ppo_loss(agent, mb, cfg, adv_all[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss("non-finite PPO loss", {
                    "epoch": epoch, "minibatch_start": start,
                    **{k: float(v) for k, v in stats.items()}})
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(params, cfg.max_grad_norm)
            optimizer.step()
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + float(v)
            count += 1
    return {k: v / max(1, count) for k, v in sums.items()}
