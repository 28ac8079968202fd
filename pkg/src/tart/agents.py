"""Trainable agents: the tactic-conditioned agent (and its ablations) and a reduced HyAR.

Every agent exposes the same surface to the harness:

* ``act(obs, mode, generator, carry)`` -> :class:`ActResult`
* ``evaluate_actions(obs, actions)`` -> (log_probs, entropy, values)
* ``aux_update(anchors, windows, rollout, optimizer, generator, rng)`` -> stats
* ``policy_parameters()`` / ``aux_parameters()`` for the two optimizers
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tart.codebook import Codebook
from tart.pamdp import ActionSpec, HybridAction
from tart.policy import (NonFiniteLoss, PPOConfig, RolloutBatch, SpecBounds, TacticPolicy, _layer, _trunk,
                         bound_logstd, gaussian_entropy, ppo_loss, squash, squashed_log_prob)
from tart.repr import EncoderConfig, TemporalRepr, infonce_loss

DTYPE = torch.float64
CONDITIONS = ("code", "latent", "none")


@dataclass
class AgentConfig:
    hidden: int = 64
    condition: str = "code"  # code | latent | none
    num_codes: int = 16
    latent_dim: int = 16
    window: int = 8
    temperature: float = 0.1
    beta: float = 0.25
    ema: bool = False
    code_commit: int = 1
    w_nce: float = 1.0
    w_vq: float = 1.0
    w_commit: float = 0.25
    repr_epochs: int = 4
    repr_batch: int = 256
    hyar: bool = False
    hyar_embed: int = 4

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}")
        if min(self.w_nce, self.w_vq, self.w_commit) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.code_commit < 1:
            raise ValueError("code_commit must be >= 1")


@dataclass
class ActResult:
    actions: list[HybridAction]
    stored: dict[str, torch.Tensor]
    log_prob: torch.Tensor
    value: torch.Tensor
    codes: np.ndarray  # -1 where the agent has no tactic code


@dataclass
class Carry:
    """Per-environment acting state kept between steps (tactic commitment)."""

    code: np.ndarray
    left: np.ndarray

    @classmethod
    def fresh(cls, n: int) -> "Carry":
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))

    def episode_end(self, i: int) -> None:
        self.left[i] = 0


def _zero_stats() -> dict:
    return {"nce_loss": 0.0, "mi_estimate": None, "vq_codebook_loss": 0.0,
            "vq_commit_loss": 0.0, "perplexity": None, "dead_codes": None,
            "repr_samples": 0}


def _to_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def _sample_categorical(logits: torch.Tensor, greedy: bool, gen: torch.Generator | None) -> torch.Tensor:
    if greedy:
        return torch.argmax(logits, -1)
    return torch.multinomial(torch.softmax(logits, -1), 1, generator=gen).squeeze(-1)


def _actions_from_params(spec: ActionSpec, discrete: np.ndarray, params: np.ndarray) -> list[HybridAction]:
    out = []
    for k, p in zip(discrete.tolist(), params):
        dim = spec.param_dims[k]
        q = np.clip(p[:dim], spec.lows(k), spec.highs(k)) if dim else ()
        out.append(HybridAction.make(k, q))
    return out


class TacticAgent(nn.Module):
    """Hybrid policy conditioned on tactic codes, continuous latents, or nothing.

    ``condition="code"``: a policy head picks a codebook entry that conditions
    the maneuver head; the codebook is fitted to quantized window latents.
    ``condition="latent"``: the anchor-encoder latent of (obs, chosen discrete
    action) conditions the maneuver head directly (no quantization).
    ``condition="none"``: plain hybrid PPO.
    """

    def __init__(self, obs_dim: int, spec: ActionSpec, resource_ids, cfg: AgentConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.obs_dim = obs_dim
        self.spec = spec
        self.resource_ids = frozenset(resource_ids)
        self.cfg = cfg
        use_codes = cfg.condition == "code"
        cond_dim = cfg.latent_dim if cfg.condition != "none" else 0
        self.policy = TacticPolicy(obs_dim, spec, cfg.hidden,
                                   num_codes=cfg.num_codes if use_codes else 0, cond_dim=cond_dim)
        row_dim = obs_dim + spec.flat_dim
        has_repr = cfg.condition != "none" or cfg.w_nce > 0
        enc_cfg = EncoderConfig(cfg.latent_dim, (cfg.hidden, cfg.hidden), cfg.window, cfg.temperature)
        self.repr = TemporalRepr(row_dim, row_dim, enc_cfg) if has_repr else None
        self.codebook = Codebook(cfg.num_codes, cfg.latent_dim, cfg.beta, ema=cfg.ema,
                                 generator=generator) if use_codes else None
        self.to(DTYPE)

    # -------------------------------------------------------------- params
    def policy_parameters(self):
        return list(self.policy.parameters())

    def aux_parameters(self):
        params = []
        if self.repr is not None:
            params += list(self.repr.parameters())
        if self.codebook is not None and not self.cfg.ema:
            params.append(self.codebook.entries)
        return params

    @property
    def has_representation(self) -> bool:
        c = self.cfg
        return self.repr is not None and (c.w_nce > 0 or (self.codebook is not None and (c.w_vq > 0 or c.w_commit > 0)))

    # ------------------------------------------------------------- acting
    def _cond(self, obs: torch.Tensor, discrete: torch.Tensor, code: torch.Tensor) -> torch.Tensor | None:
        if self.cfg.condition == "code":
            return self.codebook.entries.detach()[code]
        if self.cfg.condition == "latent":
            flat = torch.zeros(obs.shape[0], self.spec.flat_dim, dtype=obs.dtype)
            flat[torch.arange(obs.shape[0]), discrete] = 1.0
            return self.repr.anchor(torch.cat([obs, flat], -1)).detach()
        return None

    @torch.no_grad()
    def act(self, obs, mode: str = "sample", generator: torch.Generator | None = None,
            carry: Carry | None = None) -> ActResult:
        if mode not in ("sample", "greedy"):
            raise ValueError("mode must be 'sample' or 'greedy'")
        greedy = mode == "greedy"
        obs_t = _to_tensor(obs)
        if obs_t.dim() == 1:
            obs_t = obs_t.unsqueeze(0)
        self.policy.check_obs(obs_t)
        n = obs_t.shape[0]
        d_logits, c_logits, value = self.policy.heads(obs_t)
        discrete = _sample_categorical(d_logits, greedy, generator)
        if c_logits is not None:
            sampled = _sample_categorical(c_logits, greedy, generator)
            if carry is None:
                new = torch.ones(n, dtype=torch.bool)
                code = sampled
            else:
                new = torch.as_tensor(carry.left <= 0)
                code = torch.where(new, sampled, torch.as_tensor(carry.code))
                carry.code = code.numpy().copy()
                carry.left = np.where(new.numpy(), self.cfg.code_commit, carry.left) - 1
        else:
            code = torch.full((n,), -1, dtype=torch.long)
            new = torch.zeros(n, dtype=torch.bool)
        cond = self._cond(obs_t, discrete, code.clamp(min=0))
        mean, logstd = self.policy.maneuver_params(obs_t, discrete, cond)
        if greedy:
            raw = mean
        else:
            raw = mean + torch.exp(logstd) * torch.randn(mean.shape, generator=generator, dtype=DTYPE)
        stored = {"discrete": discrete, "code": code, "code_new": new.to(DTYPE), "raw": raw}
        if cond is not None:
            stored["cond"] = cond
        logp, _, _ = self._evaluate(obs_t, stored, d_logits, c_logits, mean, logstd, value)
        b = self.policy.bounds
        params = squash(raw, b.lo[discrete], b.hi[discrete]).numpy()
        actions = _actions_from_params(self.spec, discrete.numpy(), params)
        return ActResult(actions, stored, logp, value, code.numpy().copy())

    # --------------------------------------------------------- evaluation
    def _evaluate(self, obs, a, d_logits, c_logits, mean, logstd, value):
        b = self.policy.bounds
        d = a["discrete"]
        d_logp_all = F.log_softmax(d_logits, -1)
        logp = d_logp_all.gather(-1, d.unsqueeze(-1)).squeeze(-1)
        ent = -(d_logp_all.exp() * d_logp_all).sum(-1)
        if c_logits is not None:
            c_logp_all = F.log_softmax(c_logits, -1)
            c = a["code"].clamp(min=0)
            logp = logp + a["code_new"] * c_logp_all.gather(-1, c.unsqueeze(-1)).squeeze(-1)
            ent = ent - (c_logp_all.exp() * c_logp_all).sum(-1)
        mask = b.mask[d]
        logp = logp + squashed_log_prob(a["raw"], mean, logstd, b.lo[d], b.hi[d], mask)
        ent = ent + gaussian_entropy(logstd, mask)
        return logp, ent, value

    def evaluate_actions(self, obs: torch.Tensor, actions: dict[str, torch.Tensor]):
        obs = _to_tensor(obs) if not isinstance(obs, torch.Tensor) else obs
        if obs.shape[0] != actions["discrete"].shape[0]:
            raise ValueError("observation and action batch sizes differ")
        d_logits, c_logits, value = self.policy.heads(obs)
        cond = actions.get("cond") if self.cfg.condition != "none" else None
        mean, logstd = self.policy.maneuver_params(obs, actions["discrete"], cond)
        return self._evaluate(obs, actions, d_logits, c_logits, mean, logstd, value)

    def distribution_entropy_terms(self, obs) -> dict[str, torch.Tensor]:
        d_logits, c_logits, _ = self.policy.heads(_to_tensor(obs))
        out = {"discrete": torch.distributions.Categorical(logits=d_logits).entropy()}
        if c_logits is not None:
            out["code"] = torch.distributions.Categorical(logits=c_logits).entropy()
        return out

    # ----------------------------------------------------- representation
    def repr_losses(self, anchors: torch.Tensor, windows: torch.Tensor, beta: float = 1.0):
        """Unweighted (nce, codebook, commitment) losses plus latents and code indices.

        The commitment term is returned with ``beta`` (default 1); the harness
        applies its own ``w_commit`` weight on top.
        """
        _, z_a, z_m = self.repr(anchors, windows)
        nce = infonce_loss(z_a, z_m, self.cfg.temperature)
        zero = torch.zeros((), dtype=DTYPE)
        if self.codebook is None:
            return nce, zero, zero, z_m, None
        idx, e = self.codebook.quantize(z_m)
        cb, commit = self.codebook.losses(z_m, e, beta)
        return nce, cb, commit, z_m, idx

    def composite_loss(self, mb: RolloutBatch, adv: torch.Tensor, ppo_cfg: PPOConfig,
                       anchors: torch.Tensor | None = None, windows: torch.Tensor | None = None):
        """PPO loss plus the weighted representation terms (the overall objective)."""
        loss, stats = ppo_loss(self, mb, ppo_cfg, adv)
        c = self.cfg
        if anchors is not None and self.repr is not None and anchors.shape[0] >= 2:
            nce, cb, commit, _, _ = self.repr_losses(anchors, windows)
            loss = loss + c.w_nce * nce + c.w_vq * cb + c.w_commit * commit
        return loss, stats

    def aux_update(self, anchors, windows, rollout: dict | None, optimizer, generator=None,
                   rng: np.random.Generator | None = None) -> dict:
        stats = _zero_stats()
        c = self.cfg
        if self.repr is None or optimizer is None or anchors is None or len(anchors) < 2:
            return stats
        if not self.has_representation:
            return stats
        A = _to_tensor(anchors)
        W = _to_tensor(windows)
        n = A.shape[0]
        bs = max(2, min(c.repr_batch, n))
        sums = {"nce": 0.0, "mi": 0.0, "cb": 0.0, "commit": 0.0}
        count = 0
        for _ in range(c.repr_epochs):
            perm = torch.randperm(n, generator=generator)
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                if idx.numel() < 2:
                    continue
                nce, cb, commit, z_m, codes = self.repr_losses(A[idx], W[idx])
                loss = c.w_nce * nce + c.w_vq * cb + c.w_commit * commit
                if not torch.isfinite(loss):
                    raise NonFiniteLoss("non-finite representation loss",
                                        {"nce": float(nce), "codebook": float(cb), "commit": float(commit)})
                if loss.requires_grad:
                    optimizer.zero_grad()
                    loss.backward()
                    nn.utils.clip_grad_norm_(self.aux_parameters(), 1.0)
                    optimizer.step()
                if self.codebook is not None:
                    self.codebook.update_usage(codes)
                    if self.codebook.ema:
                        self.codebook.ema_update(z_m.detach(), codes)
                nce, cb, commit = float(nce.detach()), float(cb.detach()), float(commit.detach())
                sums["nce"] += nce
                sums["mi"] += math.log(idx.numel()) - nce
                sums["cb"] += cb
                sums["commit"] += commit
                count += 1
        if count == 0:
            return stats
        stats["repr_samples"] = n
        if c.w_nce > 0:
            stats["nce_loss"] = sums["nce"] / count
            stats["mi_estimate"] = sums["mi"] / count
        if self.codebook is not None:
            # a term whose weight is 0 takes no part in the objective and is reported as 0
            if c.w_vq > 0:
                stats["vq_codebook_loss"] = sums["cb"] / count
            if c.w_commit > 0:
                stats["vq_commit_loss"] = sums["commit"] / count
            with torch.no_grad():
                z_all = self.repr.window(W)
                idx_all, _ = self.codebook.quantize(z_all)
            m = self.codebook.metrics(idx_all)
            stats["perplexity"] = m.perplexity
            replaced, _ = self.codebook.reinit_dead_codes(z_all, rng or np.random.default_rng(0))
            stats["dead_codes"] = m.dead_codes
            stats["codes_reinit"] = replaced
        return stats


class HyarLiteAgent(nn.Module):
    """Reduced HyAR: PPO over a bounded continuous latent action.

    The latent splits into a discrete-embedding part (decoded to the nearest
    entry of a learned embedding table) and a parameter part decoded by a
    conditional VAE decoder. The VAE and table are refitted on each rollout
    plus uniformly random actions; there is no dynamics-prediction term.
    """

    def __init__(self, obs_dim: int, spec: ActionSpec, resource_ids, cfg: AgentConfig,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.obs_dim = obs_dim
        self.spec = spec
        self.resource_ids = frozenset(resource_ids)
        self.cfg = cfg
        self.bounds = SpecBounds(spec)
        p = self.bounds.width
        self.e_dim = cfg.hyar_embed
        self.z_dim = p
        self.latent_dim = self.e_dim + self.z_dim
        self.z_scale = 2.0
        self.embed = nn.Parameter(torch.randn(spec.num_discrete, self.e_dim, generator=generator))
        self.actor = _trunk(obs_dim, cfg.hidden)
        self.mean_head = _layer(cfg.hidden, self.latent_dim, 0.01)
        self.logstd_head = _layer(cfg.hidden, self.latent_dim, 0.01)
        self.critic = nn.Sequential(_trunk(obs_dim, cfg.hidden), _layer(cfg.hidden, 1, 1.0))
        self.vae_enc = nn.Sequential(_trunk(obs_dim + self.e_dim + p, cfg.hidden), _layer(cfg.hidden, 2 * p))
        self.vae_dec = nn.Sequential(_trunk(obs_dim + self.e_dim + p, cfg.hidden), _layer(cfg.hidden, p))
        self.to(DTYPE)

    def policy_parameters(self):
        return list(self.actor.parameters()) + list(self.mean_head.parameters()) + \
            list(self.logstd_head.parameters()) + list(self.critic.parameters())

    def aux_parameters(self):
        return [self.embed] + list(self.vae_enc.parameters()) + list(self.vae_dec.parameters())

    has_representation = False

    def _embeddings(self) -> torch.Tensor:
        return torch.tanh(self.embed)

    def _dist(self, obs):
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        h = self.actor(obs)
        mean = 3.0 * torch.tanh(self.mean_head(h) / 3.0)
        return mean, bound_logstd(self.logstd_head(h)), self.critic(obs).squeeze(-1)

    def decode(self, obs: torch.Tensor, latent: torch.Tensor):
        emb = self._embeddings()
        e_part, z_part = latent[:, :self.e_dim], latent[:, self.e_dim:] * self.z_scale
        d2 = ((e_part.unsqueeze(1) - emb.unsqueeze(0)) ** 2).sum(-1)
        discrete = torch.argmin(d2, -1)
        raw = self.vae_dec(torch.cat([obs, emb[discrete], z_part], -1))
        params = squash(raw, self.bounds.lo[discrete], self.bounds.hi[discrete])
        return discrete, params

    @torch.no_grad()
    def act(self, obs, mode: str = "sample", generator=None, carry=None) -> ActResult:
        if mode not in ("sample", "greedy"):
            raise ValueError("mode must be 'sample' or 'greedy'")
        obs_t = _to_tensor(obs)
        if obs_t.dim() == 1:
            obs_t = obs_t.unsqueeze(0)
        mean, logstd, value = self._dist(obs_t)
        raw = mean if mode == "greedy" else mean + torch.exp(logstd) * torch.randn(
            mean.shape, generator=generator, dtype=DTYPE)
        discrete, params = self.decode(obs_t, torch.tanh(raw))
        stored = {"raw": raw, "discrete": discrete, "params": params}
        logp, _, _ = self.evaluate_actions(obs_t, stored)
        actions = _actions_from_params(self.spec, discrete.numpy(), params.numpy())
        return ActResult(actions, stored, logp, value, np.full(obs_t.shape[0], -1))

    def evaluate_actions(self, obs, actions):
        obs = _to_tensor(obs) if not isinstance(obs, torch.Tensor) else obs
        mean, logstd, value = self._dist(obs)
        ones = torch.ones_like(mean)
        logp = squashed_log_prob(actions["raw"], mean, logstd, -ones, ones, ones)
        return logp, gaussian_entropy(logstd, ones), value

    def aux_update(self, anchors, windows, rollout: dict | None, optimizer, generator=None,
                   rng: np.random.Generator | None = None) -> dict:
        stats = _zero_stats()
        if rollout is None or optimizer is None:
            return stats
        obs = _to_tensor(rollout["obs"])
        disc = rollout["actions"]["discrete"].long()
        params = rollout["actions"]["params"].to(DTYPE)
        n = obs.shape[0]
        # uniformly random hybrid actions keep the decoder covering the whole box
        rnd_d = torch.randint(self.spec.num_discrete, (n,), generator=generator)
        u = torch.rand(n, self.z_dim, generator=generator, dtype=DTYPE)
        rnd_p = self.bounds.lo[rnd_d] + u * (self.bounds.hi[rnd_d] - self.bounds.lo[rnd_d])
        obs2 = torch.cat([obs, obs])
        disc2 = torch.cat([disc, rnd_d])
        params2 = torch.cat([params, rnd_p])
        bs = max(2, self.cfg.repr_batch)
        total, count = 0.0, 0
        for _ in range(self.cfg.repr_epochs):
            perm = torch.randperm(2 * n, generator=generator)
            for start in range(0, 2 * n, bs):
                idx = perm[start:start + bs]
                o, d, p = obs2[idx], disc2[idx], params2[idx]
                emb = self._embeddings()
                mask = self.bounds.mask[d]
                lo, hi = self.bounds.lo[d], self.bounds.hi[d]
                p_unit = (2.0 * (p - lo) / (hi - lo) - 1.0) * mask
                h = self.vae_enc(torch.cat([o, emb[d], p_unit], -1))
                mu, logstd = h[:, :self.z_dim], h[:, self.z_dim:].clamp(-5, 2)
                z = mu + torch.exp(logstd) * torch.randn(mu.shape, generator=generator, dtype=DTYPE)
                rec = torch.tanh(self.vae_dec(torch.cat([o, emb[d], z], -1)))
                recon = (((rec - p_unit) ** 2) * mask).sum(-1).mean()
                kl = (0.5 * (mu ** 2 + torch.exp(2 * logstd) - 1.0) - logstd).sum(-1).mean()
                noisy = emb[d] + 0.1 * torch.randn(len(d), self.e_dim, generator=generator, dtype=DTYPE)
                logits = -((noisy.unsqueeze(1) - emb.unsqueeze(0)) ** 2).sum(-1)
                cls = F.cross_entropy(logits, d)
                loss = recon + 0.5 * kl + cls
                optimizer.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(self.aux_parameters(), 1.0)
                optimizer.step()
                total += float(recon.detach())
                count += 1
        stats["hyar_recon"] = total / max(1, count)
        return stats
