"""Temporal action representation: anchor/window encoders and the InfoNCE bound.

The anchor encoder sees the state and hybrid action at a resource event; the
window encoder reads the following H (state, action) rows with a GRU so that
temporal order matters. Both emit unit-norm vectors, and the InfoNCE loss
with in-batch negatives gives ``ln N - loss`` as a lower bound on the mutual
information between the two views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

NORM_TOL = 1e-5


@dataclass
class EncoderConfig:
    latent_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    window: int = 8
    temperature: float = 0.1

    def __post_init__(self):
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)


def mlp(sizes, act=nn.Tanh, out_act=None) -> nn.Sequential:
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(act())
        elif out_act is not None:
            layers.append(out_act())
    return nn.Sequential(*layers)


class AnchorEncoder(nn.Module):
    """MLP over the flattened (state ++ action) at the resource event."""

    def __init__(self, in_dim: int, cfg: EncoderConfig):
        super().__init__()
        self.in_dim = in_dim
        self.net = mlp([in_dim, *cfg.hidden, cfg.latent_dim])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"anchor input width {x.shape[-1]} != {self.in_dim}")
        return F.normalize(self.net(x), dim=-1)


class WindowEncoder(nn.Module):
    """GRU over the H rows of the maneuver window; last hidden state -> latent."""

    def __init__(self, row_dim: int, cfg: EncoderConfig):
        super().__init__()
        self.row_dim = row_dim
        self.horizon = cfg.window
        hid = cfg.hidden[0] if cfg.hidden else 64
        self.inp = nn.Linear(row_dim, hid)
        self.gru = nn.GRU(hid, hid, batch_first=True)
        self.out = nn.Linear(hid, cfg.latent_dim)

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        squeeze = w.dim() == 2
        if squeeze:
            w = w.unsqueeze(0)
        if w.shape[1] != self.horizon:
            raise ValueError(f"window length {w.shape[1]} != H={self.horizon}")
        if w.shape[2] != self.row_dim:
            raise ValueError(f"window row width {w.shape[2]} != {self.row_dim}")
        _, h = self.gru(torch.tanh(self.inp(w)))
        z = F.normalize(self.out(h[-1]), dim=-1)
        return z[0] if squeeze else z


@dataclass
class ContrastiveBatch:
    anchors: torch.Tensor
    positives: torch.Tensor

    def __post_init__(self):
        if self.anchors.shape != self.positives.shape or self.anchors.dim() != 2:
            raise ValueError("anchors and positives must both be (N, d)")
        if self.anchors.shape[0] < 2:
            raise ValueError("contrastive batch needs N >= 2")
        for name, z in (("anchors", self.anchors), ("positives", self.positives)):
            norms = z.detach().norm(dim=-1)
            if torch.any((norms - 1.0).abs() > NORM_TOL):
                raise ValueError(f"{name} rows must have unit L2 norm")


def infonce_from_logits(logits: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of each row against its diagonal entry."""
    n = logits.shape[0]
    if logits.dim() != 2 or logits.shape[1] != n:
        raise ValueError("logits must be square (N, N)")
    if n < 2:
        raise ValueError("InfoNCE needs N >= 2")
    target = torch.arange(n, device=logits.device)
    return F.cross_entropy(logits, target)


def infonce_loss(z_a: torch.Tensor, z_m: torch.Tensor, temperature: float = 0.1) -> torch.Tensor:
    """``-(1/N) sum_i log softmax_j(z_a[i] . z_m[j] / tau)[i]``."""
    if z_a.shape != z_m.shape or z_a.dim() != 2:
        raise ValueError("z_a and z_m must both be (N, d)")
    if z_a.shape[0] < 2:
        raise ValueError("InfoNCE needs N >= 2")
    return infonce_from_logits(z_a @ z_m.T / temperature)


def batch_loss(batch: ContrastiveBatch, temperature: float) -> torch.Tensor:
    return infonce_loss(batch.anchors, batch.positives, temperature)


def mi_estimate(loss: torch.Tensor | float, n: int) -> float:
    return math.log(n) - float(loss)


class TemporalRepr(nn.Module):
    """Anchor and window encoders bundled for the learner (no shared weights)."""

    def __init__(self, anchor_dim: int, row_dim: int, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.anchor = AnchorEncoder(anchor_dim, cfg)
        self.window = WindowEncoder(row_dim, cfg)

    def forward(self, anchors: torch.Tensor, windows: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        z_a = self.anchor(anchors)
        z_m = self.window(windows)
        return infonce_loss(z_a, z_m, self.cfg.temperature), z_a, z_m
