"""Vector-quantized tactic codebook.

Nearest-neighbour quantization with lowest-index tie-breaking, the usual
codebook/commitment pair of losses, a straight-through estimator, usage
tracking and dead-code re-initialisation. Code vectors are learned by the
gradient codebook loss by default; ``ema=True`` switches to exponential
moving-average updates instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

DEAD_THRESHOLD = 1e-3
REINIT_NOISE = 1e-3


def quantize_entries(z: torch.Tensor, entries: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Index of, and copy of, the nearest entry for each row of ``z``.

    ``torch.argmin`` returns the first minimum, which gives the lowest-index
    tie-break. Squared distances are computed exactly per pair (no
    ``|a|^2 - 2ab + |b|^2`` expansion) so ties are not perturbed by rounding.
    """
    if not torch.all(torch.isfinite(z)):
        raise ValueError("cannot quantize non-finite encodings")
    squeeze = z.dim() == 1
    zz = z.unsqueeze(0) if squeeze else z
    d2 = ((zz.unsqueeze(1) - entries.unsqueeze(0)) ** 2).sum(-1)
    idx = torch.argmin(d2, dim=1)
    codes = entries[idx]
    if squeeze:
        return idx[0], codes[0]
    return idx, codes


def vq_losses(z: torch.Tensor, e_sel: torch.Tensor, beta: float = 0.25) -> tuple[torch.Tensor, torch.Tensor]:
    """(codebook_loss, commitment_loss) with stop-gradients on the other side.

    Squared distances are summed over the latent dimension and averaged over
    the batch when ``z`` is 2-D.
    """
    cb = ((z.detach() - e_sel) ** 2).sum(-1)
    commit = beta * ((z - e_sel.detach()) ** 2).sum(-1)
    if z.dim() > 1:
        return cb.mean(), commit.mean()
    return cb, commit


def straight_through(z: torch.Tensor, e_sel: torch.Tensor) -> torch.Tensor:
    """Forward value ``e_sel``; backward passes the gradient to ``z`` unchanged."""
    return z + (e_sel - z).detach()


def perplexity(indices, num_codes: int | None = None) -> float:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("perplexity needs at least one index")
    counts = np.bincount(idx, minlength=num_codes or 0).astype(np.float64)
    p = counts[counts > 0] / idx.size
    return float(math.exp(-np.sum(p * np.log(p))))


@dataclass
class CodebookMetrics:
    perplexity: float
    dead_codes: int


class Codebook(nn.Module):
    def __init__(self, num_codes: int = 16, dim: int = 16, beta: float = 0.25,
                 ema: bool = False, ema_decay: float = 0.99, usage_decay: float = 0.9,
                 generator: torch.Generator | None = None):
        super().__init__()
        if num_codes < 2:
            raise ValueError("codebook needs at least 2 codes")
        if beta <= 0:
            raise ValueError("beta must be > 0")
        self.num_codes = num_codes
        self.dim = dim
        self.beta = beta
        self.ema = ema
        self.ema_decay = ema_decay
        self.usage_decay = usage_decay
        init = torch.randn(num_codes, dim, generator=generator)
        init = init / init.norm(dim=1, keepdim=True)
        self.entries = nn.Parameter(init, requires_grad=not ema)
        self.register_buffer("usage", torch.full((num_codes,), 1.0 / num_codes))
        self.register_buffer("ema_counts", torch.ones(num_codes))
        self.register_buffer("ema_sums", init.clone())

    def quantize(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return quantize_entries(z, self.entries)

    def losses(self, z: torch.Tensor, e_sel: torch.Tensor, beta: float | None = None):
        b = self.beta if beta is None else beta
        cb, commit = vq_losses(z, e_sel, b)
        if self.ema:
            # entries move by EMA only
            cb = cb.detach()
        return cb, commit

    @torch.no_grad()
    def update_usage(self, indices: torch.Tensor) -> None:
        freq = torch.bincount(indices.reshape(-1), minlength=self.num_codes).to(self.usage.dtype)
        freq = freq / max(1, indices.numel())
        self.usage.mul_(self.usage_decay).add_((1.0 - self.usage_decay) * freq)

    @torch.no_grad()
    def ema_update(self, z: torch.Tensor, indices: torch.Tensor, eps: float = 1e-5) -> None:
        onehot = torch.zeros(z.shape[0], self.num_codes, dtype=z.dtype)
        onehot[torch.arange(z.shape[0]), indices] = 1.0
        self.ema_counts.mul_(self.ema_decay).add_((1 - self.ema_decay) * onehot.sum(0))
        self.ema_sums.mul_(self.ema_decay).add_((1 - self.ema_decay) * onehot.T @ z.detach())
        n = self.ema_counts.sum()
        counts = (self.ema_counts + eps) / (n + self.num_codes * eps) * n
        self.entries.data.copy_(self.ema_sums / counts.unsqueeze(1))

    def dead_mask(self) -> torch.Tensor:
        return self.usage < DEAD_THRESHOLD

    def metrics(self, indices) -> CodebookMetrics:
        return codebook_metrics(indices, self)

    @torch.no_grad()
    def reinit_dead_codes(self, recent_z: torch.Tensor | None, rng: np.random.Generator) -> tuple[int, bool]:
        """Replace dead codes by noisy samples of recent encoder outputs.

        Returns (number of codes replaced, warning flag). The warning flag is
        set, and nothing changes, when the pool is empty.
        """
        dead = torch.nonzero(self.dead_mask()).flatten().tolist()
        if not dead:
            return 0, False
        if recent_z is None or recent_z.numel() == 0:
            return 0, True
        pool = recent_z.detach()
        mean_usage = float(self.usage.mean())
        for k in dead:
            j = int(rng.integers(pool.shape[0]))
            noise = torch.as_tensor(rng.normal(0.0, REINIT_NOISE, size=self.dim), dtype=pool.dtype)
            self.entries.data[k] = pool[j] + noise
            self.usage[k] = mean_usage
            self.ema_sums[k] = self.entries.data[k] * self.ema_counts[k]
        return len(dead), False


def codebook_metrics(indices, cb: Codebook | None = None) -> CodebookMetrics:
    """Perplexity of the empirical code distribution and the dead-code count."""
    idx = indices.detach().cpu().numpy() if isinstance(indices, torch.Tensor) else np.asarray(indices)
    k = cb.num_codes if cb is not None else None
    dead = int(cb.dead_mask().sum()) if cb is not None else 0
    return CodebookMetrics(perplexity(idx, k), dead)
