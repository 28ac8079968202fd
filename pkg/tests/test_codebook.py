import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tart.codebook import (DEAD_THRESHOLD, Codebook, codebook_metrics, perplexity, quantize_entries,
                           straight_through, vq_losses)


@pytest.fixture(autouse=True)
def _float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


ENTRIES = torch.tensor([[0.0, 0.0], [1.0, 1.0]], dtype=torch.float64)


def linear_scan(z, entries):
    best, best_d = 0, math.inf
    for k, e in enumerate(entries.tolist()):
        d = sum((a - b) ** 2 for a, b in zip(z.tolist(), e))
        if d < best_d:
            best, best_d = k, d
    return best


@pytest.mark.parametrize("z,k", [([0.1, 0.1], 0), ([1.0, 1.0], 1), ([0.5, 0.5], 0)])
def test_quantize_examples(z, k):
    idx, code = quantize_entries(torch.tensor(z), ENTRIES)
    assert int(idx) == k
    assert torch.equal(code, ENTRIES[k])


def test_quantize_rejects_non_finite():
    with pytest.raises(ValueError):
        quantize_entries(torch.tensor([float("nan"), 0.0]), ENTRIES)


def test_quantize_matches_linear_scan():
    rng = np.random.default_rng(0)
    for i in range(1000):
        d = (2, 16)[i % 2]
        K = (4, 16)[(i // 2) % 2]
        entries = torch.as_tensor(rng.normal(size=(K, d)))
        if i % 10 == 0:
            entries[1] = entries[0]  # forced duplicate exercises the tie-break
        z = torch.as_tensor(rng.normal(size=d))
        idx, code = quantize_entries(z, entries)
        assert int(idx) == linear_scan(z, entries)
        assert torch.equal(code, entries[int(idx)])


def test_quantize_batch_equals_rows():
    g = torch.Generator().manual_seed(1)
    entries = torch.randn(8, 4, generator=g)
    z = torch.randn(32, 4, generator=g)
    idx, codes = quantize_entries(z, entries)
    for i in range(32):
        assert int(idx[i]) == int(quantize_entries(z[i], entries)[0])


@settings(max_examples=50)
@given(st.integers(2, 16), st.integers(2, 16), st.integers(0, 10_000))
def test_quantize_idempotent_on_entries(K, d, seed):
    g = torch.Generator().manual_seed(seed)
    entries = torch.randn(K, d, generator=g)
    for k in range(K):
        idx, code = quantize_entries(entries[k], entries)
        assert int(idx) == k
        assert float(((code - entries[k]) ** 2).sum()) == 0.0


def test_vq_losses_examples():
    z = torch.tensor([1.0, 0.0], requires_grad=True)
    e = torch.tensor([0.0, 0.0], requires_grad=True)
    cb, commit = vq_losses(z, e, 0.25)
    assert cb.item() == pytest.approx(1.0)
    assert commit.item() == pytest.approx(0.25)
    commit.backward()
    assert e.grad is None or torch.all(e.grad == 0)
    z2 = torch.tensor([0.3, -0.2])
    cb, commit = vq_losses(z2, z2.clone())
    assert float(cb) == 0.0 and float(commit) == 0.0


def test_codebook_loss_has_no_gradient_to_z():
    z = torch.tensor([1.0, 0.0], requires_grad=True)
    e = torch.tensor([0.0, 0.0], requires_grad=True)
    cb, _ = vq_losses(z, e)
    cb.backward()
    assert z.grad is None or torch.all(z.grad == 0)
    assert torch.allclose(e.grad, torch.tensor([-2.0, 0.0]))


def test_straight_through_example():
    z = torch.tensor([1.0, 2.0], requires_grad=True)
    e = torch.tensor([0.0, 1.0])
    out = straight_through(z, e)
    assert torch.equal(out, e)
    loss = (out ** 2).sum()
    assert loss.item() == 1.0
    loss.backward()
    assert torch.equal(z.grad, torch.tensor([0.0, 2.0]))


def test_straight_through_identity_when_equal():
    z = torch.tensor([0.4, -1.1], requires_grad=True)
    out = straight_through(z, z.detach().clone())
    (out ** 3).sum().backward()
    assert torch.allclose(z.grad, 3 * z.detach() ** 2)


def test_straight_through_matches_frozen_offset_finite_difference():
    """Gradient through quantize-then-loss equals d/dz of L(z + frozen offset)."""
    g = torch.Generator().manual_seed(3)
    entries = torch.randn(6, 4, generator=g)
    W = torch.randn(4, 3, generator=g)
    z0 = torch.randn(4, generator=g)

    def downstream(x):
        return torch.sin(x @ W).sum() + (x ** 2).sum()

    z = z0.clone().requires_grad_(True)
    _, e = quantize_entries(z.detach(), entries)
    downstream(straight_through(z, e)).backward()
    offset = e - z0
    h = 1e-6
    for i in range(4):
        dz = torch.zeros(4)
        dz[i] = h
        fd = (downstream(z0 + dz + offset) - downstream(z0 - dz + offset)) / (2 * h)
        assert float(z.grad[i]) == pytest.approx(float(fd), rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("idx,K,expected", [
    ([3] * 10, 8, 1.0),
    (list(range(8)) * 3, 8, 8.0),
    ([0, 1, 0, 1], 4, 2.0),
])
def test_perplexity_examples(idx, K, expected):
    assert perplexity(idx, K) == pytest.approx(expected)


@given(st.lists(st.integers(0, 15), min_size=1, max_size=200))
def test_perplexity_range(idx):
    p = perplexity(idx, 16)
    assert 1.0 - 1e-12 <= p <= 16.0 + 1e-9


def test_perplexity_empty_rejected():
    with pytest.raises(ValueError):
        perplexity([], 4)


def test_codebook_invariants():
    with pytest.raises(ValueError):
        Codebook(1, 4)
    with pytest.raises(ValueError):
        Codebook(4, 4, beta=0.0)


def test_usage_ema_and_dead_count():
    cb = Codebook(4, 2)
    for _ in range(100):
        cb.update_usage(torch.tensor([0, 0, 1, 1]))
    m = codebook_metrics(torch.tensor([0, 1]), cb)
    assert m.dead_codes == 2
    assert m.perplexity == pytest.approx(2.0)
    assert float(cb.usage[2]) < DEAD_THRESHOLD


def test_reinit_no_dead_codes_unchanged():
    cb = Codebook(4, 2)
    before = cb.entries.detach().clone()
    n, warn = cb.reinit_dead_codes(torch.ones(3, 2), np.random.default_rng(0))
    assert (n, warn) == (0, False)
    assert torch.equal(before, cb.entries.detach())


def test_reinit_single_dead_code_from_single_vector():
    cb = Codebook(4, 3)
    with torch.no_grad():
        cb.usage.copy_(torch.tensor([0.5, 0.3, 0.2, 0.0]))
    v = torch.tensor([[0.2, -0.7, 0.9]])
    n, warn = cb.reinit_dead_codes(v, np.random.default_rng(0))
    assert (n, warn) == (1, False)
    assert torch.all((cb.entries.detach()[3] - v[0]).abs() < 3e-3)
    assert float(cb.usage[3]) == pytest.approx(0.25)


def test_reinit_empty_pool_warns():
    cb = Codebook(4, 3)
    with torch.no_grad():
        cb.usage.zero_()
    before = cb.entries.detach().clone()
    n, warn = cb.reinit_dead_codes(torch.zeros(0, 3), np.random.default_rng(0))
    assert warn and n == 0
    assert torch.equal(before, cb.entries.detach())


def test_ema_update_moves_entry_toward_assigned_mean():
    cb = Codebook(2, 2, ema=True, ema_decay=0.5)
    target = torch.tensor([[3.0, 3.0]])
    for _ in range(30):
        cb.ema_update(target, torch.tensor([0]))
    assert torch.allclose(cb.entries.detach()[0], target[0], atol=1e-3)
    cbl, _ = cb.losses(torch.zeros(1, 2), cb.entries[:1])
    assert not cbl.requires_grad
