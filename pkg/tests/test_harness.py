import json

import numpy as np
import pytest
import torch

from tart import harness
from tart.config import RunConfig
from tart.harness import (CheckpointMismatch, Collector, TrainingAbort, evaluate, load_checkpoint,
                          read_metrics, run_episodes, to_batch, train)
from tart.policy import NonFiniteLoss, normalize_advantages, ppo_loss


def tiny(variant="tart", **kw):
    base = dict(maze="detour5", n_envs=4, rollout_steps=128, total_steps=256, workers=1, hidden=16,
                window=2, latent_dim=4, num_codes=4, repr_batch=32, repr_epochs=1, epochs=1, minibatch=64,
                eval_every=1, eval_episodes=2)
    base.update(kw)
    return RunConfig(**base).for_variant(variant)


def test_budget_below_one_rollout_gives_zero_updates(tmp_path):
    res = train(tiny(total_steps=100), tmp_path)
    assert res.records == []
    assert (tmp_path / "metrics.jsonl").read_text() == ""
    assert (tmp_path / "init.pt").exists()
    agent, cfg, payload = load_checkpoint(tmp_path / "init.pt")
    assert payload["step"] == 0 and cfg.total_steps == 100


@pytest.mark.parametrize("variant", ["tart", "hppo", "hyar_lite", "tart_no_vq", "tart_no_contrast"])
def test_same_config_and_seed_give_identical_metrics(tmp_path, variant):
    a = train(tiny(variant), tmp_path / "a")
    b = train(tiny(variant), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert len(a.records) == 2
    steps = [r["step"] for r in a.records]
    assert steps == sorted(set(steps))
    assert set(harness.METRIC_FIELDS) <= set(a.records[0])
    c = train(tiny(variant, seed=1), tmp_path / "c")
    assert c.records != a.records


def test_zero_weights_report_zero_representation_losses(tmp_path):
    res = train(tiny(w_nce=0.0, w_vq=0.0), tmp_path)
    for r in res.records:
        assert r["nce_loss"] == 0.0
        assert r["vq_codebook_loss"] == 0.0
        assert r["mi_estimate"] is None
    res = train(tiny(w_nce=0.0, w_vq=0.0, w_commit=0.0), tmp_path / "all0")
    for r in res.records:
        assert (r["nce_loss"], r["vq_codebook_loss"], r["vq_commit_loss"]) == (0.0, 0.0, 0.0)


def test_hppo_has_zero_representation_terms(tmp_path):
    res = train(tiny("hppo"), tmp_path)
    for r in res.records:
        assert (r["nce_loss"], r["vq_codebook_loss"], r["vq_commit_loss"]) == (0.0, 0.0, 0.0)
        assert r["perplexity"] is None


def test_tart_reports_representation_metrics(tmp_path):
    res = train(tiny("tart", maze="bench7", total_steps=512, rollout_steps=256), tmp_path)
    last = res.records[-1]
    assert last["repr_samples"] > 0
    assert last["nce_loss"] > 0 and last["mi_estimate"] is not None
    assert 1.0 <= last["perplexity"] <= 4.0


def test_checkpoint_reload_reproduces_greedy_eval(tmp_path):
    cfg = tiny()
    res = train(cfg, tmp_path)
    direct = run_episodes(res.agent, cfg, 3, seed=11)
    reloaded = evaluate(tmp_path / "final.pt", episodes=3, seed=11)
    assert direct.returns == reloaded.returns
    assert direct.code_histogram == reloaded.code_histogram
    assert reloaded.std_return == 0.0  # deterministic maze, greedy policy
    agent, _, payload = load_checkpoint(tmp_path / "final.pt")
    for k, v in res.agent.state_dict().items():
        assert torch.equal(v, agent.state_dict()[k])
    assert {"optim_policy", "optim_aux", "rng", "config_hash", "env_hash"} <= set(payload)


def test_eval_rejections(tmp_path):
    train(tiny(total_steps=100), tmp_path)
    with pytest.raises(ValueError):
        evaluate(tmp_path / "init.pt", episodes=0)
    with pytest.raises(CheckpointMismatch):
        evaluate(tmp_path / "init.pt", env="combat", episodes=1)
    with pytest.raises(CheckpointMismatch):
        evaluate(tmp_path / "init.pt", maze="bench7", episodes=1)
    bogus = tmp_path / "bogus.pt"
    torch.save({"format": "other"}, bogus)
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(bogus)


def test_eval_summary_contents(tmp_path):
    train(tiny(total_steps=100), tmp_path)
    s = evaluate(tmp_path / "init.pt", episodes=2, keep_logs=True)
    assert len(s.returns) == 2 and len(s.resources_per_episode) == 2
    assert len(s.episode_logs) == 2 and "pos" in s.episode_logs[0][0]
    assert sum(s.code_histogram.values()) == sum(len(ep) for ep in s.episode_logs)


def test_non_finite_loss_checkpoints_and_aborts(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteLoss("non-finite PPO loss", {"policy_loss": float("nan")})

    monkeypatch.setattr(harness, "ppo_update", boom)
    with pytest.raises(TrainingAbort):
        train(tiny(), tmp_path)
    assert (tmp_path / "abort.pt").exists()
    info = json.loads((tmp_path / "abort.json").read_text())
    assert info["step"] == 128
    assert (tmp_path / "config.txt").exists()


def test_disk_failure_aborts_with_partial_artifacts(tmp_path, monkeypatch):
    real = harness.run_episodes

    def failing(*a, **k):
        raise OSError(28, "No space left on device")

    monkeypatch.setattr(harness, "run_episodes", failing)
    with pytest.raises(TrainingAbort):
        train(tiny(), tmp_path)
    assert (tmp_path / "init.pt").exists()
    monkeypatch.setattr(harness, "run_episodes", real)


def _first_batch(cfg):
    agent = harness.build_agent(cfg)
    col = Collector(cfg, list(range(cfg.n_envs)))
    data = col.collect(agent, cfg.steps_per_env)
    return agent, data, to_batch(data, cfg)


def test_composite_loss_at_zero_weights_equals_ppo_loss():
    cfg = tiny(w_nce=0.0, w_vq=0.0, w_commit=0.0, maze="bench7")
    agent, data, batch = _first_batch(cfg)
    assert data["anchors"] is not None and len(data["anchors"]) >= 2
    adv = normalize_advantages(batch.advantages)
    anchors = torch.as_tensor(data["anchors"], dtype=torch.float64)
    windows = torch.as_tensor(data["windows"], dtype=torch.float64)
    comp, _ = agent.composite_loss(batch, adv, cfg.ppo_config(), anchors, windows)
    pure, _ = ppo_loss(agent, batch, cfg.ppo_config(), adv)
    assert abs(comp.item() - pure.item()) < 1e-6

    hcfg = tiny("hppo", maze="bench7")
    hagent, hdata, hbatch = _first_batch(hcfg)
    hadv = normalize_advantages(hbatch.advantages)
    comp, _ = hagent.composite_loss(hbatch, hadv, hcfg.ppo_config(), anchors, windows)
    pure, _ = ppo_loss(hagent, hbatch, hcfg.ppo_config(), hadv)
    assert abs(comp.item() - pure.item()) < 1e-6


def test_variants_share_environment_stream():
    firsts = []
    for v in ("tart", "hppo", "hyar_lite"):
        col = Collector(tiny(v), [0, 1, 2, 3])
        firsts.append(col.obs.copy())
    assert all(np.array_equal(firsts[0], f) for f in firsts[1:])


def test_pretrain_schedule_skips_policy_updates(tmp_path):
    res = train(tiny(schedule="pretrain", pretrain_updates=1), tmp_path)
    assert res.records[0]["policy_loss"] is None
    assert res.records[1]["policy_loss"] is not None


def test_multiple_workers_smoke(tmp_path):
    res = train(tiny(workers=2), tmp_path)
    assert len(res.records) == 2
    assert all(r["episodes"] >= 0 for r in res.records)
    assert read_metrics(tmp_path / "metrics.jsonl") == res.records
