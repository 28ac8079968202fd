import json

import pytest

from tart.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, main

TINY = """\
maze=detour5
n_envs=4
rollout_steps=128
total_steps=256
workers=1
hidden=16
window=2
latent_dim=4
num_codes=4
repr_batch=32
repr_epochs=1
epochs=1
minibatch=64
eval_every=1
eval_episodes=2
"""


@pytest.fixture
def cfg_file(tmp_path, monkeypatch):
    monkeypatch.setenv("TART_OUT", str(tmp_path / "out"))
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return p


def test_train_eval_dump_plot(cfg_file, tmp_path, capsys):
    assert main(["train", "--config", str(cfg_file), "--seed", "2"]) == EXIT_OK
    run = tmp_path / "out" / "maze-tart-seed2"
    assert (run / "metrics.jsonl").exists()
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["updates"] == 2

    assert main(["eval", "--ckpt", str(run / "final.pt"), "--episodes", "2"]) == EXIT_OK
    ev = json.loads((run / "eval.json").read_text())
    assert len(ev["episode_logs"]) == 2 and ev["maze"] == "detour5"
    capsys.readouterr()

    assert main(["dump-codebook", "--ckpt", str(run / "final.pt")]) == EXIT_OK
    dump = json.loads(capsys.readouterr().out)
    assert dump["num_codes"] == 4 and len(dump["codes"]) == 4

    assert main(["plot", "--in", str(run), "--out", str(tmp_path / "figs")]) == EXIT_OK
    assert (tmp_path / "figs" / "learning_curves.png").exists()


def test_train_out_flag(cfg_file, tmp_path):
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "custom")]) == EXIT_OK
    assert (tmp_path / "custom" / "final.pt").exists()


def test_config_errors_exit_2(cfg_file, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("w_nce=-1\n")
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["compare", "--env", "detour5", "--variants", "foo", "--seeds", "0,1"]) == EXIT_CONFIG
    assert main(["compare", "--env", "detour5", "--variants", "tart", "--seeds", "0"]) == EXIT_CONFIG
    assert main(["bogus-command"]) == EXIT_CONFIG


def test_eval_errors_exit_2(cfg_file, tmp_path):
    out = tmp_path / "r"
    assert main(["train", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    assert main(["eval", "--ckpt", str(out / "final.pt"), "--episodes", "0"]) == EXIT_CONFIG
    assert main(["eval", "--ckpt", str(out / "final.pt"), "--env", "combat"]) == EXIT_CONFIG
    assert main(["plot", "--in", str(tmp_path / "nothing"), "--out", str(tmp_path / "f")]) == EXIT_CONFIG


def test_dump_codebook_without_codebook(cfg_file, tmp_path):
    p = tmp_path / "h.cfg"
    p.write_text(TINY + "variant=hppo\n")
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "h")]) == EXIT_OK
    assert main(["dump-codebook", "--ckpt", str(tmp_path / "h" / "final.pt")]) == EXIT_CONFIG


def test_runtime_abort_exit_3(cfg_file, monkeypatch):
    from tart import harness
    from tart.policy import NonFiniteLoss

    def boom(*a, **k):
        raise NonFiniteLoss("non-finite PPO loss", {})

    monkeypatch.setattr(harness, "ppo_update", boom)
    assert main(["train", "--config", str(cfg_file)]) == EXIT_ABORT


def test_compare_cli(cfg_file, tmp_path, capsys):
    rc = main(["compare", "--env", "detour5", "--variants", "hppo,tart", "--seeds", "0,1", "--steps", "128",
               "--config", str(cfg_file), "--out", str(tmp_path / "cmp")])
    assert rc == EXIT_OK
    assert (tmp_path / "cmp" / "results.csv").exists()
    assert (tmp_path / "cmp" / "comparison.png").exists()
    assert "hppo" in capsys.readouterr().out
