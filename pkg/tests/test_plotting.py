import json

import pytest

from tart.plotting import EmptyLogError, code_usage_timeline, learning_curves, maze_renders, plot_inputs


def log(seed_shift=0.0, with_mi=True):
    out = []
    for u in range(1, 6):
        r = {"update": u, "step": 100 * u, "eval_return_mean": 0.1 * u + seed_shift, "perplexity": 2.0 + u}
        r["mi_estimate"] = 0.2 * u if with_mi else None
        out.append(r)
    return out


def test_identical_logs_identical_images(tmp_path):
    a = learning_curves({"tart": [log(), log(0.1)]}, tmp_path / "a.png")
    b = learning_curves({"tart": [log(), log(0.1)]}, tmp_path / "b.png")
    assert a.read_bytes() == b.read_bytes()


def test_single_seed_has_no_shading(tmp_path, monkeypatch):
    from matplotlib.axes import Axes

    calls = []
    real = Axes.fill_between
    monkeypatch.setattr(Axes, "fill_between", lambda self, *a, **k: calls.append(1) or real(self, *a, **k))
    learning_curves({"tart": [log()]}, tmp_path / "one.png")
    assert calls == []
    learning_curves({"tart": [log(), log(0.1)]}, tmp_path / "two.png")
    assert len(calls) == 3


def test_missing_column_panel_omitted(tmp_path):
    import matplotlib.image as mpimg

    full = mpimg.imread(learning_curves({"x": [log()]}, tmp_path / "full.png"))
    partial = mpimg.imread(learning_curves({"x": [log(with_mi=False)]}, tmp_path / "partial.png"))
    assert partial.shape[1] < full.shape[1]
    assert partial.shape[0] == full.shape[0]


def test_empty_logs_rejected(tmp_path):
    with pytest.raises(EmptyLogError):
        learning_curves({}, tmp_path / "x.png")
    with pytest.raises(EmptyLogError):
        learning_curves({"tart": [[]]}, tmp_path / "x.png")
    with pytest.raises(EmptyLogError):
        code_usage_timeline([], tmp_path / "x.png")


def test_plot_inputs_from_files(tmp_path):
    run = tmp_path / "runs" / "r0"
    run.mkdir(parents=True)
    (run / "config.txt").write_text("variant=tart\n")
    (run / "metrics.jsonl").write_text("\n".join(json.dumps(r) for r in log()) + "\n")
    ep = [{"pos": [0.5 + i, 0.5], "t": i, "code": i % 2, "events": {"dashed": i == 1, "resource_used": i == 1}}
          for i in range(4)]
    (run / "eval.json").write_text(json.dumps({"env": "maze", "maze": "detour5", "episode_logs": [ep]}))
    out = plot_inputs([tmp_path / "runs"], tmp_path / "figs")
    names = sorted(p.name for p in out)
    assert "learning_curves.png" in names and "trajectory_0.png" in names
    assert any(n.endswith("_codes.png") for n in names)
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(EmptyLogError):
        plot_inputs([empty], tmp_path / "figs2")


def test_maze_renders_deterministic(tmp_path):
    ep = [{"pos": [1.5, 0.5], "events": {}}, {"pos": [4.5, 0.5], "events": {"dashed": True}}]
    a = maze_renders("detour5", [ep], tmp_path / "a")[0]
    b = maze_renders("detour5", [ep], tmp_path / "b")[0]
    assert a.read_bytes() == b.read_bytes()
