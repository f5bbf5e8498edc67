import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pref_init_lab import cli, pbrl_loop
from pref_init_lab.harness import (
    ConfigError,
    ExperimentConfig,
    aggregate,
    heatmap_csv,
    heatmap_pgm,
    parse_config,
    read_pgm,
    run_sweep,
    write_config,
)
from pref_init_lab.nn_core import InitScheme
from pref_init_lab.pbrl_loop import LoopConfig, RunMetrics

FAST = dict(
    grid_size=4, total_env_steps=300, session_interval_steps=150, queries_per_session=4,
    segment_length=5, eval_interval_steps=100, eval_episodes=1, reward_epochs=2,
    dqn_batch_size=16, init_fit_max_epochs=200,
)


def fast_config(tmp_path, **kw):
    return parse_config(None, {**FAST, "out_dir": str(tmp_path), **kw})


def tree(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_empty_file_gives_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("PREF_INIT_LAB_OUT", raising=False)
    f = tmp_path / "c.json"
    f.write_text("")
    cfg = parse_config(f)
    assert cfg.grid_size == 7 and cfg.seeds == [0, 1, 2] and cfg.loop.epsilon_init == 0.4
    assert cfg.arms == list(InitScheme) and cfg.out_dir == "runs"
    assert parse_config(None).to_flat() == cfg.to_flat()


def test_precedence(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"grid_size": 7, "seeds": [4, 5], "epsilon-init": 0.3}))
    cfg = parse_config(f, {"grid-size": 15, "epsilon_init": None})
    assert cfg.grid_size == 15 and cfg.seeds == [4, 5] and cfg.loop.epsilon_init == 0.3


def test_env_var_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PREF_INIT_LAB_OUT", "/x/y")
    assert parse_config(None).out_dir == "/x/y"
    assert parse_config(None, {"out_dir": "z"}).out_dir == "z"


@pytest.mark.parametrize(
    "overrides, key",
    [
        ({"epsilon_init": 1.5}, "epsilon_init"),
        ({"grid_sise": 7}, "grid_sise"),
        ({"seeds": [1, 1]}, "seeds"),
        ({"seeds": []}, "seeds"),
        ({"arms": "kaiming,he-normal"}, "arms"),
        ({"grid_size": "seven"}, "grid_size"),
        ({"grid_size": 1}, "grid_size"),
        ({"init_fit_dedup": "maybe"}, "init_fit_dedup"),
    ],
)
def test_rejections_name_the_key(overrides, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(None, overrides)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{grid_size: 7")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(bad)


@given(
    grid=st.integers(2, 20),
    seeds=st.lists(st.integers(0, 10**6), min_size=1, max_size=5, unique=True),
    arms=st.lists(st.sampled_from(list(InitScheme)), min_size=1, unique=True),
    eps=st.floats(-0.99, 0.99, allow_nan=False),
    steps=st.one_of(st.none(), st.integers(0, 10**6)),
    dedup=st.booleans(),
)
@settings(max_examples=40, deadline=None)
def test_config_round_trip(tmp_path_factory, grid, seeds, arms, eps, steps, dedup):
    cfg = ExperimentConfig(
        LoopConfig(grid_size=grid, segment_length=min(10, 4 * grid), epsilon_init=eps,
                   total_env_steps=steps, init_fit_dedup=dedup),
        seeds=seeds, arms=arms, out_dir="o",
    )
    path = tmp_path_factory.mktemp("rt") / "c.json"
    write_config(cfg, path)
    back = parse_config(path)
    assert back.to_flat() == cfg.to_flat()
    assert back.loop.to_dict() == cfg.loop.to_dict()


def test_pgm_mapping():
    assert set(read_pgm(heatmap_pgm(np.zeros((7, 7)))).ravel()) == {127}
    px = read_pgm(heatmap_pgm(np.array([[-1.0, 1.0], [0.4, 5.0]])))
    assert px.tolist() == [[0, 255], [178, 255]]  # floor(0.7 * 255) = 178
    assert heatmap_pgm(np.zeros((2, 3))).startswith(b"P5\n3 2\n255\n")


def test_heatmap_csv_format():
    text = heatmap_csv(np.arange(49, dtype=float).reshape(7, 7) / 10)
    lines = text.split("\n")
    assert lines[-1] == "" and len(lines) == 8
    assert all(len(line.split(",")) == 7 for line in lines[:-1])
    assert lines[0].startswith("0.0,0.1,0.2")
    assert not any(line.endswith(",") for line in lines)


def test_single_run_summary_is_its_curve(tmp_path):
    s = run_sweep(fast_config(tmp_path, seeds=[0], arms=["kaiming-uniform"]))
    arm = s.arms["kaiming-uniform"]
    assert arm.mean == s.runs[0].eval_returns and arm.std == [0.0] * len(arm.mean)


def test_sweep_artifacts_and_recompute(tmp_path):
    cfg = fast_config(tmp_path, seeds=[0, 1], arms=["data-driven", "zeros"])
    summary = run_sweep(cfg)
    names = {p.name for p in tmp_path.iterdir()}
    for arm in ("data-driven", "zeros"):
        assert f"curve_{arm}.csv" in names
        for seed in (0, 1):
            for phase in ("initial", "final"):
                assert f"heatmap_{arm}_seed{seed}_{phase}.csv" in names
                assert f"heatmap_{arm}_seed{seed}_{phase}.pgm" in names
            rows = (tmp_path / f"heatmap_{arm}_seed{seed}_initial.csv").read_text().splitlines()
            assert len(rows) == 4 and all(len(r.split(",")) == 4 for r in rows)
    assert set(read_pgm((tmp_path / "heatmap_zeros_seed0_initial.pgm").read_bytes()).ravel()) == {127}

    # brute-force recompute from the per-run CSVs
    for arm in ("data-driven", "zeros"):
        per_seed = []
        for seed in (0, 1):
            with open(tmp_path / f"returns_{arm}_seed{seed}.csv") as fh:
                per_seed.append([float(r["return"]) for r in csv.DictReader(fh)])
        with open(tmp_path / f"curve_{arm}.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["env_step", "mean_return", "std_return"]
        assert len(rows) == len(summary.arms[arm].eval_steps) == 4
        for i, row in enumerate(rows):
            a, b = per_seed[0][i], per_seed[1][i]
            assert float(row["mean_return"]) == pytest.approx((a + b) / 2, abs=1e-12)
            assert float(row["std_return"]) == pytest.approx(abs(a - b) / 2, abs=1e-12)

    data = json.loads((tmp_path / "summary.json").read_text())
    counts = {arm: v["oracle_label_count"] for arm, v in data["arms"].items()}
    assert counts["data-driven"] == counts["zeros"] > 0
    assert data["arms"]["zeros"]["final_mean"] == summary.arms["zeros"].final_mean


def test_sweep_bytes_are_stable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_sweep(fast_config(a, seeds=[3], arms=["data-driven", "xavier-uniform"]))
    run_sweep(fast_config(b, seeds=[3], arms=["data-driven", "xavier-uniform"]))
    assert tree(a) == tree(b)


def test_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_sweep(fast_config(a, seeds=[0, 1], arms=["ones"]))
    run_sweep(fast_config(b, seeds=[0, 1], arms=["ones"], workers=2))
    assert tree(a) == tree(b)


def test_failed_run_marks_arm_incomplete():
    ok = RunMetrics("zeros", 0, 4, [0, 10], [-1.0, -2.0])
    bad = RunMetrics("zeros", 1, 4, [0], [-1.0], valid=False, error="boom")
    other = RunMetrics("ones", 0, 4, [0, 10], [-3.0, -4.0])
    s = aggregate([ok, bad, other], ["zeros", "ones"], [0, 1], 4)
    assert not s.arms["zeros"].complete
    assert s.arms["ones"].complete is False  # only one of two seeds present
    s = aggregate([other], ["ones"], [0], 4)
    assert s.arms["ones"].complete and s.arms["ones"].final_std == 0.0


def test_cli_run_and_determinism(tmp_path, capsys):
    args = ["run", "--seed", "1", "--init", "data-driven", "--grid-size", "4", "--total-env-steps", "200"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({k: v for k, v in FAST.items() if k not in ("grid_size", "total_env_steps")}))
    assert cli.main(args + ["--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--config", str(cfg), "--out-dir", str(tmp_path / "b")]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert "final return" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    assert cli.main(["run", "--epsilon-init", "1.5", "--out-dir", str(tmp_path)]) == 1
    assert "epsilon_init" in capsys.readouterr().err
    assert cli.main(["run", "--init", "he-normal"]) == 1
    assert cli.main(["sweep", "--config", str(tmp_path / "none.json")]) == 1

    def boom(*a, **k):
        raise RuntimeError("nope")

    monkeypatch.setattr(pbrl_loop, "pretrain_collect", boom)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(FAST))
    assert cli.main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert cli.main(["sweep", "--config", str(cfg), "--arms", "zeros", "--seeds", "0", "--out-dir", str(tmp_path / "p")]) == 2


def test_cli_heatmap(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(FAST))
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg), "--init", "zeros", "--out-dir", str(out)]) == 0
    ckpt = out / "reward_zeros_seed0_m0.ckpt"
    assert cli.main(["heatmap", "--checkpoint", str(ckpt), "--grid-size", "4", "--out", str(tmp_path / "h.pgm")]) == 0
    assert set(read_pgm((tmp_path / "h.pgm").read_bytes()).ravel()) == {127}
    assert cli.main(["heatmap", "--checkpoint", str(ckpt), "--grid-size", "5", "--out", str(tmp_path / "h.csv")]) == 1

    ckpt_dd = out.parent / "dd"
    assert cli.main(["run", "--config", str(cfg), "--out-dir", str(ckpt_dd), "--total-env-steps", "0"]) == 0
    assert cli.main(["heatmap", "--checkpoint", str(ckpt_dd / "reward_data-driven_seed0_m0.ckpt"),
                     "--grid-size", "4", "--out", str(tmp_path / "d.csv")]) == 0
    assert (tmp_path / "d.csv").read_bytes() == (ckpt_dd / "heatmap_data-driven_seed0_initial.csv").read_bytes()
