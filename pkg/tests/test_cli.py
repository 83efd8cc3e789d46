import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from dexgrasp.cli import main
from dexgrasp.hand import HandPose
from dexgrasp.quality import penetration_depth
from dexgrasp.records import RunConfig, read_records, write_records
from test_policy import random_state


@pytest.fixture
def quick_config(tmp_path):
    cfg = RunConfig()
    cfg = replace(cfg, optimizer=replace(cfg.optimizer, steps=150), tta_optimizer=replace(cfg.tta_optimizer, steps=20))
    path = tmp_path / "quick.json"
    path.write_text(cfg.dumps())
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def read(path):
    return open(path, "rb").read()


def test_synth_deterministic(tmp_path, quick_config):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert run("synth", "--scene", "builtin:sphere", "--seeds", 2, "--rng", 7, "--config", quick_config,
                   "--out", out) == 0
    assert read(a) == read(b)
    recs = read_records(a)
    assert [r.seed for r in recs] == [7, 8]


def test_worker_pool_matches_serial(tmp_path, quick_config, monkeypatch):
    serial, pooled = tmp_path / "s.jsonl", tmp_path / "p.jsonl"
    args = ("synth", "--scene", "builtin:sphere", "--scene", "builtin:box", "--seeds", 2, "--config", quick_config)
    monkeypatch.setenv("DEXGRASP_WORKERS", "1")
    assert run(*args, "--out", serial) == 0
    monkeypatch.setenv("DEXGRASP_WORKERS", "2")
    assert run(*args, "--out", pooled) == 0
    assert read(serial) == read(pooled)
    monkeypatch.setenv("DEXGRASP_WORKERS", "zero")
    assert run(*args, "--out", pooled) == 2


def _pushed_in(model, scene, rec, target=0.002):
    """The record with its hand moved towards the object until penetration is about ``target``."""
    pose = rec.hand_pose
    d = scene.centroid - pose.translation
    d /= np.linalg.norm(d)
    lo, hi = 0.0, 0.03
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        p = HandPose.make(pose.rotation, pose.translation + mid * d, pose.q)
        if penetration_depth(scene, model, p) < target:
            lo = mid
        else:
            hi = mid
    return replace(rec, hand_pose=HandPose.make(pose.rotation, pose.translation + hi * d, pose.q))


def test_validate_and_eval(tmp_path, model, sphere, sphere_grasp):
    good, bad = tmp_path / "good.jsonl", tmp_path / "bad.jsonl"
    write_records(good, [sphere_grasp])
    pushed = _pushed_in(model, sphere, sphere_grasp)
    assert penetration_depth(sphere, model, pushed.hand_pose) == pytest.approx(0.002, abs=2e-4)
    write_records(bad, [sphere_grasp, pushed])
    assert run("validate", "--scene", "builtin:sphere", "--records", good) == 0
    out = tmp_path / "v.jsonl"
    assert run("validate", "--scene", "builtin:sphere", "--records", bad, "--out", out) == 1
    rows = [json.loads(ln) for ln in open(out)]
    assert [r["passed"] for r in rows] == [True, False] and not rows[1]["penetration_ok"]

    e1, e2, ann = tmp_path / "e1.jsonl", tmp_path / "e2.jsonl", tmp_path / "ann.jsonl"
    assert run("eval", "--scene", "builtin:sphere", "--records", good, "--out", e1, "--annotate", ann) == 0
    assert run("eval", "--scene", "builtin:sphere", "--records", good, "--out", e2) == 0
    assert read(e1) == read(e2)
    row = json.loads(open(e1).readline())
    assert row["q1"] > 0 and row["stable"]
    assert read_records(ann)[0].metrics["q1"] == row["q1"]

    m = tmp_path / "m.csv"
    assert run("metrics", "--records", ann, "--method", "ours", "--out", m) == 0
    cells = open(m).read().splitlines()[2].split(",")
    assert cells[0] == "ours" and float(cells[1]) == pytest.approx(row["q1"])
    assert [float(c) for c in cells[3:]] == [0.0, 0.0, 0.0, 0.0]


def test_cmap_and_refine(tmp_path, sphere_grasp, quick_config):
    recs = tmp_path / "r.jsonl"
    write_records(recs, [sphere_grasp])
    c1, c2 = tmp_path / "c1.txt", tmp_path / "c2.txt"
    for out in (c1, c2):
        assert run("cmap", "--scene", "builtin:sphere", "--records", recs, "--out", out) == 0
    assert read(c1) == read(c2)
    heat = np.loadtxt(c1, comments="#")
    assert heat.shape == (2048,) and heat.min() >= 0 and heat.max() <= 1
    assert run("cmap", "--scene", "builtin:sphere", "--records", recs, "--index", 3, "--out", c1) == 2

    f1, f2 = tmp_path / "f1.jsonl", tmp_path / "f2.jsonl"
    for out in (f1, f2):
        assert run("refine", "--scene", "builtin:sphere", "--records", recs, "--target", c2, "--config", quick_config,
                   "--out", out) == 0
    assert read(f1) == read(f2)
    bad = tmp_path / "bad.txt"
    bad.write_text("0.5\n" * 10)
    assert run("refine", "--scene", "builtin:sphere", "--records", recs, "--target", bad, "--out", f1) == 2


def test_grid_scene_reward_deterministic(tmp_path, rng):
    for argv in (("grid", "--level", 1), ("scene", "--kind", "box", "--size", 0.06)):
        a, b = tmp_path / "a.out", tmp_path / "b.out"
        assert run(*argv, "--out", a) == 0 and run(*argv, "--out", b) == 0
        assert read(a) == read(b)
    log = tmp_path / "log.jsonl"
    log.write_text("".join(json.dumps({**random_state(rng).to_dict(), "step": i}) + "\n" for i in range(5)))
    a, b = tmp_path / "ra.jsonl", tmp_path / "rb.jsonl"
    assert run("reward", "--log", log, "--out", a) == 0 and run("reward", "--log", log, "--out", b) == 0
    assert read(a) == read(b)
    assert [json.loads(ln)["step"] for ln in open(a)] == list(range(5))
    log.write_text("{not json\n")
    assert run("reward", "--log", log, "--out", a) == 2


def test_errors(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    assert run("validate", "--scene", "builtin:sphere", "--records", missing) == 2
    assert "not found" in capsys.readouterr().err
    assert run("metrics", "--records", missing, "--out", tmp_path / "m.csv") == 2
    assert run("synth", "--scene", "builtin:cone", "--out", tmp_path / "x") == 2
    assert run("grid", "--level", 0, "--config", missing, "--out", tmp_path / "g.csv") == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"beta": 60.0, "bogus": 1}')
    assert run("grid", "--level", 0, "--config", cfg, "--out", tmp_path / "g.csv") == 2
    with pytest.raises(SystemExit):
        run("frobnicate")


def test_console_script(tmp_path):
    out = tmp_path / "g.csv"
    res = subprocess.run([sys.executable, "-m", "dexgrasp.cli", "grid", "--level", "0", "--out", str(out)])
    assert res.returncode == 0 and out.exists()
    res = subprocess.run([sys.executable, "-m", "dexgrasp.cli", "metrics", "--records", str(tmp_path / "no"),
                          "--out", str(out)], capture_output=True)
    assert res.returncode == 2
