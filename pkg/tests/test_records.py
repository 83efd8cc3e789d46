import json

import numpy as np
import pytest

from dexgrasp import so3
from dexgrasp.errors import InvalidInputError, SchemaError
from dexgrasp.hand import HandPose
from dexgrasp.records import (SCALES, GraspRecord, RunConfig, config_from_dict, load_config, read_records,
                              write_records)


def make_record(rng, scale=0.08):
    R = so3.random_rotations(2, rng)
    return GraspRecord("obj", scale, so3.RigidTransform(R[0], rng.normal(size=3)),
                       HandPose.make(R[1], rng.normal(size=3), rng.normal(size=22)),
                       {"q1": float(rng.uniform()), "stable": True}, int(rng.integers(1000)), "abc")


def test_roundtrip_1000_bitwise(tmp_path, rng):
    recs = [make_record(rng, SCALES[i % 5]) for i in range(1000)]
    p = tmp_path / "r.jsonl"
    write_records(p, recs)
    back = read_records(p, strict=True)
    assert len(back) == 1000
    for a, b in zip(recs, back):
        assert np.array_equal(a.hand_pose.rotation, b.hand_pose.rotation)
        assert np.array_equal(a.hand_pose.translation, b.hand_pose.translation)
        assert np.array_equal(a.hand_pose.q, b.hand_pose.q)
        assert np.array_equal(a.object_pose.as_matrix(), b.object_pose.as_matrix())
        assert a.metrics == b.metrics and a.seed == b.seed and a.config_hash == b.config_hash


def test_strict_scale(tmp_path, rng):
    rec = make_record(rng, 0.07)
    with pytest.raises(InvalidInputError):
        rec.validate(strict=True)
    p = tmp_path / "r.jsonl"
    write_records(p, [rec])
    assert len(read_records(p)) == 1
    with pytest.raises(SchemaError, match=":1:"):
        read_records(p, strict=True)


def test_empty_and_malformed(tmp_path, rng):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert read_records(p) == []
    good = json.dumps(make_record(rng).to_dict())
    p.write_text(good + "\n" + good + "\n{not json\n")
    with pytest.raises(SchemaError, match=":3:"):
        read_records(p)
    d = make_record(rng).to_dict()
    d["schema"] = "2.0"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(SchemaError, match="newer"):
        read_records(p)


def test_config_defaults_and_hash(tmp_path):
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.optimizer.steps == 6000 and cfg.tta_optimizer.steps == 300
    assert cfg.quality.mu == 0.5 and cfg.quality.cone_edges == 8
    assert cfg.hand_cloud_size == 2048 and cfg.beta == 60.0
    p = tmp_path / "c.json"
    p.write_text(cfg.dumps())
    back = load_config(p)
    assert back == cfg and back.hash() == cfg.hash()
    changed = config_from_dict({"optimizer": {"steps": 10}})
    assert changed.optimizer.steps == 10 and changed.hash() != cfg.hash()


@pytest.mark.parametrize("data,needle", [
    ({"bogus": 1}, "bogus"),
    ({"optimizer": {"stepz": 1}}, "stepz"),
    ({"optimizer": {"steps": 0}}, "steps"),
    ({"version": "9.0"}, "newer"),
    ({"quality": 3}, "quality"),
])
def test_config_rejections(data, needle):
    with pytest.raises(SchemaError, match=needle):
        config_from_dict(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.json")
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(SchemaError):
        load_config(p)
