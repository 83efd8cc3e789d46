"""Command-line entry point: ``dexgrasp <command> ...``.

Exit status is 0 on success, 1 when a ``validate`` run finds failing grasps
and 2 on any error. ``DEXGRASP_WORKERS`` sets the synthesis process count.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .energies import hand_contact_map
from .errors import DexgraspError, InvalidInputError, SchemaError
from .hand import default_hand
from .metrics import metric_report, metrics_csv
from .policy import RewardWeights, RolloutState, reward
from .quality import evaluate_grasp
from .records import SCHEMA_VERSION, load_config, read_records, write_records
from .scene import box_scene, load_scene, save_scene, sphere_scene
from .so3 import make_grid, write_grid_csv
from .synthesis import synthesize, tta_refine, validate

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2
BUILTIN_PREFIX = "builtin:"


def workers():
    raw = os.environ.get("DEXGRASP_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"DEXGRASP_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidInputError("DEXGRASP_WORKERS must be >= 1")
    return n


def open_scene(spec, n_points=2048):
    """A scene file, or ``builtin:sphere[:radius]`` / ``builtin:box[:side]``."""
    if spec.startswith(BUILTIN_PREFIX):
        kind, _, size = spec[len(BUILTIN_PREFIX):].partition(":")
        if kind == "sphere":
            return sphere_scene(float(size) if size else 0.04, n_points)
        if kind == "box":
            return box_scene(float(size) if size else 0.08, n_points)
        raise InvalidInputError(f"unknown built-in scene {kind!r} (use sphere or box)")
    return load_scene(spec)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_lines(path, lines):
    with Path(path).open("w", newline="\n") as fh:
        for ln in lines:
            fh.write(ln + "\n")


def _records(path, cfg):
    if not Path(path).exists():
        raise FileNotFoundError(f"records file not found: {path}")
    return read_records(path, strict=cfg.strict_scale)


# ---------------------------------------------------------------- commands


def cmd_scene(args, cfg):
    if args.kind == "sphere":
        scene = sphere_scene(args.size or 0.04, cfg.scene_points)
    else:
        scene = box_scene(args.size or 0.08, cfg.scene_points)
    save_scene(scene, args.out, {"config_hash": cfg.hash()})
    return EXIT_OK


def cmd_grid(args, cfg):
    write_grid_csv(make_grid(args.level), args.out, {"config_hash": cfg.hash(), "schema": SCHEMA_VERSION})
    return EXIT_OK


def _synth_job(job):
    spec, n_points, cfg_dict, seed = job
    from .records import config_from_dict

    cfg = config_from_dict(cfg_dict)
    scene = open_scene(spec, n_points)
    opt = replace(cfg.optimizer, seed=seed)
    rec = synthesize(scene, default_hand(), cfg.synthesis_weights, opt, config_hash=cfg.hash())
    rec.trajectory = None
    return rec


def cmd_synth(args, cfg):
    if args.seeds < 1:
        raise InvalidInputError("--seeds must be >= 1")
    for spec in args.scene:
        open_scene(spec, cfg.scene_points)  # fail early on a bad scene
    jobs = [(spec, cfg.scene_points, cfg.to_dict(), args.rng + k) for spec in args.scene for k in range(args.seeds)]
    n = min(workers(), len(jobs))
    if n == 1:
        recs = [_synth_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(n) as pool:
            recs = list(pool.map(_synth_job, jobs))
    write_records(args.out, recs)
    return EXIT_OK


def cmd_cmap(args, cfg):
    scene = open_scene(args.scene, cfg.scene_points)
    recs = _records(args.records, cfg)
    if not 0 <= args.index < len(recs):
        raise InvalidInputError(f"--index {args.index} out of range for {len(recs)} records")
    model = default_hand()
    cloud = model.surface_cloud(cfg.hand_cloud_size, 0)
    heat = hand_contact_map(scene, model, recs[args.index].hand_pose, cfg.beta, cloud).heat
    _write_lines(args.out, [f"# config_hash={cfg.hash()}"] + [repr(float(v)) for v in heat])
    return EXIT_OK


def read_target(path, n_points):
    if not Path(path).exists():
        raise FileNotFoundError(f"target map file not found: {path}")
    vals = np.atleast_1d(np.loadtxt(path, comments="#", dtype=float))
    if vals.ndim != 1 or vals.shape[0] != n_points:
        raise SchemaError(f"{path}: expected {n_points} contact values, one per line")
    if not np.all((vals >= 0) & (vals <= 1)):
        raise SchemaError(f"{path}: contact values must lie in [0, 1]")
    return vals


def cmd_refine(args, cfg):
    scene = open_scene(args.scene, cfg.scene_points)
    recs = _records(args.records, cfg)
    target = read_target(args.target, scene.object_points.shape[0])
    model = default_hand()
    cloud = model.surface_cloud(cfg.hand_cloud_size, 0)
    out = []
    for rec in recs:
        pose = tta_refine(scene, model, rec.hand_pose, target, cfg.tta_weights, cfg.tta_optimizer, cloud)
        out.append(replace(rec, hand_pose=pose, config_hash=cfg.hash(), trajectory=None))
    write_records(args.out, out)
    return EXIT_OK


def cmd_eval(args, cfg):
    scene = open_scene(args.scene, cfg.scene_points)
    recs = _records(args.records, cfg)
    model = default_hand()
    lines, annotated = [], []
    for i, rec in enumerate(recs):
        rep = evaluate_grasp(scene, model, rec.hand_pose, cfg.quality_config(), cfg.friction())
        annotated.append(replace(rec, metrics={**rec.metrics, "q1": rep.q1, "penetration": rep.penetration,
                                               "table_penetration": rep.table_penetration, "stable": rep.stable}))
        lines.append(_dump({"index": i, "object_id": rec.object_id, "seed": rec.seed, "q1": rep.q1,
                            "penetration": rep.penetration, "table_penetration": rep.table_penetration,
                            "stable": rep.stable, "contacts": rep.contacts, "config_hash": cfg.hash(),
                            "schema": SCHEMA_VERSION}))
    _write_lines(args.out, lines)
    if args.annotate:
        write_records(args.annotate, annotated)
    return EXIT_OK


def cmd_validate(args, cfg):
    scene = open_scene(args.scene, cfg.scene_points)
    recs = _records(args.records, cfg)
    model = default_hand()
    lines, failed = [], 0
    for i, rec in enumerate(recs):
        res = validate(scene, model, rec, cfg.quality_config(), cfg.friction())
        failed += not res.passed
        lines.append(_dump({"index": i, "object_id": rec.object_id, "seed": rec.seed, "passed": res.passed,
                            "penetration": res.penetration, "penetration_ok": res.penetration_ok,
                            "stable": res.stable, "contacts": res.contacts, "config_hash": cfg.hash(),
                            "schema": SCHEMA_VERSION}))
    if args.out:
        _write_lines(args.out, lines)
    print(f"{len(recs) - failed}/{len(recs)} grasps passed validation")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_metrics(args, cfg):
    recs = _records(args.records, cfg)
    if not recs:
        raise InvalidInputError("metrics needs at least one record")
    q1 = [r.metrics["q1"] for r in recs if "q1" in r.metrics]
    pen = [r.metrics["penetration"] for r in recs if "penetration" in r.metrics]
    rep = metric_report(default_hand(), [r.hand_pose for r in recs], q1 or None, pen or None)
    text = metrics_csv([rep.row(args.method)], f"config_hash={cfg.hash()} schema={SCHEMA_VERSION}")
    Path(args.out).write_text(text, newline="\n")
    return EXIT_OK


def cmd_reward(args, cfg):
    if not Path(args.log).exists():
        raise FileNotFoundError(f"rollout log not found: {args.log}")
    weights = RewardWeights.from_settings(cfg.reward)
    lines = []
    with Path(args.log).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                state = RolloutState.from_dict(d)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{args.log}:{lineno}: malformed rollout state ({exc})") from exc
            total, comps = reward(state, weights)
            lines.append(_dump({"step": d.get("step", lineno - 1), "total": total, **comps,
                                "config_hash": cfg.hash()}))
    _write_lines(args.out, lines)
    return EXIT_OK


COMMANDS = {"scene": cmd_scene, "grid": cmd_grid, "synth": cmd_synth, "cmap": cmd_cmap, "refine": cmd_refine,
            "eval": cmd_eval, "validate": cmd_validate, "metrics": cmd_metrics, "reward": cmd_reward}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON (defaults when omitted)")
    p = argparse.ArgumentParser(prog="dexgrasp", description="Dexterous grasp synthesis and evaluation tools.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scene", parents=[common], help="write a built-in object scene (PLY + sidecar)")
    s.add_argument("--kind", choices=("sphere", "box"), required=True)
    s.add_argument("--size", type=float, help="sphere radius or box side in metres")
    s.add_argument("--out", required=True)

    s = sub.add_parser("grid", parents=[common], help="export an equivolumetric SO(3) grid as CSV")
    s.add_argument("--level", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesise grasps by energy descent")
    s.add_argument("--scene", action="append", required=True,
                   help="scene PLY or builtin:sphere / builtin:box; repeat for several scenes")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--rng", type=int, default=0, help="first seed")
    s.add_argument("--out", required=True)

    s = sub.add_parser("cmap", parents=[common], help="write the contact map of one record")
    s.add_argument("--scene", required=True)
    s.add_argument("--records", required=True)
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("refine", parents=[common], help="refine grasps towards a target contact map")
    s.add_argument("--scene", required=True)
    s.add_argument("--records", required=True)
    s.add_argument("--target", required=True, help="text file, one contact value per object point")
    s.add_argument("--out", required=True)

    for name, text in (("eval", "Q1, penetration and stability per record"),
                       ("validate", "penetration + gravity-resistance filter (exit 1 if any fail)")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--scene", required=True)
        s.add_argument("--records", required=True)
        s.add_argument("--out", required=(name == "eval"))
        if name == "eval":
            s.add_argument("--annotate", help="also write the records with q1/penetration added to their metrics")

    s = sub.add_parser("metrics", parents=[common], help="diversity / quality table (CSV)")
    s.add_argument("--records", required=True)
    s.add_argument("--method", default="")
    s.add_argument("--out", required=True)

    s = sub.add_parser("reward", parents=[common], help="evaluate the lifting reward on a rollout log")
    s.add_argument("--log", required=True, help="JSON lines, one rollout state per line")
    s.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (DexgraspError, OSError, ValueError) as exc:
        print(f"dexgrasp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
