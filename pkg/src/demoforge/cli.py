"""Command-line entry point.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from demoforge import diagnostics, heatmap, mixup, plotting, render, repair, replay, synth
from demoforge.config import ConfigError, PipelineConfig, load_config, override
from demoforge.demo import (
    CloudFormatError,
    ManifestError,
    PointCloud,
    load_demopack,
    read_cloud,
    save_demopack,
    validate_demonstration,
    write_cloud,
)

log = logging.getLogger("demoforge")


class DomainError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(obj) + "\n", encoding="utf-8")


def _map(cfg: PipelineConfig, fn, items):
    """Ordered map, threaded when ``cfg.threads`` > 1."""
    items = list(items)
    if cfg.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# --- subcommands -------------------------------------------------------------


def cmd_synth_demo(args, cfg: PipelineConfig) -> int:
    demo = synth.synth_demo(args.scenario, cfg.seed, cfg.workspace)
    out = Path(args.out)
    save_demopack(demo, out)
    zones = synth.scenario_risk_zones(args.scenario, demo)
    summary = {
        "demo_id": demo.demo_id,
        "frames": len(demo),
        "keyframe_indices": list(demo.keyframe_indices),
        "min_keypose_z_above_floor": min(p.position[2] for p in demo.keyposes()) - cfg.workspace.floor_z,
        "boundary_keyposes": [
            k for k, p in zip(demo.keyframe_indices, demo.keyposes()) if cfg.workspace.near_boundary(p.position)
        ],
    }
    if zones:
        _write_json(out / "risk_zones.json", [_zone_doc(z) for z in zones])
        summary["risk_zones"] = len(zones)
    print(_dump(summary))
    return 0


def _zone_doc(z: repair.RiskZone) -> dict:
    return {"lo": list(z.lo), "hi": list(z.hi), "prep_pose": z.prep_pose.as_list()}


def _zones_from(path) -> list[repair.RiskZone]:
    from demoforge.demo import Pose

    docs = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        repair.RiskZone(tuple(d["lo"]), tuple(d["hi"]), Pose(tuple(d["prep_pose"][:3]), tuple(d["prep_pose"][3:])))
        for d in docs
    ]


def cmd_ingest(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)

    def one(path):
        demo = load_demopack(path)
        return demo, validate_demonstration(demo, cfg.workspace)

    results = _map(cfg, one, args.demos)
    reports = []
    for (demo, rep), src in zip(results, args.demos):
        reports.append({**rep.to_dict(), "source": str(src)})
        if rep.ok:
            save_demopack(demo, out / Path(src).name)
    _write_json(out / "validation.json", reports)
    bad = [r["demo_id"] for r in reports if not r["ok"]]
    print(_dump({"ingested": len(reports) - len(bad), "rejected": bad}))
    if bad:
        raise DomainError(f"{len(bad)} demo(s) failed validation; see {out / 'validation.json'}")
    return 0


def cmd_extract_keyframes(args, cfg: PipelineConfig) -> int:
    demo = load_demopack(args.demo)
    rc = cfg.repair
    found = repair.discover_keyframes(demo, rc)
    result = {"demo_id": demo.demo_id, "annotated": list(demo.keyframe_indices), "discovered": found}
    kfs = found if args.use_discovered else list(demo.keyframe_indices)
    work = demo.replace(keyframe_indices=tuple(kfs))

    vias = []
    if rc.via_count and (args.via or args.via_count):
        for a, b in zip(kfs, kfs[1:]):
            try:
                vias.extend(repair.insert_via_keyframes(work, (a, b), rc.via_count))
            except ValueError:
                continue
    result["via_keyframes"] = vias

    zones = list(rc.risk_zones)
    if args.zones:
        zones += _zones_from(args.zones)
    keyposes = repair.insert_defensive_viapoints(work, zones, cfg.workspace) if zones else [
        repair.Keypose(work.frame(k).pose, k) for k in kfs
    ]
    retreated = {kp.frame: kp.pose for kp in repair.retreat_boundary_keyposes(work, rc, cfg.workspace) if kp.origin == "retreat"}
    keyposes = [repair.Keypose(retreated[kp.frame], kp.frame, "retreat") if kp.frame in retreated else kp for kp in keyposes]
    lifted = repair.apply_height_clearance([kp.pose for kp in keyposes], cfg.workspace.floor_z, rc.clearance_delta)
    result["repaired_keyposes"] = [
        {"frame": kp.frame, "origin": kp.origin if p == kp.pose else kp.origin + "+clearance", "pose": p.as_list()}
        for kp, p in zip(keyposes, lifted)
    ]
    if args.write:
        new = sorted(set(kfs) | set(vias))
        save_demopack(demo.replace(keyframe_indices=tuple(new)), args.demo)
        result["written"] = new
    print(_dump(result))
    return 0


def _load_demos(cfg: PipelineConfig, paths):
    return _map(cfg, load_demopack, paths)


def cmd_build_buffer(args, cfg: PipelineConfig) -> int:
    demos = _load_demos(cfg, args.demos)
    out = Path(args.out)
    strategy = cfg.buffer.strategy
    interval = cfg.buffer.interval
    conv = replay.build_buffer(demos, "conventional", interval, cfg.repair, cfg.threads)
    opt = replay.build_buffer(demos, "optimized", interval, cfg.repair, cfg.threads)
    buf = conv if strategy == "conventional" else opt
    roots = {str(Path(p).resolve().parent) for p in args.demos}
    demo_root = roots.pop() if len(roots) == 1 else None
    replay.write_buffer(buf, out, demo_root)
    stats = diagnostics.compute_stats(buf, out)
    doc = stats.to_dict()
    doc.update(
        interval=interval,
        conventional_count=len(conv),
        optimized_count=len(opt),
        count_ratio=len(opt) / len(conv) if len(conv) else None,
    )
    replay.write_stats(doc, out)
    sched = replay.make_cyclic_schedule(buf, cfg.seed)
    _write_json(out / "schedule.json", {"seed": sched.seed, "degenerate": sched.degenerate, "permutation": list(sched.permutation)})
    print(_dump({k: doc[k] for k in ("strategy", "sample_count", "conventional_count", "optimized_count", "count_ratio")}))
    return 0


def cmd_stats(args, cfg: PipelineConfig) -> int:
    buf = replay.read_buffer(args.buffer)
    stats = diagnostics.compute_stats(buf, args.buffer)
    out = Path(args.out) if args.out else Path(args.buffer)
    out.mkdir(parents=True, exist_ok=True)
    doc = stats.to_dict()
    existing = Path(args.buffer) / replay.STATS_FILE
    if existing.is_file():
        prior = json.loads(existing.read_text(encoding="utf-8"))
        doc = {**prior, **doc}
    hists = {buf.strategy: stats.temporal_histogram}
    summary = {"sample_count": stats.sample_count, "bytes_on_disk": stats.bytes_on_disk,
               "redundancy_ratio": stats.redundancy_ratio, "entropy_bits": stats.entropy}
    if args.compare:
        other_buf = replay.read_buffer(args.compare)
        other = diagnostics.compute_stats(other_buf, args.compare)
        hists[other_buf.strategy if other_buf.strategy != buf.strategy else "compare"] = other.temporal_histogram
        summary["count_ratio"] = stats.sample_count / other.sample_count if other.sample_count else None
        summary["bytes_ratio"] = stats.bytes_on_disk / other.bytes_on_disk if other.bytes_on_disk else None
        doc["comparison"] = {"buffer": str(args.compare), **{k: summary[k] for k in ("count_ratio", "bytes_ratio")}}
    replay.write_stats(doc, out)
    sys.stdout.write(diagnostics.ascii_histogram(stats.temporal_histogram))
    if not args.no_figures:
        plotting.temporal_histogram(hists, out / "temporal_histogram.png")
    print(_dump(summary))
    return 0


def cmd_diagnose(args, cfg: PipelineConfig) -> int:
    curves = diagnostics.read_curves_csv(args.curves)
    ccfg = diagnostics.ClassifierConfig(
        **{
            k: v
            for k, v in dict(
                decline_threshold=args.decline,
                stability_eps=args.stability,
                gap_threshold=args.gap,
                near_zero=args.near_zero,
            ).items()
            if v is not None
        }
    )
    try:
        verdict = diagnostics.classify_scenario(curves, ccfg)
    except ValueError as exc:
        raise DomainError(str(exc)) from exc
    out = Path(args.out)
    _write_json(out / "verdict.json", verdict.to_dict())
    report = diagnostics.format_report(verdict)
    (out / "report.txt").write_text(report, encoding="utf-8")
    if not args.no_figures:
        plotting.success_curves(curves, verdict, out / "curves.png")
    sys.stdout.write(report)
    return 0


def _views(cfg: PipelineConfig, ws=None) -> render.ViewSet:
    return render.ViewSet.for_workspace(ws or cfg.workspace, cfg.render.resolution, cfg.render.views)


def cmd_render(args, cfg: PipelineConfig) -> int:
    demo = load_demopack(args.demo)
    cloud = demo.cloud(args.frame)
    vs = _views(cfg)
    views = render.render_orthographic(cloud, vs, cfg.render.splat)
    out = Path(args.out)
    render.write_views(views, vs, out)
    rows = {"standard": views}
    if args.invert:
        inv = render.invert_views(views, cfg.render.invert_mode)
        render.write_views(inv, vs, out)
        rows["inverted"] = inv
    if not args.no_figures:
        plotting.view_sheet(rows, list(cfg.render.views), out / "views.png")
    print(_dump({
        "frame": args.frame,
        "views": list(cfg.render.views),
        "occupied_pixels": [int(v.occupancy.sum()) for v in views],
        "contrast": {k: [round(render.foreground_contrast(v), 3) for v in vs_] for k, vs_ in rows.items()},
    }))
    return 0


class _CloudCache:
    def __init__(self, root: Path):
        self.root = root
        self.cache: dict[str, PointCloud] = {}

    def __call__(self, rel: str) -> PointCloud:
        if rel not in self.cache:
            self.cache[rel] = read_cloud(self.root / rel)
        return self.cache[rel]


def cmd_augment(args, cfg: PipelineConfig) -> int:
    bdir = Path(args.buffer)
    buf = replay.read_buffer(bdir)
    if not len(buf):
        raise DomainError(f"buffer {bdir} is empty")
    vs = _views(cfg)
    clouds = _CloudCache(bdir)
    se3 = (args.se3_translation or 0.0, np.deg2rad(args.se3_yaw or 0.0))

    def supervised(i: int) -> mixup.SupervisedSample:
        s = buf.samples[i]
        cloud, action = clouds(s.obs_cloud), s.target_action
        if se3[0] or se3[1]:
            cloud, action = render.perturb_se3_retry(cloud, action, se3, cfg.seed * 1_000_003 + i * 20, cfg.workspace)
        hm = heatmap.make_gt_heatmaps(action.pose.position, vs, cfg.render.sigma)
        return mixup.SupervisedSample(cloud, s.instruction, hm, action, f"s{i:06d}", vs)

    samples = _map(cfg, supervised, range(len(buf)))
    out = Path(args.out)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        stream = list(mixup.augment_buffer(samples, cfg.mixup, cfg.seed))
    for w in caught:
        log.warning("%s", w.message)
    counts = {"none": 0, "intra": 0, "cross": 0}
    with open(out / "augmented.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for n, s in enumerate(stream):
            cpath = f"clouds/{n:06d}.bpc"
            hpath = f"heatmaps/{n:06d}.hmp"
            write_cloud(s.cloud, out / cpath)
            (out / hpath).write_bytes(heatmap.encode_hmp(s.heatmaps))
            counts[s.mix_type] += 1
            rec = {
                "index": n,
                "sample_id": s.sample_id,
                "mix_type": s.mix_type,
                "sources": list(s.sources),
                "instruction": s.instruction,
                "points": len(s.cloud),
                "cloud": cpath,
                "heatmaps": hpath,
                "target_pose": s.action.pose.as_list(),
                "gripper_open": s.action.gripper_open,
                "ignore_collision": s.action.ignore_collision,
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    print(_dump({"samples": len(stream), "mix_counts": counts}))
    return 0


def cmd_localize(args, cfg: PipelineConfig) -> int:
    demo = load_demopack(args.demo)
    frame = demo.frame(args.frame)
    if args.target_from_keyframe:
        later = [k for k in demo.keyframe_indices if k > frame.index]
        tk = later[0] if later else demo.keyframe_indices[-1]
        target = np.asarray(demo.frame(tk).pose.position)
    else:
        tk = None
        target = np.asarray(args.target, dtype=float)
    if not cfg.workspace.contains(target):
        raise DomainError(f"target {target.tolist()} lies outside the workspace")
    cloud = demo.cloud(frame.index)
    vs = _views(cfg)
    lc = cfg.localize
    res = heatmap.two_stage_localize(
        cloud, heatmap.gt_provider(target, cfg.render.sigma), vs, lc.coarse_grid, lc.zoom_side, lc.fine_grid, cfg.render.splat
    )
    err = res.position - target
    doc = {
        "frame": frame.index,
        "target_keyframe": tk,
        "target": target.tolist(),
        "position": res.position.tolist(),
        "stage": res.stage,
        "fallback": res.fallback,
        "error_inf_m": float(np.abs(err).max()),
        "error_l2_m": float(np.linalg.norm(err)),
    }
    if args.out:
        out = Path(args.out)
        hms = heatmap.make_gt_heatmaps(target, vs, cfg.render.sigma)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gt_heatmaps.hmp").write_bytes(heatmap.encode_hmp(hms))
        _write_json(out / "localization.json", doc)
        if not args.no_figures:
            marks = [tuple(v.continuous_pixel(res.position) - 0.5) for v in vs]
            plotting.heatmap_sheet(hms, list(cfg.render.views), out / "heatmaps.png", marks)
    print(_dump(doc))
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (default: $DEMOFORGE_CONFIG)")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--json-errors", action="store_true", help="report domain errors as JSON on stderr")
    common.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="demoforge",
        description="Build, repair, inspect and augment keyframe replay buffers.",
        epilog="Exit codes: 0 success, 1 domain error (invalid demo, empty render, zero evidence, "
        "bad config), 2 usage error.",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth-demo", parents=[common], help="write a synthetic demo bundle",
                       epilog="errors: unknown scenario (exit 2)")
    s.add_argument("scenario", choices=synth.SCENARIOS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_demo)

    s = sub.add_parser("ingest", parents=[common], help="validate demo bundles and copy valid ones",
                       epilog="errors: any invalid demo (exit 1, report still written)")
    s.add_argument("demos", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("extract-keyframes", parents=[common], help="discover keyframes and apply repairs",
                       epilog="errors: demo with fewer than 2 frames, prep pose outside workspace (exit 1)")
    s.add_argument("demo")
    s.add_argument("--use-discovered", action="store_true", help="repair against discovered, not annotated, keyframes")
    s.add_argument("--via", action="store_true", help="insert curvature via keyframes (repair.via_count per segment)")
    s.add_argument("--via-count", type=int)
    s.add_argument("--zones", help="JSON list of risk zones {lo, hi, prep_pose}")
    s.add_argument("--write", action="store_true", help="store keyframes (plus vias) in the manifest")
    s.set_defaults(func=cmd_extract_keyframes)

    s = sub.add_parser("build-buffer", parents=[common], help="build a replay buffer from demo bundles",
                       epilog="errors: demo without keyframes, unreadable bundle (exit 1)")
    s.add_argument("demos", nargs="+")
    s.add_argument("out")
    s.add_argument("--strategy", choices=("conventional", "optimized"))
    s.add_argument("--interval", type=int)
    s.add_argument("--min-dist", type=float, help="motion-saliency threshold in meters")
    s.set_defaults(func=cmd_build_buffer)

    s = sub.add_parser("stats", parents=[common], help="buffer statistics and temporal histogram",
                       epilog="errors: missing buffer index (exit 1)")
    s.add_argument("buffer")
    s.add_argument("--compare", help="second buffer directory; prints count and byte ratios")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("diagnose", parents=[common], help="classify training curves into scenarios A/B/C",
                       epilog="errors: fewer than 4 checkpoints, malformed CSV (exit 1)")
    s.add_argument("curves", help="CSV with step,instance,train_sr,test_sr")
    s.add_argument("--out", required=True)
    s.add_argument("--decline", type=float)
    s.add_argument("--stability", type=float)
    s.add_argument("--gap", type=float)
    s.add_argument("--near-zero", type=float)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("render", parents=[common], help="render one frame into orthographic views",
                       epilog="errors: empty render, missing frame (exit 1)")
    s.add_argument("--demo", required=True)
    s.add_argument("--frame", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--invert", action="store_true")
    s.add_argument("--invert-mode", choices=("occupied", "image"))
    s.add_argument("--resolution", type=int)
    s.add_argument("--splat", type=int)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("augment", parents=[common], help="task-guided mixup over a buffer",
                       epilog="errors: empty buffer, unreadable clouds (exit 1)")
    s.add_argument("buffer")
    s.add_argument("out")
    s.add_argument("--intra-rate", type=float)
    s.add_argument("--cross-rate", type=float)
    s.add_argument("--max-distractors", type=int, help="samples per cross mix, primary included")
    s.add_argument("--renormalize", action="store_true", default=None)
    s.add_argument("--se3-translation", type=float, help="max |translation| per axis (m)")
    s.add_argument("--se3-yaw", type=float, help="max |yaw| (degrees)")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("localize", parents=[common], help="two-stage localization with ground-truth heatmaps",
                       epilog="errors: empty render, zero evidence, target outside workspace (exit 1)")
    s.add_argument("--demo", required=True)
    s.add_argument("--frame", type=int, required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--target-from-keyframe", action="store_true")
    g.add_argument("--target", type=float, nargs=3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_localize)
    return p


def _apply_flags(args, cfg: PipelineConfig) -> PipelineConfig:
    cfg = override(cfg, "run", seed=args.seed, threads=args.threads)
    if args.command == "build-buffer":
        cfg = override(cfg, "buffer", strategy=args.strategy, interval=args.interval)
        cfg = override(cfg, "repair", saliency_min_dist=args.min_dist)
    elif args.command == "extract-keyframes":
        cfg = override(cfg, "repair", via_count=args.via_count)
    elif args.command == "render":
        cfg = override(cfg, "render", invert_mode=args.invert_mode, resolution=args.resolution, splat=args.splat)
    elif args.command == "augment":
        cfg = override(cfg, "mixup", intra_rate=args.intra_rate, cross_rate=args.cross_rate,
                       max_distractors=args.max_distractors, renormalize=args.renormalize)
    return cfg


DOMAIN_ERRORS = (
    DomainError,
    ConfigError,
    ManifestError,
    CloudFormatError,
    render.EmptyRender,
    heatmap.ZeroEvidence,
    KeyError,
    ValueError,
    OSError,
    RuntimeError,
)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_flags(args, load_config(args.config))
        return args.func(args, cfg)
    except DOMAIN_ERRORS as exc:
        if args.json_errors:
            sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        else:
            sys.stderr.write(f"demoforge {args.command}: {type(exc).__name__}: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
