"""Command-line interface.

Subcommands mirror the pipeline stages (simulate | crop | calibrate |
localize | merge | evaluate | pipeline | ablation); every structured error
class maps to its own nonzero exit code. The default worker count comes from
CROWDLOC_WORKERS and never changes results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .calibration import CalibrationOptions, calibrate, select_standing
from .cropping import CropParams, cropping_score, generate_patches, solve_layout, uniform_layout
from .errors import ConfigError, CrowdLocError, exit_code
from .formats import (load_annotations, load_calibration, load_patches, load_reconstruction,
                      load_truth, save_calibration, save_patches, save_reconstruction,
                      save_truth, save_annotations, dump_json)
from .merging import MergeConfig, merge_duplicates
from .pipeline import (SceneConfig, ablation_curves, assign_observations,
                       default_workers, evaluate_crowd, localize_all, run_pipeline,
                       write_ablation_csv)
from .simulate import SceneSpec, generate, render_annotations

logger = logging.getLogger("crowdloc")


def _provenance(args: dict) -> dict:
    import hashlib
    # execution details (worker count, verbosity, handler) must not leak into
    # outputs: byte-identical reruns are part of the contract
    relevant = {k: v for k, v in args.items() if k not in ("fn", "workers", "verbose", "command")}
    digest = hashlib.sha256(json.dumps(relevant, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return {"config_digest": digest, "version": __version__}


def cmd_simulate(args) -> int:
    spec_kwargs = {}
    if args.spec:
        spec_kwargs = json.loads(Path(args.spec).read_text()) if Path(args.spec).exists() else None
        if spec_kwargs is None:
            raise ConfigError(f"spec file does not exist: {args.spec}")
    if args.seed is not None:
        spec_kwargs["seed"] = args.seed
    if args.people is not None:
        spec_kwargs["n_people"] = args.people
    if args.sigma is not None:
        spec_kwargs["noise_sigma"] = args.sigma
    spec = SceneSpec(**spec_kwargs)
    scene = generate(spec)
    aset = render_annotations(scene)
    if args.with_bodies:
        for annotation, person in zip(aset.people, scene.people):
            names = ("left_shoulder", "right_shoulder", "left_hip", "right_hip",
                     "left_ankle", "right_ankle")
            idx = {n: i for i, n in enumerate(names)}
            shoulder = 0.5 * (person.keypoints3d[idx["left_shoulder"]]
                              + person.keypoints3d[idx["right_shoulder"]])
            ankle = 0.5 * (person.keypoints3d[idx["left_ankle"]]
                           + person.keypoints3d[idx["right_ankle"]])
            annotation.body = {
                "points": (person.body_points - person.P_t).tolist(),
                "torso_center": [0.0, 0.0, 0.0],
                "axis_top": (shoulder - person.P_t).tolist(),
                "axis_bottom": (ankle - person.P_t).tolist(),
            }
    prov = _provenance(vars(args))
    save_annotations(aset, args.out_annotations, provenance=prov)
    if args.out_truth:
        save_truth(scene, args.out_truth, provenance=prov)
    print(f"simulated {len(scene.people)} people (seed {spec.seed}) -> {args.out_annotations}")
    return 0


def cmd_crop(args) -> int:
    if args.params:
        raw = json.loads(Path(args.params).read_text()) if Path(args.params).exists() else None
        if raw is None:
            raise ConfigError(f"crop params file does not exist: {args.params}")
        params = CropParams(**raw)
        boxes = []
    elif args.annotations:
        aset = load_annotations(args.annotations)
        from .cropping import estimate_crop_params
        boxes = [p.box for p in aset.people if p.box is not None]
        params = estimate_crop_params(boxes, aset.image_width, aset.image_height)
    else:
        raise ConfigError("crop needs --params or --annotations")
    if args.uniform:
        patches, layout = uniform_layout(params, args.uniform), None
    else:
        layout = solve_layout(params)
        patches = generate_patches(layout, params)
    save_patches(patches, params, args.out, layout=layout, provenance=_provenance(vars(args)))
    msg = f"{len(patches)} patches -> {args.out}"
    if layout is not None:
        msg += f" (rows {list(layout.sizes)}, q={layout.q:.4f})"
    if boxes:
        msg += f", cropping score {cropping_score(boxes, patches):.3f}"
    print(msg)
    return 0


def cmd_calibrate(args) -> int:
    aset = load_annotations(args.annotations)
    keypoints = [p.keypoints for p in aset.people if p.keypoints is not None]
    standing = select_standing(keypoints, aset.joint_order, tau=args.tau)
    options = CalibrationOptions(height_prior=args.height_prior,
                                 lambda_angle=args.lambda_angle, lambda_mod=args.lambda_mod)
    result = calibrate(standing, (aset.image_width, aset.image_height), options)
    save_calibration(result.camera, result.ground, args.out,
                     extras={"residual": result.residual,
                             "n_observations": result.n_observations,
                             "iterations": result.iterations,
                             "warnings": result.warnings},
                     provenance=_provenance(vars(args)))
    n = result.ground.normal
    print(f"f={result.camera.f:.2f} N=({n[0]:.5f},{n[1]:.5f},{n[2]:.5f}) D={result.ground.d:.4f} "
          f"residual={result.residual:.3e} people={result.n_observations} -> {args.out}")
    return 0


def cmd_localize(args) -> int:
    camera, ground, _ = load_calibration(args.scene)
    aset = load_annotations(args.annotations)
    patches, params = load_patches(args.patches)
    observations, skipped = assign_observations(aset, patches)
    located = localize_all(observations, patches, camera, ground,
                           workers=args.workers or default_workers())
    save_reconstruction(located, camera, ground, args.out,
                        provenance=_provenance(vars(args)),
                        meta={"patches": [{"id": p.id, "x": p.x, "y": p.y, "size": p.size,
                                           "row": p.row, "kind": p.kind} for p in patches],
                              "skipped_people": skipped})
    print(f"located {len(located)} observations ({skipped} people skipped) -> {args.out}")
    return 0


def cmd_merge(args) -> int:
    people, camera, ground, raw = load_reconstruction(args.infile)
    patch_entries = raw.get("meta", {}).get("patches")
    if not patch_entries:
        raise ConfigError(f"{args.infile} has no embedded patch table; cannot apply the boundary rule")
    from .cropping import Patch
    patches = [Patch(id=e["id"], x=e["x"], y=e["y"], size=e["size"],
                     row=e.get("row", 0), kind=e.get("kind", "base")) for e in patch_entries]
    merged = merge_duplicates(people, patches, MergeConfig(args.radius_factor, args.use_3d))
    save_reconstruction(merged, camera, ground, args.out,
                        provenance=_provenance(vars(args)),
                        meta={"patches": patch_entries, "merged_from": len(people)})
    print(f"{len(people)} -> {len(merged)} people after merging -> {args.out}")
    return 0


def _print_report(report: dict) -> None:
    metrics = report.get("metrics")
    counts = report.get("counts", {})
    print(f"matched {counts.get('matched', 0)}/{counts.get('gt', 0)} people "
          f"({report.get('matching')}); est={counts.get('est', 0)} "
          f"unmatched_est={counts.get('unmatched_est', 0)} unmatched_gt={counts.get('unmatched_gt', 0)}")
    if not metrics:
        print("metrics: undefined (too few matches)")
        return
    rows = [("PPDS", metrics.get("ppds")), ("PA-PPDS", metrics.get("pa_ppds")),
            ("PCOD", metrics.get("pcod")), ("OKS", metrics.get("oks"))]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        shown = "n/a" if value is None else f"{value:.4f}"
        print(f"  {name:<{width}}  {shown}")
    if "skipped_pairs" in counts:
        print(f"  pairs={counts.get('pairs')} skipped_pairs={counts.get('skipped_pairs')}")


def cmd_evaluate(args) -> int:
    people, _, _, _ = load_reconstruction(args.est)
    truth_entries, _, _, raw = load_truth(args.gt)
    report = evaluate_crowd(people, truth_entries, raw.get("joint_order"), gate_px=args.gate)
    report["provenance"] = _provenance(vars(args))
    report["scenes"] = [{"name": Path(args.est).stem, "metrics": report.get("metrics")}]
    if args.out:
        dump_json(report, args.out)
    _print_report(report)
    return 0


def cmd_pipeline(args) -> int:
    if args.config:
        config = SceneConfig.from_file(args.config)
    else:
        if not args.annotations or not args.out_dir:
            raise ConfigError("pipeline needs --config or both --annotations and --out-dir")
        config = SceneConfig(annotations=args.annotations, out_dir=args.out_dir,
                             truth=args.truth)
    if args.workers:
        config.workers = args.workers
    result = run_pipeline(config)
    print(f"pipeline done: {len(result.people)} people, {len(result.patches)} patches "
          f"-> {config.out_dir}")
    if result.report:
        _print_report(result.report)
    return 0


def cmd_ablation(args) -> int:
    counts = ([int(c) for c in args.counts.split(",")] if args.counts
              else list(range(1, args.max_count + 1)))
    spec_kwargs = {}
    if args.scene:
        spec_kwargs = json.loads(Path(args.scene).read_text())
    rows = ablation_curves(counts, range(1, args.seeds + 1), sigma=args.sigma,
                           spec_kwargs=spec_kwargs)
    write_ablation_csv(rows, args.out)
    for count, cos_err, f_rmse in rows:
        print(f"count={count:3d}  normal_cos_dist={cos_err:.3e}  focal_rmse={f_rmse:.3e}")
    print(f"-> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdloc",
        description="3D crowd localization in large-scene images from 2D annotations")
    parser.add_argument("--version", action="version", version=f"crowdloc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene with ground truth")
    p.add_argument("--spec", help="JSON file with scene spec fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--people", type=int)
    p.add_argument("--sigma", type=float, help="keypoint noise in pixels")
    p.add_argument("--with-bodies", action="store_true",
                   help="embed model-frame body point sets in the annotations")
    p.add_argument("--out-annotations", required=True)
    p.add_argument("--out-truth")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("crop", help="solve the crop layout and emit the patch grid")
    p.add_argument("--params", help="JSON file with h_t/h_b/b_u/b_l/image_width/image_height")
    p.add_argument("--annotations", help="estimate crop parameters from annotated boxes")
    p.add_argument("--uniform", type=int, metavar="N", help="uniform NxN baseline grid instead")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_crop)

    p = sub.add_parser("calibrate", help="estimate camera and ground plane from standing people")
    p.add_argument("--annotations", required=True)
    p.add_argument("--height-prior", type=float, default=1.4)
    p.add_argument("--tau", type=float, default=0.5, help="keypoint confidence threshold")
    p.add_argument("--lambda-angle", type=float, default=1.0)
    p.add_argument("--lambda-mod", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("localize", help="lift annotations to 3D positions")
    p.add_argument("--scene", required=True, help="calibration file")
    p.add_argument("--annotations", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_localize)

    p = sub.add_parser("merge", help="remove duplicates across overlapping patches")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--radius-factor", type=float, default=0.5)
    p.add_argument("--use-3d", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("evaluate", help="score a reconstruction against ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--gate", type=float, default=50.0, help="matching gate in pixels")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run crop -> calibrate -> localize -> merge -> evaluate")
    p.add_argument("--config", help="SceneConfig JSON")
    p.add_argument("--annotations")
    p.add_argument("--truth")
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("ablation", help="calibration error vs number of people")
    p.add_argument("--counts", help="comma-separated counts (default 1..max-count)")
    p.add_argument("--max-count", type=int, default=30)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--scene", help="JSON file with scene spec overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CrowdLocError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
