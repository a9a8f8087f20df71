"""End-to-end orchestration: crop -> calibrate -> localize -> merge -> evaluate.

Given one annotation file (global-frame labels), the pipeline solves the crop
layout, calibrates the scene camera and ground plane from standing people,
assigns every person to the patches that contain them (deliberately creating
duplicates in overlap regions), lifts each observation to 3D, merges
duplicates, and scores against ground truth when available. Outputs embed a
digest of the effective configuration and the tool version; reruns are
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (CalibrationOptions, calibrate, observations_from_keypoints,
                          select_standing)
from .cropping import (CropParams, cropping_score, estimate_crop_params, generate_patches,
                       solve_layout, uniform_layout)
from .errors import ConfigError, CrowdLocError
from .formats import (AnnotationSet, dump_json, load_annotations, load_calibration,
                      load_truth, save_calibration, save_patches, save_reconstruction)
from .localization import (PersonObservation, ground_normal_loss, locate, out_of_bound_loss,
                           place_body)
from .merging import MergeConfig, merge_duplicates
from .metrics import (DEFAULT_FALLOFF, MatchedCrowd, match_instances, mean_oks, pa_ppds,
                      pcod, ppds)
from .simulate import SceneSpec, generate, render_annotations

logger = logging.getLogger(__name__)

WORKERS_ENV = "CROWDLOC_WORKERS"


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {value!r}")


@dataclass
class SceneConfig:
    annotations: str
    out_dir: str
    truth: str | None = None
    scene_file: str | None = None  # precomputed calibration; skips estimation
    crop_auto: bool = True
    crop_params: dict | None = None  # manual h_t/h_b/b_u/b_l override
    uniform_block: int | None = None  # use the uniform baseline grid instead
    height_prior: float = 1.4
    tau: float = 0.5
    lambda_angle: float = 1.0
    lambda_mod: float = 1.0
    radius_factor: float = 0.5
    use_3d_matching: bool = False
    oks_gate_px: float = 50.0
    workers: int = 0  # 0: take CROWDLOC_WORKERS or 1

    @classmethod
    def from_file(cls, path) -> "SceneConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file does not exist: {path}")
        raw = json.loads(path.read_text())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def digest(self) -> str:
        payload = asdict(self)
        payload.pop("workers", None)  # execution detail: never affects results
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"config_digest": self.digest(), "version": __version__}


@dataclass
class PipelineResult:
    people: list
    camera: object
    ground: object
    patches: list
    report: dict | None
    log: dict = field(default_factory=dict)


def build_patches(aset: AnnotationSet, config: SceneConfig):
    if config.crop_params:
        params = CropParams(image_width=aset.image_width, image_height=aset.image_height,
                            **config.crop_params)
    elif config.crop_auto:
        boxes = [p.box for p in aset.people if p.box is not None]
        params = estimate_crop_params(boxes, aset.image_width, aset.image_height)
    else:
        raise ConfigError("no crop parameters: set crop_auto or crop_params")
    if config.uniform_block:
        return uniform_layout(params, config.uniform_block), params, None
    layout = solve_layout(params)
    return generate_patches(layout, params), params, layout


def calibrate_scene(aset: AnnotationSet, config: SceneConfig):
    if config.scene_file:
        camera, ground, _ = load_calibration(config.scene_file)
        return camera, ground, None
    keypoints = [p.keypoints for p in aset.people if p.keypoints is not None]
    standing = select_standing(keypoints, aset.joint_order, tau=config.tau)
    options = CalibrationOptions(height_prior=config.height_prior,
                                 lambda_angle=config.lambda_angle,
                                 lambda_mod=config.lambda_mod)
    result = calibrate(standing, (aset.image_width, aset.image_height), options)
    return result.camera, result.ground, result


def assign_observations(aset: AnnotationSet, patches):
    """One observation per (person, containing patch).

    A person lands in every patch that fully contains their box, so overlap
    regions intentionally produce duplicates for the merge stage; people whose
    box fits no patch fall back to the patches containing the torso pixel.
    """
    observations, skipped = [], 0
    for person in aset.people:
        if person.torso is None or (person.hvip is None and person.hvip_offset is None):
            skipped += 1
            continue
        if person.box is not None:
            containing = [p for p in patches if p.contains_box(person.box)]
        else:
            containing = []
        if not containing:
            containing = [p for p in patches if p.contains_point(person.torso)]
        if not containing:
            skipped += 1
            continue
        for patch in containing:
            kwargs = {}
            if person.hvip is not None:
                kwargs["p_v_local"] = np.asarray(person.hvip, dtype=float) - patch.t_crop
            else:
                kwargs["hvip_offset"] = float(person.hvip_offset)
            observations.append((PersonObservation(
                patch_id=patch.id,
                p_t_local=np.asarray(person.torso, dtype=float) - patch.t_crop,
                delta_t=person.delta_t,
                keypoints=person.keypoints,
                box=person.box,
                person_id=person.id,
                **kwargs,
            ), person))
    return observations, skipped


def _locate_one(args):
    obs, person, patch, camera, ground = args
    located = locate(obs, patch, camera, ground)
    if person.body:
        body = np.asarray(person.body["points"], dtype=float)
        center = np.asarray(person.body.get("torso_center", [0.0, 0.0, 0.0]), dtype=float)
        placed = place_body(body, center, located.P_t)
        located.body_points = placed
        located.penalties["l_out"] = out_of_bound_loss(placed, ground)
        if "axis_top" in person.body and "axis_bottom" in person.body:
            top = place_body(np.asarray(person.body["axis_top"], dtype=float), center, located.P_t)
            bottom = place_body(np.asarray(person.body["axis_bottom"], dtype=float), center, located.P_t)
            located.penalties["l_gn"] = ground_normal_loss(top, bottom, ground.normal)
    return located


def localize_all(observations, patches, camera, ground, workers: int = 1):
    """Locate every observation; results are order-stable for any worker count."""
    by_id = {p.id: p for p in patches}
    tasks = [(obs, person, by_id[obs.patch_id], camera, ground) for obs, person in observations]
    if workers <= 1:
        return [_locate_one(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_locate_one, tasks))


def evaluate_crowd(est_people, truth_entries, joint_order, gate_px: float = 50.0) -> dict:
    """Metric report for located people against a truth table.

    Matching uses ground-truth ids when both sides carry them, else
    minimal-cost 2D torso-pixel assignment with a gating radius.
    """
    report: dict = {"counts": {"est": len(est_people), "gt": len(truth_entries)}}
    truth_by_id = {t["id"]: t for t in truth_entries if t.get("id") is not None}
    est_ids = [p.person_id for p in est_people]
    pairs = []
    if truth_by_id and all(i is not None for i in est_ids):
        gt_list = list(truth_entries)
        gt_index = {t["id"]: k for k, t in enumerate(gt_list)}
        for i, person in enumerate(est_people):
            if person.person_id in gt_index:
                pairs.append((i, gt_index[person.person_id]))
        unmatched_est = [i for i in range(len(est_people))
                         if est_people[i].person_id not in gt_index]
        unmatched_gt = [j for j, t in enumerate(gt_list)
                        if t["id"] not in {p.person_id for p in est_people}]
        report["matching"] = "by_id"
    else:
        gt_list = list(truth_entries)
        est_px = [p.p_t for p in est_people]
        gt_px = [t["p_t_px"] for t in gt_list]
        pairs, unmatched_est, unmatched_gt = match_instances(est_px, gt_px, gate_px)
        report["matching"] = "hungarian_2d"
    report["counts"].update({"matched": len(pairs),
                             "unmatched_est": len(unmatched_est),
                             "unmatched_gt": len(unmatched_gt)})
    if len(pairs) < 2:
        report["metrics"] = None
        report["note"] = "fewer than 2 matched people; metrics undefined"
        return report

    est_pts = np.array([est_people[i].P_t for i, _ in pairs])
    gt_pts = np.array([np.asarray(gt_list[j]["P_t_m"], dtype=float) for _, j in pairs])
    crowd = MatchedCrowd(est_pts, gt_pts)
    ppds_val, counts = ppds(crowd, return_counts=True)
    metrics = {"ppds": ppds_val, "pa_ppds": pa_ppds(crowd), "pcod": pcod(crowd)}
    report["counts"].update(counts)

    est_kps = [None if est_people[i].keypoints is None
               else np.asarray(est_people[i].keypoints, dtype=float) for i, _ in pairs]
    gt_kps = [np.asarray(gt_list[j].get("keypoints_px"), dtype=float)
              if gt_list[j].get("keypoints_px") is not None else None for _, j in pairs]
    if joint_order and any(k is not None for k in est_kps) and any(k is not None for k in gt_kps):
        falloff = np.array([DEFAULT_FALLOFF.get(name, 0.1) for name in joint_order])
        scales, e_sel, g_sel = [], [], []
        for (i, j), e_kp, g_kp in zip(pairs, est_kps, gt_kps):
            if e_kp is None or g_kp is None:
                continue
            box = gt_list[j].get("box")
            area = float(box[2]) * float(box[3]) if box is not None else 1.0
            scales.append(math.sqrt(max(area, 1.0)))
            e_sel.append(e_kp)
            g_sel.append(g_kp)
        if e_sel:
            kp_crowd = MatchedCrowd(np.zeros((len(e_sel), 3)), np.zeros((len(e_sel), 3)),
                                    est_keypoints=e_sel, gt_keypoints=g_sel)
            metrics["oks"] = mean_oks(kp_crowd, scales, falloff)
    report["metrics"] = metrics
    return report


def run_pipeline(config: SceneConfig) -> PipelineResult:
    """Execute all stages; any stage error aborts with the stage name attached."""
    workers = config.workers or default_workers()
    out_dir = Path(config.out_dir)
    provenance = config.provenance()
    logger.info("running pipeline with %d worker(s)", workers)
    log: dict = {}

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CrowdLocError as exc:
            raise type(exc)(f"[stage:{name}] {exc}") from exc

    aset = stage("load", load_annotations, config.annotations)
    log["n_annotations"] = len(aset.people)

    patches, params, layout = stage("crop", build_patches, aset, config)
    log["crop"] = {"n_patches": len(patches),
                   "params": {"h_t": params.h_t, "h_b": params.h_b,
                              "b_u": params.b_u, "b_l": params.b_l}}
    if layout is not None:
        log["crop"]["layout"] = {"n": layout.n, "q": layout.q, "sizes": list(layout.sizes)}
    boxes = [p.box for p in aset.people if p.box is not None]
    if boxes:
        log["crop"]["score"] = cropping_score(boxes, patches)
    save_patches(patches, params, out_dir / "patches.json", layout=layout, provenance=provenance)

    camera, ground, calib = stage("calibrate", calibrate_scene, aset, config)
    extras = {}
    if calib is not None:
        extras = {"residual": calib.residual, "n_observations": calib.n_observations,
                  "warnings": calib.warnings, "iterations": calib.iterations}
        log["calibration"] = dict(extras)
    save_calibration(camera, ground, out_dir / "scene.json", extras=extras, provenance=provenance)

    observations, skipped = stage("assign", assign_observations, aset, patches)
    log["assign"] = {"observations": len(observations), "skipped_people": skipped}

    located = stage("localize", localize_all, observations, patches, camera, ground, workers)
    merged = stage("merge", merge_duplicates, located,
                   patches, MergeConfig(config.radius_factor, config.use_3d_matching))
    log["merge"] = {"before": len(located), "after": len(merged)}
    save_reconstruction(
        merged, camera, ground, out_dir / "reconstruction.json", provenance=provenance,
        meta={"patches": [{"id": p.id, "x": p.x, "y": p.y, "size": p.size,
                           "row": p.row, "kind": p.kind} for p in patches],
              "log": log})

    report = None
    if config.truth:
        truth_entries, _, _, raw = stage("evaluate", load_truth, config.truth)
        report = evaluate_crowd(merged, truth_entries, raw.get("joint_order"),
                                gate_px=config.oks_gate_px)
        report["provenance"] = provenance
        report["scenes"] = [{"name": Path(config.annotations).stem,
                             "metrics": report.get("metrics")}]
        dump_json(report, out_dir / "report.json")
    return PipelineResult(people=merged, camera=camera, ground=ground,
                          patches=patches, report=report, log=log)


def ablation_curves(counts, seeds, sigma: float = 2.0, spec_kwargs: dict | None = None,
                    filtered: bool = False):
    """Calibration error vs the number of people used in the optimization.

    Mirrors the crowd-size ablation protocol: per seed, one scene and one
    noise realization are fixed, and people are added incrementally (nested
    subsets), so each curve converges to that scene's full fit. With
    `filtered`, candidates come from the automatic standing filter, as in
    the real pipeline (non-standing people that slip through stay in the
    pool at every count). Reported per count: mean ground-normal cosine
    distance and focal-length RMSE over seeds. Counts below the 3-person
    calibration minimum yield NaN rows.
    """
    counts = list(counts)
    spec_kwargs = dict(spec_kwargs or {})
    n_people = spec_kwargs.pop("n_people", max(counts))
    per_count: dict = {c: ([], []) for c in counts}
    for seed in seeds:
        spec = SceneSpec(seed=seed, n_people=max(n_people, max(counts)),
                         noise_sigma=sigma, **spec_kwargs)
        scene = generate(spec)
        aset = render_annotations(scene)
        keypoint_sets = [p.keypoints for p in aset.people]
        if filtered:
            observations = select_standing(keypoint_sets, aset.joint_order)
        else:
            observations = observations_from_keypoints(keypoint_sets, aset.joint_order)
        for count in counts:
            if count < 3 or count > len(observations):
                continue
            result = calibrate(observations[:count], (spec.image_width, spec.image_height))
            cos_errs, f_errs = per_count[count]
            cos_errs.append(1.0 - abs(float(result.ground.normal @ scene.ground.normal)))
            f_errs.append(result.camera.f - spec.f)
    rows = []
    for count in counts:
        cos_errs, f_errs = per_count[count]
        if cos_errs:
            rows.append((count, float(np.mean(cos_errs)),
                         float(np.sqrt(np.mean(np.square(f_errs))))))
        else:
            rows.append((count, float("nan"), float("nan")))
    return rows


def write_ablation_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["count,normal_cos_dist,focal_rmse"]
    for count, cos_err, f_rmse in rows:
        lines.append(f"{count},{cos_err!r},{f_rmse!r}")
    path.write_text("\n".join(lines) + "\n")
