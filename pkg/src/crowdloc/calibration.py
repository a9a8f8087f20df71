"""Scene camera and ground plane estimation from standing pedestrians.

Standing people are treated as vertical segments of known metric length h
between the ankle midpoint (on the ground) and the shoulder midpoint. For a
candidate (f, N, D) the ankle pixel is back-projected onto the plane, lifted
by h along the normal and re-projected; the loss compares the predicted and
observed 2D torso segments in direction (cosine distance) and relative
length, averaged over people. The recovered plane is finally translated
0.1 m along the normal toward the camera: that is the plane people stand on.

The optimizer is a Nelder-Mead refinement over (log f, pitch, side tilt,
log D), seeded by a coarse grid over focal length and pitch with the side
tilt read off the median observed torso direction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import BehindCamera, InsufficientData, NoIntersection, ObservationInvalid
from .geometry import CameraIntrinsics, GroundPlane, ground_intersect, offset_plane, project

logger = logging.getLogger(__name__)

GROUND_LIFT = 0.1  # meters along the normal from the ankle-fit plane to the standing plane
INVALID_PENALTY = 1e6


@dataclass(frozen=True)
class StandingObservation:
    """Ankle and shoulder midpoints (global pixels) of one standing person."""

    p_a: np.ndarray
    p_s: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "p_a", np.asarray(self.p_a, dtype=float))
        object.__setattr__(self, "p_s", np.asarray(self.p_s, dtype=float))
        if np.allclose(self.p_a, self.p_s):
            raise ObservationInvalid("ankle and shoulder midpoints coincide")


@dataclass
class CalibrationOptions:
    height_prior: float = 1.4  # meters, ankle midpoint -> shoulder midpoint
    lambda_angle: float = 1.0
    lambda_mod: float = 1.0
    loss_tol: float = 1e-10
    max_evaluations: int = 10_000
    reweight: bool = True
    lift: float = GROUND_LIFT
    f_grid: tuple = (0.4, 0.6, 0.9, 1.3, 2.0, 3.0, 4.5)  # times image width
    pitch_grid: tuple = (-0.5, -0.35, -0.2, -0.1, 0.0, 0.1, 0.2, 0.35, 0.5)  # radians
    depth_grid: tuple = (0.35, 0.5, 1.0, 2.0, 4.0)  # times the 10 m depth init
    side_grid: tuple = (-0.12, 0.0, 0.12)  # radians around the data-driven estimate


@dataclass
class CalibrationResult:
    camera: CameraIntrinsics
    ground: GroundPlane  # post-lift: the plane people stand on
    ground_pre_lift: GroundPlane
    residual: float
    iterations: int
    per_observation: np.ndarray
    n_observations: int
    weights: np.ndarray
    warnings: list = field(default_factory=list)
    converged: bool = True


def select_standing(people_keypoints, joint_order, tau: float = 0.5):
    """Filter keypoint sets down to people usable as vertical ground segments.

    Keeps people whose ankle/shoulder confidences reach `tau`, whose torso
    segment is near-vertical in the image, and whose two ankles share a row
    (both feet planted).
    """
    names = list(joint_order)
    try:
        idx = {k: names.index(k) for k in
               ("left_ankle", "right_ankle", "left_shoulder", "right_shoulder")}
    except ValueError as exc:
        raise ObservationInvalid(f"joint order lacks ankles/shoulders: {names}") from exc

    selected = []
    for kps in people_keypoints:
        kps = np.asarray(kps, dtype=float)
        la, ra = kps[idx["left_ankle"]], kps[idx["right_ankle"]]
        ls, rs = kps[idx["left_shoulder"]], kps[idx["right_shoulder"]]
        conf = min(la[2], ra[2], ls[2], rs[2]) if kps.shape[1] > 2 else 1.0
        if conf < tau:
            continue
        p_a = 0.5 * (la[:2] + ra[:2])
        p_s = 0.5 * (ls[:2] + rs[:2])
        seg = p_s - p_a
        seg_len = np.linalg.norm(seg)
        if seg_len < 1e-9:
            continue
        if abs(seg[0]) > 0.2 * abs(seg[1]):
            continue  # leaning or walking sideways
        if abs(la[1] - ra[1]) > 0.1 * seg_len:
            continue  # one foot lifted
        selected.append(StandingObservation(p_a=p_a, p_s=p_s, confidence=conf))
    return selected


def observations_from_keypoints(people_keypoints, joint_order):
    """Ankle/shoulder midpoints without the standing-pose filters, for data
    where every person is known to be standing (controlled experiments)."""
    names = list(joint_order)
    idx = [names.index(k) for k in
           ("left_ankle", "right_ankle", "left_shoulder", "right_shoulder")]
    out = []
    for kps in people_keypoints:
        kps = np.asarray(kps, dtype=float)
        la, ra, ls, rs = kps[idx[0]], kps[idx[1]], kps[idx[2]], kps[idx[3]]
        out.append(StandingObservation(p_a=0.5 * (la[:2] + ra[:2]),
                                       p_s=0.5 * (ls[:2] + rs[:2])))
    return out


def predict_shoulder(p_a, camera: CameraIntrinsics, ground: GroundPlane, h: float) -> np.ndarray:
    """Project the point h meters above the ground point seen at the ankle pixel."""
    try:
        P_a = ground_intersect(p_a, camera, ground)
        return project(P_a + h * ground.normal, camera)
    except (NoIntersection, BehindCamera) as exc:
        raise ObservationInvalid(f"ankle pixel {tuple(p_a)} has no valid ground point: {exc}") from exc


def _normal_from_angles(pitch: float, side: float) -> np.ndarray:
    """Unit normal from two tilt angles; (0, 0) is the straight-ahead case (0,-1,0)."""
    return np.array([math.sin(side),
                     -math.cos(side) * math.cos(pitch),
                     -math.cos(side) * math.sin(pitch)])


def _per_person_losses(f, normal, d, p_a, p_s, cx, cy, h, lam_angle, lam_mod):
    """Vectorized two-term loss; invalid geometry yields INVALID_PENALTY entries."""
    rays = np.column_stack([(p_a[:, 0] - cx) / f, (p_a[:, 1] - cy) / f, np.ones(len(p_a))])
    denom = rays @ normal
    losses = np.full(len(p_a), INVALID_PENALTY)
    valid = np.abs(denom) > 1e-15
    z = np.where(valid, -d / np.where(valid, denom, 1.0), -1.0)
    valid &= z > 0
    P_s = z[:, None] * rays + h * normal
    valid &= P_s[:, 2] > 1e-9
    if not np.any(valid):
        return losses
    zs = np.where(valid, P_s[:, 2], 1.0)
    pred = np.column_stack([f * P_s[:, 0] / zs + cx, f * P_s[:, 1] / zs + cy]) - p_a
    obs = p_s - p_a
    pred_len = np.linalg.norm(pred, axis=1)
    obs_len = np.linalg.norm(obs, axis=1)
    ok = valid & (pred_len > 1e-12)
    cos = np.where(ok, np.einsum("ij,ij->i", pred, obs) / np.where(ok, pred_len * obs_len, 1.0), -1.0)
    losses = np.where(ok,
                      lam_angle * (1.0 - cos) + lam_mod * np.abs(pred_len - obs_len) / obs_len,
                      INVALID_PENALTY)
    return losses


def calibration_loss(camera: CameraIntrinsics, ground: GroundPlane, observations,
                     h: float, lambda_angle: float = 1.0, lambda_mod: float = 1.0,
                     weights=None) -> float:
    """Mean two-term loss over standing observations at the given parameters."""
    p_a = np.array([o.p_a for o in observations])
    p_s = np.array([o.p_s for o in observations])
    if np.any(np.linalg.norm(p_s - p_a, axis=1) < 1e-12):
        raise ObservationInvalid("zero-length observed torso segment")
    losses = _per_person_losses(camera.f, ground.normal, ground.d, p_a, p_s,
                                camera.cx, camera.cy, h, lambda_angle, lambda_mod)
    if weights is None:
        return float(losses.mean())
    weights = np.asarray(weights, dtype=float)
    return float(losses @ weights / weights.sum())


def calibrate(observations, image_size, options: CalibrationOptions | None = None) -> CalibrationResult:
    """Estimate (f, N, D) from standing people; principal point fixed at image center."""
    opt = options or CalibrationOptions()
    observations = list(observations)
    if len(observations) < 3:
        raise InsufficientData(f"calibration needs at least 3 standing people, got {len(observations)}")
    width, height = image_size
    cx, cy = width / 2.0, height / 2.0
    p_a = np.array([o.p_a for o in observations])
    p_s = np.array([o.p_s for o in observations])
    if np.any(np.linalg.norm(p_s - p_a, axis=1) < 1e-12):
        raise ObservationInvalid("zero-length observed torso segment")

    warnings = []
    scatter = np.cov((p_a - p_a.mean(axis=0)).T) if len(p_a) > 1 else np.zeros((2, 2))
    if np.linalg.eigvalsh(np.atleast_2d(scatter)).min() < 1.0:
        warnings.append("degenerate_configuration")
        logger.warning("ankle pixels are (near-)collinear; ground normal is under-constrained")

    # side tilt from the median observed torso direction (image up-direction)
    up = (p_s - p_a) / np.linalg.norm(p_s - p_a, axis=1, keepdims=True)
    u_med = np.median(up, axis=0)
    side0 = math.atan2(u_med[0], -u_med[1]) if np.linalg.norm(u_med) > 1e-9 else 0.0

    evals = 0

    def loss_at(x, weights=None):
        f, d = math.exp(x[0]), math.exp(x[3])
        losses = _per_person_losses(f, _normal_from_angles(x[1], x[2]), d, p_a, p_s,
                                    cx, cy, opt.height_prior, opt.lambda_angle, opt.lambda_mod)
        if weights is None:
            return float(losses.mean())
        return float(losses @ weights / weights.sum())

    def d_init(f, normal):
        # the lowest ankle observation starts at 10 m depth
        low = p_a[np.argmax(p_a[:, 1])]
        ray = np.array([(low[0] - cx) / f, (low[1] - cy) / f, 1.0])
        denom = float(normal @ ray)
        return -10.0 * denom if denom < -1e-9 else None

    candidates = []
    for factor in opt.f_grid:
        f = factor * width
        for pitch in opt.pitch_grid:
            for dside in opt.side_grid:
                side = side0 + dside
                normal = _normal_from_angles(pitch, side)
                d10 = d_init(f, normal)
                if d10 is None or d10 <= 0:
                    continue
                # the loss valley couples f and D; a short log-spaced D sweep
                # per candidate keeps the simplex out of the wrong branch
                for scale in opt.depth_grid:
                    x = np.array([math.log(f), pitch, side, math.log(d10 * scale)])
                    candidates.append((loss_at(x), x))
                    evals += 1
    if not candidates:
        raise InsufficientData("no grid candidate places the ankle points in front of the camera")
    candidates.sort(key=lambda c: c[0])

    # small crowds are cheap per evaluation but rugged: spread the budget
    # over many capped starts instead of a few exhaustive ones
    per_start_cap = 450 if len(observations) <= 6 else opt.max_evaluations

    def refine(x0, weights=None, cap=None):
        nonlocal evals
        budget = min(opt.max_evaluations - evals, cap or per_start_cap)
        if budget <= 8:
            return loss_at(x0, weights), x0, False
        res = minimize(loss_at, x0, args=(weights,), method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": opt.loss_tol,
                                "maxfev": budget, "adaptive": True})
        evals += res.nfev
        return float(res.fun), res.x, bool(res.success)

    def adopt(state, val, x, ok):
        if val < state[0]:
            return [val, x, ok]
        return state

    state = [math.inf, candidates[0][1], False]
    n_refine = 12 if len(observations) <= 6 else 4
    for _, x0 in candidates[:n_refine]:
        state = adopt(state, *refine(x0))
        if state[0] < opt.loss_tol:
            break
    # tiny crowds have rugged landscapes; shake the incumbent (seeded, hence
    # deterministic) to hop over basin walls while evaluations are cheap
    if len(observations) <= 6 and state[0] > opt.loss_tol:
        rng = np.random.Generator(np.random.Philox(key=12345))
        shake = np.array([0.25, 0.08, 0.08, 0.25])
        for _ in range(8):
            if evals >= 0.8 * opt.max_evaluations:
                break
            state = adopt(state, *refine(state[1] + rng.normal(0.0, 1.0, 4) * shake))
            if state[0] < opt.loss_tol:
                break
    # polish the incumbent with whatever budget remains
    restarts = 0
    while state[0] > opt.loss_tol and restarts < 3 and evals < 0.95 * opt.max_evaluations:
        restarts += 1
        val, x, ok = refine(state[1], cap=opt.max_evaluations)
        improved = val < state[0] * (1.0 - 1e-9)
        state = adopt(state, val, x, ok)
        if not improved:
            break
    best_val, best_x, converged = state

    weights = np.ones(len(observations))
    per_obs = _per_person_losses(math.exp(best_x[0]), _normal_from_angles(best_x[1], best_x[2]),
                                 math.exp(best_x[3]), p_a, p_s, cx, cy,
                                 opt.height_prior, opt.lambda_angle, opt.lambda_mod)
    if opt.reweight:
        cutoff = max(3.0 * float(np.median(per_obs)), 1e-6)
        keep = per_obs <= cutoff
        if keep.sum() >= 3 and not keep.all():
            weights = keep.astype(float)
            best_val, best_x, converged = refine(best_x, weights, cap=opt.max_evaluations)
            per_obs = _per_person_losses(math.exp(best_x[0]),
                                         _normal_from_angles(best_x[1], best_x[2]),
                                         math.exp(best_x[3]), p_a, p_s, cx, cy,
                                         opt.height_prior, opt.lambda_angle, opt.lambda_mod)
            warnings.append(f"downweighted_{int((~keep).sum())}_outliers")

    if not converged:
        warnings.append("max_evaluations_reached")
        logger.warning("calibration stopped before convergence; reporting best iterate")

    f = math.exp(best_x[0])
    pre_lift = GroundPlane(_normal_from_angles(best_x[1], best_x[2]), math.exp(best_x[3]))
    return CalibrationResult(
        camera=CameraIntrinsics(f, cx, cy),
        ground=offset_plane(pre_lift, opt.lift),
        ground_pre_lift=pre_lift,
        residual=best_val,
        iterations=evals,
        per_observation=per_obs,
        n_observations=len(observations),
        weights=weights,
        warnings=warnings,
        converged=converged,
    )
