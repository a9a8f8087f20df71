"""Crowd-distribution evaluation metrics.

All metrics compare matched (estimate, ground truth) person pairs:

  * PPDS: mean over person pairs of 1 minus the clipped relative error of
    the pairwise 3D distance.
  * PA-PPDS: PPDS after aligning the estimated crowd to the ground truth
    with a similarity (Procrustes) transform, removing scale and rotation.
  * PCOD: percentage of person pairs whose depth ordering matches.
  * OKS: Gaussian-falloff 2D keypoint agreement with per-joint constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateAlignment, MetricUndefined

COINCIDENT_EPS = 1e-9  # meters: ground-truth pairs closer than this are skipped
DEPTH_TIE_EPS = 1e-6  # meters: depth differences below this count as equal

# Per-joint falloff constants (twice the conventional per-joint sigma of the
# standard keypoint benchmark), for the joint subset the simulator emits.
DEFAULT_FALLOFF = {
    "left_shoulder": 0.158, "right_shoulder": 0.158,
    "left_hip": 0.214, "right_hip": 0.214,
    "left_ankle": 0.178, "right_ankle": 0.178,
    "left_knee": 0.174, "right_knee": 0.174,
    "left_elbow": 0.144, "right_elbow": 0.144,
    "left_wrist": 0.124, "right_wrist": 0.124,
    "left_eye": 0.05, "right_eye": 0.05,
    "left_ear": 0.07, "right_ear": 0.07,
    "nose": 0.052,
}


@dataclass
class MatchedCrowd:
    """Index-aligned estimated and ground-truth person locations."""

    estimates: np.ndarray  # (n, 3)
    truths: np.ndarray  # (n, 3)
    est_keypoints: list | None = None  # optional per-person (K, 2+) arrays
    gt_keypoints: list | None = None

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=float).reshape(-1, 3)
        self.truths = np.asarray(self.truths, dtype=float).reshape(-1, 3)
        if len(self.estimates) != len(self.truths):
            raise MetricUndefined("estimate/truth counts differ; match instances first")
        if len(self.estimates) == 0:
            raise MetricUndefined("matched crowd is empty")

    @property
    def n(self) -> int:
        return len(self.estimates)


def _pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def ppds(crowd: MatchedCrowd, return_counts: bool = False):
    """Pairwise percentual distance similarity in [0, 1]."""
    if crowd.n < 2:
        raise MetricUndefined(f"PPDS needs at least 2 people, got {crowd.n}")
    de = _pairwise(crowd.estimates)
    dg = _pairwise(crowd.truths)
    iu = np.triu_indices(crowd.n, k=1)
    de, dg = de[iu], dg[iu]
    valid = dg > COINCIDENT_EPS
    skipped = int((~valid).sum())
    if not np.any(valid):
        raise MetricUndefined("all ground-truth pairs are coincident; PPDS undefined")
    rel = np.abs((de[valid] - dg[valid]) / dg[valid])
    score = float(np.mean(1.0 - np.minimum(rel, 1.0)))
    if return_counts:
        return score, {"pairs": int(valid.sum()), "skipped_pairs": skipped}
    return score


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray  # (3, 3), det +1
    translation: np.ndarray  # (3,)
    degenerate: bool = False  # rank-deficient configuration (e.g. collinear points)

    def apply(self, points) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=float) @ self.rotation.T) + self.translation


def procrustes_align(crowd: MatchedCrowd):
    """Least-squares similarity transform (s, R, t) mapping estimates onto truths.

    Classic closed-form solution via SVD of the cross-covariance, with the
    determinant sign correction so R is a proper rotation.
    """
    e = crowd.estimates
    g = crowd.truths
    mu_e, mu_g = e.mean(axis=0), g.mean(axis=0)
    ec, gc = e - mu_e, g - mu_g
    var_e = float((ec**2).sum())
    if var_e < 1e-18:
        raise DegenerateAlignment("estimates have zero variance; alignment undefined")
    cov = gc.T @ ec / len(e)
    u, s, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u @ vt))
    rotation = u @ np.diag([1.0, 1.0, sign]) @ vt
    scale = float(s[0] + s[1] + sign * s[2]) * len(e) / var_e
    translation = mu_g - scale * rotation @ mu_e
    degenerate = crowd.n < 3 or np.linalg.matrix_rank(cov, tol=1e-12) < 2
    transform = SimilarityTransform(scale=scale, rotation=rotation,
                                    translation=translation, degenerate=degenerate)
    return transform, transform.apply(e)


def pa_ppds(crowd: MatchedCrowd, return_counts: bool = False):
    """PPDS after Procrustes alignment of the estimated crowd."""
    _, aligned = procrustes_align(crowd)
    return ppds(MatchedCrowd(aligned, crowd.truths), return_counts=return_counts)


def pcod(crowd: MatchedCrowd) -> float:
    """Percentage of person pairs with the correct ordinal depth relation."""
    if crowd.n < 2:
        raise MetricUndefined(f"PCOD needs at least 2 people, got {crowd.n}")

    def order_signs(z):
        diff = z[:, None] - z[None, :]
        signs = np.sign(diff)
        signs[np.abs(diff) < DEPTH_TIE_EPS] = 0
        return signs

    se = order_signs(crowd.estimates[:, 2])
    sg = order_signs(crowd.truths[:, 2])
    iu = np.triu_indices(crowd.n, k=1)
    return float(np.mean(se[iu] == sg[iu]) * 100.0)


def oks(est_kps, gt_kps, person_scale: float, falloff) -> float:
    """Object keypoint similarity: mean over visible keypoints of
    exp(-d^2 / (2 s^2 k_i^2)).

    `gt_kps` rows may carry a visibility/confidence third column; rows with a
    third column <= 0 are invisible. `falloff` is a per-joint array of k_i.
    """
    est = np.asarray(est_kps, dtype=float)
    gt = np.asarray(gt_kps, dtype=float)
    k = np.asarray(falloff, dtype=float)
    visible = gt[:, 2] > 0 if gt.shape[1] > 2 else np.ones(len(gt), dtype=bool)
    if not np.any(visible):
        raise MetricUndefined("no visible keypoints; OKS undefined")
    d2 = ((est[visible, :2] - gt[visible, :2])**2).sum(axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * person_scale**2 * k[visible]**2))))


def mean_oks(crowd: MatchedCrowd, person_scales, falloff) -> float:
    """Mean OKS over matched people with keypoints on both sides."""
    if crowd.est_keypoints is None or crowd.gt_keypoints is None:
        raise MetricUndefined("keypoints missing on one side; OKS undefined")
    values = [
        oks(e, g, s, falloff)
        for e, g, s in zip(crowd.est_keypoints, crowd.gt_keypoints, person_scales)
        if e is not None and g is not None
    ]
    if not values:
        raise MetricUndefined("no per-person keypoints available; OKS undefined")
    return float(np.mean(values))


def match_instances(est_pixels, gt_pixels, gate_px: float = 50.0):
    """Minimal-cost assignment of estimates to ground truth on 2D torso pixels.

    Returns (pairs, unmatched_est, unmatched_gt); pairs farther apart than
    `gate_px` are rejected.
    """
    est = np.asarray(est_pixels, dtype=float).reshape(-1, 2)
    gt = np.asarray(gt_pixels, dtype=float).reshape(-1, 2)
    if len(est) == 0 or len(gt) == 0:
        return [], list(range(len(est))), list(range(len(gt)))
    cost = np.linalg.norm(est[:, None, :] - gt[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if cost[r, c] <= gate_px]
    matched_e = {r for r, _ in pairs}
    matched_g = {c for _, c in pairs}
    return (pairs,
            [i for i in range(len(est)) if i not in matched_e],
            [j for j in range(len(gt)) if j not in matched_g])
