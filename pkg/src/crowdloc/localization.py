"""Lift per-person 2D evidence (torso pixel + HVIP) to absolute 3D positions.

A person's HVIP is the projection of the 3D torso center onto the ground
plane along the ground normal; it is a virtual point, not on the body. Its
pixel, the torso pixel and the vanishing point of the ground normal are
collinear, so the HVIP can be represented as a single signed pixel offset
from the torso pixel along that line. Back-projecting the HVIP pixel onto
the ground plane and solving the torso height in closed form recovers the
absolute torso position:

    P_v = -D / (N . K^-1 pv_bar) * K^-1 pv_bar
    d   = (f y_v - (v_t - c_y) z_v) / ((v_t - c_y) z_n - f y_n)
    P_t = P_v + d N (+ optional refinement offset)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cropping import Patch, local_to_global
from .errors import DegenerateRay, ObservationInvalid
from .geometry import (CameraIntrinsics, GroundPlane, collinearity_deviation,
                       ground_direction, ground_intersect)


@dataclass
class PersonObservation:
    """Per-person 2D evidence within one patch.

    Exactly one of `hvip_offset` (signed pixels from the torso pixel toward
    the ground side of the vanishing line) or `p_v_local` must be given.
    """

    patch_id: int
    p_t_local: np.ndarray
    hvip_offset: float | None = None
    p_v_local: np.ndarray | None = None
    delta_t: np.ndarray | None = None  # optional 3D refinement (meters)
    keypoints: np.ndarray | None = None  # (K, 3) global [u, v, conf]
    body_center: np.ndarray | None = None
    box: np.ndarray | None = None  # global [x, y, w, h]
    person_id: int | None = None

    def __post_init__(self):
        if (self.hvip_offset is None) == (self.p_v_local is None):
            raise ObservationInvalid("exactly one of hvip_offset / p_v_local must be supplied")
        self.p_t_local = np.asarray(self.p_t_local, dtype=float)
        if not np.all(np.isfinite(self.p_t_local)):
            raise ObservationInvalid(f"non-finite torso pixel {self.p_t_local}")


@dataclass
class LocatedPerson:
    """Absolute 3D localization of one person in the scene camera frame."""

    p_t: np.ndarray  # global torso pixel
    p_v: np.ndarray  # global HVIP pixel
    P_v: np.ndarray  # 3D HVIP on the ground plane (meters)
    P_t: np.ndarray  # 3D torso center (meters)
    d: float  # torso height above the ground plane (meters)
    patch_id: int
    person_id: int | None = None
    delta_t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    collinearity_dev: float | None = None  # px, only for directly supplied HVIP pixels
    keypoints: np.ndarray | None = None
    body_points: np.ndarray | None = None
    penalties: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConditioningInput:
    """Normalized camera context for one patch: scene FOV + principal point shift."""

    f_norm: float
    shift: tuple


def resolve_hvip_pixel(obs: PersonObservation, patch: Patch,
                       camera: CameraIntrinsics, normal) -> np.ndarray:
    """Global HVIP pixel for an observation.

    With an offset representation the pixel is placed on the line through the
    torso pixel and the vanishing point, on the ground side; a directly
    supplied local pixel is only mapped to the global frame.
    """
    p_t = local_to_global(obs.p_t_local, patch)
    if obs.p_v_local is not None:
        return local_to_global(obs.p_v_local, patch)
    direction = ground_direction(p_t, camera, normal)
    return p_t + float(obs.hvip_offset) * direction


def signed_hvip_offset(p_t, p_v, camera: CameraIntrinsics, normal) -> float:
    """Signed pixel length from p_t to p_v along the ground direction
    (positive below the torso in the canonical scene)."""
    direction = ground_direction(p_t, camera, normal)
    return float((np.asarray(p_v, dtype=float) - np.asarray(p_t, dtype=float)) @ direction)


def torso_height(p_t, P_v, camera: CameraIntrinsics, ground: GroundPlane) -> float:
    """Closed-form height of the torso center above the ground plane."""
    v_t = float(p_t[1])
    y_v, z_v = float(P_v[1]), float(P_v[2])
    y_n, z_n = float(ground.normal[1]), float(ground.normal[2])
    denom = (v_t - camera.cy) * z_n - camera.f * y_n
    if abs(denom) < 1e-12:
        raise DegenerateRay(f"torso ray through v={v_t} is degenerate for this ground normal")
    return (camera.f * y_v - (v_t - camera.cy) * z_v) / denom


def locate(obs: PersonObservation, patch: Patch,
           camera: CameraIntrinsics, ground: GroundPlane) -> LocatedPerson:
    """Progressive position transform: 2D torso/HVIP pixels -> absolute 3D torso."""
    p_t = local_to_global(obs.p_t_local, patch)
    p_v = resolve_hvip_pixel(obs, patch, camera, ground.normal)
    deviation = None
    if obs.p_v_local is not None:
        deviation = collinearity_deviation(p_t, p_v, camera, ground.normal)
    P_v = ground_intersect(p_v, camera, ground)
    d = torso_height(p_t, P_v, camera, ground)
    delta_t = np.zeros(3) if obs.delta_t is None else np.asarray(obs.delta_t, dtype=float)
    P_t = P_v + d * ground.normal + delta_t
    return LocatedPerson(p_t=p_t, p_v=p_v, P_v=P_v, P_t=P_t, d=float(d),
                         patch_id=obs.patch_id, person_id=obs.person_id,
                         delta_t=delta_t, collinearity_dev=deviation,
                         keypoints=obs.keypoints)


def place_body(body_points, torso_center_model, P_t) -> np.ndarray:
    """Rigidly translate a model-frame body point set so its torso center lands on P_t."""
    points = np.asarray(body_points, dtype=float)
    shift = np.asarray(P_t, dtype=float) - np.asarray(torso_center_model, dtype=float)
    return points + shift


def ground_normal_loss(P_s, P_a, normal) -> float:
    """Cosine distance between the craniocaudal direction and the ground normal, in [0, 2]."""
    axis = np.asarray(P_s, dtype=float) - np.asarray(P_a, dtype=float)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        raise ObservationInvalid("coincident shoulder/ankle proxies: craniocaudal direction undefined")
    n = np.asarray(normal, dtype=float)
    cos = float(axis @ n) / (norm * float(np.linalg.norm(n)))
    return 1.0 - min(1.0, max(-1.0, cos))


def out_of_bound_loss(points, ground: GroundPlane) -> float:
    """Depth of the most serious penetration of a body point set into the ground
    (0 when every point is on the camera side)."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise ObservationInvalid("out-of-bound loss is undefined for an empty point set")
    dists = points @ ground.normal + ground.d
    worst = dists.min()
    return float(-worst) if worst < 0 else 0.0


def conditioning(camera: CameraIntrinsics, patch: Patch, scene_width: float) -> ConditioningInput:
    """Normalized (focal, principal point shift) triple describing a patch's view context."""
    if patch.size <= 0:
        raise ValueError("patch size must be positive")
    cx_hat, cy_hat = patch.center
    return ConditioningInput(
        f_norm=camera.f / scene_width,
        shift=((cx_hat - camera.cx) / patch.size, (cy_hat - camera.cy) / patch.size),
    )
