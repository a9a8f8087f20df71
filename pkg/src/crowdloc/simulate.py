"""Seeded synthetic large-scene generator: the ground-truth oracle.

Scenes consist of a pinhole camera, a ground plane stored camera-side
positive, and people standing (or tilted) on it. Ankle keypoints sit on a
plane 0.1 m below the standing plane, mirroring how calibration lifts its
ankle-fit plane by 0.1 m: calibrating a noise-free scene therefore recovers
the standing plane exactly.

All randomness comes from the counter-based Philox generator keyed by the
scene seed; per-person rendering uses sub-keys (seed, person id) so results
do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneInfeasible
from .formats import AnnotationSet, PersonAnnotation
from .geometry import CameraIntrinsics, GroundPlane, project
from .localization import signed_hvip_offset

RNG_NAME = "philox4x64"
ANKLE_DROP = 0.1  # meters between the standing plane and the ankle-keypoint plane
JOINT_ORDER = ("left_shoulder", "right_shoulder", "left_hip", "right_hip",
               "left_ankle", "right_ankle")
HIP_FRACTION = 0.55  # ankle->hip length as a fraction of the ankle->shoulder length
BODY_SAMPLES = 50


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    image_width: int = 1920
    image_height: int = 1080
    f: float = 2000.0
    normal: tuple = (0.0, -math.cos(0.4), -math.sin(0.4))  # ~23 deg pitched-down camera
    d: float = 8.0
    n_people: int = 50
    depth_range: tuple = (13.0, 48.0)
    height_range: tuple = (1.5, 1.9)
    standing_fraction: float = 1.0
    tilt_range: tuple = (15.0, 60.0)  # degrees off the normal for non-standing people
    noise_sigma: float = 0.0
    min_spacing: float = 0.8  # meters between ground anchors; bodies cannot interpenetrate
    torso_height: float = 1.4  # exact ankle->shoulder length of standing people
    torso_jitter: float = 0.0  # per-person sigma on torso length
    torso_depth_gain: float = 0.0  # fractional torso-length trend across the depth range
    lean_angle: float = 0.0  # systematic crowd lean off the normal, radians (<= 2 deg)

    def __post_init__(self):
        if not (0 < self.depth_range[0] < self.depth_range[1]):
            raise ValueError(f"bad depth range {self.depth_range}")
        if not (0 < self.height_range[0] <= self.height_range[1]):
            raise ValueError(f"bad height range {self.height_range}")
        if not 0.0 <= self.standing_fraction <= 1.0:
            raise ValueError(f"standing fraction must be in [0,1], got {self.standing_fraction}")
        if not 0.0 <= self.lean_angle <= math.radians(2.0) + 1e-12:
            raise ValueError("lean_angle must stay within 2 degrees: standing people "
                             f"are near-vertical by contract (got {self.lean_angle} rad)")

    @property
    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.f, self.image_width / 2.0, self.image_height / 2.0)

    @property
    def ground(self) -> GroundPlane:
        return GroundPlane(np.asarray(self.normal, dtype=float), self.d)


@dataclass
class SimPerson:
    id: int
    stance: str  # "standing" | "tilted"
    P_v: np.ndarray
    P_t: np.ndarray
    d: float
    torso_len: float
    keypoints3d: np.ndarray  # (6, 3) in JOINT_ORDER
    body_points: np.ndarray  # (BODY_SAMPLES, 3)


@dataclass
class Scene:
    spec: SceneSpec
    camera: CameraIntrinsics
    ground: GroundPlane
    people: list = field(default_factory=list)


def _in_plane_basis(normal: np.ndarray):
    """Orthonormal (lateral, forward) directions inside the ground plane; the
    lateral one has zero depth component so keypoint pairs share a depth."""
    lateral = np.array([-normal[1], normal[0], 0.0])
    if np.linalg.norm(lateral) < 1e-9:
        lateral = np.array([1.0, 0.0, 0.0])
    lateral /= np.linalg.norm(lateral)
    forward = np.cross(normal, lateral)
    forward /= np.linalg.norm(forward)
    return lateral, forward


def _person_fits(kps2d: np.ndarray, body2d: np.ndarray, spec: SceneSpec, margin: float = 4.0) -> bool:
    pts = np.vstack([kps2d, body2d])
    return bool(np.all(pts[:, 0] >= margin) and np.all(pts[:, 0] <= spec.image_width - margin)
                and np.all(pts[:, 1] >= margin) and np.all(pts[:, 1] <= spec.image_height - margin))


def _build_person(pid: int, anchor, stance: str, rng, spec: SceneSpec,
                  lateral, forward, normal, stand_axis) -> SimPerson:
    torso_len = spec.torso_height
    if spec.torso_depth_gain != 0.0:
        # crowd composition drifting with distance: a systematic violation of
        # the fixed-height assumption that does not average out with count
        z_lo, z_hi = spec.depth_range
        rel = (float(anchor[2]) - 0.5 * (z_lo + z_hi)) / (0.5 * (z_hi - z_lo))
        torso_len *= float(np.clip(1.0 + spec.torso_depth_gain * rel, 0.7, 1.3))
    if stance != "standing" or spec.torso_jitter > 0:
        torso_len = max(0.8, torso_len + spec.torso_jitter * rng.standard_normal())
    height = rng.uniform(*spec.height_range)
    upper = (1.0 + HIP_FRACTION) / 2.0  # ankle -> torso center, fraction of torso_len

    if stance == "standing":
        axis = stand_axis
        ankle_mid = anchor - ANKLE_DROP * normal
        P_t = ankle_mid + upper * torso_len * axis
        d = float(-ANKLE_DROP + upper * torso_len * (axis @ normal))
    else:
        alpha = rng.uniform(math.radians(spec.tilt_range[0]), math.radians(spec.tilt_range[1]))
        psi = rng.uniform(0.0, 2.0 * math.pi)
        axis = math.cos(alpha) * normal + math.sin(alpha) * (math.cos(psi) * lateral + math.sin(psi) * forward)
        axis /= np.linalg.norm(axis)
        # keep the whole body above the standing plane
        d = max(rng.uniform(0.7, 1.0), upper * torso_len * float(axis @ normal) + 0.05)
        ankle_mid = anchor + d * normal - upper * torso_len * axis
        P_t = anchor + d * normal

    P_v = P_t - d * normal  # the HVIP: vertical ground projection of the torso center
    shoulder_mid = ankle_mid + torso_len * axis
    hip_mid = ankle_mid + HIP_FRACTION * torso_len * axis

    side = lateral - (lateral @ axis) * axis
    side /= np.linalg.norm(side)
    shoulder_w = rng.uniform(0.36, 0.44)
    hip_w = rng.uniform(0.28, 0.36)
    ankle_w = rng.uniform(0.16, 0.24)
    if stance == "standing":
        side = lateral  # zero-depth pair offsets: projected midpoints stay exact
    kps = np.array([
        shoulder_mid + 0.5 * shoulder_w * side, shoulder_mid - 0.5 * shoulder_w * side,
        hip_mid + 0.5 * hip_w * side, hip_mid - 0.5 * hip_w * side,
        ankle_mid + 0.5 * ankle_w * side, ankle_mid - 0.5 * ankle_w * side,
    ])

    # capsule point proxy for the body, kept strictly above the standing plane
    t = np.linspace(0.0, height, BODY_SAMPLES)
    theta = rng.uniform(0.0, 2.0 * math.pi, BODY_SAMPLES)
    radius = rng.uniform(0.0, 0.16, BODY_SAMPLES)
    ring = np.cross(axis, side)
    low = P_t - (d - 0.02) / max(float(axis @ normal), 0.5) * axis
    body = (low[None, :] + t[:, None] * axis[None, :]
            + (radius * np.cos(theta))[:, None] * side[None, :]
            + (radius * np.sin(theta))[:, None] * ring[None, :])
    clearance = body @ normal - (P_v @ normal)
    if clearance.min() < 0.02:
        body = body + (0.02 - clearance.min()) * normal

    return SimPerson(id=pid, stance=stance, P_v=P_v, P_t=P_t, d=float(d),
                     torso_len=float(torso_len), keypoints3d=kps, body_points=body)


def generate(spec: SceneSpec) -> Scene:
    """Place people uniformly on the visible ground within the depth range."""
    camera, ground = spec.camera, spec.ground
    normal = ground.normal
    if abs(normal[1]) < 1e-6:
        raise SceneInfeasible("ground normal has no vertical image component; cannot sample the visible region")
    lateral, forward = _in_plane_basis(normal)
    rng = np.random.Generator(np.random.Philox(key=spec.seed))

    # whole-scene lean of the standing crowd (wind, slope, gait): one direction per scene
    stand_axis = normal
    if spec.lean_angle > 0:
        psi = rng.uniform(0.0, 2.0 * math.pi)
        stand_axis = (math.cos(spec.lean_angle) * normal
                      + math.sin(spec.lean_angle) * (math.cos(psi) * lateral + math.sin(psi) * forward))
        stand_axis /= np.linalg.norm(stand_axis)

    people = []
    attempts = 0
    max_attempts = 400 * max(spec.n_people, 1) + 400
    while len(people) < spec.n_people:
        attempts += 1
        if attempts > max_attempts:
            raise SceneInfeasible(
                f"placed only {len(people)}/{spec.n_people} people after {attempts} attempts; "
                "no sufficiently visible ground region for this spec")
        z = rng.uniform(*spec.depth_range)
        margin = 0.05 * spec.image_width
        x_lo = (margin - camera.cx) * z / camera.f
        x_hi = (spec.image_width - margin - camera.cx) * z / camera.f
        x = rng.uniform(x_lo, x_hi)
        y = (-ground.d - x * normal[0] - z * normal[2]) / normal[1]
        anchor = np.array([x, y, z])
        if people and spec.min_spacing > 0:
            anchors = np.array([q.P_v for q in people])
            if np.min(np.linalg.norm(anchors - anchor, axis=1)) < spec.min_spacing:
                continue
        stance = "standing" if rng.uniform() < spec.standing_fraction else "tilted"
        person = _build_person(len(people), anchor, stance, rng, spec,
                               lateral, forward, normal, stand_axis)
        if np.any(person.body_points[:, 2] <= 0.5) or np.any(person.keypoints3d[:, 2] <= 0.5):
            continue
        kps2d = project(person.keypoints3d, camera)
        body2d = project(person.body_points, camera)
        if not _person_fits(kps2d, body2d, spec):
            continue
        people.append(person)

    scene = Scene(spec=spec, camera=camera, ground=ground, people=people)
    _assert_pyramid(scene)
    return scene


def _assert_pyramid(scene: Scene) -> None:
    """Near people must look taller than far people (checked as a regression
    of pixel height on depth once there is enough spread)."""
    if len(scene.people) < 10:
        return
    depths = np.array([p.P_v[2] for p in scene.people])
    if depths.max() < 1.5 * depths.min():
        return
    heights = np.array([np.ptp(project(p.body_points, scene.camera)[:, 1]) for p in scene.people])
    slope = np.polyfit(1.0 / depths, heights, 1)[0]
    assert slope > 0, "pyramid property violated: pixel heights do not grow with proximity"


def _person_rng(spec: SceneSpec, pid: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(spec.seed << 20) + pid + 1))


def render_annotations(scene: Scene, sigma: float | None = None,
                       noise_torso: bool = False, noise_hvip: bool = False) -> AnnotationSet:
    """Project every person to 2D labels; Gaussian pixel noise of `sigma` is
    added to keypoints only unless the torso/HVIP flags are set."""
    spec = scene.spec
    if sigma is None:
        sigma = spec.noise_sigma
    camera = scene.camera
    people = []
    for person in scene.people:
        if np.any(person.keypoints3d[:, 2] <= 0):
            continue  # behind the camera: never emitted
        rng = _person_rng(spec, person.id)
        kps = project(person.keypoints3d, camera)
        if sigma > 0:
            kps = kps + rng.normal(0.0, sigma, kps.shape)
        kps = np.hstack([kps, np.ones((len(kps), 1))])
        p_t = project(person.P_t, camera)
        p_v = project(person.P_v, camera)
        if sigma > 0 and noise_torso:
            p_t = p_t + rng.normal(0.0, sigma, 2)
        if sigma > 0 and noise_hvip:
            p_v = p_v + rng.normal(0.0, sigma, 2)
        body2d = project(person.body_points, camera)
        all2d = np.vstack([body2d, kps[:, :2]])
        x0, y0 = all2d.min(axis=0)
        x1, y1 = all2d.max(axis=0)
        people.append(PersonAnnotation(
            id=person.id,
            box=np.array([x0, y0, x1 - x0, y1 - y0]),
            keypoints=kps,
            torso=p_t,
            hvip=p_v,
            hvip_offset=signed_hvip_offset(p_t, p_v, camera, scene.ground.normal),
        ))
    return AnnotationSet(
        image_width=spec.image_width, image_height=spec.image_height,
        joint_order=list(JOINT_ORDER), people=people,
        meta={"rng": RNG_NAME, "seed": spec.seed, "noise_sigma": sigma},
    )
