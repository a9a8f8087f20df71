"""Structured file formats: annotations, patches, calibration, reconstruction, truth.

Everything is JSON with sorted keys and stable float repr so pipeline outputs
are byte-identical across reruns. Coordinates in files are always global-frame
pixels or camera-frame meters; patch-local values exist only in memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cropping import CropParams, Patch
from .errors import ConfigError
from .geometry import CameraIntrinsics, GroundPlane
from .localization import LocatedPerson

SCHEMA_VERSION = 1


@dataclass
class PersonAnnotation:
    """One labeled person, global pixel frame."""

    id: int | None = None
    box: np.ndarray | None = None  # [x, y, w, h]
    keypoints: np.ndarray | None = None  # (K, 3) rows [u, v, conf]
    torso: np.ndarray | None = None  # 2D torso center
    hvip: np.ndarray | None = None  # 2D HVIP pixel
    hvip_offset: float | None = None  # signed pixels from torso toward the ground side
    delta_t: np.ndarray | None = None  # optional 3D refinement to replay
    body: dict | None = None  # {"points": (M,3), "torso_center": (3,)} model frame


@dataclass
class AnnotationSet:
    image_width: int
    image_height: int
    joint_order: list
    people: list
    meta: dict = field(default_factory=dict)


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def dump_json(payload: dict, path) -> None:
    """Deterministic JSON writer: sorted keys, stable float repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonify(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file does not exist: {path}")
    with open(path) as fh:
        return json.load(fh)


def _opt_array(value):
    return None if value is None else np.asarray(value, dtype=float)


# ---------------------------------------------------------------- annotations

def save_annotations(aset: AnnotationSet, path, provenance: dict | None = None) -> None:
    people = []
    for p in aset.people:
        entry = {"id": p.id}
        for key in ("box", "keypoints", "torso", "hvip", "delta_t"):
            value = getattr(p, key)
            if value is not None:
                entry[key] = value
        if p.hvip_offset is not None:
            entry["hvip_offset"] = float(p.hvip_offset)
        if p.body is not None:
            entry["body"] = p.body
        people.append(entry)
    dump_json({
        "schema": "crowdloc-annotations", "schema_version": SCHEMA_VERSION,
        "image": {"width": aset.image_width, "height": aset.image_height},
        "joint_order": list(aset.joint_order),
        "people": people,
        "meta": aset.meta,
        "provenance": provenance or {},
    }, path)


def load_annotations(path) -> AnnotationSet:
    raw = _load(path)
    if raw.get("schema") != "crowdloc-annotations":
        raise ConfigError(f"{path} is not an annotation file (schema={raw.get('schema')!r})")
    people = []
    for entry in raw.get("people", []):
        people.append(PersonAnnotation(
            id=entry.get("id"),
            box=_opt_array(entry.get("box")),
            keypoints=_opt_array(entry.get("keypoints")),
            torso=_opt_array(entry.get("torso")),
            hvip=_opt_array(entry.get("hvip")),
            hvip_offset=entry.get("hvip_offset"),
            delta_t=_opt_array(entry.get("delta_t")),
            body=entry.get("body"),
        ))
    return AnnotationSet(
        image_width=int(raw["image"]["width"]), image_height=int(raw["image"]["height"]),
        joint_order=list(raw.get("joint_order", [])), people=people,
        meta=raw.get("meta", {}),
    )


# -------------------------------------------------------------------- patches

def save_patches(patches, params: CropParams, path, layout=None,
                 provenance: dict | None = None) -> None:
    payload = {
        "schema": "crowdloc-patches", "schema_version": SCHEMA_VERSION,
        "image": {"width": params.image_width, "height": params.image_height},
        "params": {"h_t": params.h_t, "h_b": params.h_b, "b_u": params.b_u, "b_l": params.b_l},
        "patches": [{"id": p.id, "x": p.x, "y": p.y, "size": p.size,
                     "row": p.row, "overlap": p.overlap, "kind": p.kind} for p in patches],
        "provenance": provenance or {},
    }
    if layout is not None:
        payload["layout"] = {"n": layout.n, "q": layout.q, "sizes": list(layout.sizes),
                             "objective": layout.objective}
    dump_json(payload, path)


def load_patches(path):
    raw = _load(path)
    if raw.get("schema") != "crowdloc-patches":
        raise ConfigError(f"{path} is not a patch file (schema={raw.get('schema')!r})")
    patches = [Patch(id=e["id"], x=e["x"], y=e["y"], size=e["size"],
                     row=e.get("row", 0), kind=e.get("kind", "base"))
               for e in raw["patches"]]
    params = CropParams(h_t=raw["params"]["h_t"], h_b=raw["params"]["h_b"],
                        b_u=raw["params"]["b_u"], b_l=raw["params"]["b_l"],
                        image_width=raw["image"]["width"], image_height=raw["image"]["height"])
    return patches, params


# ---------------------------------------------------------------- calibration

def save_calibration(camera: CameraIntrinsics, ground: GroundPlane, path,
                     extras: dict | None = None, provenance: dict | None = None) -> None:
    payload = {
        "schema": "crowdloc-scene", "schema_version": SCHEMA_VERSION,
        "camera": {"f": camera.f, "cx": camera.cx, "cy": camera.cy},
        "ground": {"normal": ground.normal, "d": ground.d},
        "provenance": provenance or {},
    }
    payload.update(extras or {})
    dump_json(payload, path)


def load_calibration(path):
    raw = _load(path)
    if raw.get("schema") != "crowdloc-scene":
        raise ConfigError(f"{path} is not a scene calibration file (schema={raw.get('schema')!r})")
    camera = CameraIntrinsics(raw["camera"]["f"], raw["camera"]["cx"], raw["camera"]["cy"])
    ground = GroundPlane(np.asarray(raw["ground"]["normal"]), raw["ground"]["d"])
    return camera, ground, raw


# ------------------------------------------------------------- reconstruction

def save_reconstruction(people, camera: CameraIntrinsics, ground: GroundPlane, path,
                        provenance: dict | None = None, meta: dict | None = None) -> None:
    """`people` are LocatedPerson records; meters and pixels labeled by key name."""
    entries = []
    for person in people:
        entry = {
            "id": person.person_id,
            "patch": person.patch_id,
            "p_t_px": person.p_t, "p_v_px": person.p_v,
            "P_t_m": person.P_t, "P_v_m": person.P_v,
            "d_m": person.d,
            "delta_t_m": person.delta_t,
            "penalties": person.penalties,
        }
        if person.collinearity_dev is not None:
            entry["collinearity_dev_px"] = person.collinearity_dev
        if person.keypoints is not None:
            entry["keypoints_px"] = person.keypoints
        entries.append(entry)
    dump_json({
        "schema": "crowdloc-reconstruction", "schema_version": SCHEMA_VERSION,
        "camera": {"f": camera.f, "cx": camera.cx, "cy": camera.cy},
        "ground": {"normal": ground.normal, "d": ground.d},
        "people": entries,
        "meta": meta or {},
        "provenance": provenance or {},
    }, path)


def load_reconstruction(path):
    raw = _load(path)
    if raw.get("schema") != "crowdloc-reconstruction":
        raise ConfigError(f"{path} is not a reconstruction file (schema={raw.get('schema')!r})")
    camera = CameraIntrinsics(raw["camera"]["f"], raw["camera"]["cx"], raw["camera"]["cy"])
    ground = GroundPlane(np.asarray(raw["ground"]["normal"]), raw["ground"]["d"])
    people = []
    for e in raw.get("people", []):
        people.append(LocatedPerson(
            p_t=np.asarray(e["p_t_px"], dtype=float), p_v=np.asarray(e["p_v_px"], dtype=float),
            P_v=np.asarray(e["P_v_m"], dtype=float), P_t=np.asarray(e["P_t_m"], dtype=float),
            d=float(e["d_m"]), patch_id=e.get("patch", -1), person_id=e.get("id"),
            delta_t=np.asarray(e.get("delta_t_m", [0, 0, 0]), dtype=float),
            collinearity_dev=e.get("collinearity_dev_px"),
            keypoints=_opt_array(e.get("keypoints_px")),
            penalties=e.get("penalties", {}),
        ))
    return people, camera, ground, raw


# ---------------------------------------------------------------------- truth

def save_truth(scene, path, provenance: dict | None = None) -> None:
    """Ground-truth oracle file for a synthetic scene (input to `evaluate`)."""
    # local imports: simulate imports this module at load time
    from .geometry import project
    from .simulate import JOINT_ORDER

    entries = []
    for person in scene.people:
        kps = project(person.keypoints3d, scene.camera)
        body2d = project(person.body_points, scene.camera)
        all2d = np.vstack([body2d, kps])
        x0, y0 = all2d.min(axis=0)
        x1, y1 = all2d.max(axis=0)
        entries.append({
            "id": person.id, "stance": person.stance,
            "P_t_m": person.P_t, "P_v_m": person.P_v, "d_m": person.d,
            "p_t_px": project(person.P_t, scene.camera),
            "p_v_px": project(person.P_v, scene.camera),
            "keypoints_px": np.hstack([kps, np.ones((len(kps), 1))]),
            "box": np.array([x0, y0, x1 - x0, y1 - y0]),
            "keypoints3d_m": person.keypoints3d,
            "body_points_m": person.body_points,
        })
    dump_json({
        "schema": "crowdloc-truth", "schema_version": SCHEMA_VERSION,
        "camera": {"f": scene.camera.f, "cx": scene.camera.cx, "cy": scene.camera.cy},
        "ground": {"normal": scene.ground.normal, "d": scene.ground.d},
        "joint_order": list(JOINT_ORDER),
        "people": entries,
        "meta": {"seed": scene.spec.seed, "rng": "philox4x64"},
        "provenance": provenance or {},
    }, path)


def load_truth(path):
    raw = _load(path)
    if raw.get("schema") != "crowdloc-truth":
        raise ConfigError(f"{path} is not a truth file (schema={raw.get('schema')!r})")
    camera = CameraIntrinsics(raw["camera"]["f"], raw["camera"]["cx"], raw["camera"]["cy"])
    ground = GroundPlane(np.asarray(raw["ground"]["normal"]), raw["ground"]["d"])
    return raw["people"], camera, ground, raw
