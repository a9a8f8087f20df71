"""Core projective geometry shared by every other module.

Conventions (fixed once, documented here):
  * Camera frame: x right, y down, z forward (depth). Units are meters.
  * Pixels: (u, v) with v increasing downward; global large-scene frame
    unless explicitly marked patch-local.
  * Ground plane: N . P + D = 0 with unit normal N stored camera-side
    positive, i.e. the signed distance of the camera origin (= D) is > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DirectionUndefined, NoIntersection

# Homogeneous pixels whose third component is below this are points at infinity.
INFINITY_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with a single focal length and arbitrary principal point."""

    f: float
    cx: float
    cy: float

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    def ray(self, pixel) -> np.ndarray:
        """K^-1 applied to the homogeneous pixel: the viewing ray at depth 1."""
        u, v = float(pixel[0]), float(pixel[1])
        return np.array([(u - self.cx) / self.f, (v - self.cy) / self.f, 1.0])


@dataclass(frozen=True)
class GroundPlane:
    """Plane N . P + D = 0; the constructor normalizes N and orients it so D >= 0."""

    normal: np.ndarray
    d: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if norm == 0 or not np.all(np.isfinite(n)):
            raise ValueError("plane normal must be a finite nonzero vector")
        n = n / norm
        d = float(self.d) / norm
        if d < 0:  # store camera-side-positive
            n, d = -n, -d
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "d", d)

    @property
    def g(self) -> np.ndarray:
        """Stacked 4-vector [Nx, Ny, Nz, D]."""
        return np.append(self.normal, self.d)


def project(point, camera: CameraIntrinsics) -> np.ndarray:
    """Perspective projection of a camera-frame 3D point to a pixel.

    Raises BehindCamera for non-positive depth.
    """
    p = np.asarray(point, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCamera(f"cannot project point(s) with depth <= 0 (z={z})")
    u = camera.f * p[..., 0] / z + camera.cx
    v = camera.f * p[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


def ground_intersect(pixel, camera: CameraIntrinsics, ground: GroundPlane) -> np.ndarray:
    """Back-project a pixel onto the ground plane.

    Returns P = z * K^-1 p_bar with z = -D / (N . K^-1 p_bar), which satisfies
    the plane equation by construction.
    """
    r = camera.ray(pixel)
    denom = float(ground.normal @ r)
    if abs(denom) < 1e-15:
        raise NoIntersection(f"viewing ray through {tuple(pixel)} is parallel to the ground plane")
    z = -ground.d / denom
    if z <= 0:
        raise BehindCamera(f"ground intersection of {tuple(pixel)} has depth {z} <= 0")
    return z * r


def signed_distance(point, ground: GroundPlane) -> float:
    """N . P + D: positive on the camera side, negative is penetration depth."""
    return float(ground.normal @ np.asarray(point, dtype=float) + ground.d)


def vanishing_point(camera: CameraIntrinsics, normal) -> np.ndarray:
    """Homogeneous image of the direction `normal`: K N.

    The third component may be (near) zero, in which case the result is a
    point at infinity carrying only a 2D direction.
    """
    n = np.asarray(normal, dtype=float)
    return camera.K @ n


def is_at_infinity(homogeneous_pixel) -> bool:
    return abs(float(homogeneous_pixel[2])) < INFINITY_EPS


def offset_plane(ground: GroundPlane, delta: float) -> GroundPlane:
    """Translate the plane by `delta` meters along its normal.

    Points previously at signed distance `delta` lie on the returned plane,
    so D' = D - delta.
    """
    return GroundPlane(ground.normal, ground.d - delta)


def ground_direction(pixel, camera: CameraIntrinsics, normal) -> np.ndarray:
    """Unit 2D image direction, at `pixel`, of moving a 3D point downward
    along -`normal` (toward the ground).

    This is the tangent of the image line through the pixel and the
    vanishing point K N, oriented away from the vanishing point; it is
    well-defined whether K N is finite or at infinity.
    """
    n = np.asarray(normal, dtype=float)
    u, v = float(pixel[0]), float(pixel[1])
    # d/dt project(P + t N) at the pixel, up to the positive factor f/z.
    up = np.array([camera.f * n[0] - (u - camera.cx) * n[2],
                   camera.f * n[1] - (v - camera.cy) * n[2]])
    length = np.linalg.norm(up)
    if length < 1e-9 * max(camera.f, 1.0):
        raise DirectionUndefined(f"pixel {tuple(pixel)} coincides with the ground-normal vanishing point")
    return -up / length


def collinearity_deviation(p_t, p_v, camera: CameraIntrinsics, normal) -> float:
    """Perpendicular pixel distance of p_v from the line through p_t along
    the ground direction (0 when p_t, p_v and the vanishing point are collinear)."""
    d = ground_direction(p_t, camera, normal)
    delta = np.asarray(p_v, dtype=float) - np.asarray(p_t, dtype=float)
    return float(abs(delta[0] * d[1] - delta[1] * d[0]))
