"""Hierarchical crop layout for large-scene images.

Person pixel heights in a large scene grow roughly geometrically from the top
of the active region to the bottom, so square crop blocks are sized as a
geometric sequence: the first row is twice the top person height and the row
sizes c_i = c_1 * q^(i-1) must sum to the active span. The layout solver picks
the (n, q) whose last row best matches twice the bottom person height.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import LayoutInfeasible, MetricUndefined

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CropParams:
    """Active-region bounds and person heights at its top and bottom (pixels)."""

    h_t: float
    h_b: float
    b_u: float
    b_l: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if not 0 < self.h_t <= self.h_b:
            raise ValueError(f"need 0 < h_t <= h_b, got h_t={self.h_t}, h_b={self.h_b}")
        if not self.b_u < self.b_l <= self.image_height:
            raise ValueError(f"need b_u < b_l <= image_height, got {self.b_u}, {self.b_l}")

    @property
    def span(self) -> float:
        return self.b_l - self.b_u


@dataclass(frozen=True)
class CropLayout:
    n: int
    q: float
    sizes: tuple  # integer row sizes, top to bottom
    objective: float  # |c_n - 2 h_b| at the continuous optimum


@dataclass(frozen=True)
class Patch:
    """A square crop; (x, y) is the upper-left corner in the global frame."""

    id: int
    x: int
    y: int
    size: int
    row: int
    kind: str  # "base" | "overlap_h" | "overlap_v"

    @property
    def overlap(self) -> bool:
        return self.kind != "base"

    @property
    def t_crop(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x + self.size / 2.0, self.y + self.size / 2.0])

    def contains_point(self, p) -> bool:
        return self.x <= p[0] <= self.x + self.size and self.y <= p[1] <= self.y + self.size

    def contains_box(self, box) -> bool:
        bx, by, bw, bh = box
        return (bx >= self.x and by >= self.y
                and bx + bw <= self.x + self.size and by + bh <= self.y + self.size)

    def boundary_distance(self, p) -> float:
        """Distance from an inner point to the nearest patch edge (negative outside)."""
        return min(p[0] - self.x, self.x + self.size - p[0],
                   p[1] - self.y, self.y + self.size - p[1])


def _geometric_sum(c1: float, n: int, q: float) -> float:
    if abs(q - 1.0) < 1e-12:
        return n * c1
    return c1 * (q**n - 1.0) / (q - 1.0)


def _solve_ratio(c1: float, n: int, span: float) -> float | None:
    """Positive root q of c1 (q^n - 1)/(q - 1) = span, by bisection.

    The geometric sum is strictly increasing in q with infimum c1 as q -> 0,
    so a root exists iff span > c1 (n >= 2).
    """
    if span <= c1:
        return None
    lo, hi = 1e-9, 2.0
    while _geometric_sum(c1, n, hi) < span:
        hi *= 2.0
        if hi > 1e9:
            return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _geometric_sum(c1, n, mid) < span:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    return 0.5 * (lo + hi)


def solve_layout(params: CropParams) -> CropLayout:
    """Pick (n, q) minimizing |c_n - 2 h_b| subject to c_1 = 2 h_t and row sizes
    summing to the active span; ties break toward smaller n."""
    c1 = 2.0 * params.h_t
    span = params.span
    if span < c1 - 1.0:
        raise LayoutInfeasible(
            f"active span {span} is shorter than one block of size 2*h_t = {c1}")

    n_max = max(1, math.ceil(span / c1))
    best = None
    for n in range(1, n_max + 1):
        if n == 1:
            if abs(span - c1) > 1.0:  # a single block must cover the span
                continue
            q, c_n = 1.0, c1
        else:
            q = _solve_ratio(c1, n, span)
            if q is None:
                continue
            c_n = c1 * q ** (n - 1)
        objective = abs(c_n - 2.0 * params.h_b)
        if best is None or objective < best[0] - 1e-12:
            best = (objective, n, q)
    if best is None:
        raise LayoutInfeasible(f"no feasible row count for span {span} with h_t={params.h_t}")

    objective, n, q = best
    sizes = [int(round(c1 * q**i)) for i in range(n - 1)]
    sizes.append(int(round(span)) - sum(sizes))  # last row absorbs rounding residue
    return CropLayout(n=n, q=q, sizes=tuple(sizes), objective=objective)


def _tile_positions(width: int, size: int) -> list:
    """Left-aligned tiling; the last block is left-shifted to stay inside."""
    positions = []
    x = 0
    while x + size <= width:
        positions.append(x)
        x += size
    if x < width:
        positions.append(max(0, width - size))
    return positions


def _row_patches(patches: list, y: int, size: int, row: int, kind: str, params: CropParams):
    size_eff = min(size, params.image_width)
    y = int(min(max(y, 0), params.image_height - size_eff))
    xs = _tile_positions(params.image_width, size_eff)
    for x in xs:
        patches.append(Patch(len(patches), int(x), y, int(size_eff), row, kind))
    # half-shifted blocks between adjacent ones, to catch truncated people
    h_kind = "overlap_h" if kind == "base" else kind
    for x0, x1 in zip(xs[:-1], xs[1:]):
        patches.append(Patch(len(patches), int((x0 + x1) // 2), y, int(size_eff), row, h_kind))


def _build_patches(row_sizes, params: CropParams) -> list:
    patches: list = []
    tops = np.concatenate([[params.b_u], params.b_u + np.cumsum(row_sizes)]).astype(int)
    for i, c in enumerate(row_sizes):
        _row_patches(patches, tops[i], c, i, "base", params)
    # blocks straddling each row boundary, sized as half of each adjacent row
    # combined; two anchors so that both bottom-heavy crossers (feet well
    # below the boundary) and top-heavy ones (head well above) fit untruncated
    for i in range(len(row_sizes) - 1):
        s = int(round(0.5 * (row_sizes[i] + row_sizes[i + 1])))
        anchors = [tops[i + 1] - row_sizes[i] // 2, tops[i + 1] - s // 2]
        for top in anchors[:1] + [a for a in anchors[1:] if a != anchors[0]]:
            _row_patches(patches, top, s, i, "overlap_v", params)
    return patches


def generate_patches(layout: CropLayout, params: CropParams) -> list:
    return _build_patches(list(layout.sizes), params)


def uniform_layout(params: CropParams, block: int) -> list:
    """Constant-size grid over the active region, same overlap scheme."""
    if block <= 0:
        raise ValueError(f"block size must be positive, got {block}")
    span = int(round(params.span))
    n = max(1, int(round(span / block)))
    sizes = [block] * (n - 1)
    sizes.append(span - block * (n - 1))
    if sizes[-1] <= 0:
        sizes = [block] * (n - 1)
    return _build_patches(sizes, params)


def local_to_global(p_local, patch: Patch) -> np.ndarray:
    """Patch-local pixel -> global frame: p + t_crop.

    Points slightly outside the patch are tolerated (regressed or virtual
    points may exceed the crop), they are only logged.
    """
    p = np.asarray(p_local, dtype=float)
    if not (-1 <= p[0] <= patch.size + 1 and -1 <= p[1] <= patch.size + 1):
        logger.debug("local pixel %s outside patch %d bounds (size %d)", tuple(p), patch.id, patch.size)
    return p + patch.t_crop


def global_to_local(p_global, patch: Patch) -> np.ndarray:
    return np.asarray(p_global, dtype=float) - patch.t_crop


def cropping_score(people_boxes, patches) -> float:
    """Fraction of people appearing untruncated in some patch at a height ratio
    within [0.3, 0.8]."""
    if len(people_boxes) == 0:
        raise MetricUndefined("cropping score is undefined for zero people")
    appropriate = 0
    for box in people_boxes:
        bh = box[3]
        for patch in patches:
            if 0.3 <= bh / patch.size <= 0.8 and patch.contains_box(box):
                appropriate += 1
                break
    return appropriate / len(people_boxes)


def estimate_crop_params(boxes, image_width: int, image_height: int) -> CropParams:
    """Estimate region bounds and edge person heights from annotated boxes.

    Heights are fit against the box-bottom row with a Theil-Sen line (robust
    to outliers) and extrapolated to the region bounds.
    """
    boxes = np.asarray(boxes, dtype=float)
    if len(boxes) < 2:
        raise LayoutInfeasible("need at least 2 boxes to estimate crop parameters")
    bottoms = boxes[:, 1] + boxes[:, 3]
    heights = boxes[:, 3]
    b_u = max(0.0, math.floor(boxes[:, 1].min()))
    b_l = min(float(image_height), math.ceil(bottoms.max()))
    if np.ptp(bottoms) < 1e-9:
        slope, intercept = 0.0, float(np.median(heights))
    else:
        slope, intercept, _, _ = stats.theilslopes(heights, bottoms)
    h_t = max(2.0, slope * b_u + intercept)
    h_b = max(h_t, slope * b_l + intercept)
    return CropParams(h_t=h_t, h_b=h_b, b_u=b_u, b_l=b_l,
                      image_width=image_width, image_height=image_height)
