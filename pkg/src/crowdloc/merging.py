"""Duplicate removal across overlapping patches.

People reconstructed from two patches that both contain them are the same
image evidence, so duplicates sit at (nearly) the same global torso pixel.
Matching is greedy transitive clustering on 2D torso-pixel distance with a
per-person scale (the projected torso segment length); each cluster keeps
the detection farthest from its own patch boundary, which tends to keep the
least truncated instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MergeConfig:
    match_radius_factor: float = 0.5  # times the larger torso-segment length of a pair
    use_3d: bool = False  # match on 3D torso distance (threshold in torso heights)

    def __post_init__(self):
        if not self.match_radius_factor > 0:
            raise ValueError(f"match radius factor must be positive, got {self.match_radius_factor}")


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[rj] = ri


def _scale(person, use_3d: bool) -> float:
    if use_3d:
        return max(abs(person.d), 0.1)
    return max(float(np.linalg.norm(person.p_t - person.p_v)), 1.0)


def match_duplicates(people, cfg: MergeConfig | None = None):
    """Cluster detections of the same person from different patches.

    Two detections join a cluster when their torso distance is below
    factor * max(scale_i, scale_j); clusters close transitively. Detections
    from the same patch never merge. In 2D mode a 3D agreement gate (factor
    times the torso height, in meters) also applies: people standing behind
    each other can be near-coincident in the image while meters apart in
    depth, and must not merge.
    """
    cfg = cfg or MergeConfig()
    people = list(people)
    if not people:
        return []
    anchors = np.array([p.P_t if cfg.use_3d else p.p_t for p in people], dtype=float)
    scales = np.array([_scale(p, cfg.use_3d) for p in people])
    positions = np.array([p.P_t for p in people], dtype=float)
    heights = np.array([max(abs(p.d), 0.1) for p in people])
    uf = _UnionFind(len(people))
    for i in range(len(people)):
        for j in range(i + 1, len(people)):
            if people[i].patch_id == people[j].patch_id:
                continue
            radius = cfg.match_radius_factor * max(scales[i], scales[j])
            if np.linalg.norm(anchors[i] - anchors[j]) >= radius:
                continue
            gate = cfg.match_radius_factor * max(heights[i], heights[j])
            if not cfg.use_3d and np.linalg.norm(positions[i] - positions[j]) >= gate:
                continue
            uf.union(i, j)
    clusters: dict = {}
    for i, person in enumerate(people):
        clusters.setdefault(uf.find(i), []).append(person)
    return list(clusters.values())


def merge(clusters, patches):
    """Keep, per cluster, the detection farthest from its patch boundary;
    ties break toward the larger patch."""
    by_id = {p.id: p for p in patches}
    kept = []
    for cluster in clusters:
        if not cluster:
            continue

        def rank(person):
            patch = by_id.get(person.patch_id)
            if patch is None:
                return (-np.inf, 0)
            return (patch.boundary_distance(person.p_t), patch.size)

        kept.append(max(cluster, key=rank))
    return kept


def merge_duplicates(people, patches, cfg: MergeConfig | None = None):
    """match_duplicates + merge in one call."""
    return merge(match_duplicates(people, cfg), patches)
