import numpy as np
import pytest

from crowdloc.cropping import Patch
from crowdloc.localization import LocatedPerson
from crowdloc.merging import MergeConfig, match_duplicates, merge, merge_duplicates

PATCHES = [
    Patch(0, 0, 0, 200, 0, "base"),
    Patch(1, 100, 0, 200, 0, "overlap_h"),
    Patch(2, 200, 0, 200, 0, "base"),
]


def located(p_t, patch_id, P_t=None, d=1.0, pid=None, p_v=None):
    p_t = np.asarray(p_t, dtype=float)
    p_v = p_t + [0, 60] if p_v is None else np.asarray(p_v, dtype=float)
    P_t = np.array([0.0, 1.0, 10.0]) if P_t is None else np.asarray(P_t, dtype=float)
    return LocatedPerson(p_t=p_t, p_v=p_v, P_v=P_t - [0, d, 0], P_t=P_t, d=d,
                         patch_id=patch_id, person_id=pid)


def test_duplicates_cluster_distinct_people_do_not():
    # same person seen from two overlapping patches, 2 px apart
    a = located([150, 100], 0, P_t=[0, 1, 10], pid=1)
    b = located([152, 100], 1, P_t=[0.01, 1, 10], pid=1)
    # a different person 5 m away in 3D, far in pixels too
    c = located([400, 120], 2, P_t=[5, 1, 10], pid=2)
    clusters = match_duplicates([a, b, c])
    sizes = sorted(len(cl) for cl in clusters)
    assert sizes == [1, 2]


def test_same_patch_never_merges():
    a = located([150, 100], 0)
    b = located([151, 100], 0)
    assert len(match_duplicates([a, b])) == 2


def test_depth_aligned_people_do_not_merge():
    # nearly coincident pixels but meters apart in depth
    a = located([150, 100], 0, P_t=[0, 1, 20])
    b = located([153, 101], 1, P_t=[0, 1.4, 28])
    assert len(match_duplicates([a, b])) == 2


def test_match_empty():
    assert match_duplicates([]) == []


def test_merge_keeps_detection_farther_from_boundary():
    # A is 10 px from its patch edge, B is 40 px from its patch edge
    a = located([10, 100], 0, pid=7)
    b = located([140, 100], 1, pid=7)
    kept = merge([[a, b]], PATCHES)
    assert len(kept) == 1
    assert kept[0] is b


def test_merge_singleton_kept():
    a = located([50, 50], 0)
    assert merge([[a]], PATCHES) == [a]


def test_merge_tie_breaks_to_larger_patch():
    big = Patch(10, 0, 0, 400, 0, "base")
    small = Patch(11, 150, 150, 100, 0, "base")
    a = located([200, 200], 11)  # 50 px from the small patch boundary
    b = located([50, 50], 10)  # 50 px from the big patch boundary
    kept = merge([[a, b]], [big, small])
    assert kept[0] is b


def test_merge_idempotent():
    people = [
        located([150, 100], 0, pid=1), located([150.5, 100], 1, pid=1),
        located([300, 140], 2, pid=2),
    ]
    cfg = MergeConfig()
    once = merge_duplicates(people, PATCHES, cfg)
    twice = merge_duplicates(once, PATCHES, cfg)
    assert len(once) == 2
    assert twice == once


def test_output_never_exceeds_input():
    rng = np.random.default_rng(6)
    people = [located(rng.uniform(0, 400, 2), int(rng.integers(0, 3)),
                      P_t=rng.normal([0, 1, 15], 1.0)) for _ in range(40)]
    merged = merge_duplicates(people, PATCHES)
    assert len(merged) <= len(people)


def test_config_validation():
    with pytest.raises(ValueError):
        MergeConfig(match_radius_factor=0.0)
