import math

import numpy as np
import pytest

from crowdloc.calibration import (CalibrationOptions, StandingObservation, calibrate,
                                  calibration_loss, observations_from_keypoints,
                                  predict_shoulder, select_standing)
from crowdloc.errors import InsufficientData, ObservationInvalid
from crowdloc.geometry import CameraIntrinsics, GroundPlane, offset_plane, signed_distance
from crowdloc.simulate import ANKLE_DROP, SceneSpec, generate, render_annotations

K = CameraIntrinsics(1000.0, 0.0, 0.0)
G = GroundPlane(np.array([0.0, -1.0, 0.0]), 2.0)


def scene_observations(seed=1, n=20, sigma=0.0, **kw):
    spec = SceneSpec(seed=seed, n_people=n, standing_fraction=1.0, noise_sigma=sigma, **kw)
    scene = generate(spec)
    aset = render_annotations(scene)
    obs = observations_from_keypoints([p.keypoints for p in aset.people], aset.joint_order)
    return spec, scene, obs


def test_predict_shoulder_worked_case():
    p_s = predict_shoulder([0, 200], K, G, h=1.4)
    assert np.allclose(p_s, [0, 60])
    # h = 0 projects back to the ankle pixel
    assert np.allclose(predict_shoulder([0, 200], K, G, h=0.0), [0, 200])


def test_predict_shoulder_scale_similarity():
    # doubling f with the pixel scaled accordingly sees the same ground point
    p1 = predict_shoulder([0, 200], K, G, 1.4)
    K2 = CameraIntrinsics(2000.0, 0.0, 0.0)
    p2 = predict_shoulder([0, 400], K2, G, 1.4)
    assert p2[1] == pytest.approx(2 * p1[1])


def test_predict_shoulder_invalid_ray():
    with pytest.raises(ObservationInvalid):
        predict_shoulder([0, -50], K, G, 1.4)  # above the horizon


def test_loss_zero_at_truth():
    _, scene, obs = scene_observations(seed=5)
    ankle_plane = offset_plane(scene.ground, -ANKLE_DROP)
    loss = calibration_loss(scene.camera, ankle_plane, obs, h=1.4)
    assert loss < 1e-10


def test_loss_orthogonal_and_length_contrast():
    # one synthetic person at p_a=(0,200): P_a=(0,2,10), so with h=0.5 the
    # predicted segment is (0,-50) in the image
    p_a = np.array([0.0, 200.0])
    predicted = predict_shoulder(p_a, K, G, h=0.5)
    assert np.allclose(predicted, [0.0, 150.0])
    # observed segment orthogonal, equal length -> angle term alone = 1
    obs_orth = [StandingObservation(p_a=p_a, p_s=p_a + [50.0, 0.0])]
    assert calibration_loss(K, G, obs_orth, h=0.5) == pytest.approx(1.0, abs=1e-9)
    # same direction, predicted length twice the observed -> modulus term = 1
    obs_len = [StandingObservation(p_a=p_a, p_s=p_a + [0.0, -25.0])]
    assert calibration_loss(K, G, obs_len, h=0.5) == pytest.approx(1.0, abs=1e-9)


def test_loss_weights():
    p_a = np.array([0.0, 200.0])
    good = StandingObservation(p_a=p_a, p_s=predict_shoulder(p_a, K, G, 1.4))
    bad = StandingObservation(p_a=p_a, p_s=p_a + [80.0, 0.0])
    mixed = calibration_loss(K, G, [good, bad], h=1.4)
    assert mixed > 0.4
    assert calibration_loss(K, G, [good, bad], h=1.4, weights=[1.0, 0.0]) < 1e-12


def test_select_standing_rules():
    joint_order = ["left_shoulder", "right_shoulder", "left_hip", "right_hip",
                   "left_ankle", "right_ankle"]

    def person(du=0.0, ankle_dv=0.0, conf=1.0):
        kps = np.array([
            [100 + du, 100, conf], [120 + du, 100, conf],  # shoulders
            [102, 160, conf], [118, 160, conf],  # hips
            [104, 200, conf], [116, 200 + ankle_dv, conf],  # ankles
        ], dtype=float)
        return kps

    assert len(select_standing([person()], joint_order)) == 1
    # u-offset half the segment length: leaning, rejected
    assert len(select_standing([person(du=50.0)], joint_order)) == 0
    # one foot lifted beyond 10% of the segment
    assert len(select_standing([person(ankle_dv=30.0)], joint_order)) == 0
    # low-confidence keypoints rejected by tau
    assert len(select_standing([person(conf=0.3)], joint_order, tau=0.5)) == 0
    assert len(select_standing([], joint_order)) == 0


def test_select_standing_accepts_simulated_standing():
    spec = SceneSpec(seed=9, n_people=40, standing_fraction=1.0, noise_sigma=0.0)
    aset = render_annotations(generate(spec))
    selected = select_standing([p.keypoints for p in aset.people], aset.joint_order)
    assert len(selected) == 40


def test_select_standing_rejects_most_tilted():
    spec = SceneSpec(seed=10, n_people=40, standing_fraction=0.0, noise_sigma=0.0)
    aset = render_annotations(generate(spec))
    selected = select_standing([p.keypoints for p in aset.people], aset.joint_order)
    assert len(selected) < 10


def test_select_standing_pass_rate_under_noise():
    total, kept = 0, 0
    for seed in range(3):
        spec = SceneSpec(seed=seed, n_people=100, standing_fraction=1.0, noise_sigma=2.0)
        aset = render_annotations(generate(spec))
        kept += len(select_standing([p.keypoints for p in aset.people], aset.joint_order))
        total += len(aset.people)
    assert kept / total > 0.95


def test_calibrate_noise_free_recovery():
    spec, scene, obs = scene_observations(seed=3)
    result = calibrate(obs, (spec.image_width, spec.image_height))
    cos_dist = 1.0 - abs(float(result.ground.normal @ scene.ground.normal))
    assert cos_dist < 1e-4
    assert abs(result.camera.f - spec.f) / spec.f < 0.01
    assert result.ground.d == pytest.approx(scene.ground.d, rel=1e-3)
    assert result.residual < 1e-8
    assert result.camera.cx == spec.image_width / 2.0


def test_calibrate_recovered_plane_passes_through_ankles():
    spec, scene, obs = scene_observations(seed=4)
    result = calibrate(obs, (spec.image_width, spec.image_height))
    for person in scene.people:
        ankle_mid = 0.5 * (person.keypoints3d[4] + person.keypoints3d[5])
        assert abs(signed_distance(ankle_mid, result.ground_pre_lift)) < 1e-3


def test_calibrate_needs_three_observations():
    _, _, obs = scene_observations(seed=5, n=5)
    with pytest.raises(InsufficientData):
        calibrate(obs[:2], (1920, 1080))


def test_calibrate_degenerate_column_warns():
    # all ankle pixels on one image column: the normal is under-constrained
    obs = []
    for v in (700, 800, 900, 1000):
        p_a = np.array([960.0, float(v)])
        p_s = predict_shoulder(p_a, CameraIntrinsics(2000, 960, 540),
                               GroundPlane([0, -0.92, -0.39], 8.0), 1.4)
        obs.append(StandingObservation(p_a=p_a, p_s=p_s))
    result = calibrate(obs, (1920, 1080))
    assert "degenerate_configuration" in result.warnings


def test_calibrate_d_scales_with_height_prior():
    spec, scene, obs = scene_observations(seed=6)
    r1 = calibrate(obs, (spec.image_width, spec.image_height),
                   CalibrationOptions(height_prior=1.4))
    r2 = calibrate(obs, (spec.image_width, spec.image_height),
                   CalibrationOptions(height_prior=2.8))
    assert r2.ground_pre_lift.d == pytest.approx(2 * r1.ground_pre_lift.d, rel=1e-3)
    cos = abs(float(r1.ground.normal @ r2.ground.normal))
    assert cos > 1 - 1e-6


def test_truth_beats_random_perturbations():
    spec, scene, obs = scene_observations(seed=7)
    ankle_plane = offset_plane(scene.ground, -ANKLE_DROP)
    base = calibration_loss(scene.camera, ankle_plane, obs, h=1.4)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        f = spec.f * math.exp(rng.normal(0, 0.2))
        normal = scene.ground.normal + rng.normal(0, 0.05, 3)
        d = ankle_plane.d * math.exp(rng.normal(0, 0.2))
        loss = calibration_loss(CameraIntrinsics(f, scene.camera.cx, scene.camera.cy),
                                GroundPlane(normal, d), obs, h=1.4)
        assert base <= loss


def test_calibration_error_decreases_with_count():
    seeds = range(1, 9)

    def mean_err(n):
        errs = []
        for seed in seeds:
            spec, scene, obs = scene_observations(seed=seed, n=n, sigma=2.0)
            result = calibrate(obs, (spec.image_width, spec.image_height))
            errs.append(1.0 - abs(float(result.ground.normal @ scene.ground.normal)))
        return float(np.mean(errs))

    e3, e30 = mean_err(3), mean_err(30)
    assert e30 < e3


def test_observation_validation():
    with pytest.raises(ObservationInvalid):
        StandingObservation(p_a=np.array([1.0, 2.0]), p_s=np.array([1.0, 2.0]))
