"""Synthetic worlds: trajectories, sensing, serialization."""

import csv
import json
import math

import numpy as np
import pytest

from ltvslam.core import heading_forward, wrap_angle
from ltvslam.noisecal import NoiseSpec
from ltvslam.sim import (COOP_RADIUS, CircleSpec, Landmark, Scenario,
                         circle_trajectory, is_visible, observe_robots,
                         scenario_coop, scenario_single_vehicle_2d,
                         sense, write_obs_csv, write_obs_jsonl)


def test_circle_trajectory_kinematic_consistency():
    pose_fn = circle_trajectory((1.0, -2.0), 5.0, 0.7, (6.0, -2.0))
    eps = 1e-6
    for t in (0.0, 1.3, 4.0):
        p = pose_fn(t)
        vel = (pose_fn(t + eps).position - p.position) / eps
        assert np.allclose(vel, p.u * heading_forward(p.beta), atol=1e-4)
        assert p.u == pytest.approx(3.5)
        assert p.omega == pytest.approx(0.7)
        assert np.linalg.norm(p.position - [1.0, -2.0]) == pytest.approx(5.0)


def test_circle_trajectory_negative_rate_reverses_heading():
    fwd = circle_trajectory((0.0, 0.0), 2.0, 1.0, (2.0, 0.0))(0.0)
    rev = circle_trajectory((0.0, 0.0), 2.0, -1.0, (2.0, 0.0))(0.0)
    assert abs(wrap_angle(rev.beta - fwd.beta - math.pi)) < 1e-12
    assert rev.u == fwd.u > 0


def test_circle_trajectory_stationary_and_bad_start():
    p = circle_trajectory((0.0, 0.0), 1.0, 0.0, (1.0, 0.0), beta0=0.4)(9.0)
    assert p.u == 0.0 and p.beta == pytest.approx(0.4)
    with pytest.raises(ValueError):
        circle_trajectory((0.0, 0.0), 5.0, 0.5, (1.0, 0.0))


def test_scenario_json_round_trip():
    sc = scenario_single_vehicle_2d()
    back = Scenario.from_json(sc.to_json())
    assert back.name == sc.name
    assert back.seed == sc.seed and back.dt == sc.dt
    assert len(back.landmarks) == len(sc.landmarks)
    for a, b in zip(back.landmarks, sc.landmarks):
        assert a.id == b.id and np.allclose(a.position, b.position)
    assert back.vehicles == sc.vehicles
    assert back.noise == sc.noise


def test_visibility_rules():
    sc = Scenario(name="t", visibility="range", r_visible=10.0)
    spec = CircleSpec(center=(5.0, 5.0), radius=1.0, omega=1.0, x0=(6.0, 5.0))
    from ltvslam.sim import Pose
    pose = Pose(t=0.0, position=np.zeros(2), beta=0.0, u=0.0, omega=0.0)
    near, far = Landmark(1, (3.0, 4.0)), Landmark(2, (30.0, 40.0))
    assert is_visible(sc, spec, pose, near)
    assert not is_visible(sc, spec, pose, far)
    sc_q = Scenario(name="t", visibility="quadrant")
    assert is_visible(sc_q, spec, pose, Landmark(3, (2.0, 1.0)))
    assert is_visible(sc_q, spec, pose, Landmark(4, (0.0, 1.0)))  # closed edge
    assert not is_visible(sc_q, spec, pose, Landmark(5, (-2.0, 1.0)))
    sc_bad = Scenario(name="t", visibility="cone")
    with pytest.raises(ValueError):
        is_visible(sc_bad, spec, pose, near)


def test_sense_noise_free_matches_truth():
    from ltvslam.sim import Pose
    pose = Pose(t=0.0, position=np.array([1.0, 1.0]), beta=0.3, u=2.0,
                omega=0.5)
    lm = Landmark(4, (4.0, 5.0))
    bundle, rec = sense(pose, lm, NoiseSpec(), np.random.default_rng(0))
    for kind in ("theta", "r", "theta_dot", "r_dot", "alpha", "tau"):
        assert rec.values[kind] == pytest.approx(rec.truth[kind], abs=1e-12)
    assert bundle.range.r == pytest.approx(5.0)


def test_sense_is_seed_deterministic():
    from ltvslam.sim import Pose
    pose = Pose(t=0.0, position=np.zeros(2), beta=0.0, u=1.0, omega=0.2)
    lm = Landmark(1, (2.0, 3.0))
    noise = NoiseSpec(sigma_theta=0.05, sigma_r=0.5, sigma_theta_dot=0.05,
                      sigma_r_dot=0.1, sigma_alpha=0.01)
    a, ra = sense(pose, lm, noise, np.random.default_rng(42))
    b, rb = sense(pose, lm, noise, np.random.default_rng(42))
    assert ra.values == rb.values
    c, rc = sense(pose, lm, noise, np.random.default_rng(43))
    assert ra.values != rc.values


def test_obs_csv_round_trips_values(tmp_path):
    from ltvslam.sim import Pose
    pose = Pose(t=0.25, position=np.zeros(2), beta=0.0, u=1.0, omega=0.2)
    _, rec = sense(pose, Landmark(3, (1.0, 4.0)), NoiseSpec(sigma_theta=0.02),
                   np.random.default_rng(1), robot=2)
    path = tmp_path / "obs.csv"
    write_obs_csv([rec], str(path))
    rows = list(csv.DictReader(path.open()))
    assert {r["kind"] for r in rows} == set(rec.values)
    by_kind = {r["kind"]: r for r in rows}
    assert float(by_kind["theta"]["value"]) == rec.values["theta"]
    assert by_kind["r"]["robot"] == "2" and by_kind["r"]["landmark"] == "3"


def test_obs_jsonl_round_trips_values(tmp_path):
    from ltvslam.sim import Pose
    pose = Pose(t=0.5, position=np.zeros(2), beta=0.1, u=1.0, omega=0.0)
    _, rec = sense(pose, Landmark(1, (0.0, 6.0)), NoiseSpec(),
                   np.random.default_rng(5))
    path = tmp_path / "obs.jsonl"
    write_obs_jsonl([rec], str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    row = json.loads(lines[0])
    assert row["t"] == 0.5 and row["landmark"] == 1
    assert row["values"]["r"] == rec.values["r"]


def test_coop_scenarios():
    full = scenario_coop("full")
    assert len(full.landmarks) == 13 and len(full.vehicles) == 4
    assert full.visibility == "unlimited"
    partial = scenario_coop("partial")
    assert partial.visibility == "quadrant"
    robots = scenario_coop("robots_only")
    assert robots.landmarks == []
    with pytest.raises(ValueError):
        scenario_coop("mesh")
    # every vehicle's start point sits on its circle
    for _, spec in full.vehicles:
        gap = np.linalg.norm(np.array(spec.x0) - np.array(spec.center))
        assert gap == pytest.approx(COOP_RADIUS, abs=1e-9)


def test_observe_robots_structure():
    sc = scenario_coop("robots_only")
    poses = {vid: fn(0.0) for vid, fn in sc.pose_fns().items()}
    out = observe_robots(poses, NoiseSpec(), np.random.default_rng(0))
    assert set(out) == set(poses)
    for i, data in out.items():
        assert set(data["bundles"]) == set(poses) - {i}
        for j, bundle in data["bundles"].items():
            d_true = np.linalg.norm(poses[j].position - poses[i].position)
            assert bundle.range.r == pytest.approx(d_true, abs=1e-9)
            assert data["heading_diffs"][j] == pytest.approx(
                wrap_angle(poses[j].beta - poses[i].beta), abs=1e-9)
            assert data["speeds"][j] == poses[j].u
