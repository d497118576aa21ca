"""Decoupled pair-filter network with consensus feedback."""

import math

import numpy as np
import pytest

from ltvslam import vmeas
from ltvslam.core import FilterState, RobotInputs, body_from_global, skew
from ltvslam.dunk import (Consensus, DunkNetwork, LandmarkPairState, associate,
                          consensus, dunk_step, feedback_measurement,
                          init_pair, pair_measurement)
from ltvslam.kalman import FilterConfig
from ltvslam.slam_local import SensorBundle

from conftest import exact_bundle


def make_pair(lid, x_lm, x_v, sigma_v=1.0):
    P = np.eye(4)
    P[2:, 2:] = sigma_v * np.eye(2)
    return LandmarkPairState(lid, FilterState(np.concatenate([x_lm, x_v]), P))


def test_pair_state_block_accessors():
    p = make_pair(1, np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert np.allclose(p.x_landmark, [1.0, 2.0])
    assert np.allclose(p.x_vehicle, [3.0, 4.0])
    assert p.sigma_vehicle.shape == (2, 2)
    with pytest.raises(ValueError):
        LandmarkPairState(1, FilterState(np.zeros(3), np.eye(3)))


def test_consensus_equal_weights_is_midpoint():
    pairs = {1: make_pair(1, np.zeros(2), np.array([0.0, 0.0])),
             2: make_pair(2, np.zeros(2), np.array([2.0, 0.0]))}
    c = consensus(pairs, {1, 2})
    assert np.allclose(c.x_vc, [1.0, 0.0], atol=1e-8)


def test_consensus_information_weighted():
    pairs = {1: make_pair(1, np.zeros(2), np.array([0.0, 0.0]), sigma_v=1.0),
             2: make_pair(2, np.zeros(2), np.array([5.0, 0.0]), sigma_v=4.0)}
    c = consensus(pairs, {1, 2})
    assert np.allclose(c.x_vc, [1.0, 0.0], atol=1e-6)


def test_consensus_single_pair_and_empty():
    pairs = {1: make_pair(1, np.zeros(2), np.array([7.0, -1.0]))}
    c = consensus(pairs, {1})
    assert np.allclose(c.x_vc, [7.0, -1.0], atol=1e-8)
    assert consensus(pairs, set()) is None


def test_consensus_is_quadratic_minimizer(rng):
    # x_vc minimizes sum (x - x_vi)^T Sigma_vi^-1 (x - x_vi)
    pairs = {}
    for lid in range(5):
        M = rng.normal(size=(2, 2))
        P = np.eye(4)
        P[2:, 2:] = M @ M.T + 0.1 * np.eye(2)
        x = rng.normal(size=4)
        pairs[lid] = LandmarkPairState(lid, FilterState(x, P))
    c = consensus(pairs, pairs.keys())
    A = np.zeros((2, 2))
    b = np.zeros(2)
    for p in pairs.values():
        W = np.linalg.inv(p.sigma_vehicle)
        A += W
        b += W @ p.x_vehicle
    assert np.allclose(c.x_vc, np.linalg.solve(A, b), atol=1e-8)


def test_consensus_permutation_invariant():
    pairs = {i: make_pair(i, np.zeros(2), np.array([float(i), 0.0]),
                          sigma_v=1.0 + i) for i in range(4)}
    a = consensus(pairs, [0, 1, 2, 3])
    b = consensus(pairs, [3, 1, 0, 2])
    assert np.array_equal(a.x_vc, b.x_vc)


def test_feedback_measurement_rows():
    c = Consensus(x_vc=np.array([1.0, 2.0]), information=np.eye(2),
                  observed=frozenset({1}))
    vm = feedback_measurement(c)
    assert np.allclose(vm.H, [[0, 0, 1, 0], [0, 0, 0, 1]])
    assert np.allclose(vm.residual(np.array([9.0, 9.0, 1.0, 2.0])), 0.0)
    assert feedback_measurement(None) is None


def test_pair_measurement_relative_reduction():
    # case II at theta=0, r=4, beta=0: rows act on x_i - x_vi
    bundle = SensorBundle(bearing=vmeas.BearingObs(theta=0.0),
                          range=vmeas.RangeObs(r=4.0))
    inputs = RobotInputs(u=np.zeros(2), omega=skew(0.0))
    vm = pair_measurement(2, bundle, 0.0, inputs)
    x = np.array([1.0, 6.0, 1.0, 2.0])   # x_i - x_vi = (0, 4)
    assert np.abs(vm.residual(x)).max() < 1e-12


def test_pair_measurement_rotates_with_heading(rng):
    bundle = SensorBundle(bearing=vmeas.BearingObs(theta=0.4),
                          range=vmeas.RangeObs(r=3.0))
    inputs = RobotInputs(u=np.zeros(2), omega=skew(0.0))
    beta = 1.1
    vm0 = pair_measurement(2, bundle, 0.0, inputs)
    vmb = pair_measurement(2, bundle, beta, inputs)
    T = body_from_global(beta)
    assert np.allclose(vmb.H[:, :2], vm0.H[:, :2] @ T, atol=1e-12)


def test_init_pair_uses_all_pairs_consensus():
    pairs = {1: make_pair(1, np.zeros(2), np.array([0.0, 0.0])),
             2: make_pair(2, np.zeros(2), np.array([4.0, 0.0]))}
    bundle = SensorBundle(bearing=vmeas.BearingObs(theta=0.0),
                          range=vmeas.RangeObs(r=2.0))
    p = init_pair(3, bundle, pairs, beta_hat=0.0,
                  vehicle_prior=(np.zeros(2), np.eye(2)))
    assert np.allclose(p.x_vehicle, [2.0, 0.0], atol=1e-6)
    assert np.allclose(p.x_landmark, [2.0, 2.0], atol=1e-6)


def test_init_pair_first_ever_uses_prior():
    bundle = SensorBundle(bearing=vmeas.BearingObs(theta=0.0),
                          range=vmeas.RangeObs(r=5.0))
    p = init_pair(1, bundle, {}, beta_hat=0.0,
                  vehicle_prior=(np.array([1.0, 1.0]), np.eye(2)))
    assert np.allclose(p.x_vehicle, [1.0, 1.0])
    assert np.allclose(p.x_landmark, [1.0, 6.0])


def test_associate_picks_nearest_and_gates():
    inputs = RobotInputs(u=np.zeros(2), omega=skew(0.0))
    pairs = {1: make_pair(1, np.array([0.0, 4.0]), np.zeros(2), sigma_v=0.01),
             2: make_pair(2, np.array([4.0, 0.0]), np.zeros(2), sigma_v=0.01)}
    obs_near_1 = SensorBundle(
        bearing=vmeas.BearingObs(theta=0.02, sigma_theta=0.02),
        range=vmeas.RangeObs(r=4.0, sigma_r=0.2))
    assert associate(2, obs_near_1, 0.0, inputs, pairs) == 1
    obs_far = SensorBundle(
        bearing=vmeas.BearingObs(theta=math.pi, sigma_theta=0.02),
        range=vmeas.RangeObs(r=40.0, sigma_r=0.2))
    assert associate(2, obs_far, 0.0, inputs, pairs) is None
    assert associate(2, obs_near_1, 0.0, inputs, {}) is None


def test_identical_pairs_stay_identical():
    # pairs sharing inputs and observations never separate
    net = DunkNetwork(case=2, cfg=FilterConfig(dt=0.01))
    inputs = RobotInputs(u=np.array([0.0, 1.0]), omega=skew(0.0))
    bundle = SensorBundle(bearing=vmeas.BearingObs(theta=0.0),
                          range=vmeas.RangeObs(r=4.0))
    for _ in range(50):
        dunk_step(net, 1.0, 0.0, {1: bundle, 2: bundle})
    p1, p2 = net.pairs[1], net.pairs[2]
    assert np.allclose(p1.state.x, p2.state.x, atol=1e-12)
    assert np.allclose(p1.state.P, p2.state.P, atol=1e-12)


def test_dunk_step_no_observations_no_motion_is_identity():
    net = DunkNetwork(case=2, cfg=FilterConfig(dt=0.01))
    net.pairs[1] = make_pair(1, np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    x_before = net.pairs[1].state.x.copy()
    dunk_step(net, 0.0, 0.0, {})
    assert np.allclose(net.pairs[1].x_landmark, x_before[:2], atol=1e-12)
    assert np.allclose(net.pairs[1].x_vehicle, x_before[2:], atol=1e-12)


def test_unobserved_pairs_follow_the_consensus():
    # a pair that is never observed again converges to the moving consensus
    net = DunkNetwork(case=2, cfg=FilterConfig(dt=0.01),
                      vehicle_prior_P=1e-2 * np.eye(2))
    inputs_bundle = SensorBundle(bearing=vmeas.BearingObs(theta=0.0),
                                 range=vmeas.RangeObs(r=4.0))
    dunk_step(net, 0.0, 0.0, {1: inputs_bundle, 2: inputs_bundle})
    net.pairs[2] = make_pair(2, np.array([9.0, 9.0]), np.array([5.0, 5.0]),
                             sigma_v=100.0)
    for _ in range(300):
        dunk_step(net, 0.0, 0.0, {1: inputs_bundle})
    gap = np.linalg.norm(net.pairs[2].x_vehicle - net.pairs[1].x_vehicle)
    assert gap < 0.05


def test_dunk_noise_free_scene_converges():
    dt, omega_m, radius = 0.01, 0.5, 5.0
    landmarks = {1: np.array([2.5, 2.5]), 2: np.array([-3.0, 1.5]),
                 3: np.array([2.0, -3.0])}
    u = radius * omega_m
    net = DunkNetwork(case=2, cfg=FilterConfig(dt=dt), beta_hat=0.0,
                      vehicle_prior_x=np.array([radius, 0.0]),
                      vehicle_prior_P=1e-2 * np.eye(2))
    for i in range(1500):
        a = omega_m * i * dt
        pos = radius * np.array([math.cos(a), math.sin(a)])
        T = body_from_global(a)
        inputs = RobotInputs(u=np.array([0.0, u]), omega=skew(omega_m))
        obs = {lid: exact_bundle(T @ (lm - pos), inputs)
               for lid, lm in landmarks.items()}
        dunk_step(net, u, omega_m, obs)
    for lid, lm in landmarks.items():
        assert np.linalg.norm(net.pairs[lid].x_landmark - lm) < 0.05
