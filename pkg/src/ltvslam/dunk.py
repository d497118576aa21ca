"""Decoupled full-state SLAM with per-landmark virtual vehicles.

Every landmark is paired with its own copy of the vehicle estimate, so
each pair is a small constant-size filter and the per-tick cost is
linear in the number of landmarks.  The pairs are tied together by an
information-weighted consensus over the virtual vehicles, fed back to
every pair as one extra virtual measurement (leader-follower coupling).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from . import vmeas
from .core import FilterState, RobotInputs, heading_forward, rotation2d, skew
from .kalman import FilterConfig, ode_step
from .slam_global import beta_d_closed_form_2d, body_from_global, track_heading
from .slam_local import SensorBundle, build_measurement

#: Tikhonov term added before inverting a virtual-vehicle covariance.
REG = 1e-9


@dataclass(frozen=True)
class LandmarkPairState:
    """Joint (landmark, virtual vehicle) estimate with 2d x 2d block covariance."""

    landmark_id: int
    state: FilterState  # x = [x_i; x_vi]
    last_seen: float = float("-inf")

    def __post_init__(self):
        if self.state.dim % 2:
            raise ValueError("pair state must stack two equal-size blocks")

    @property
    def dim(self) -> int:
        return self.state.dim // 2

    @property
    def x_landmark(self) -> np.ndarray:
        return self.state.x[:self.dim]

    @property
    def x_vehicle(self) -> np.ndarray:
        return self.state.x[self.dim:]

    @property
    def sigma_vehicle(self) -> np.ndarray:
        return self.state.P[self.dim:, self.dim:]


@dataclass(frozen=True)
class Consensus:
    """Information-weighted average of the virtual vehicles."""

    x_vc: np.ndarray
    information: np.ndarray   # sum of Sigma_vi^-1 over the observed set
    observed: frozenset

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.information)


def _info(sigma: np.ndarray) -> np.ndarray:
    return np.linalg.inv(sigma + REG * np.eye(sigma.shape[0]))


def consensus(pairs: dict[int, LandmarkPairState],
              observed) -> Consensus | None:
    """x_vc = (sum Sigma_vi^-1)^-1 sum Sigma_vi^-1 x_vi over the observed set."""
    observed = frozenset(observed) & set(pairs)
    if not observed:
        return None
    d = next(iter(pairs.values())).dim
    info = np.zeros((d, d))
    weighted = np.zeros(d)
    for lid in sorted(observed):
        p = pairs[lid]
        w = _info(p.sigma_vehicle)
        info += w
        weighted += w @ p.x_vehicle
    return Consensus(x_vc=np.linalg.solve(info, weighted),
                     information=info, observed=observed)


def feedback_measurement(c: Consensus | None) -> vmeas.VirtualMeasurement | None:
    """Leader-follower rows [0 I] pulling each virtual vehicle toward x_vc."""
    if c is None:
        return None
    d = c.x_vc.size
    H = np.hstack([np.zeros((d, d)), np.eye(d)])
    return vmeas.VirtualMeasurement(y=c.x_vc, H=H, R=c.covariance)


def pair_measurement(case: int, bundle: SensorBundle, beta_hat: float,
                     inputs: RobotInputs, r_max: float = vmeas.DEFAULT_R_MAX,
                     r_hint: float | None = None
                     ) -> vmeas.VirtualMeasurement | None:
    """Case rows lifted to the pair state: body rows M become [M T, -M T]."""
    body_vm = build_measurement(case, bundle, inputs, r_max, r_hint)
    if body_vm is None:
        return None
    M = body_vm.H @ body_from_global(beta_hat)
    return vmeas.VirtualMeasurement(y=body_vm.y, H=np.hstack([M, -M]),
                                    R=body_vm.R)


def init_pair(landmark_id: int, bundle: SensorBundle,
              pairs: dict[int, LandmarkPairState], beta_hat: float,
              vehicle_prior: tuple[np.ndarray, np.ndarray],
              r_max: float = vmeas.DEFAULT_R_MAX, t: float = 0.0
              ) -> LandmarkPairState:
    """New pair: virtual vehicle at the all-pairs consensus, landmark offset by the obs."""
    c = consensus(pairs, pairs.keys()) if pairs else None
    if c is not None:
        x_v0, P_v0 = c.x_vc, c.covariance
    else:
        x_v0, P_v0 = np.asarray(vehicle_prior[0], float), np.asarray(vehicle_prior[1], float)
    d = x_v0.size
    if bundle.bearing is not None:
        r0 = bundle.range.r if bundle.range is not None else 0.5 * r_max
        _, h_star = vmeas.bearing_vectors_2d(bundle.bearing.theta)
        offset = rotation2d(beta_hat).apply(r0 * h_star.ravel())
    else:
        offset = np.zeros(d)
    x = np.concatenate([x_v0 + offset, x_v0])
    P = np.zeros((2 * d, 2 * d))
    P[:d, :d] = 100.0 * np.eye(d)
    P[d:, d:] = P_v0
    return LandmarkPairState(landmark_id, FilterState(x, P, t))


def associate(case: int, bundle: SensorBundle, beta_hat: float,
              inputs: RobotInputs, pairs: dict[int, LandmarkPairState],
              gate_p: float = 0.95, r_max: float = vmeas.DEFAULT_R_MAX
              ) -> int | None:
    """Nearest pair by Mahalanobis distance of the case residual, or None if new."""
    vm = pair_measurement(case, bundle, beta_hat, inputs, r_max)
    if vm is None or not pairs:
        return None
    best_id, best_d2 = None, np.inf
    for lid in sorted(pairs):
        p = pairs[lid]
        z = vm.residual(p.state.x)
        S = vm.H @ p.state.P @ vm.H.T + vm.R
        d2 = float(z @ np.linalg.solve(S, z))
        if d2 < best_d2:
            best_id, best_d2 = lid, d2
    if best_d2 > chi2.ppf(gate_p, df=vm.rows):
        return None
    return best_id


@dataclass
class DunkNetwork:
    """All pair filters plus the shared heading and last consensus."""

    case: int = 2
    cfg: FilterConfig = field(default_factory=FilterConfig)
    r_max: float = vmeas.DEFAULT_R_MAX
    gamma_beta: float = 1.0
    beta_hat: float = 0.0
    vehicle_prior_x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    vehicle_prior_P: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(2))
    Q: np.ndarray | None = None
    pairs: dict[int, LandmarkPairState] = field(default_factory=dict)
    last_consensus: Consensus | None = None
    t: float = 0.0

    @property
    def vehicle_estimate(self) -> np.ndarray:
        c = consensus(self.pairs, self.pairs.keys())
        if c is None:
            return np.asarray(self.vehicle_prior_x, float)
        return c.x_vc


def pair_drift(dim: int, u_speed: float, beta_hat: float
               ) -> tuple[np.ndarray, np.ndarray]:
    """A = 0 and b = [0; u * forward(beta)] for one pair in global coordinates."""
    A = np.zeros((2 * dim, 2 * dim))
    b = np.zeros(2 * dim)
    b[dim:] = u_speed * heading_forward(beta_hat)
    return A, b


def dunk_step(net: DunkNetwork, u_speed: float, omega: float,
              observations: dict[int, SensorBundle]) -> Consensus | None:
    """One two-level tick: per-pair filter steps, then consensus and heading.

    Observed pairs get [case rows; feedback rows]; unobserved pairs get
    feedback-only (or prediction-only) steps.  The feedback uses the
    consensus computed at the end of the previous tick.
    """
    for lid, bundle in observations.items():
        if lid not in net.pairs:
            net.pairs[lid] = init_pair(
                lid, bundle, net.pairs, net.beta_hat,
                (net.vehicle_prior_x, net.vehicle_prior_P), net.r_max, net.t)

    body_u = np.array([0.0, u_speed])
    inputs = RobotInputs(u=body_u, omega=skew(omega))
    fb = feedback_measurement(net.last_consensus)

    # heading residue uses offsets at the sample instant, before the updates
    visible = [(lid, b) for lid, b in observations.items()
               if b.bearing is not None and lid in net.pairs]
    if visible:
        offsets = np.array([net.pairs[lid].x_landmark - net.pairs[lid].x_vehicle
                            for lid, _ in visible])
        thetas = np.array([b.bearing.theta for _, b in visible])
        beta_d = beta_d_closed_form_2d(offsets, np.zeros(2), thetas, net.beta_hat)
    else:
        beta_d = net.beta_hat
    for lid in sorted(net.pairs):
        pair = net.pairs[lid]
        bundle = observations.get(lid)
        if bundle is not None:
            r_hint = float(np.linalg.norm(pair.x_landmark - pair.x_vehicle)) or None
            case_vm = pair_measurement(net.case, bundle, net.beta_hat, inputs,
                                       net.r_max, r_hint)
        else:
            case_vm = None
        vm = vmeas.stack_measurements(case_vm, fb)
        A, b = pair_drift(pair.dim, u_speed, net.beta_hat)
        new_state = ode_step(pair.state, A, b, vm, net.Q, net.cfg)
        net.pairs[lid] = replace(
            pair, state=new_state,
            last_seen=new_state.t if bundle is not None else pair.last_seen)
    net.t += net.cfg.dt

    c = consensus(net.pairs, observations.keys())
    net.last_consensus = c
    net.beta_hat = track_heading(net.beta_hat, omega, beta_d,
                                 net.gamma_beta, net.cfg.dt)
    return c
