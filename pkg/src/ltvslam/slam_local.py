"""Per-landmark SLAM in the robot-fixed frame.

Each landmark gets its own small filter over its relative position;
filters are completely decoupled, so the per-step cost is linear in the
number of landmarks and update order is irrelevant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import vmeas
from .core import FilterState, RobotInputs
from .kalman import FilterConfig, step


@dataclass(frozen=True)
class SensorBundle:
    """One landmark's raw readings for a single instant.

    Which fields are set determines nothing by itself; the consumer picks
    the rows for its configured case.
    """

    bearing: vmeas.BearingObs | None = None
    range: vmeas.RangeObs | None = None
    rate: vmeas.BearingRateObs | None = None
    ttc: vmeas.TimeToContactObs | None = None
    doppler: vmeas.DopplerObs | None = None


def build_measurement(case: int, bundle: SensorBundle, inputs: RobotInputs,
                      r_max: float = vmeas.DEFAULT_R_MAX,
                      r_hint: float | None = None
                      ) -> vmeas.VirtualMeasurement | None:
    """Virtual measurement for the given sensor case, or None if unusable.

    ``r_hint`` is an optional current range estimate used to sharpen
    noise calibration in the range-free cases.
    """
    if case == 1:
        return vmeas.case1(bundle.bearing, r_max=r_max)
    if case == 2:
        return vmeas.case2(bundle.bearing, bundle.range, r_max=r_max)
    if case == 3:
        return vmeas.case3(bundle.bearing, bundle.rate, inputs, r_max=r_max,
                           r_hint=r_hint)
    if case == 4:
        return vmeas.case4(bundle.bearing, bundle.ttc, inputs, r_max=r_max)
    if case == 5:
        return vmeas.case5(bundle.doppler, inputs)
    raise ValueError(f"unknown case {case}")


@dataclass(frozen=True)
class LocalLandmarkFilter:
    """Relative-position filter for one landmark."""

    landmark_id: int
    state: FilterState
    case: int
    last_seen: float = float("-inf")

    def __post_init__(self):
        if self.case not in (1, 2, 3, 4, 5):
            raise ValueError(f"unknown case {self.case}")


def init_landmark(landmark_id: int, case: int,
                  bundle: SensorBundle | None = None,
                  r0: float | None = None,
                  P0: np.ndarray | None = None,
                  r_max: float = vmeas.DEFAULT_R_MAX,
                  dim: int = 2, t: float = 0.0) -> LocalLandmarkFilter:
    """Prior for a newly seen landmark.

    Bearing cases start at r0 along the measured bearing direction with
    r0 defaulting to half the max range; Case V (no bearing) starts at
    the origin with a wide prior.
    """
    if case == 5 or bundle is None or bundle.bearing is None:
        x0 = np.zeros(dim)
        P = 100.0 * np.eye(dim) if P0 is None else P0
        return LocalLandmarkFilter(landmark_id, FilterState(x0, P, t), case)
    bearing = bundle.bearing
    dim = bearing.dim
    if r0 is None:
        if case in (2, 5) and bundle.range is not None:
            r0 = bundle.range.r
        else:
            r0 = 0.5 * r_max
    _, h_star = (vmeas.bearing_vectors_2d(bearing.theta) if dim == 2
                 else vmeas.bearing_vectors_3d(bearing.theta, bearing.phi))
    x0 = r0 * h_star.ravel()
    if P0 is None:
        sigma0 = bundle.range.sigma_r if (case == 2 and bundle.range is not None
                                          and bundle.range.sigma_r > 0) else 0.5 * r_max
        P0 = max(sigma0, 0.1) ** 2 * np.eye(dim)
    return LocalLandmarkFilter(landmark_id, FilterState(x0, P0, t), case)


def update_landmark(f: LocalLandmarkFilter, inputs: RobotInputs,
                    bundle: SensorBundle | None,
                    cfg: FilterConfig = FilterConfig(),
                    r_max: float = vmeas.DEFAULT_R_MAX) -> LocalLandmarkFilter:
    """One step: case-built correction when observed, pure prediction when not."""
    r_hint = float(np.linalg.norm(f.state.x)) or None
    vm = (None if bundle is None
          else build_measurement(f.case, bundle, inputs, r_max, r_hint))
    new_state = step(f.state, inputs, vm, cfg)
    last_seen = new_state.t if bundle is not None else f.last_seen
    return replace(f, state=new_state, last_seen=last_seen)


class LocalMap:
    """Mutable collection of decoupled landmark filters."""

    def __init__(self, case: int, cfg: FilterConfig = FilterConfig(),
                 r_max: float = vmeas.DEFAULT_R_MAX, dim: int = 2):
        self.case = case
        self.cfg = cfg
        self.r_max = r_max
        self.dim = dim
        self.filters: dict[int, LocalLandmarkFilter] = {}
        self.t = 0.0

    def step(self, inputs: RobotInputs,
             observations: dict[int, SensorBundle]) -> None:
        """Advance every filter by dt; initialize filters for new ids."""
        for lid, bundle in observations.items():
            if lid not in self.filters:
                self.filters[lid] = init_landmark(
                    lid, self.case, bundle, r_max=self.r_max,
                    dim=self.dim, t=self.t)
        for lid, f in self.filters.items():
            self.filters[lid] = update_landmark(
                f, inputs, observations.get(lid), self.cfg, self.r_max)
        self.t += self.cfg.dt

    def estimates(self) -> dict[int, np.ndarray]:
        return {lid: f.state.x for lid, f in self.filters.items()}
