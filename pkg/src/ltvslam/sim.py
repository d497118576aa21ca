"""Synthetic worlds and sensor synthesis.

Builds ground-truth trajectories, derives every observable analytically
from the relative kinematics, adds Gaussian sensor noise, and packages
the result as per-tick sensor bundles plus flat observation records for
logging.  All randomness flows from the scenario seed, so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import vmeas
from .core import RobotInputs, body_from_global, skew, wrap_angle
from .noisecal import NoiseSpec
from .slam_local import SensorBundle


@dataclass(frozen=True)
class Pose:
    """Ground-truth vehicle sample: global position, heading, body twist."""

    t: float
    position: np.ndarray
    beta: float
    u: float          # forward speed, m/s
    omega: float      # yaw rate, rad/s


@dataclass(frozen=True)
class Landmark:
    id: int
    position: np.ndarray
    diameter: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class CircleSpec:
    """Circular trajectory: center, radius, signed angular rate, start point."""

    center: tuple
    radius: float
    omega: float
    x0: tuple
    beta0: float = 0.0  # used only when omega == 0 (stationary vehicle)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be > 0")


def circle_trajectory(center, radius: float, omega_m: float, x0, beta0: float = 0.0):
    """Pose-at-time function for a vehicle circling at constant rate.

    The start point fixes the phase; the heading is tangent to the circle
    in the direction of travel, so the emitted (u, omega) inputs are
    exactly consistent with the positions.
    """
    center = np.asarray(center, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    offset = x0 - center
    if abs(np.linalg.norm(offset) - radius) > 1e-6 * max(radius, 1.0):
        raise ValueError("start point is not on the circle")
    alpha0 = math.atan2(offset[1], offset[0])
    speed = radius * abs(omega_m)

    def pose(t: float) -> Pose:
        if omega_m == 0.0:
            return Pose(t=t, position=x0.copy(), beta=wrap_angle(beta0),
                        u=0.0, omega=0.0)
        alpha = alpha0 + omega_m * t
        position = center + radius * np.array([math.cos(alpha), math.sin(alpha)])
        # forward direction (-sin beta, cos beta) must equal the travel tangent
        beta = alpha if omega_m > 0 else alpha + math.pi
        return Pose(t=t, position=position, beta=wrap_angle(beta),
                    u=speed, omega=omega_m)

    return pose


@dataclass(frozen=True)
class ObsRecord:
    """Flat log row bundle: one landmark sighting with truth attached."""

    t: float
    robot: int
    landmark: int
    values: dict           # noisy observables by name
    truth: dict            # noise-free observables by name
    sigmas: dict


@dataclass
class Scenario:
    """A complete synthetic world, JSON-serializable."""

    name: str
    dimension: int = 2
    landmarks: list = field(default_factory=list)      # of Landmark
    vehicles: list = field(default_factory=list)       # of (id, CircleSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    visibility: str = "unlimited"                      # or "quadrant", "range"
    r_visible: float = 100.0
    duration: float = 30.0
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    def pose_fns(self) -> dict:
        return {vid: circle_trajectory(spec.center, spec.radius, spec.omega,
                                       spec.x0, spec.beta0)
                for vid, spec in self.vehicles}

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "dimension": self.dimension,
            "landmarks": [{"id": lm.id, "position_m": list(map(float, lm.position)),
                           "diameter_m": lm.diameter} for lm in self.landmarks],
            "vehicles": [{"id": vid, **asdict(spec)} for vid, spec in self.vehicles],
            "noise": asdict(self.noise),
            "visibility": self.visibility,
            "r_visible_m": self.r_visible,
            "duration_s": self.duration,
            "dt_s": self.dt,
            "seed": self.seed,
        }, indent=2)

    @staticmethod
    def from_json(text: str) -> "Scenario":
        d = json.loads(text)
        return Scenario(
            name=d["name"], dimension=d["dimension"],
            landmarks=[Landmark(lm["id"], lm["position_m"], lm["diameter_m"])
                       for lm in d["landmarks"]],
            vehicles=[(v["id"], CircleSpec(tuple(v["center"]), v["radius"],
                                           v["omega"], tuple(v["x0"]), v["beta0"]))
                      for v in d["vehicles"]],
            noise=NoiseSpec(**d["noise"]),
            visibility=d["visibility"], r_visible=d["r_visible_m"],
            duration=d["duration_s"], dt=d["dt_s"], seed=d["seed"])


def is_visible(scenario: Scenario, vehicle_spec: CircleSpec, pose: Pose,
               landmark: Landmark) -> bool:
    """Pure visibility rule: unlimited, range-limited, or quadrant-limited."""
    if scenario.visibility == "unlimited":
        return True
    if scenario.visibility == "range":
        return float(np.linalg.norm(landmark.position - pose.position)) \
            <= scenario.r_visible
    if scenario.visibility == "quadrant":
        center = np.asarray(vehicle_spec.center, dtype=float)
        return bool(np.all(landmark.position * center >= 0.0))
    raise ValueError(f"unknown visibility rule {scenario.visibility!r}")


def sense(pose: Pose, landmark: Landmark, noise: NoiseSpec,
          rng: np.random.Generator, robot: int = 0
          ) -> tuple[SensorBundle, ObsRecord]:
    """All observables of one landmark from one pose, noised per the declared sigmas."""
    x_body = body_from_global(pose.beta) @ (landmark.position - pose.position)
    inputs = RobotInputs(u=np.array([0.0, pose.u]), omega=skew(pose.omega))
    true = vmeas.observe_true(x_body, inputs, diameter=landmark.diameter)

    theta = true.theta + rng.normal(0.0, noise.sigma_theta)
    r = max(true.r + rng.normal(0.0, noise.sigma_r), 0.0)
    theta_dot = true.theta_dot + rng.normal(0.0, noise.sigma_theta_dot)
    r_dot = true.r_dot + rng.normal(0.0, noise.sigma_r_dot)
    alpha = true.alpha + rng.normal(0.0, noise.sigma_alpha)
    # the visual-angle error enters tau multiplicatively (tau ~ alpha/alphadot)
    tau = None
    if true.tau is not None and true.alpha and true.alpha > 0:
        tau = true.tau * max(alpha / true.alpha, 1e-9)

    bundle = SensorBundle(
        bearing=vmeas.BearingObs(theta=theta, sigma_theta=noise.sigma_theta),
        range=vmeas.RangeObs(r=r, sigma_r=noise.sigma_r),
        rate=vmeas.BearingRateObs(theta_dot=theta_dot,
                                  sigma_theta_dot=noise.sigma_theta_dot),
        ttc=None if tau is None else vmeas.TimeToContactObs(
            tau=max(tau, 1e-9), alpha=alpha, d=landmark.diameter,
            sigma_alpha=noise.sigma_alpha),
        doppler=vmeas.DopplerObs(r=r, r_dot=r_dot, sigma_r=noise.sigma_r,
                                 sigma_r_dot=noise.sigma_r_dot))
    def _floats(d):
        return {k: None if v is None else float(v) for k, v in d.items()}

    record = ObsRecord(
        t=pose.t, robot=robot, landmark=landmark.id,
        values=_floats({"theta": theta, "r": r, "theta_dot": theta_dot,
                        "r_dot": r_dot, "alpha": alpha, "tau": tau}),
        truth=_floats({"theta": true.theta, "r": true.r,
                       "theta_dot": true.theta_dot, "r_dot": true.r_dot,
                       "alpha": true.alpha, "tau": true.tau}),
        sigmas={"theta": noise.sigma_theta, "r": noise.sigma_r,
                "theta_dot": noise.sigma_theta_dot, "r_dot": noise.sigma_r_dot,
                "alpha": noise.sigma_alpha, "tau": 0.0})
    return bundle, record


def write_obs_csv(records: list[ObsRecord], path: str) -> None:
    """Long-format CSV stream: t, robot, landmark, kind, value, sigma."""
    with open(path, "w") as f:
        f.write("t,robot,landmark,kind,value,sigma\n")
        for rec in records:
            for kind, value in rec.values.items():
                if value is None:
                    continue
                f.write(f"{rec.t:.6f},{rec.robot},{rec.landmark},"
                        f"{kind},{value!r},{rec.sigmas[kind]!r}\n")


def write_obs_jsonl(records: list[ObsRecord], path: str) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps({"t": rec.t, "robot": rec.robot,
                                "landmark": rec.landmark,
                                "values": rec.values,
                                "sigmas": rec.sigmas}) + "\n")


# ---------------------------------------------------------------------------
# Canonical scenarios
# ---------------------------------------------------------------------------

def scenario_single_vehicle_2d() -> Scenario:
    """Three landmarks and a circling vehicle with the standard noise levels.

    Noise: sigma_theta 2 deg, sigma_theta_dot 5 deg/s, sigma_r 2 m,
    sigma_alpha 0.5 deg; landmark diameter 2 m.  The layout keeps every
    landmark within a few meters of the trajectory so the bearing-rate
    readings keep a healthy signal-to-noise ratio (sigma_theta_dot is
    5 deg/s, so rate rows carry little information at long range).
    """
    deg = math.pi / 180.0
    return Scenario(
        name="single-vehicle-2d",
        landmarks=[Landmark(1, (2.5, 2.5)), Landmark(2, (-3.0, 1.5)),
                   Landmark(3, (2.0, -3.0))],
        vehicles=[(0, CircleSpec(center=(0.0, 0.0), radius=5.0, omega=0.5,
                                 x0=(5.0, 0.0)))],
        noise=NoiseSpec(sigma_theta=2 * deg, sigma_theta_dot=5 * deg,
                        sigma_r=2.0, sigma_r_dot=0.2, sigma_alpha=0.5 * deg),
        duration=30.0, dt=0.01, seed=7)


#: The 13-landmark grid and 4 circling vehicles of the cooperative scenario.
COOP_LANDMARKS = [(-30.0, 30.0), (0.0, 30.0), (30.0, 30.0),
                  (-30.0, 0.0), (0.0, 0.0), (30.0, 0.0),
                  (-30.0, -30.0), (0.0, -30.0), (30.0, -30.0),
                  (0.0, 10.0), (0.0, -10.0), (-20.0, 0.0), (20.0, 0.0)]

_SQ2, _SQ3 = math.sqrt(2.0), math.sqrt(3.0)
COOP_VEHICLES = [
    # (center, omega_m, x0, printed initial heading)
    ((-15.0, 15.0), 1.0, (-15.0, 0.0), 0.0),
    ((15.0, 15.0), 1.5, (0.0, 15.0), 3 * math.pi / 2),
    ((-15.0, -15.0), -1.0, (-7.5, -15.0 - 7.5 * _SQ3), 7 * math.pi / 6),
    ((15.0, -15.0), 0.5, (15.0 + 7.5 * _SQ2, -15.0 + 7.5 * _SQ2), 3 * math.pi / 4),
]
COOP_RADIUS = 15.0


def scenario_coop(mode: str = "full") -> Scenario:
    """The 4-vehicle cooperative scenario in one of the three modes.

    ``full`` gives unlimited visibility; ``partial`` restricts each
    vehicle to landmarks in its circle center's (closed) quadrant;
    ``robots_only`` drops the landmarks entirely (vehicles observe each
    other; see :func:`run_coop_observations`).  Headings are stored as
    printed (measured from +x1); the trajectory generator derives the
    internal heading from the circle geometry.
    """
    if mode not in ("full", "partial", "robots_only"):
        raise ValueError(f"unknown coop mode {mode!r}")
    landmarks = ([] if mode == "robots_only" else
                 [Landmark(k + 1, pos) for k, pos in enumerate(COOP_LANDMARKS)])
    vehicles = [(i + 1, CircleSpec(center=c, radius=COOP_RADIUS, omega=w,
                                   x0=x0, beta0=b0))
                for i, (c, w, x0, b0) in enumerate(COOP_VEHICLES)]
    return Scenario(
        name=f"coop-{mode}", landmarks=landmarks, vehicles=vehicles,
        noise=NoiseSpec(),
        visibility="quadrant" if mode == "partial" else "unlimited",
        duration=20.0, dt=0.01, seed=13)


def observe_robots(poses: dict[int, Pose], noise: NoiseSpec,
                   rng: np.random.Generator
                   ) -> dict[int, dict]:
    """Robots-only sensing: each robot sees every other robot.

    Returns per-robot dicts with bearing/range bundles, relative heading
    differences theta_ij = beta_j - beta_i, and communicated speeds.
    """
    out = {}
    for i, pi in poses.items():
        bundles, diffs, speeds = {}, {}, {}
        for j, pj in poses.items():
            if j == i:
                continue
            lm = Landmark(j, pj.position, diameter=1.0)
            bundle, _ = sense(pi, lm, noise, rng, robot=i)
            bundles[j] = bundle
            diffs[j] = wrap_angle(pj.beta - pi.beta
                                  + rng.normal(0.0, noise.sigma_theta))
            speeds[j] = pj.u
        out[i] = {"bundles": bundles, "heading_diffs": diffs, "speeds": speeds}
    return out
