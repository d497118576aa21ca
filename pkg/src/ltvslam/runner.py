"""Scenario execution, metrics, and trace emission.

Runs any estimator mode over a scenario, writes a plot-ready trace CSV
plus a metrics JSON, ingests recorded observation logs, and provides the
rigid alignment used for trajectory error after map convergence.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import coop as coop_mod
from . import sim as sim_mod
from .core import RobotInputs, body_from_global, fit_contraction_rate, skew
from .dunk import DunkNetwork, dunk_step
from .kalman import DivergenceError, FilterConfig
from .noisecal import NoiseSpec
from .slam_global import init_global, step_global
from .slam_local import LocalMap

MODES = ("local", "global", "dunk", "coop-full", "coop-partial", "coop-robots")

BUILTIN_SCENARIOS = {
    "single-vehicle-2d": sim_mod.scenario_single_vehicle_2d,
    "coop-full": lambda: sim_mod.scenario_coop("full"),
    "coop-partial": lambda: sim_mod.scenario_coop("partial"),
    "coop-robots": lambda: sim_mod.scenario_coop("robots_only"),
}


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    mode: str = "local"
    case: int = 2
    scenario: str = "single-vehicle-2d"   # builtin name or JSON path
    log: str | None = None
    dt: float | None = None               # overrides the scenario dt when set
    seed: int | None = None
    out_dir: str | None = None
    gamma_beta: float = 1.0
    gamma_v: float = 1.0
    gamma_omega: float = 4.0
    r_max: float = 100.0
    duration: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.case not in (1, 2, 3, 4, 5):
            raise ConfigError(f"unknown case {self.case!r}")
        if self.mode == "coop-robots":
            self.case = 2  # robot-to-robot sightings carry bearing + range


@dataclass
class Metrics:
    landmark_errors: dict = field(default_factory=dict)  # id -> [(t, err_m)]
    vehicle_ate: float | None = None
    contraction_rate: float | None = None
    contraction_r2: float | None = None
    e_c: list = field(default_factory=list)
    e_h: list = field(default_factory=list)
    discrepancy: list = field(default_factory=list)       # [(t, max inter-map gap)]
    wall_time_per_step: float = 0.0
    diverged: bool = False

    def final_errors(self) -> dict:
        return {lid: series[-1][1] for lid, series in self.landmark_errors.items()
                if series}


def load_scenario(name_or_path: str) -> sim_mod.Scenario:
    if name_or_path in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[name_or_path]()
    if not os.path.exists(name_or_path):
        raise ConfigError(f"scenario {name_or_path!r} is neither builtin nor a file")
    with open(name_or_path) as f:
        return sim_mod.Scenario.from_json(f.read())


def align_procrustes(est: np.ndarray, true: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares rigid alignment (rotation + translation, no scale).

    Returns (R, t, rms) with R @ est + t best matching true.
    """
    est = np.atleast_2d(np.asarray(est, dtype=float))
    true = np.atleast_2d(np.asarray(true, dtype=float))
    if est.shape != true.shape or est.shape[0] < 2:
        raise ValueError("need >= 2 matched point pairs of equal shape")
    ce, ct = est.mean(axis=0), true.mean(axis=0)
    A = (true - ct).T @ (est - ce)
    U, _, Vt = np.linalg.svd(A)
    D = np.eye(A.shape[0])
    D[-1, -1] = np.sign(np.linalg.det(U @ Vt))
    R = U @ D @ Vt
    t = ct - R @ ce
    resid = (est @ R.T + t) - true
    return R, t, float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))


def ingest_log(path: str, format: str = "csv"):
    """Recorded observation log -> time-ordered flat records.

    Returns a list of dicts {t, robot, landmark, kind, value, sigma}.
    Raises ValueError with the line number on malformed or out-of-order rows.
    """
    records = []
    last_t: dict[int, float] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or (format == "csv" and lineno == 1 and line.startswith("t,")):
                continue
            try:
                if format == "csv":
                    t_s, robot_s, lm_s, kind, value_s, sigma_s = line.split(",")
                    rows = [{"t": float(t_s), "robot": int(robot_s),
                             "landmark": int(lm_s), "kind": kind,
                             "value": float(value_s), "sigma": float(sigma_s)}]
                elif format == "jsonl":
                    d = json.loads(line)
                    rows = [{"t": float(d["t"]), "robot": int(d["robot"]),
                             "landmark": int(d["landmark"]), "kind": k,
                             "value": float(v), "sigma": float(d["sigmas"][k])}
                            for k, v in d["values"].items() if v is not None]
                else:
                    raise ConfigError(f"unknown log format {format!r}")
            except ConfigError:
                raise
            except Exception as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
            for row in rows:
                prev = last_t.get(row["robot"])
                if prev is not None and row["t"] < prev - 1e-12:
                    raise ValueError(
                        f"{path}:{lineno}: timestamps out of order for robot "
                        f"{row['robot']} ({row['t']} < {prev})")
                last_t[row["robot"]] = row["t"]
                records.append(row)
    return records


# ---------------------------------------------------------------------------
# Mode runners
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _trace_row(t, kind, ident, est, true, P) -> str:
    est = list(np.asarray(est, float).ravel())
    true = (["", ""] if true is None else list(np.asarray(true, float).ravel()))
    cov = []
    if P is not None:
        P = np.asarray(P, float)
        cov = [P[i, j] for i in range(P.shape[0]) for j in range(i, P.shape[1])]
    cells = ([f"{t:.6f}", kind, str(ident)]
             + [_fmt(v) for v in est]
             + [v if v == "" else _fmt(v) for v in true]
             + [_fmt(v) for v in cov])
    return ",".join(cells)


def _run_local(scenario, cfg: RunConfig, trace: list) -> Metrics:
    (vid, vspec), = scenario.vehicles
    pose_fn = scenario.pose_fns()[vid]
    rng = np.random.default_rng(scenario.seed if cfg.seed is None else cfg.seed)
    dt = cfg.dt or scenario.dt
    fcfg = FilterConfig(dt=dt)
    lmap = LocalMap(case=cfg.case, cfg=fcfg, r_max=cfg.r_max)
    metrics = Metrics()
    n_steps = int(round((cfg.duration or scenario.duration) / dt))
    t0 = time.perf_counter()
    for step_i in range(n_steps):
        t = step_i * dt
        pose = pose_fn(t)
        observations = {}
        for lm in scenario.landmarks:
            if sim_mod.is_visible(scenario, vspec, pose, lm):
                bundle, _ = sim_mod.sense(pose, lm, scenario.noise, rng, robot=vid)
                observations[lm.id] = bundle
        inputs = RobotInputs(u=np.array([0.0, pose.u]), omega=skew(pose.omega))
        lmap.step(inputs, observations)
        pose_now = pose_fn(lmap.t)  # estimates live at the post-step instant
        T = body_from_global(pose_now.beta)
        for lm in scenario.landmarks:
            f = lmap.filters.get(lm.id)
            if f is None:
                continue
            x_true = T @ (lm.position - pose_now.position)
            err = float(np.linalg.norm(f.state.x - x_true))
            metrics.landmark_errors.setdefault(lm.id, []).append((lmap.t, err))
            trace.append(_trace_row(lmap.t, "landmark", lm.id, f.state.x,
                                    x_true, f.state.P))
    metrics.wall_time_per_step = (time.perf_counter() - t0) / max(n_steps, 1)
    _fit_contraction(metrics)
    return metrics


def _fit_contraction(metrics: Metrics) -> None:
    series = []
    for s in metrics.landmark_errors.values():
        if len(s) > len(series):
            series = s
    if len(series) < 20:
        return
    tail = series[len(series) // 5:]
    tail = [(t, e) for t, e in tail if e > 1e-12]
    if len(tail) >= 10:
        diag = fit_contraction_rate(tail)
        metrics.contraction_rate = diag.rate
        metrics.contraction_r2 = diag.r_squared


def _run_global(scenario, cfg: RunConfig, trace: list) -> Metrics:
    (vid, vspec), = scenario.vehicles
    pose_fn = scenario.pose_fns()[vid]
    rng = np.random.default_rng(scenario.seed if cfg.seed is None else cfg.seed)
    dt = cfg.dt or scenario.dt
    fcfg = FilterConfig(dt=dt)
    pose0 = pose_fn(0.0)
    gs = init_global(pose0.position, beta0=pose0.beta)
    metrics = Metrics()
    n_steps = int(round((cfg.duration or scenario.duration) / dt))
    est_path, true_path = [], []
    t0 = time.perf_counter()
    for step_i in range(n_steps):
        t = step_i * dt
        pose = pose_fn(t)
        observations = {}
        for lm in scenario.landmarks:
            if sim_mod.is_visible(scenario, vspec, pose, lm):
                bundle, _ = sim_mod.sense(pose, lm, scenario.noise, rng, robot=vid)
                observations[lm.id] = bundle
        gs = step_global(gs, pose.u, pose.omega, observations, case=cfg.case,
                         cfg=fcfg, gamma_beta=cfg.gamma_beta, r_max=cfg.r_max)
        for lm in scenario.landmarks:
            if lm.id in gs.landmark_ids:
                err = float(np.linalg.norm(gs.landmark(lm.id) - lm.position))
                metrics.landmark_errors.setdefault(lm.id, []).append(
                    (gs.state.t, err))
        true_now = pose_fn(gs.state.t).position
        est_path.append(gs.vehicle.copy())
        true_path.append(true_now)
        trace.append(_trace_row(gs.state.t, "vehicle", vid, gs.vehicle,
                                true_now, None))
    metrics.wall_time_per_step = (time.perf_counter() - t0) / max(n_steps, 1)
    if len(est_path) >= 2:
        _, _, metrics.vehicle_ate = align_procrustes(np.array(est_path),
                                                     np.array(true_path))
    _fit_contraction(metrics)
    return metrics


def _run_dunk(scenario, cfg: RunConfig, trace: list) -> Metrics:
    (vid, vspec), = scenario.vehicles
    pose_fn = scenario.pose_fns()[vid]
    rng = np.random.default_rng(scenario.seed if cfg.seed is None else cfg.seed)
    dt = cfg.dt or scenario.dt
    pose0 = pose_fn(0.0)
    # the start pose anchors the translation gauge (otherwise unobservable)
    net = DunkNetwork(case=cfg.case, cfg=FilterConfig(dt=dt), r_max=cfg.r_max,
                      gamma_beta=cfg.gamma_beta, beta_hat=pose0.beta,
                      vehicle_prior_x=pose0.position.copy(),
                      vehicle_prior_P=1e-2 * np.eye(2))
    metrics = Metrics()
    n_steps = int(round((cfg.duration or scenario.duration) / dt))
    t0 = time.perf_counter()
    for step_i in range(n_steps):
        t = step_i * dt
        pose = pose_fn(t)
        observations = {}
        for lm in scenario.landmarks:
            if sim_mod.is_visible(scenario, vspec, pose, lm):
                bundle, _ = sim_mod.sense(pose, lm, scenario.noise, rng, robot=vid)
                observations[lm.id] = bundle
        dunk_step(net, pose.u, pose.omega, observations)
        for lm in scenario.landmarks:
            pair = net.pairs.get(lm.id)
            if pair is not None:
                err = float(np.linalg.norm(pair.x_landmark - lm.position))
                metrics.landmark_errors.setdefault(lm.id, []).append((net.t, err))
                trace.append(_trace_row(net.t, "landmark", lm.id,
                                        pair.x_landmark, lm.position, None))
    metrics.wall_time_per_step = (time.perf_counter() - t0) / max(n_steps, 1)
    _fit_contraction(metrics)
    return metrics


def _coop_mode(cfg_mode: str) -> str:
    return {"coop-full": "full", "coop-partial": "partial",
            "coop-robots": "robots_only"}[cfg_mode]


def make_coop_maps(scenario, cfg: RunConfig) -> dict[int, coop_mod.RobotMap]:
    """Each robot starts its map in its own frame (vehicle prior at the origin)."""
    maps = {}
    for vid, _spec in scenario.vehicles:
        net = DunkNetwork(case=cfg.case, cfg=FilterConfig(dt=cfg.dt or scenario.dt),
                          r_max=cfg.r_max, gamma_beta=cfg.gamma_beta,
                          beta_hat=0.0,
                          vehicle_prior_x=np.zeros(2),
                          vehicle_prior_P=100.0 * np.eye(2))
        maps[vid] = coop_mod.RobotMap(robot_id=vid, net=net,
                                      gamma_v=cfg.gamma_v,
                                      gamma_omega=cfg.gamma_omega,
                                      gamma_beta=cfg.gamma_beta)
    return maps


def _run_coop(scenario, cfg: RunConfig, trace: list) -> Metrics:
    mode = _coop_mode(cfg.mode)
    rng = np.random.default_rng(scenario.seed if cfg.seed is None else cfg.seed)
    dt = cfg.dt or scenario.dt
    pose_fns = scenario.pose_fns()
    specs = dict(scenario.vehicles)
    maps = make_coop_maps(scenario, cfg)
    metrics = Metrics()
    n_steps = int(round((cfg.duration or scenario.duration) / dt))
    medium = None
    t0 = time.perf_counter()
    for step_i in range(n_steps):
        t = step_i * dt
        poses = {vid: pose_fns[vid](t) for vid in pose_fns}
        ticks = {}
        if mode == "robots_only":
            robot_obs = sim_mod.observe_robots(poses, scenario.noise, rng)
            for vid, pose in poses.items():
                ticks[vid] = coop_mod.RobotTick(
                    u=pose.u, omega_m=pose.omega,
                    observations=robot_obs[vid]["bundles"],
                    heading_diffs=robot_obs[vid]["heading_diffs"],
                    speeds=robot_obs[vid]["speeds"])
        else:
            for vid, pose in poses.items():
                observations = {}
                for lm in scenario.landmarks:
                    if sim_mod.is_visible(scenario, specs[vid], pose, lm):
                        bundle, _ = sim_mod.sense(pose, lm, scenario.noise,
                                                  rng, robot=vid)
                        observations[lm.id] = bundle
                ticks[vid] = coop_mod.RobotTick(u=pose.u, omega_m=pose.omega,
                                                observations=observations)
        medium = coop_mod.coop_step(maps, ticks, mode, medium)
        tick_t = (step_i + 1) * dt
        metrics.e_c.append((tick_t, medium.e_c))
        metrics.e_h.append((tick_t, medium.e_h))
        metrics.discrepancy.append((tick_t, map_discrepancy(maps)))
        if step_i % 10 == 0:
            for vid, m in maps.items():
                for k, x in m.landmark_positions().items():
                    trace.append(_trace_row(tick_t, f"map{vid}", k, x, None, None))
    metrics.wall_time_per_step = (time.perf_counter() - t0) / max(n_steps, 1)
    return metrics


def map_discrepancy(maps: dict[int, coop_mod.RobotMap]) -> float:
    """Largest inter-robot disagreement on any commonly mapped landmark."""
    ids = sorted(maps)
    worst = 0.0
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            pa = maps[ids[a]].landmark_positions()
            pb = maps[ids[b]].landmark_positions()
            for k in set(pa) & set(pb):
                worst = max(worst, float(np.linalg.norm(pa[k] - pb[k])))
    return worst


def run(cfg: RunConfig) -> Metrics:
    """Execute a configured run; write traces + metrics if an out dir is set."""
    scenario = load_scenario(cfg.scenario)
    trace: list[str] = []
    runners = {"local": _run_local, "global": _run_global, "dunk": _run_dunk,
               "coop-full": _run_coop, "coop-partial": _run_coop,
               "coop-robots": _run_coop}
    try:
        metrics = runners[cfg.mode](scenario, cfg, trace)
    except DivergenceError:
        metrics = Metrics(diverged=True)
        raise
    finally:
        if cfg.out_dir:
            os.makedirs(cfg.out_dir, exist_ok=True)
            with open(os.path.join(cfg.out_dir, "trace.csv"), "w") as f:
                f.write("t,entity_kind,id,est...,true...,cov_upper...\n")
                f.write("\n".join(trace))
                f.write("\n")
    if cfg.out_dir:
        payload = {
            "mode": cfg.mode, "case": cfg.case, "scenario": scenario.name,
            "final_errors_m": metrics.final_errors(),
            "vehicle_ate_m": metrics.vehicle_ate,
            "contraction_rate": metrics.contraction_rate,
            "contraction_r2": metrics.contraction_r2,
            "final_e_c": metrics.e_c[-1][1] if metrics.e_c else None,
            "final_e_h": metrics.e_h[-1][1] if metrics.e_h else None,
            "final_discrepancy_m": (metrics.discrepancy[-1][1]
                                    if metrics.discrepancy else None),
            "wall_time_per_step_s": metrics.wall_time_per_step,
        }
        with open(os.path.join(cfg.out_dir, "metrics.json"), "w") as f:
            json.dump(payload, f, indent=2, default=float)
    return metrics
