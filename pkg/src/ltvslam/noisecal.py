"""Noise porting for virtual measurements.

Analytic bias and variance of the noise after rewriting angular sensor
errors as Cartesian constraint errors, the r* upper-bound rule, Monte
Carlo calibration for rows with no closed form, and the R-matrix
assembly policy shared by all builders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

#: Absolute variance floor so assembled R matrices stay positive definite.
VAR_FLOOR = 1e-12

#: Floors applied when a sensor is declared noise free.  The filter R is a
#: design parameter; a strictly zero variance would make the continuous
#: gain unbounded.
SIGMA_THETA_FLOOR = 2e-3   # rad
SIGMA_RANGE_FLOOR = 5e-2   # m
SIGMA_RATE_FLOOR = 2e-3    # rad/s


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor noise standard deviations, all in base units (rad, m, s)."""

    sigma_theta: float = 0.0
    sigma_phi: float = 0.0
    sigma_theta_dot: float = 0.0
    sigma_phi_dot: float = 0.0
    sigma_r: float = 0.0
    sigma_r_dot: float = 0.0
    sigma_alpha: float = 0.0

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class PortedNoise:
    """Empirical or analytic statistics of a virtual-measurement noise."""

    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray = field(default=None)  # full cross-covariance

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if np.any(var < 0):
            raise ValueError("variances must be >= 0")
        cov = self.covariance
        if cov is None:
            cov = np.diag(var)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)
        object.__setattr__(self, "covariance", np.asarray(cov, dtype=float))


# ---------------------------------------------------------------------------
# Analytic bias formulas
# ---------------------------------------------------------------------------

def bias_bearing_2d(sigma_theta: float) -> float:
    """Mean of the tangential noise 0 - h x under bearing noise: exactly zero."""
    if sigma_theta < 0:
        raise ValueError("sigma must be >= 0")
    return 0.0


def bias_range_2d(sigma_theta: float, r: float) -> float:
    """Mean of the radial noise r - h* x: (1 - exp(-sigma^2/2)) r."""
    if sigma_theta < 0:
        raise ValueError("sigma must be >= 0")
    return (1.0 - math.exp(-sigma_theta**2 / 2.0)) * r


def bias_3d(case: int, sigma_theta: float, sigma_phi: float, r: float,
            phi: float, theta_dot: float = 0.0, phi_dot: float = 0.0,
            u3: float = 0.0, tau: float = 0.0) -> np.ndarray:
    """Closed-form 3D noise means for Cases II, III and IV.

    Rows follow the virtual-measurement row order of the case: the two
    tangential rows first, then the range / rate rows.
    """
    a = math.exp(-sigma_phi**2 / 2.0)
    b = math.exp(-(sigma_theta**2 + sigma_phi**2) / 2.0)
    e_t = math.exp(-sigma_theta**2 / 2.0)
    cp, sp = math.cos(phi), math.sin(phi)
    row2 = -r * (a - b) * cp * sp
    if case == 2:
        return np.array([0.0, row2, r * (1.0 - a * sp**2 - b * cp**2)])
    if case == 3:
        row3 = theta_dot * (e_t - a) * r * sp**2 + (e_t - b) * r * cp**2
        row4 = (a - b) * (u3 * cp - phi_dot * r * sp**2)
        return np.array([0.0, row2, row3, row4])
    if case == 4:
        row3 = (a - b) * (tau * u3 * sp - r * sp**2)
        return np.array([0.0, row2, row3])
    raise ValueError(f"no 3D bias formula for case {case}")


def variance_bounds(sigma_theta: float, r_star: float) -> dict[str, float]:
    """Upper bounds on the ported noise variances for bearing constraints."""
    if r_star <= 0:
        raise ValueError("r_star must be > 0")
    return {
        "tangential": sigma_theta**2 * r_star**2,
        "radial": (sigma_theta**4 / 4.0) * r_star**2,
        "cross": 0.0,
    }


def r_star(r_measured: float | None, sigma_r: float, r_max: float) -> float:
    """Known range bound used when filling R: min(r + 3 sigma_r, r_max).

    Bearing-only cases pass r_measured=None and get r_max.
    """
    if r_max <= 0:
        raise ValueError("r_max must be > 0")
    if r_measured is None:
        return r_max
    if r_measured < 0 or sigma_r < 0:
        raise ValueError("range inputs must be >= 0")
    return min(r_measured + 3.0 * sigma_r, r_max)


# ---------------------------------------------------------------------------
# Monte Carlo porting
# ---------------------------------------------------------------------------

def monte_carlo_port(case: int, x_true: np.ndarray, inputs, noise: NoiseSpec,
                     n: int = 10_000, seed: int = 0,
                     diameter: float = 2.0, r_max: float = 100.0) -> PortedNoise:
    """Empirical mean/variance of y - H x_true for one case under sensor noise.

    Samples the raw sensor readings around their exact values, builds the
    virtual measurement for each sample, and ports the statistics of the
    residual at the true state.  Deterministic for a fixed seed.
    """
    from . import vmeas

    if n < 100:
        raise ValueError("need at least 100 samples")
    x_true = np.asarray(x_true, dtype=float).ravel()
    true = vmeas.observe_true(x_true, inputs, diameter=diameter)
    rng = np.random.default_rng(seed)
    is3d = x_true.size == 3
    residuals = []
    for _ in range(n):
        theta = true.theta + rng.normal(0.0, noise.sigma_theta)
        phi = None
        if is3d:
            phi = true.phi + rng.normal(0.0, noise.sigma_phi)
        bearing = vmeas.BearingObs(theta=theta, phi=phi,
                                   sigma_theta=noise.sigma_theta,
                                   sigma_phi=noise.sigma_phi)
        if case == 1:
            vm = vmeas.case1(bearing, r_max=r_max)
        elif case == 2:
            r = true.r + rng.normal(0.0, noise.sigma_r)
            vm = vmeas.case2(bearing, vmeas.RangeObs(max(r, 0.0), noise.sigma_r),
                             r_max=r_max)
        elif case == 3:
            rate = vmeas.BearingRateObs(
                theta_dot=true.theta_dot + rng.normal(0.0, noise.sigma_theta_dot),
                phi_dot=None if not is3d
                else true.phi_dot + rng.normal(0.0, noise.sigma_phi_dot),
                sigma_theta_dot=noise.sigma_theta_dot,
                sigma_phi_dot=noise.sigma_phi_dot)
            vm = vmeas.case3(bearing, rate, inputs, r_max=r_max)
        elif case == 4:
            alpha = true.alpha + rng.normal(0.0, noise.sigma_alpha)
            tau = true.tau * max(alpha / true.alpha, 1e-9)
            vm = vmeas.case4(bearing,
                             vmeas.TimeToContactObs(tau=max(tau, 1e-9),
                                                    alpha=alpha, d=diameter,
                                                    sigma_alpha=noise.sigma_alpha),
                             inputs, r_max=r_max)
        elif case == 5:
            dop = vmeas.DopplerObs(
                r=max(true.r + rng.normal(0.0, noise.sigma_r), 0.0),
                r_dot=true.r_dot + rng.normal(0.0, noise.sigma_r_dot),
                sigma_r=noise.sigma_r, sigma_r_dot=noise.sigma_r_dot)
            vm = vmeas.case5(dop, inputs)
            if vm is None:
                raise ValueError("Case V undefined for a stationary robot")
        else:
            raise ValueError(f"unknown case {case}")
        residuals.append(vm.residual(x_true))
    res = np.asarray(residuals)
    return PortedNoise(mean=res.mean(axis=0), variance=res.var(axis=0),
                       covariance=np.cov(res.T) if res.shape[1] > 1
                       else np.array([[res.var()]]))


# ---------------------------------------------------------------------------
# R assembly
# ---------------------------------------------------------------------------

def _floored(sigma: float, floor: float) -> float:
    return max(sigma, floor)


def tangential_R(bearing, rstar: float) -> np.ndarray:
    """Diagonal R block for the tangential rows: bounded by sigma^2 r*^2."""
    st = _floored(bearing.sigma_theta, SIGMA_THETA_FLOOR)
    if bearing.dim == 2:
        return np.array([[st**2 * rstar**2]])
    sp = _floored(bearing.sigma_phi, SIGMA_THETA_FLOOR)
    return np.diag([st**2 * rstar**2, sp**2 * rstar**2])


def block_diag_R(*blocks: np.ndarray) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    R = np.zeros((n, n))
    k = 0
    for b in blocks:
        R[k:k + b.shape[0], k:k + b.shape[0]] = b
        k += b.shape[0]
    return R


@lru_cache(maxsize=4096)
def _rate_row_var_cached(dim: int, theta: float, phi: float, theta_dot: float,
                         phi_dot: float, u_key: tuple, omega_key: tuple,
                         st: float, sp: float, std: float, spd: float,
                         rstar: float) -> tuple:
    """Monte Carlo variance of the Case III rate rows, cached per bucket.

    The residual y - Hx of the velocity rows is evaluated directly from
    the row formulas at a canonical state on the measured ray, so no
    measurement object (and hence no R) is needed.
    """
    from . import vmeas
    from .core import skew

    rng = np.random.default_rng(20181224)
    n = 512
    u = np.array(u_key)
    Om = skew(*omega_key).matrix
    if dim == 2:
        x = rstar * np.array([math.sin(theta), math.cos(theta)])
    else:
        cp = math.cos(phi)
        x = rstar * np.array([cp * math.sin(theta), cp * math.cos(theta),
                              math.sin(phi)])
    rows = 1 if dim == 2 else 2
    res = np.zeros((n, rows))
    for i in range(n):
        th = theta + rng.normal(0.0, st)
        td = theta_dot + rng.normal(0.0, std)
        if dim == 2:
            h, h_star = vmeas.bearing_vectors_2d(th)
            D = td * h_star
        else:
            ph = phi + rng.normal(0.0, sp)
            pd = phi_dot + rng.normal(0.0, spd)
            h, h_star = vmeas.bearing_vectors_3d(th, ph)
            D = np.vstack([td * np.array([[math.sin(th), math.cos(th), 0.0]]),
                           pd * h_star])
        res[i] = (-(h @ u)) - (D + h @ Om) @ x
    return tuple(res.var(axis=0))


def rate_row_R(bearing, rate, inputs, rstar: float) -> np.ndarray:
    """Monte Carlo-calibrated variance for the Case III velocity rows.

    These rows have no simple closed-form variance; the calibration is
    cached on a coarse bucket of the geometry so repeated calls in a
    simulation are cheap and deterministic.
    """
    st = _floored(bearing.sigma_theta, SIGMA_THETA_FLOOR)
    std = _floored(rate.sigma_theta_dot, SIGMA_RATE_FLOOR)
    sp = _floored(bearing.sigma_phi, SIGMA_THETA_FLOOR)
    spd = _floored(rate.sigma_phi_dot, SIGMA_RATE_FLOOR)
    q = lambda v, step: round(float(v) / step) * step
    var = _rate_row_var_cached(
        bearing.dim,
        q(bearing.theta, 0.1), q(bearing.phi or 0.0, 0.1),
        q(rate.theta_dot, 0.02), q(rate.phi_dot or 0.0, 0.02),
        tuple(q(v, 0.25) for v in inputs.u),
        tuple(q(v, 0.05) for v in inputs.omega.omega),
        st, sp, std, spd, q(rstar, 1.0) or 1.0)
    return np.diag([max(v, VAR_FLOOR) for v in var])


def ttc_row_R(ttc, radial_speed: float, sigma_u: float = 0.01) -> np.ndarray:
    """Conservative variance for the time-to-contact radial row.

    Propagates the visual-angle noise through tau = alpha/alphadot and the
    speed uncertainty through y = |tau h* u|.
    """
    y = abs(ttc.tau * radial_speed)
    if ttc.alpha and ttc.alpha > 0:
        rel_tau = _floored(ttc.sigma_alpha, SIGMA_THETA_FLOOR) / ttc.alpha
    else:
        rel_tau = 0.05
    var = (rel_tau * y)**2 + (ttc.tau * sigma_u)**2
    return np.array([[max(var, SIGMA_RANGE_FLOOR**2)]])


def assemble_R(case: int, bearing=None, rng_obs=None, rate=None, ttc=None,
               doppler=None, inputs=None, r_max: float = 100.0) -> np.ndarray:
    """R for a case from the shared policy: diagonal, cross-covariance zero.

    Case II's range row uses the sensor variance directly; Case III rate
    rows are Monte Carlo-calibrated; Case IV uses the conservative
    time-to-contact bound.
    """
    if case == 1:
        return tangential_R(bearing, r_star(None, 0.0, r_max))
    if case == 2:
        rs = r_star(rng_obs.r, rng_obs.sigma_r, r_max)
        return block_diag_R(
            tangential_R(bearing, rs),
            np.array([[max(_floored(rng_obs.sigma_r, SIGMA_RANGE_FLOOR)**2,
                           VAR_FLOOR)]]))
    if case == 3:
        rs = r_star(None, 0.0, r_max)
        return block_diag_R(tangential_R(bearing, rs),
                            rate_row_R(bearing, rate, inputs, rs))
    if case == 4:
        raise ValueError("Case IV R depends on the radial speed and is "
                         "assembled inside the builder")
    if case == 5:
        var = (doppler.r_dot * doppler.sigma_r)**2 \
            + (doppler.r * doppler.sigma_r_dot)**2
        return np.array([[max(var, VAR_FLOOR)]])
    raise ValueError(f"unknown case {case}")
