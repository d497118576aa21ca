"""Geometric primitives and shared state types.

Conventions used throughout the package:

* Heading ``beta`` is measured counterclockwise from the global +x2 axis,
  so the body forward axis expressed in global coordinates is
  ``(-sin(beta), cos(beta))``.
* ``rotation2d(beta).matrix`` is the standard counterclockwise rotation;
  it maps body coordinates to global coordinates.  Its transpose maps
  global to body.
* Bearings theta are measured in the body frame from the forward (+x2)
  axis toward the +x1 axis, so a landmark at body position
  ``(r sin(theta), r cos(theta))`` has bearing theta.
* With these choices the relative position of a static landmark in the
  robot-fixed frame obeys ``xdot = -Omega x - u`` with
  ``Omega = skew(omega)`` and ``betadot = omega``.

All angles are radians; positions are meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

#: Sentinel contraction rate for error series that have hit exact zero.
RATE_CONVERGED = math.inf


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


def angle_diff(a: float, b: float) -> float:
    """Shortest signed arc from b to a, in [-pi, pi)."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class Rotation2D:
    """Planar rotation by heading angle beta (rad)."""

    beta: float

    def __post_init__(self):
        if not math.isfinite(self.beta):
            raise ValueError(f"non-finite heading: {self.beta}")
        object.__setattr__(self, "beta", wrap_angle(self.beta))

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.beta), math.sin(self.beta)
        return np.array([[c, -s], [s, c]])

    def inverse(self) -> "Rotation2D":
        return Rotation2D(-self.beta)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float)


def rotation2d(beta: float) -> Rotation2D:
    """Rotation by beta with the angle wrapped to [-pi, pi)."""
    return Rotation2D(beta)


def body_from_global(beta: float) -> np.ndarray:
    """Matrix taking global-frame vectors into the body frame at heading beta."""
    return rotation2d(beta).matrix.T


def heading_forward(beta: float) -> np.ndarray:
    """Unit forward direction in global coordinates for heading beta."""
    return np.array([-math.sin(beta), math.cos(beta)])


@dataclass(frozen=True)
class AngularVelocityMatrix:
    """Body angular velocity and its skew-symmetric matrix realization."""

    omega: np.ndarray  # (1,) for 2D (omega_z), (3,) for 3D

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if w.shape not in ((1,), (3,)):
            raise ValueError(f"expected 1 or 3 angular rates, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite angular rate")
        object.__setattr__(self, "omega", w)

    @property
    def dim(self) -> int:
        return 2 if self.omega.shape == (1,) else 3

    @property
    def matrix(self) -> np.ndarray:
        if self.dim == 2:
            (wz,) = self.omega
            return np.array([[0.0, -wz], [wz, 0.0]])
        wx, wy, wz = self.omega
        return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def skew(*omega: float) -> AngularVelocityMatrix:
    """Angular velocity matrix from rates: skew(wz) in 2D, skew(wx, wy, wz) in 3D."""
    return AngularVelocityMatrix(np.array(omega, dtype=float))


def _check_covariance(P: np.ndarray, label: str = "P") -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{label} must be square, got shape {P.shape}")
    scale = max(np.abs(P).max(), 1.0)
    if np.abs(P - P.T).max() > 1e-9 * scale:
        raise ValueError(f"{label} is not symmetric within tolerance")
    eig = np.linalg.eigvalsh(0.5 * (P + P.T))
    if eig.min() < -1e-9 * max(np.trace(P), 1.0):
        raise ValueError(f"{label} is not positive semidefinite (min eig {eig.min():g})")
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class FilterState:
    """Estimate vector with covariance at time t."""

    x: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        P = _check_covariance(self.P)
        if P.shape[0] != x.size:
            raise ValueError(f"covariance shape {P.shape} does not match state size {x.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    @property
    def dim(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class RobotInputs:
    """Measured body twist: translational velocity u (body frame) and yaw rates."""

    u: np.ndarray
    omega: AngularVelocityMatrix
    Q: np.ndarray | None = None  # process noise covariance on the estimated state

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).ravel()
        object.__setattr__(self, "u", u)
        if self.Q is not None:
            object.__setattr__(self, "Q", _check_covariance(self.Q, "Q"))

    @property
    def dim(self) -> int:
        return self.u.size


@dataclass(frozen=True)
class ContractionDiagnostics:
    """Fitted exponential decay rate of an error series, plus optional metric."""

    rate: float                      # decay rate (1/s); +inf means converged to zero
    r_squared: float = float("nan")  # goodness of the log-error regression
    metric: np.ndarray | None = field(default=None, compare=False)

    @staticmethod
    def metric_from_covariance(P: np.ndarray) -> np.ndarray:
        return np.linalg.inv(_check_covariance(P))


def fit_contraction_rate(error_series) -> ContractionDiagnostics:
    """Least-squares exponential decay rate of an ``(t, error)`` series.

    Fits log(error) = a - rate * t.  A constant series yields rate 0.
    Any non-positive error is taken to mean the series has converged to
    zero and the +inf sentinel is returned.
    """
    pts = np.asarray(list(error_series), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 10:
        raise ValueError("need at least 10 (t, error) samples")
    t, e = pts[:, 0], pts[:, 1]
    if np.any(e <= 0.0):
        return ContractionDiagnostics(rate=RATE_CONVERGED, r_squared=1.0)
    loge = np.log(e)
    slope, intercept = np.polyfit(t, loge, 1)
    resid = loge - (slope * t + intercept)
    ss_tot = np.sum((loge - loge.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - np.sum(resid**2) / ss_tot
    return ContractionDiagnostics(rate=-slope, r_squared=float(r2))
