"""Emulated motion-capture feed and per-vehicle EKF.

Only pose (x, y, theta) is observed; velocity and steering angle are
inferred through the bicycle-model process update, mirroring a testbed
where off-board tracking is the sole sensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PoseMeasurement:
    x: float
    y: float
    theta: float
    timestamp: float
    vehicle_id: int


@dataclass
class EstimatorState:
    """Mean [x, y, theta, v, psi] and 5x5 covariance."""

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def initial(cls, x: float, y: float, theta: float, v: float = 0.0,
                psi: float = 0.0, sigma: float = 0.1) -> "EstimatorState":
        return cls(
            mean=np.array([x, y, theta, v, psi], dtype=float),
            cov=np.eye(5) * sigma**2,
        )


DEFAULT_Q = np.diag([1e-6, 1e-6, 1e-6, 1e-4, 1e-4])
DEFAULT_R = np.diag([1e-6, 1e-6, 1e-5])


def emulate_measurement(
    x: float,
    y: float,
    theta: float,
    t: float,
    vehicle_id: int,
    sigma_xy: float,
    sigma_theta: float,
    rng: np.random.Generator,
) -> PoseMeasurement:
    """Additive Gaussian pose noise; exact when sigmas are zero."""
    if sigma_xy < 0.0 or sigma_theta < 0.0:
        raise ValueError("noise std must be non-negative")
    if sigma_xy > 0.0 or sigma_theta > 0.0:
        nx, ny, nth = rng.normal(0.0, 1.0, size=3)
        x += sigma_xy * nx
        y += sigma_xy * ny
        theta = _wrap(theta + sigma_theta * nth)
    return PoseMeasurement(x, y, theta, t, vehicle_id)


def propagate_mean(mean: np.ndarray, dt: float, wheelbase: float) -> np.ndarray:
    x, y, th, v, psi = mean
    return np.array(
        [
            x + v * math.cos(th) * dt,
            y + v * math.sin(th) * dt,
            _wrap(th + v * math.tan(psi) / wheelbase * dt),
            v,
            psi,
        ]
    )


def propagation_jacobian(mean: np.ndarray, dt: float, wheelbase: float) -> np.ndarray:
    _, _, th, v, psi = mean
    F = np.eye(5)
    F[0, 2] = -v * math.sin(th) * dt
    F[0, 3] = math.cos(th) * dt
    F[1, 2] = v * math.cos(th) * dt
    F[1, 3] = math.sin(th) * dt
    F[2, 3] = math.tan(psi) / wheelbase * dt
    F[2, 4] = v / (math.cos(psi) ** 2 * wheelbase) * dt
    return F


def ekf_predict(
    est: EstimatorState,
    dt: float,
    wheelbase: float,
    Q: np.ndarray = DEFAULT_Q,
) -> EstimatorState:
    """Propagate through the bicycle model with v, psi held constant."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    F = propagation_jacobian(est.mean, dt, wheelbase)
    mean = propagate_mean(est.mean, dt, wheelbase)
    cov = F @ est.cov @ F.T + Q
    return EstimatorState(mean=mean, cov=0.5 * (cov + cov.T))


def ekf_update(
    est: EstimatorState,
    meas: PoseMeasurement,
    R: np.ndarray = DEFAULT_R,
) -> EstimatorState:
    """Innovation update on the pose observation, with angle wrapping."""
    H = np.zeros((3, 5))
    H[0, 0] = H[1, 1] = H[2, 2] = 1.0
    z = np.array([meas.x, meas.y, meas.theta])
    innov = z - est.mean[:3]
    innov[2] = _wrap(innov[2])
    S = H @ est.cov @ H.T + R
    K = est.cov @ H.T @ np.linalg.inv(S)
    mean = est.mean + K @ innov
    mean[2] = _wrap(mean[2])
    cov = (np.eye(5) - K @ H) @ est.cov
    return EstimatorState(mean=mean, cov=0.5 * (cov + cov.T))


def batch_ekf_predict(
    means: np.ndarray,
    covs: np.ndarray,
    dt: float,
    wheelbase: float,
    Q: np.ndarray = DEFAULT_Q,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ekf_predict over a fleet: means (n, 5), covs (n, 5, 5).

    Identical arithmetic to the scalar version, evaluated per row."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x, y, th, v, psi = means.T
    out = np.empty_like(means)
    out[:, 0] = x + v * np.cos(th) * dt
    out[:, 1] = y + v * np.sin(th) * dt
    out[:, 2] = _wrap_array(th + v * np.tan(psi) / wheelbase * dt)
    out[:, 3] = v
    out[:, 4] = psi
    n = len(means)
    F = np.broadcast_to(np.eye(5), (n, 5, 5)).copy()
    F[:, 0, 2] = -v * np.sin(th) * dt
    F[:, 0, 3] = np.cos(th) * dt
    F[:, 1, 2] = v * np.cos(th) * dt
    F[:, 1, 3] = np.sin(th) * dt
    F[:, 2, 3] = np.tan(psi) / wheelbase * dt
    F[:, 2, 4] = v / (np.cos(psi) ** 2 * wheelbase) * dt
    new_covs = F @ covs @ F.transpose(0, 2, 1) + Q
    new_covs = 0.5 * (new_covs + new_covs.transpose(0, 2, 1))
    return out, new_covs


def batch_ekf_update(
    means: np.ndarray,
    covs: np.ndarray,
    z: np.ndarray,
    R: np.ndarray = DEFAULT_R,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ekf_update: z is (n, 3) poses, one row per vehicle."""
    innov = z - means[:, :3]
    innov[:, 2] = _wrap_array(innov[:, 2])
    S = covs[:, :3, :3] + R
    K = covs[:, :, :3] @ np.linalg.inv(S)
    new_means = means + (K @ innov[:, :, None])[:, :, 0]
    new_means[:, 2] = _wrap_array(new_means[:, 2])
    new_covs = covs - K @ covs[:, :3, :]
    new_covs = 0.5 * (new_covs + new_covs.transpose(0, 2, 1))
    return new_means, new_covs


def _wrap(a: float) -> float:
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if a == -math.pi else a


def _wrap_array(a: np.ndarray) -> np.ndarray:
    return (a + math.pi) % (2.0 * math.pi) - math.pi
