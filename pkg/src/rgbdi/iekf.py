"""Iterated extended Kalman filter over camera pose and velocity.

Error state (9): ``[dtheta, dt, dv]`` with ``R = Exp(dtheta) R_hat``,
``t = t_hat + dt`` and ``v = v_hat + dv``. The measurement model is any
callable mapping a pose to ``(residual vector, d residual / d(dtheta, dt))``;
velocity is not observed directly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Pose
from .imu import PreintegratedDelta, predict_pose
from .patches import NoResiduals

log = logging.getLogger(__name__)

STATE_DIM = 9


@dataclass
class FilterState:
    pose: Pose
    velocity: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)

    def boxminus(self, other: "FilterState") -> np.ndarray:
        return np.concatenate([self.pose.local(other.pose), self.velocity - other.velocity])

    def boxplus(self, delta) -> "FilterState":
        delta = np.asarray(delta, float)
        return FilterState(self.pose.retract(delta[:6]), self.velocity + delta[6:9], self.covariance)


@dataclass
class NoiseConfig:
    process_Q: np.ndarray = field(default_factory=lambda: np.diag([0.01**2] * 3 + [0.01**2] * 3 + [0.05**2] * 3))
    measurement_U: float = 1.0  # variance per normalised residual row

    def __post_init__(self):
        self.process_Q = np.asarray(self.process_Q, dtype=float)
        if np.any(np.diag(self.process_Q) < 0) or self.measurement_U < 0:
            raise ValueError("noise variances must be non-negative")


@dataclass
class IterationControls:
    max_iters: int = 10
    step_tol: float = 1e-4
    loss_inflation: float = 2.0
    divergence_window: int = 3


@dataclass
class IterationReport:
    iterations_run: int = 0
    step_norms: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    converged: bool = False
    final_residual_norm: float = float("nan")
    status: str = "converged"  # converged | max_iters | diverged | no_residuals
    rows: int = 0


def symmetrize(P):
    return 0.5 * (P + P.T)


def propagation_jacobian(delta: PreintegratedDelta) -> np.ndarray:
    F = np.eye(STATE_DIM)
    F[3:6, 0:3] = delta.dt_dtheta
    F[3:6, 6:9] = delta.duration * np.eye(3)
    F[6:9, 0:3] = delta.dv_dtheta
    return F


def kalman_predict(state: FilterState, delta: PreintegratedDelta, noise: NoiseConfig) -> FilterState:
    pose, vel = predict_pose(state.pose, state.velocity, delta)
    F = propagation_jacobian(delta)
    P = F @ state.covariance @ F.T + noise.process_Q * delta.duration
    return FilterState(pose, vel, symmetrize(P))


def _gain(P, H, u_inv):
    """Kalman gain in a form that never builds the n x n innovation matrix.

    With A = H^T U^-1 H: K = P H^T (H P H^T + U)^-1 = P (I + A P)^-1 H^T U^-1.
    """
    HtUi = H.T * u_inv
    A = HtUi @ H
    M = np.linalg.solve((np.eye(len(P)) + A @ P).T, P.T).T  # P (I + A P)^-1
    return M @ HtUi


def _expand(H6):
    H6 = np.atleast_2d(H6)
    if H6.shape[1] == STATE_DIM:
        return H6
    H = np.zeros((len(H6), STATE_DIM))
    H[:, :6] = H6
    return H


def _joseph(P, K, H, u):
    IKH = np.eye(len(P)) - K @ H
    return symmetrize(IKH @ P @ IKH.T + (K * u) @ K.T)


def iterated_update(state_pred: FilterState,
                    measurement: Callable[[Pose], tuple],
                    noise: NoiseConfig,
                    controls: IterationControls | None = None):
    """Relinearise the measurement at each iterate; update the covariance once, at the end.

    Each iteration solves the linearised problem around the current iterate
    while keeping the prior anchored at the prediction:
    ``x_{m+1} = x^- [+] -K_m (r_m - H_m (x_m [-] x^-))``. The first step is
    the plain EKF update. Iteration stops when the largest component of the
    step falls below ``step_tol``.
    """
    controls = controls or IterationControls()
    report = IterationReport()
    P = state_pred.covariance
    u = float(noise.measurement_U)
    u_inv = 0.0 if not np.isfinite(u) else 1.0 / max(u, 1e-12)

    x = state_pred
    best = None
    growth = 0
    K = H = None
    for m in range(controls.max_iters):
        try:
            r, H6 = measurement(x.pose)
        except NoResiduals:
            r = None
        if r is None or len(r) == 0:
            if m == 0:
                report.status = "no_residuals"
                log.warning("no residuals; passing the prediction through")
                return FilterState(state_pred.pose, state_pred.velocity,
                                   symmetrize(P * controls.loss_inflation)), report
            break
        H = _expand(H6)
        rms = float(np.sqrt(np.mean(r * r)))
        report.residual_norms.append(rms)
        report.rows = len(r)
        if best is None or rms < best[0]:
            best = (rms, x, m)
        if len(report.residual_norms) > 1 and rms > report.residual_norms[-2]:
            growth += 1
        else:
            growth = 0
        if growth >= controls.divergence_window:
            report.status = "diverged"
            log.warning("update diverged after %d iterations; keeping the best iterate", m)
            break

        e = x.boxminus(state_pred)
        K = _gain(P, H, u_inv)
        delta = -K @ (r - H @ e)
        x_next = state_pred.boxplus(delta)
        step = float(np.max(np.abs(x_next.boxminus(x))))
        report.step_norms.append(step)
        report.iterations_run = m + 1
        if step < controls.step_tol:
            x = x_next
            report.converged = True
            report.status = "converged"
            break
        x = x_next
    else:
        report.status = "max_iters"

    if report.status == "diverged":
        x = best[1]
        r, H6 = measurement(x.pose)
        H = _expand(H6)
        K = _gain(P, H, u_inv)
    report.final_residual_norm = report.residual_norms[-1] if report.residual_norms else float("nan")
    P_post = _joseph(P, K, H, u) if np.isfinite(u) else P.copy()
    return FilterState(x.pose, x.velocity, P_post), report
