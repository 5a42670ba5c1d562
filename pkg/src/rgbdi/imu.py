"""IMU pre-integration between camera frames and the resulting pose prediction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frames import ImuSample
from .geometry import Pose, orthonormalize, skew, so3_exp


class EmptySamples(ValueError):
    pass


class NonMonotonicTimestamps(ValueError):
    pass


@dataclass
class PreintegratedDelta:
    """Camera-frame increments in world coordinates, so that

    ``R_k = delta_R @ R_{k-1}``, ``t_k = t_{k-1} + delta_t``, ``v_k = v_{k-1} + delta_v``.

    ``dv_dtheta`` and ``dt_dtheta`` are the sensitivities of ``delta_v`` and
    ``delta_t`` to a left rotation error of the starting orientation; the
    filter needs them for covariance propagation.
    """

    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_t: np.ndarray
    duration: float
    sample_count: int
    dv_dtheta: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dt_dtheta: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    @classmethod
    def identity(cls, duration: float, sample_count: int = 1) -> "PreintegratedDelta":
        return cls(np.eye(3), np.zeros(3), np.zeros(3), float(duration), sample_count)


def _hermite(ts, values, times):
    """Cubic Hermite interpolation with second-order finite-difference slopes.

    Returns the values and slopes at ``times``; with one sample the signal is constant.
    """
    if len(ts) < 2:
        return np.repeat(values[:1], len(times), axis=0), np.zeros((len(times), values.shape[1]))
    slopes = np.gradient(values, ts, axis=0, edge_order=2 if len(ts) > 2 else 1)
    j = np.clip(np.searchsorted(ts, times, side="right") - 1, 0, len(ts) - 2)
    h = (ts[j + 1] - ts[j])[:, None]
    s = (np.asarray(times) - ts[j])[:, None] / h
    y0, y1, m0, m1 = values[j], values[j + 1], slopes[j] * h, slopes[j + 1] * h
    val = ((2 * s**3 - 3 * s**2 + 1) * y0 + (s**3 - 2 * s**2 + s) * m0
           + (-2 * s**3 + 3 * s**2) * y1 + (s**3 - s**2) * m1)
    der = ((6 * s**2 - 6 * s) * y0 + (3 * s**2 - 4 * s + 1) * m0
           + (-6 * s**2 + 6 * s) * y1 + (3 * s**2 - 2 * s) * m1) / h
    return val, der


def _signal(samples, times, scheme, accel_bias, gyro_bias):
    """Accel, gyro and gyro rate of change at ``times``.

    The midpoint scheme interpolates accel linearly and gyro by cubic Hermite
    curves; Euler holds each sample until the next and has no rate term.
    """
    ts = np.array([s.timestamp for s in samples])
    acc = np.array([s.accel for s in samples], dtype=float) - accel_bias
    gyr = np.array([s.gyro for s in samples], dtype=float) - gyro_bias
    if scheme == "midpoint":
        a = np.stack([np.interp(times, ts, acc[:, i]) for i in range(3)], axis=1)
        w, w_dot = _hermite(ts, gyr, times)
        return a, w, w_dot
    idx = np.clip(np.searchsorted(ts, times, side="right") - 1, 0, len(ts) - 1)
    return acc[idx], gyr[idx], np.zeros((len(times), 3))


def preintegrate(
    samples: Sequence[ImuSample],
    imu_extrinsic: Pose,
    gravity,
    v_prev,
    R_prev,
    t_start: float | None = None,
    t_end: float | None = None,
    scheme: str = "midpoint",
    accel_bias=None,
    gyro_bias=None,
) -> PreintegratedDelta:
    """Integrate IMU samples over ``[t_start, t_end]`` in the world frame.

    The IMU starts at orientation ``R_prev @ Phi_R`` with velocity ``v_prev``
    (velocity of the IMU origin, world frame). ``t_start`` defaults to the
    first sample time and ``t_end`` to one sample spacing past the last one.
    Samples outside the window are used only to interpolate the signal at the
    window edges.

    ``scheme="euler"`` is the plain product ``R <- R Exp(w tau)`` with
    zero-order-held samples; ``"midpoint"`` (default) rotates by the integral of
    a cubic Hermite fit to the gyro readings plus the coning term
    ``tau^2/12 w_j x w_{j+1}``, and integrates acceleration trapezoidally, which
    is exact for linearly varying world acceleration.
    """
    if len(samples) == 0:
        raise EmptySamples("no IMU samples to integrate")
    ts = np.array([s.timestamp for s in samples], dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise NonMonotonicTimestamps("IMU timestamps must be strictly increasing")
    if scheme not in ("midpoint", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if t_start is None:
        t_start = ts[0]
    if t_end is None:
        step = np.median(np.diff(ts)) if len(ts) > 1 else 0.0
        t_end = ts[-1] + step
    if not t_end > t_start:
        raise NonMonotonicTimestamps("empty integration window")

    inner = ts[(ts > t_start) & (ts < t_end)]
    bounds = np.concatenate([[t_start], inner, [t_end]])
    zero = np.zeros(3)
    acc, gyr, gyr_dot = _signal(
        samples,
        bounds,
        scheme,
        zero if accel_bias is None else np.asarray(accel_bias, float),
        zero if gyro_bias is None else np.asarray(gyro_bias, float),
    )

    g = np.asarray(gravity, dtype=float)
    Phi_R, Phi_t = imu_extrinsic.rotation, imu_extrinsic.translation
    R_prev = np.asarray(R_prev, dtype=float)
    v0 = np.asarray(v_prev, dtype=float)
    R = R_prev @ Phi_R
    v = v0.copy()
    p = np.zeros(3)
    for j in range(len(bounds) - 1):
        tau = bounds[j + 1] - bounds[j]
        a0 = R @ acc[j] + g
        if scheme == "midpoint":
            # integral of the cubic rate over the step plus the second-order coning term
            phi = 0.5 * (gyr[j] + gyr[j + 1]) * tau + (gyr_dot[j] - gyr_dot[j + 1]) * tau * tau / 12.0
            R_next = R @ so3_exp(phi + np.cross(gyr[j], gyr[j + 1]) * tau * tau / 12.0)
            a1 = R_next @ acc[j + 1] + g
            p += v * tau + (a0 / 3.0 + a1 / 6.0) * tau * tau
            v += 0.5 * (a0 + a1) * tau
        else:
            R_next = R @ so3_exp(gyr[j] * tau)
            p += v * tau + 0.5 * a0 * tau * tau
            v += a0 * tau
        R = orthonormalize(R_next)

    T = float(t_end - t_start)
    R_cam = R @ Phi_R.T
    delta_t = p - (R_cam - R_prev) @ Phi_t
    delta_v = v - v0
    s_v = delta_v - g * T
    s_p = p - v0 * T - 0.5 * g * T * T
    return PreintegratedDelta(
        delta_R=orthonormalize(R_cam @ R_prev.T),
        delta_v=delta_v,
        delta_t=delta_t,
        duration=T,
        sample_count=int(np.sum((ts >= t_start) & (ts < t_end))),
        dv_dtheta=-skew(s_v),
        dt_dtheta=-skew(s_p) - skew(R_prev @ Phi_t) + skew(R_cam @ Phi_t),
    )


def predict_pose(pose: Pose, velocity, delta: PreintegratedDelta):
    """Rotation composed on the left, translation and velocity accumulated."""
    R = orthonormalize(delta.delta_R @ pose.rotation)
    return Pose(R, pose.translation + delta.delta_t), np.asarray(velocity, float) + delta.delta_v


def samples_between(samples: Sequence[ImuSample], t0: float, t1: float):
    """Samples needed to integrate over [t0, t1]: those inside plus one on each side."""
    ts = np.array([s.timestamp for s in samples])
    lo = max(int(np.searchsorted(ts, t0, side="right")) - 1, 0)
    hi = min(int(np.searchsorted(ts, t1, side="left")) + 1, len(samples))
    return list(samples[lo:hi])
