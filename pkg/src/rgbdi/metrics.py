"""Tracking and trajectory metrics: average intensity error and absolute trajectory error."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .frames import ASSOCIATION_WINDOW, associate
from .geometry import Pose


class NoOverlap(ValueError):
    pass


def compute_aie(records: Iterable) -> float:
    """Mean over all tracked (patch, frame) pairs of the patch's mean |intensity error|.

    ``records`` yields per-pair errors on the 0-255 scale, either as plain
    numbers or as dicts with an ``"error"`` key. NaNs (patches without a
    sampled pixel) are skipped.
    """
    vals = []
    for r in records:
        e = r["error"] if isinstance(r, dict) else r
        if e is not None and np.isfinite(e):
            vals.append(float(e))
    return float(np.mean(vals)) if vals else float("nan")


def align_rigid(source: np.ndarray, target: np.ndarray):
    """Rotation R and translation t minimising ||R source + t - target|| (Horn/Umeyama, no scale)."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    C = (target - mu_t).T @ (source - mu_s)
    U, _, Vt = np.linalg.svd(C)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ S @ Vt
    return R, mu_t - R @ mu_s


def compute_ate(est_times: Sequence[float], est_poses: Sequence[Pose],
                gt_times: Sequence[float], gt_poses: Sequence[Pose],
                window: float = ASSOCIATION_WINDOW) -> float:
    """RMSE of translations after rigidly aligning the estimate onto the ground truth."""
    pairs = associate(est_times, gt_times, window)
    if len(pairs) == 0:
        raise NoOverlap("no timestamps within the association window")
    est = np.array([est_poses[i].translation for i, _ in pairs])
    gt = np.array([gt_poses[j].translation for _, j in pairs])
    if len(pairs) >= 3:
        R, t = align_rigid(est, gt)
    else:
        R, t = np.eye(3), gt.mean(axis=0) - est.mean(axis=0)
    err = est @ R.T + t - gt
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
