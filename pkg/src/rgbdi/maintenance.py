"""Feature lifecycle between filter updates: cull, re-square, refresh and top up."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .frames import Frame
from .geometry import CameraIntrinsics, Pose, compute_normals
from .patches import (DeformedPatch, Patch, PatchParams, SEStatus, WorldPatch, extract_patches,
                      make_patch, window_inside)


@dataclass
class MaintenanceParams:
    quality_threshold: float = 15.0  # gray levels
    ema_factor: float = 0.7  # weight kept by the old average
    model_agreement: float = 0.01  # metres; model depth further than this from valid sensor depth is ignored


def update_quality(patches: Sequence[Patch], errors, ema_factor: float = 0.7):
    """Fold this frame's mean absolute intensity error into each patch's running average.

    The first observation initialises the average; NaN errors leave it unchanged.
    """
    for p, e in zip(patches, errors):
        if e is None or not np.isfinite(e):
            continue
        p.quality = float(e) if p.quality is None else ema_factor * p.quality + (1 - ema_factor) * float(e)


def cull(patches: Sequence[Patch], quality_threshold: float = 15.0) -> list:
    return [p for p in patches if not p.lost and (p.quality is None or p.quality <= quality_threshold)]


def _reanchor(patch: Patch, world: WorldPatch, deformed: DeformedPatch, pose: Pose, K: CameraIntrinsics):
    if deformed.se_status != SEStatus.NONE and len(deformed.projected_pixels):
        c = deformed.projected_pixels.mean(axis=0)
    else:
        a = pose.inverse_transform(world.anchor_point)
        c = np.array([K.fx * a[0] / a[2] + K.cx, K.fy * a[1] / a[2] + K.cy])
    return np.floor(c + 0.5)


def refresh(patches: Sequence[Patch], tracked: dict, frame: Frame, pose: Pose, intrinsics: CameraIntrinsics,
            model_raycast=None, budget: int | None = None, params: PatchParams | None = None,
            sensor_normals=None, model_agreement: float | None = None) -> list:
    """Patches expressed in ``frame`` for tracking into the next one.

    ``tracked`` maps patch id to ``(WorldPatch, DeformedPatch)`` at the final
    pose. SE-affected patches are re-extracted as squares centred on the
    rounded centroid of their surviving pixels; the others at the rounded
    re-projection of their anchor. Intensities come from ``frame``; depth and
    normals from ``model_raycast = (depth, normals, valid)`` where valid,
    otherwise from the sensor depth. With ``model_agreement`` set, model
    samples that disagree with a valid sensor reading by more than that many
    metres (rays grazing a depth edge) also fall back to the sensor. Ids of
    surviving patches are kept.
    """
    params = params or PatchParams()
    budget = params.budget if budget is None else budget
    K = intrinsics
    if sensor_normals is None:
        sensor_normals = compute_normals(frame.depth, K)
    s_norm, s_valid = sensor_normals
    depth = frame.depth.copy()
    normals = s_norm.copy()
    valid = s_valid & (depth > 0)
    if model_raycast is not None:
        m_depth, m_norm, m_valid = model_raycast
        if model_agreement is not None:
            m_valid = m_valid & ~(valid & (np.abs(m_depth - depth) > model_agreement))
        depth = np.where(m_valid, m_depth, depth)
        normals = np.where(m_valid[..., None], m_norm, normals)
        valid = m_valid | valid

    out = []
    taken = set()
    for p in patches:
        if p.id not in tracked or len(out) >= budget:
            continue
        world, deformed = tracked[p.id]
        if deformed.lost:
            continue
        anchor = _reanchor(p, world, deformed, pose, K)
        if not window_inside(anchor, p.size, K.width, K.height):
            continue
        if tuple(anchor) in taken:
            continue
        q = make_patch(anchor, frame.intensity, depth, normals, valid, p.size, frame.index, patch_id=p.id)
        if q.valid_fraction < params.min_valid_fraction:
            continue
        q.quality = p.quality
        q.se_status = deformed.se_status
        out.append(q)
        taken.add(tuple(anchor))

    room = budget - len(out)
    if room > 0:
        fresh_frame = Frame(frame.timestamp, frame.intensity, depth, frame.index)
        out += extract_patches(fresh_frame, normals, valid, out, room, params)
    return out
