"""3D patch features: extraction, SE-aware deformation and the tracking objective.

A patch is a square window of pixels carrying intensity, depth and a surface
normal. To track it into a new frame every pixel is lifted to the world with
the previous pose and re-imaged with the current pose estimate. Where the
re-imaged pixels pile onto one image cell the nearer surface wins (shrink);
where the footprint grows beyond what the patch's own tangent plane predicts a
disocclusion has opened (extend).

All per-pixel work is vectorised over the whole patch set; the single-patch
functions are thin wrappers around the batched ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import fast
from .frames import Frame
from .geometry import CameraIntrinsics, Pose, projection_jacobian

_ids = itertools.count()


class NoValidPixels(ValueError):
    pass


class PatchLost(RuntimeError):
    pass


class NoResiduals(RuntimeError):
    pass


class SEStatus(str, Enum):
    NONE = "none"
    SHRINK = "shrink"
    EXTEND = "extend"
    BOTH = "both"

    @classmethod
    def of(cls, shrink: bool, extend: bool) -> "SEStatus":
        return {(False, False): cls.NONE, (True, False): cls.SHRINK,
                (False, True): cls.EXTEND, (True, True): cls.BOTH}[(bool(shrink), bool(extend))]


@dataclass
class PatchParams:
    size: int = 10
    budget: int = 100
    fast_threshold: float = 20.0
    min_spacing: float = 16.0
    min_valid_fraction: float = 0.6
    occlusion_gap: float = 0.05  # metres
    occlusion_ratio: float = 0.05  # of the nearer depth
    extend_tolerance: int = 1  # pixels
    lost_fraction: float = 0.25
    visibility_check: bool = True  # drop samples whose current depth disagrees with the predicted depth


@dataclass
class ObjectiveWeights:
    lam: float = 0.5
    sigma_p: float = 10.0
    sigma_g: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


@dataclass(frozen=True)
class PatchPixel:
    pixel: np.ndarray
    intensity: float
    depth: float
    normal: np.ndarray
    valid_depth: bool


def window_offsets(size: int) -> np.ndarray:
    """Row-major (du, dv) offsets of a size x size window around its anchor."""
    r = np.arange(size) - size // 2
    dv, du = np.meshgrid(r, r, indexing="ij")
    return np.stack([du.ravel(), dv.ravel()], axis=1).astype(float)


@dataclass
class Patch:
    anchor: np.ndarray
    pixels: np.ndarray  # (N, 2) pixel coordinates in the source frame
    intensities: np.ndarray
    depths: np.ndarray
    normals: np.ndarray  # camera frame of the source frame
    valid: np.ndarray
    source_frame: int = 0
    size: int = 10
    id: int = field(default_factory=lambda: next(_ids))
    quality: float | None = None
    se_status: SEStatus = SEStatus.NONE
    lost: bool = False

    def pixel_records(self) -> list:
        return [PatchPixel(p, float(i), float(d), n, bool(ok)) for p, i, d, n, ok in
                zip(self.pixels, self.intensities, self.depths, self.normals, self.valid)]

    @property
    def valid_fraction(self) -> float:
        return float(np.mean(self.valid)) if len(self.valid) else 0.0

    def anchor_depth(self) -> float:
        k = int(np.argmin(np.sum((self.pixels - self.anchor) ** 2, axis=1)))
        if self.valid[k]:
            return float(self.depths[k])
        return float(np.median(self.depths[self.valid]))

    def anchor_normal(self) -> np.ndarray:
        k = int(np.argmin(np.sum((self.pixels - self.anchor) ** 2, axis=1)))
        if self.valid[k]:
            return self.normals[k]
        return np.array([0.0, 0.0, -1.0])


@dataclass
class WorldPatch:
    points: np.ndarray  # (M, 3) world coordinates of the valid pixels
    intensities: np.ndarray
    normals: np.ndarray  # world frame
    pixel_index: np.ndarray  # index of each point in the source patch
    offsets: np.ndarray  # source pixel minus source anchor
    anchor_point: np.ndarray
    footprint: np.ndarray  # (4, 3) window corners lifted onto the anchor tangent plane
    size: int = 10
    patch_id: int = -1


@dataclass
class DeformedPatch:
    projected_pixels: np.ndarray  # (S, 2) sub-pixel positions of the survivors
    surviving_indices: np.ndarray  # into WorldPatch.points
    se_status: SEStatus
    bbox: tuple  # (u_min, v_min, u_max, v_max) of rounded survivors, inclusive
    depths: np.ndarray  # current-camera depth of the survivors
    inside: np.ndarray  # survivor lies where the image can be bilinearly sampled
    lost: bool = False
    jacobians: np.ndarray | None = None  # (S, 2, 6) d(uv)/d(dtheta, dt)


# --------------------------------------------------------------------------
# extraction


def make_patch(anchor, intensity, depth, normals, normals_valid, size=10, source_frame=0, patch_id=None) -> Patch:
    """Patch whose window is read directly from per-pixel images."""
    anchor = np.asarray(anchor, dtype=float)
    pix = anchor + window_offsets(size)
    u = pix[:, 0].astype(int)
    v = pix[:, 1].astype(int)
    d = depth[v, u].astype(float)
    n = normals[v, u].astype(float)
    ok = (d > 0) & normals_valid[v, u]
    kwargs = {} if patch_id is None else {"id": patch_id}
    return Patch(anchor, pix, intensity[v, u].astype(float), np.where(ok, d, 0.0), np.where(ok[:, None], n, 0.0),
                 ok, source_frame, size, **kwargs)


def window_inside(anchor, size: int, width: int, height: int) -> bool:
    u, v = anchor
    lo = size // 2
    hi = size - lo - 1
    return lo <= u < width - hi and lo <= v < height - hi


def extract_patches(frame: Frame, normals: np.ndarray, normals_valid: np.ndarray,
                    existing: Sequence[Patch] = (), budget: int | None = None,
                    params: PatchParams | None = None) -> list:
    """New patches at FAST-9 corners, strongest first, spaced from each other and from ``existing``."""
    params = params or PatchParams()
    budget = params.budget if budget is None else budget
    if budget <= 0:
        return []
    h, w = frame.intensity.shape
    score = fast.fast_score(frame.intensity, params.fast_threshold)
    ok_depth = (frame.depth > 0) & normals_valid
    size = params.size
    offs = window_offsets(size).astype(int)

    def accept(u, v):
        if not window_inside((u, v), size, w, h):
            return False
        return np.mean(ok_depth[v + offs[:, 1], u + offs[:, 0]]) >= params.min_valid_fraction

    anchors = fast.suppress(score, params.min_spacing, [p.anchor for p in existing], accept, budget)
    return [make_patch((u, v), frame.intensity, frame.depth, normals, normals_valid, size, frame.index)
            for u, v in anchors]


# --------------------------------------------------------------------------
# back-projection and deformation


def _lift_to_plane(intrinsics: CameraIntrinsics, pixels, point, normal):
    K = intrinsics
    rays = np.stack([(pixels[:, 0] - K.cx) / K.fx, (pixels[:, 1] - K.cy) / K.fy, np.ones(len(pixels))], axis=1)
    denom = rays @ normal
    s = (normal @ point) / np.where(np.abs(denom) > 1e-9, denom, np.nan)
    fronto = point[2] * np.ones(len(pixels))
    s = np.where(np.isfinite(s) & (s > 0) & (s < 10 * point[2]), s, fronto)
    return rays * s[:, None]


def back_project(patch: Patch, pose_prev: Pose, intrinsics: CameraIntrinsics) -> WorldPatch:
    """Lift every valid-depth pixel into the world with the pose of its source frame."""
    idx = np.flatnonzero(patch.valid)
    if len(idx) == 0:
        raise NoValidPixels(f"patch {patch.id} has no valid depth")
    K = intrinsics
    pix = patch.pixels[idx]
    d = patch.depths[idx]
    cam = np.stack([(pix[:, 0] - K.cx) * d / K.fx, (pix[:, 1] - K.cy) * d / K.fy, d], axis=1)
    da = patch.anchor_depth()
    a = patch.anchor
    anchor_cam = np.array([(a[0] - K.cx) * da / K.fx, (a[1] - K.cy) * da / K.fy, da])
    lo = -(patch.size // 2)
    hi = patch.size + lo - 1
    corners = a + np.array([[lo, lo], [hi, lo], [lo, hi], [hi, hi]], dtype=float)
    foot = _lift_to_plane(K, corners, anchor_cam, patch.anchor_normal())
    return WorldPatch(
        points=pose_prev.transform(cam),
        intensities=patch.intensities[idx].copy(),
        normals=patch.normals[idx] @ pose_prev.rotation.T,
        pixel_index=idx,
        offsets=pix - a,
        anchor_point=pose_prev.transform(anchor_cam),
        footprint=pose_prev.transform(foot),
        size=patch.size,
        patch_id=patch.id,
    )


def _round(x):
    return np.floor(x + 0.5).astype(np.int64)


def _pose_jacobian(pose: Pose, intrinsics, world_points, cam_points):
    """d(uv)/d(dtheta, dt) for R <- Exp(dtheta) R, t <- t + dt; shape (N, 2, 6).

    With A = d(uv)/d(p_c) R^T: d p_c / d dtheta = R^T [q]_x gives rows a x q,
    and d p_c / d dt = -R^T gives -A.
    """
    q = world_points - pose.translation
    A = projection_jacobian(intrinsics, cam_points) @ pose.rotation.T
    J = np.empty((len(q), 2, 6))
    J[:, :, :3] = np.cross(A, q[:, None, :])
    J[:, :, 3:] = -A
    return J


@dataclass
class _Batch:
    points: np.ndarray
    owner: np.ndarray  # patch index of each point
    counts: np.ndarray

    @classmethod
    def of(cls, worlds: Sequence[WorldPatch]):
        counts = np.array([len(w.points) for w in worlds], dtype=int)
        pts = np.concatenate([w.points for w in worlds]) if worlds else np.zeros((0, 3))
        owner = np.repeat(np.arange(len(worlds)), counts)
        return cls(pts, owner, counts)


def deform_batch(worlds: Sequence[WorldPatch], pose: Pose, intrinsics: CameraIntrinsics,
                 params: PatchParams | None = None, rigid: bool = False) -> list:
    """Deform every patch into the camera at ``pose``.

    With ``rigid=True`` the SE handling is switched off: the stored window is
    moved as a whole to where its anchor projects (the plain direct-method
    warp), and every pixel survives.
    """
    params = params or PatchParams()
    K = intrinsics
    if not worlds:
        return []
    b = _Batch.of(worlds)
    out = []

    if rigid:
        anchors = np.array([w.anchor_point for w in worlds])
        a_cam = pose.inverse_transform(anchors)
        for i, w in enumerate(worlds):
            z = a_cam[i, 2]
            n = len(w.points)
            if z <= 1e-6:
                out.append(_lost(n))
                continue
            uv_a = np.array([K.fx * a_cam[i, 0] / z + K.cx, K.fy * a_cam[i, 1] / z + K.cy])
            uv = uv_a + w.offsets
            inside = _inside(uv, K)
            J = np.repeat(_pose_jacobian(pose, K, anchors[i:i + 1], a_cam[i:i + 1]), n, axis=0)
            cells = _round(uv)
            bbox = (int(cells[:, 0].min()), int(cells[:, 1].min()), int(cells[:, 0].max()), int(cells[:, 1].max()))
            lost = inside.sum() < params.lost_fraction * n
            out.append(DeformedPatch(uv, np.arange(n), SEStatus.NONE, bbox, np.full(n, z), inside, lost, J))
        return out

    cam = pose.inverse_transform(b.points)
    front = cam[:, 2] > 1e-6
    z = np.where(front, cam[:, 2], 1.0)
    uv = np.stack([K.fx * cam[:, 0] / z + K.cx, K.fy * cam[:, 1] / z + K.cy], axis=1)
    cells = _round(uv)

    # z-buffer per (patch, cell): sort by key then depth, keep the first of each run
    idx = np.flatnonzero(front)
    order = idx[np.lexsort((cam[idx, 2], cells[idx, 1], cells[idx, 0], b.owner[idx]))]
    key = np.stack([b.owner[order], cells[order, 0], cells[order, 1]], axis=1)
    new_run = np.ones(len(order), dtype=bool)
    new_run[1:] = np.any(key[1:] != key[:-1], axis=1)
    survivor = np.zeros(len(b.points), dtype=bool)
    survivor[order[new_run]] = True

    # a collision is an occlusion when the hidden pixel lies clearly behind the kept one
    run_id = np.cumsum(new_run) - 1
    near = cam[order[new_run], 2][run_id]
    gap = cam[order, 2] - near
    occluding = (~new_run) & (gap > np.maximum(params.occlusion_gap, params.occlusion_ratio * near))
    shrink = np.zeros(len(worlds), dtype=bool)
    shrink[b.owner[order[occluding]]] = True

    inside_all = _inside(uv, K) & front
    J_all = _pose_jacobian(pose, K, b.points, np.where(front[:, None], cam, [0.0, 0.0, 1.0]))
    starts = np.concatenate([[0], np.cumsum(b.counts)[:-1]])

    # per-patch bounding boxes of the survivors' cells, and the extend test
    sidx = np.flatnonzero(survivor)
    s_owner = b.owner[sidx]
    has = np.bincount(s_owner, minlength=len(worlds)) > 0
    seg = np.searchsorted(s_owner, np.arange(len(worlds)))
    bbox = np.zeros((len(worlds), 4), dtype=np.int64)
    if len(sidx):
        c = cells[sidx]
        at = seg[has]
        bbox[has, 0] = np.minimum.reduceat(c[:, 0], at)
        bbox[has, 1] = np.minimum.reduceat(c[:, 1], at)
        bbox[has, 2] = np.maximum.reduceat(c[:, 0], at)
        bbox[has, 3] = np.maximum.reduceat(c[:, 1], at)
    extend = _exceeds_footprint(bbox, np.array([w.footprint for w in worlds]), pose, K, params.extend_tolerance)
    n_inside = np.bincount(s_owner, weights=inside_all[sidx], minlength=len(worlds))
    ends = np.append(seg[1:], len(sidx))

    for i in range(len(worlds)):
        n = b.counts[i]
        if not has[i]:
            out.append(_lost(n))
            continue
        g = sidx[seg[i]:ends[i]]
        lost = n_inside[i] < params.lost_fraction * n
        out.append(DeformedPatch(uv[g], g - starts[i], SEStatus.of(shrink[i], extend[i]), tuple(map(int, bbox[i])),
                                 cam[g, 2], inside_all[g], lost, J_all[g]))
    return out


def _lost(n):
    return DeformedPatch(np.zeros((0, 2)), np.zeros(0, dtype=int), SEStatus.NONE, (0, 0, -1, -1),
                         np.zeros(0), np.zeros(0, dtype=bool), True, np.zeros((0, 2, 6)))


def _inside(uv, K: CameraIntrinsics):
    return (uv[:, 0] >= 0) & (uv[:, 1] >= 0) & (uv[:, 0] < K.width - 1) & (uv[:, 1] < K.height - 1)


def _exceeds_footprint(bbox, footprints, pose, K, tol) -> np.ndarray:
    """Extend test per patch: the survivors' box is wider or taller than the
    window re-imaged as a flat patch on its anchor tangent plane.

    ``bbox`` is (P, 4) and ``footprints`` (P, 4, 3).
    """
    fc = pose.inverse_transform(footprints.reshape(-1, 3)).reshape(-1, 4, 3)
    ahead = np.all(fc[..., 2] > 1e-6, axis=1)
    z = np.where(fc[..., 2] > 1e-6, fc[..., 2], 1.0)
    fu = _round(K.fx * fc[..., 0] / z + K.cx)
    fv = _round(K.fy * fc[..., 1] / z + K.cy)
    ref_w = fu.max(axis=1) - fu.min(axis=1) + 1
    ref_h = fv.max(axis=1) - fv.min(axis=1) + 1
    w = bbox[:, 2] - bbox[:, 0] + 1
    h = bbox[:, 3] - bbox[:, 1] + 1
    return ahead & ((w > ref_w + tol) | (h > ref_h + tol))


def deform(world: WorldPatch, pose_curr_estimate: Pose, intrinsics: CameraIntrinsics,
           original_size: int | None = None, params: PatchParams | None = None) -> DeformedPatch:
    params = params or PatchParams()
    if original_size is not None and original_size != world.size:
        raise ValueError("original_size does not match the patch")
    d = deform_batch([world], pose_curr_estimate, intrinsics, params)[0]
    if d.lost:
        raise PatchLost(f"patch {world.patch_id}: fewer than {params.lost_fraction:.0%} of pixels remain visible")
    return d


# --------------------------------------------------------------------------
# residuals


def bilinear(image: np.ndarray, uv: np.ndarray):
    """Values and (d/du, d/dv) gradients of the bilinear interpolant; uv must be in range."""
    u, v = uv[:, 0], uv[:, 1]
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    a = u - u0
    b = v - v0
    I00 = image[v0, u0]
    I10 = image[v0, u0 + 1]
    I01 = image[v0 + 1, u0]
    I11 = image[v0 + 1, u0 + 1]
    val = (1 - a) * (1 - b) * I00 + a * (1 - b) * I10 + (1 - a) * b * I01 + a * b * I11
    gu = (1 - b) * (I10 - I00) + b * (I11 - I01)
    gv = (1 - a) * (I01 - I00) + a * (I11 - I10)
    return val, np.stack([gu, gv], axis=1)


def _visible(frame: Frame, uv, z, params: PatchParams, cells):
    """Samples whose current depth at every cell in ``cells`` matches the predicted depth ``z``."""
    tol = np.maximum(params.occlusion_gap, params.occlusion_ratio * z)
    h, w = frame.depth.shape
    ok = np.ones(len(uv), dtype=bool)
    for du, dv in cells:
        cu = np.clip(np.floor(uv[:, 0]).astype(int) + du, 0, w - 1)
        cv = np.clip(np.floor(uv[:, 1]).astype(int) + dv, 0, h - 1)
        ok &= np.abs(frame.depth[cv, cu] - z) <= tol
    return ok


_BILINEAR_CELLS = ((0, 0), (1, 0), (0, 1), (1, 1))


def photometric_residuals(deformed: DeformedPatch, world: WorldPatch, frame: Frame):
    """Sampled minus stored intensity for survivors that can be sampled.

    Returns ``(residuals, mask)`` where ``mask`` selects the survivors used.
    """
    m = deformed.inside
    val, _ = bilinear(frame.intensity, deformed.projected_pixels[m])
    return val - world.intensities[deformed.surviving_indices[m]], m


def _sample_depth(frame: Frame, uv):
    cells = _round(uv)
    h, w = frame.depth.shape
    ok = (cells[:, 0] >= 0) & (cells[:, 0] < w) & (cells[:, 1] >= 0) & (cells[:, 1] < h)
    d = np.zeros(len(uv))
    d[ok] = frame.depth[cells[ok, 1], cells[ok, 0]]
    return d, cells


def geometric_residuals(deformed: DeformedPatch, world: WorldPatch, frame: Frame,
                        pose_curr_estimate: Pose, intrinsics: CameraIntrinsics):
    """Point-to-plane distance of the re-observed point from the stored tangent plane.

    Current depth is read nearest-neighbour at the projected location and
    unprojected at the sub-pixel position. Returns ``(residuals, mask)``.
    """
    K = intrinsics
    uv = deformed.projected_pixels
    d, _ = _sample_depth(frame, uv)
    m = d > 0
    uv, d = uv[m], d[m]
    Xc = np.stack([(uv[:, 0] - K.cx) * d / K.fx, (uv[:, 1] - K.cy) * d / K.fy, d], axis=1)
    Xw = pose_curr_estimate.transform(Xc)
    k = deformed.surviving_indices[m]
    return np.sum((Xw - world.points[k]) * world.normals[k], axis=1), m


# --------------------------------------------------------------------------
# stacked objective


PHOTOMETRIC, GEOMETRIC = 0, 1


@dataclass
class Objective:
    residuals: np.ndarray  # weighted, so that ||r||^2 is the combined energy
    jacobian: np.ndarray  # (n, 6) w.r.t. (dtheta, dt)
    rows: np.ndarray  # (n, 3): patch index, pixel index in the source patch, kind
    cells: np.ndarray  # (n, 2) integer cell each row was sampled in
    deformed: list
    raw_photometric: list  # per patch, unweighted |I| residuals (for AIE / quality)

    def __len__(self):
        return len(self.residuals)


def stack_objective(worlds: Sequence[WorldPatch], frame: Frame, pose_estimate: Pose,
                    intrinsics: CameraIntrinsics, weights: ObjectiveWeights | None = None,
                    params: PatchParams | None = None, deformation: bool = True) -> Objective:
    """Weighted photometric + point-to-plane residuals of all patches and their pose Jacobian.

    Photometric rows are scaled by sqrt(lam)/sigma_p and geometric rows by
    sqrt(1-lam)/sigma_g. All photometric rows come first, then all geometric
    rows; within each family rows are ordered patch by patch. A patch with
    no survivors contributes nothing. With deformation on and
    ``params.visibility_check`` set, samples hidden behind (or floating in
    front of) the current depth image are skipped: photometric samples need
    all four bilinear neighbours at the predicted depth, geometric samples
    their nearest cell.
    """
    weights = weights or ObjectiveWeights()
    params = params or PatchParams()
    K = intrinsics
    deformed = deform_batch(worlds, pose_estimate, K, params, rigid=not deformation)
    wp = np.sqrt(weights.lam) / weights.sigma_p
    wg = np.sqrt(1.0 - weights.lam) / weights.sigma_g
    R, t = pose_estimate.rotation, pose_estimate.translation
    check = deformation and params.visibility_check

    live = [i for i, d in enumerate(deformed) if not d.lost]
    raw = [np.zeros(0) for _ in deformed]
    res, jac, rows, cells = [], [], [], []
    if live:
        owner = np.concatenate([np.full(len(deformed[i].surviving_indices), i) for i in live])
        uv_all = np.concatenate([deformed[i].projected_pixels for i in live])
        z_all = np.concatenate([deformed[i].depths for i in live])
        inside = np.concatenate([deformed[i].inside for i in live])
        J_uv = np.concatenate([deformed[i].jacobians for i in live])
        src = np.concatenate([deformed[i].surviving_indices for i in live])
        I_ref = np.concatenate([worlds[i].intensities[deformed[i].surviving_indices] for i in live])
        P_ref = np.concatenate([worlds[i].points[deformed[i].surviving_indices] for i in live])
        N_ref = np.concatenate([worlds[i].normals[deformed[i].surviving_indices] for i in live])
        pix_id = np.concatenate([worlds[i].pixel_index[deformed[i].surviving_indices] for i in live])

        # photometric
        m = inside.copy()
        if check and np.any(m):
            m[m] = _visible(frame, uv_all[m], z_all[m], params, _BILINEAR_CELLS)
        uv = uv_all[m]
        val, grad = bilinear(frame.intensity, uv)
        r_p = val - I_ref[m]
        own_p = owner[m]
        bounds = np.searchsorted(own_p, np.arange(len(deformed) + 1))
        for i in live:
            raw[i] = r_p[bounds[i]:bounds[i + 1]]
        if weights.lam > 0 and len(uv):
            res.append(wp * r_p)
            jac.append(wp * (grad[:, None, :] @ J_uv[m])[:, 0])
            rows.append(np.stack([own_p, pix_id[m], np.full(len(uv), PHOTOMETRIC)], axis=1))
            cells.append(np.floor(uv).astype(np.int64))

        # geometric
        if weights.lam < 1:
            dep, cg = _sample_depth(frame, uv_all)
            mg = dep > 0
            if check:
                mg &= np.abs(dep - z_all) <= np.maximum(params.occlusion_gap, params.occlusion_ratio * z_all)
            if np.any(mg):
                uvg, dep, cg = uv_all[mg], dep[mg], cg[mg]
                Xc = np.stack([(uvg[:, 0] - K.cx) * dep / K.fx, (uvg[:, 1] - K.cy) * dep / K.fy, dep], axis=1)
                RX = Xc @ R.T
                n = N_ref[mg]
                r_g = np.sum((RX + t - P_ref[mg]) * n, axis=1)
                # d(R Xc + t): rotation -[R Xc]_x, translation I, plus Xc sliding with uv
                J = np.empty((len(dep), 6))
                J[:, :3] = np.cross(RX, n)
                J[:, 3:] = n
                nR = n @ R  # n^T R
                dr_duv = np.stack([nR[:, 0] * dep / K.fx, nR[:, 1] * dep / K.fy], axis=1)
                J += (dr_duv[:, None, :] @ J_uv[mg])[:, 0]
                res.append(wg * r_g)
                jac.append(wg * J)
                rows.append(np.stack([owner[mg], pix_id[mg], np.full(len(dep), GEOMETRIC)], axis=1))
                cells.append(cg)
    if not res:
        raise NoResiduals("no patch produced a residual")
    return Objective(np.concatenate(res), np.concatenate(jac), np.concatenate(rows).astype(int),
                     np.concatenate(cells), deformed, raw)


def patch_intensity_errors(objective: Objective) -> np.ndarray:
    """Mean |photometric residual| per patch (NaN where the patch produced none)."""
    return np.array([np.mean(np.abs(r)) if len(r) else np.nan for r in objective.raw_photometric])


class PatchMeasurement:
    """Measurement model for the filter: re-deforms every patch at each pose iterate."""

    def __init__(self, worlds, frame: Frame, intrinsics: CameraIntrinsics,
                 weights: ObjectiveWeights | None = None, params: PatchParams | None = None,
                 deformation: bool = True):
        self.worlds = list(worlds)
        self.frame = frame
        self.intrinsics = intrinsics
        self.weights = weights or ObjectiveWeights()
        self.params = params or PatchParams()
        self.deformation = deformation
        self.last: Objective | None = None

    def __call__(self, pose: Pose):
        self.last = stack_objective(self.worlds, self.frame, pose, self.intrinsics, self.weights,
                                    self.params, self.deformation)
        return self.last.residuals, self.last.jacobian
