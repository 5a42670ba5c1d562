"""Frame loop: predict with the IMU, iterate the patch update, fuse, maintain features."""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, OutputSection, PipelineConfig
from .frames import SequenceConfig, SequenceError, load_frames, read_imu, read_trajectory, write_trajectory
from .geometry import Pose, compute_normals, rotation_to_quaternion
from .iekf import FilterState, iterated_update, kalman_predict
from .imu import PreintegratedDelta, preintegrate, samples_between
from .maintenance import cull, refresh, update_quality
from .metrics import compute_aie, compute_ate
from .patches import (NoResiduals, NoValidPixels, PatchMeasurement, SEStatus, back_project, extract_patches,
                      patch_intensity_errors, stack_objective, window_offsets)
from .tsdf import EmptySurface, TsdfVolume, extract_mesh, integrate, raycast, write_ply

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
DIVERGED_FRACTION = 0.1


@dataclass
class Sequence:
    frames: list
    imu: list
    config: SequenceConfig
    gt_times: np.ndarray | None = None
    gt_poses: list | None = None


def in_memory(synth) -> Sequence:
    """Wrap a :class:`~rgbdi.synthetic.SyntheticSequence` without writing it to disk."""
    return Sequence(list(synth.frames), list(synth.imu), synth.config,
                    np.array([f.timestamp for f in synth.frames]), list(synth.poses))


def load_sequence(cfg: PipelineConfig) -> Sequence:
    root = Path(cfg.sequence.path)
    if not root.is_dir():
        raise SequenceError(f"sequence directory {root} does not exist")
    cam_path = Path(cfg.sequence.camera) if cfg.sequence.camera else root / "sequence.yaml"
    if not cam_path.exists():
        raise SequenceError(f"camera description {cam_path} not found")
    seq_cfg = SequenceConfig.load(cam_path)
    frames = load_frames(root, seq_cfg)
    if cfg.sequence.max_frames:
        frames = frames[: cfg.sequence.max_frames]
    if len(frames) < 1:
        raise SequenceError(f"{root} contains no usable frames")
    imu = read_imu(root)
    gt_path = Path(cfg.sequence.groundtruth) if cfg.sequence.groundtruth else root / "groundtruth.txt"
    gt_t = gt_p = None
    if gt_path.exists():
        gt_t, gt_p = read_trajectory(gt_path)
    return Sequence(frames, imu, seq_cfg, gt_t, gt_p)


@dataclass
class RunReport:
    frames: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    aie_records: list = field(default_factory=list)
    timing: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)
    poses: list = field(default_factory=list)

    def to_json(self, include_timing: bool = False) -> str:
        doc = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "summary": self.summary,
            "frames": self.frames,
        }
        if include_timing:
            doc["timing"] = self.timing
        return json.dumps(doc, indent=1, sort_keys=True)


def _pose_record(pose: Pose):
    return [float(x) for x in pose.translation] + [float(x) for x in rotation_to_quaternion(pose.rotation)]


def _model_images(volume, pose, K, tracked, cfg, sensor_depth):
    """Ray-cast the model only inside the windows the next patch set will read.

    Model depth further than ``model_agreement`` from a valid sensor reading is
    discarded by refresh, so those rays only search a band of two truncation
    distances around the sensor depth.
    """
    size = cfg.patches.size
    offs = window_offsets(size).astype(int)
    centres = []
    for world, deformed in tracked.values():
        if deformed.lost:
            continue
        if deformed.se_status != SEStatus.NONE and len(deformed.projected_pixels):
            centres.append(np.floor(deformed.projected_pixels.mean(axis=0) + 0.5))
        else:
            a = pose.inverse_transform(world.anchor_point)
            if a[2] > 0:
                centres.append(np.floor(np.array([K.fx * a[0] / a[2] + K.cx, K.fy * a[1] / a[2] + K.cy]) + 0.5))
    mask = np.zeros((K.height, K.width), dtype=bool)
    for c in centres:
        px = (c + offs).astype(int)
        ok = (px[:, 0] >= 0) & (px[:, 0] < K.width) & (px[:, 1] >= 0) & (px[:, 1] < K.height)
        mask[px[ok, 1], px[ok, 0]] = True
    vs, us = np.nonzero(mask)
    depth = np.zeros((K.height, K.width))
    normals = np.zeros((K.height, K.width, 3))
    valid = np.zeros((K.height, K.width), dtype=bool)
    if len(us):
        sd = sensor_depth[vs, us]
        band = 2.0 * volume.truncation
        has = (sd > 0) & (cfg.maintenance.model_agreement is not None)
        near = np.where(has, np.maximum(sd - band, 0.1), 0.1)
        far = np.where(has, sd + band, np.inf)
        d, n, ok = raycast(volume, pose, K, np.stack([us, vs], axis=1), near=near, far=far)
        depth[vs, us] = d
        normals[vs, us] = n
        valid[vs, us] = ok
    return depth, normals, valid


def run(cfg: PipelineConfig, sequence: Sequence | None = None) -> RunReport:
    """Process a whole sequence; writes the outputs named in ``cfg.output``."""
    if cfg.toggles.use_imu is None:
        raise ConfigError("use_imu must be set")
    seq = sequence or load_sequence(cfg)
    sc = seq.config
    K = sc.intrinsics
    if cfg.toggles.use_imu and len(seq.imu) == 0:
        raise SequenceError("use_imu is on but the sequence has no IMU samples")

    noise = cfg.noise.noise()
    noise_no_imu = cfg.noise.noise(cfg.noise.no_imu_q_scale)
    P0 = np.diag(np.asarray(cfg.noise.initial_covariance, float))
    if P0.shape != (9, 9):
        raise ConfigError("initial_covariance needs 9 entries")
    volume = TsdfVolume.from_bounds(cfg.tsdf.lower, cfg.tsdf.upper, cfg.tsdf.voxel_size,
                                    truncation=cfg.tsdf.truncation, w_max=cfg.tsdf.w_max)
    velocity0 = sc.initial_velocity if cfg.toggles.use_imu else np.zeros(3)
    state = FilterState(Pose.identity(), velocity0, P0)
    report = RunReport()
    frames = seq.frames

    f0 = frames[0]
    t_start = time.perf_counter()
    if cfg.toggles.fuse:
        integrate(volume, f0, state.pose, K)
    normals0 = compute_normals(f0.depth, K)
    patches = extract_patches(f0, *normals0, budget=cfg.patches.budget, params=cfg.patches)
    report.timestamps.append(f0.timestamp)
    report.poses.append(state.pose)
    report.frames.append({"index": 0, "timestamp": f0.timestamp, "pose": _pose_record(state.pose),
                          "aie": None, "patches": len(patches), "status": "init", "iterations": 0,
                          "step_norms": [], "residual_rms": None})
    report.timing.append({"total": time.perf_counter() - t_start})

    for k in range(1, len(frames)):
        frame, prev = frames[k], frames[k - 1]
        tick = {}
        t0 = time.perf_counter()
        if cfg.toggles.use_imu:
            samples = samples_between(seq.imu, prev.timestamp, frame.timestamp)
            delta = preintegrate(samples, sc.imu_extrinsic, sc.gravity_world, state.velocity,
                                 state.pose.rotation, prev.timestamp, frame.timestamp, cfg.imu.scheme,
                                 cfg.imu.accel_bias, cfg.imu.gyro_bias)
            pred = kalman_predict(state, delta, noise)
        else:
            delta = PreintegratedDelta.identity(frame.timestamp - prev.timestamp)
            pred = kalman_predict(state, delta, noise_no_imu)
        tick["predict"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        prev_pose = state.pose
        worlds, kept = [], []
        for p in patches:
            try:
                worlds.append(back_project(p, prev_pose, K))
                kept.append(p)
            except NoValidPixels:
                continue
        patches = kept
        meas = PatchMeasurement(worlds, frame, K, cfg.objective, cfg.patches, cfg.toggles.use_deformation)
        state, it = iterated_update(pred, meas, noise, cfg.iteration)
        if not cfg.toggles.use_imu:
            state.velocity = np.zeros(3)
        tick["update"] = time.perf_counter() - t0

        errors = np.full(len(patches), np.nan)
        tracked = {}
        try:
            obj = stack_objective(worlds, frame, state.pose, K, cfg.objective, cfg.patches,
                                  cfg.toggles.use_deformation)
            errors = patch_intensity_errors(obj)
            for p, w, d in zip(patches, worlds, obj.deformed):
                p.lost = d.lost
                p.se_status = d.se_status
                tracked[p.id] = (w, d)
        except NoResiduals:
            for p in patches:
                p.lost = True
        for p, e in zip(patches, errors):
            if not p.lost and np.isfinite(e):
                report.aie_records.append({"frame": k, "patch": p.id, "error": float(e)})
        update_quality(patches, errors, cfg.maintenance.ema_factor)
        frame_aie = compute_aie(e for p, e in zip(patches, errors) if not p.lost)

        t0 = time.perf_counter()
        if cfg.toggles.fuse:
            integrate(volume, frame, state.pose, K)
        tick["fuse"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        model = None
        if cfg.toggles.use_model_depth and cfg.toggles.fuse:
            model = _model_images(volume, state.pose, K, tracked, cfg, frame.depth)
        survivors = cull(patches, cfg.maintenance.quality_threshold)
        patches = refresh(survivors, tracked, frame, state.pose, K, model, cfg.patches.budget, cfg.patches,
                          model_agreement=cfg.maintenance.model_agreement)
        tick["maintain"] = time.perf_counter() - t0
        tick["total"] = sum(tick.values())

        if not state.pose.is_valid(1e-6):
            raise RuntimeError(f"frame {k}: non-orthonormal rotation")
        report.timestamps.append(frame.timestamp)
        report.poses.append(state.pose)
        report.frames.append({
            "index": k, "timestamp": frame.timestamp, "pose": _pose_record(state.pose),
            "aie": None if not np.isfinite(frame_aie) else frame_aie,
            "patches": len(worlds), "status": it.status, "iterations": it.iterations_run,
            "step_norms": [float(s) for s in it.step_norms],
            "residual_rms": None if not np.isfinite(it.final_residual_norm) else it.final_residual_norm,
        })
        report.timing.append(tick)

    statuses = [f["status"] for f in report.frames[1:]]
    failed = sum(s in ("diverged", "no_residuals") for s in statuses)
    # a run counts as diverged once tracking is lost outright or updates fail routinely
    lost = "no_residuals" in statuses or failed > DIVERGED_FRACTION * max(1, len(statuses))
    summary = {
        "frames": len(report.frames),
        "aie": compute_aie(report.aie_records),
        "tracked_pairs": len(report.aie_records),
        "failed_updates": failed,
        "diverged": bool(lost),
        "use_imu": cfg.toggles.use_imu,
        "use_deformation": cfg.toggles.use_deformation,
        "ate_rmse": None,
    }
    if seq.gt_times is not None:
        summary["ate_rmse"] = compute_ate(report.timestamps, report.poses, seq.gt_times, seq.gt_poses)
    report.summary = summary
    if cfg.output.include_timing:
        totals = [t["total"] for t in report.timing[1:]]
        summary["median_frame_time"] = float(np.median(totals)) if totals else None
    log.info("processed %d frames, AIE %.3f, ATE %s", len(report.frames), summary["aie"], summary["ate_rmse"])

    for target in (cfg.output.trajectory, cfg.output.report, cfg.output.mesh):
        if target:
            Path(target).parent.mkdir(parents=True, exist_ok=True)
    if cfg.output.trajectory:
        write_trajectory(cfg.output.trajectory, report.timestamps, report.poses)
    if cfg.output.report:
        Path(cfg.output.report).write_text(report.to_json(cfg.output.include_timing))
    if cfg.output.mesh:
        try:
            write_ply(cfg.output.mesh, extract_mesh(volume))
        except EmptySurface:
            log.warning("volume has no surface; mesh not written")
    report.volume = volume
    return report


def track_eval(cfg: PipelineConfig, sequence: Sequence | None = None) -> dict:
    """AIE of the same sequence tracked with and without per-pixel deformation."""
    seq = sequence or load_sequence(cfg)
    out = {}
    for label, flag in (("direct", False), ("deformation", True)):
        c = copy.deepcopy(cfg)
        c.toggles.use_deformation = flag
        c.output = OutputSection()
        out[label] = run(c, seq).summary["aie"]
    return out


def format_aie_table(name: str, table: dict) -> str:
    return f"{'dataset':<24} {'direct':>10} {'deformation':>12}\n{name:<24} {table['direct']:>10.4f} {table['deformation']:>12.4f}"
