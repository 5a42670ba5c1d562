"""Canonical synthetic sequences used by the tests, the acceptance suite and scripts/.

Each fixture is a plain scene-config dict (the same schema ``rgbdi synth``
reads), so it can be dumped to YAML and regenerated from the command line.
The world frame is the scene frame; at t = 0 the camera sits near the origin
looking down +z with y pointing down, so gravity is +y.
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

CAMERA = {
    "intrinsics": {"fx": 120.0, "fy": 120.0, "cx": 79.5, "cy": 59.5, "width": 160, "height": 120,
                   "depth_scale": 5000.0},
    "imu_extrinsic": {"translation": [0.03, -0.02, 0.01], "quaternion_xyzw": [0.0, 0.0, 0.0, 1.0]},
    "gravity_world": [0.0, 9.81, 0.0],
    "imu_rate": 200.0,
    "camera_rate": 30.0,
}

# back wall plus a nearer plane covering the left of the view: the depth step
# between them is what shrinks and extends patches under lateral motion
TWO_PLANE_SCENE = {
    "primitives": [
        {"type": "plane", "center": [0.0, 0.0, 3.0], "axis_u": [1, 0, 0], "axis_v": [0, 1, 0],
         "half_u": 6.0, "half_v": 6.0,
         "texture": {"seed": 11, "components": 10, "wavelength": [0.25, 0.7], "contrast": 120, "gain": 4.0}},
        {"type": "plane", "center": [-0.45, 0.0, 1.4], "axis_u": [1, 0, 0], "axis_v": [0, 1, 0],
         "half_u": 0.5, "half_v": 1.2,
         "texture": {"seed": 12, "components": 10, "wavelength": [0.15, 0.4], "contrast": 120, "gain": 4.0}},
        {"type": "box", "center": [0.7, 0.35, 2.0], "half_sizes": [0.18, 0.18, 0.18],
         "rotation_xyzw": [0.0, 0.3826834, 0.0, 0.9238795],
         "texture": {"seed": 13, "components": 8, "wavelength": [0.2, 0.5], "contrast": 120, "gain": 4.0}},
    ],
}


def _harm(offset=0.0, terms=()):
    return {"offset": offset, "terms": [list(t) for t in terms]}


STATIC_TRAJECTORY = {"position": [0.0, 0.0, 0.0], "angles": [0.0, 0.0, 0.0]}

# peak angular rate about 0.15 rad/s, linear speed about 0.15 m/s
SLOW_TRAJECTORY = {
    "position": [
        _harm(0.0, [(0.12, 0.15, 0.0), (0.02, 0.37, 1.0)]),
        _harm(0.0, [(0.05, 0.11, 0.5)]),
        _harm(0.0, [(0.06, 0.09, 2.0)]),
    ],
    "angles": [
        _harm(0.0, [(0.04, 0.13, 0.3)]),
        _harm(0.0, [(0.10, 0.17, 1.1)]),
        _harm(0.0, [(0.05, 0.12, 2.2)]),
    ],
}

# lateral sweep with yaw and pitch oscillation; peak angular rate near 2.5 rad/s
FAST_TRAJECTORY = {
    "position": [
        _harm(0.0, [(0.15, 0.9, 0.0), (0.03, 1.7, 0.4)]),
        _harm(0.0, [(0.05, 1.1, 0.8)]),
        _harm(0.0, [(0.06, 0.7, 1.9)]),
    ],
    "angles": [
        _harm(0.0, [(0.05, 1.3, 0.2)]),
        _harm(0.0, [(0.25, 1.4, 0.7)]),
        _harm(0.0, [(0.12, 1.6, 2.5)]),
    ],
}

FIXTURES = {
    "static": {"trajectory": STATIC_TRAJECTORY, "generator": {"duration": 1.0}},
    "slow": {"trajectory": SLOW_TRAJECTORY, "generator": {"duration": 10.0}},
    "fast": {"trajectory": FAST_TRAJECTORY,
             "generator": {"duration": 10.0, "blur_samples": 5, "exposure": 0.008}},
}


def scene_config(name: str, duration: float | None = None, **generator) -> dict:
    """Full scene-config dict for fixture ``name`` (static, slow or fast)."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    fx = FIXTURES[name]
    gen = dict(fx["generator"])
    if duration is not None:
        gen["duration"] = duration
    gen.update(generator)
    return copy.deepcopy({"scene": TWO_PLANE_SCENE, "trajectory": fx["trajectory"], "camera": CAMERA,
                          "generator": gen})


def dump(name: str, path, **kw) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(scene_config(name, **kw), sort_keys=False))
    return path
