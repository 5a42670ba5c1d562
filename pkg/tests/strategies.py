"""Shared hypothesis strategies and small numeric oracles for the test suite."""
import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rgbdi.geometry import CameraIntrinsics, Pose

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
small_vec3 = arrays(np.float64, 3, elements=st.floats(-0.5, 0.5, allow_nan=False))
rotation_vec = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0, allow_nan=False))
seeds = st.integers(min_value=0, max_value=2**31 - 1)


def expm_series(A, terms=20):
    """Truncated power series of the matrix exponential (independent of Rodrigues)."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


@st.composite
def poses(draw, max_translation=5.0):
    rv = draw(rotation_vec)
    t = draw(arrays(np.float64, 3, elements=st.floats(-max_translation, max_translation, allow_nan=False)))
    from rgbdi.geometry import so3_exp

    return Pose(so3_exp(rv), t)


def tum_intrinsics():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def small_intrinsics():
    return CameraIntrinsics(120.0, 120.0, 79.5, 59.5, 160, 120)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    from rgbdi.geometry import quaternion_to_rotation

    return quaternion_to_rotation(q)
