"""Visual-inertial RGB-D odometry with deformable patch features and TSDF fusion."""
from .geometry import CameraIntrinsics, Pose
from .frames import Frame, ImuSample, SequenceConfig
from .config import PipelineConfig, load_config

__version__ = "0.1.0"
__all__ = ["CameraIntrinsics", "Pose", "Frame", "ImuSample", "SequenceConfig", "PipelineConfig", "load_config"]
