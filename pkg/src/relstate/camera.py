"""Pinhole camera model, feature observations, projection and its Jacobians."""

from dataclasses import dataclass, field

import numpy as np

from . import so3
from .errors import BehindCamera
from .state import RelativeState

Z_MIN = 1e-3


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480
    # Leader-body to camera extrinsics.
    R_l_c: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_l_c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point outside the image")
        self.R_l_c = np.asarray(self.R_l_c, dtype=float).reshape(3, 3)
        self.t_l_c = np.asarray(self.t_l_c, dtype=float).reshape(3)

    def in_bounds(self, px: np.ndarray) -> bool:
        return bool(0.0 <= px[0] < self.width and 0.0 <= px[1] < self.height)


@dataclass
class FeatureObservation:
    feature_id: int
    pixel: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        self.pixel = np.asarray(self.pixel, dtype=float).reshape(2)
        if self.sigma <= 0:
            raise ValueError("pixel sigma must be positive")


def point_in_camera(cam: CameraModel, state: RelativeState,
                    point_f: np.ndarray) -> np.ndarray:
    """Follower-frame point expressed in the camera frame."""
    return cam.R_l_c @ (state.R @ point_f + state.t) + cam.t_l_c


def project_camera_point(cam: CameraModel, p_c: np.ndarray) -> np.ndarray:
    if p_c[2] <= Z_MIN:
        raise BehindCamera(f"point depth {p_c[2]:.4g} below {Z_MIN}")
    return np.array([cam.fx * p_c[0] / p_c[2] + cam.cx,
                     cam.fy * p_c[1] / p_c[2] + cam.cy])


def project(cam: CameraModel, state: RelativeState,
            point_f: np.ndarray) -> np.ndarray:
    """Pixel of a follower-frame point under the current relative state."""
    return project_camera_point(cam, point_in_camera(cam, state, point_f))


def _projection_jacobian(cam: CameraModel, p_c: np.ndarray) -> np.ndarray:
    x, y, z = p_c
    return np.array([[cam.fx / z, 0.0, -cam.fx * x / (z * z)],
                     [0.0, cam.fy / z, -cam.fy * y / (z * z)]])


def feature_residual_jacobian(cam: CameraModel, state_j: RelativeState,
                              obs: FeatureObservation, landmark: np.ndarray,
                              with_landmark: bool = False):
    """Whitened residual (observation - prediction)/sigma and its Jacobian.

    Columns are [d_attitude_j, d_translation_j] and, when the landmark is a
    variable, [d_landmark]. Raises BehindCamera for invalid depth; callers
    drop the factor for that iteration.
    """
    landmark = np.asarray(landmark, dtype=float)
    p_c = point_in_camera(cam, state_j, landmark)
    px = project_camera_point(cam, p_c)
    r = (obs.pixel - px) / obs.sigma
    P = _projection_jacobian(cam, p_c) / obs.sigma
    J_att = P @ (-cam.R_l_c @ state_j.R @ so3.skew(landmark))
    J_tra = P @ cam.R_l_c
    cols = [-J_att, -J_tra]
    if with_landmark:
        cols.append(-(P @ cam.R_l_c @ state_j.R))
    return r, np.hstack(cols)


def bias_rw_residual(beta_i: np.ndarray, beta_j: np.ndarray,
                     sigma_u: float, T: float):
    """Whitened random-walk residual and the scale of its +/-I Jacobians."""
    if T <= 0:
        raise ValueError("T must be positive")
    scale = 1.0 / (sigma_u * np.sqrt(T))
    return (np.asarray(beta_j) - np.asarray(beta_i)) * scale, scale
