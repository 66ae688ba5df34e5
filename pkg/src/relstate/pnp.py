"""Pose recovery from fiducial corner observations.

Direct linear transform for 6+ points in general position, homography
decomposition for a single planar tag, both refined by a short Gauss-Newton
pass on the reprojection error. Returns the follower pose in the leader
frame via the known camera extrinsics.
"""

import numpy as np

from . import so3
from .camera import CameraModel, project_camera_point
from .errors import BehindCamera, DegenerateConfiguration

_REFINE_ITERS = 10


def _normalized_coords(cam: CameraModel, pixels: np.ndarray) -> np.ndarray:
    return np.column_stack([(pixels[:, 0] - cam.cx) / cam.fx,
                            (pixels[:, 1] - cam.cy) / cam.fy])


def _reprojection_refine(points: np.ndarray, pixels: np.ndarray,
                         cam: CameraModel, R: np.ndarray, t: np.ndarray):
    """Gauss-Newton on (R, t) in the camera frame, right perturbation."""
    for _ in range(_REFINE_ITERS):
        H = np.zeros((6, 6))
        g = np.zeros(6)
        for p, px in zip(points, pixels):
            p_c = R @ p + t
            if p_c[2] <= 1e-6:
                continue
            x, y, z = p_c
            P = np.array([[cam.fx / z, 0.0, -cam.fx * x / (z * z)],
                          [0.0, cam.fy / z, -cam.fy * y / (z * z)]])
            r = px - project_camera_point(cam, p_c)
            J = np.zeros((2, 6))
            J[:, 0:3] = -P @ (-R @ so3.skew(p))
            J[:, 3:6] = -P
            H += J.T @ J
            g += J.T @ r
        try:
            delta = np.linalg.solve(H + 1e-12 * np.eye(6), -g)
        except np.linalg.LinAlgError:
            break
        R = R @ so3.exp_map(delta[0:3])
        t = t + delta[3:6]
        if np.linalg.norm(delta) < 1e-14:
            break
    return R, t


def _reprojection_rms(points, pixels, cam, R, t) -> float:
    errs = []
    for p, px in zip(points, pixels):
        p_c = R @ p + t
        if p_c[2] <= 1e-6:
            return np.inf
        errs.append(px - project_camera_point(cam, p_c))
    return float(np.sqrt(np.mean(np.square(errs))))


def _dlt_pose(points: np.ndarray, norm: np.ndarray):
    """12-parameter DLT for >= 6 points in general position."""
    n = len(points)
    A = np.zeros((2 * n, 12))
    for k, (p, m) in enumerate(zip(points, norm)):
        X = np.hstack([p, 1.0])
        A[2 * k, 0:4] = X
        A[2 * k, 8:12] = -m[0] * X
        A[2 * k + 1, 4:8] = X
        A[2 * k + 1, 8:12] = -m[1] * X
    _, _, Vt = np.linalg.svd(A)
    P = Vt[-1].reshape(3, 4)
    M = P[:, :3]
    # Majority of points must land in front of the camera.
    depths = points @ M[2, :].T + P[2, 3]
    if np.sum(depths > 0) < n / 2:
        P = -P
        M = -M
    U, sv, Vt2 = np.linalg.svd(M)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt2)]) @ Vt2
    scale = np.mean(sv)
    t = P[:, 3] / scale
    return R, t


def _plane_frame(points: np.ndarray):
    """Orthonormal in-plane frame for coplanar points (origin at centroid)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, sv, Vt = np.linalg.svd(centered)
    R_plane = Vt.T   # columns: two in-plane axes, plane normal
    if np.linalg.det(R_plane) < 0:
        R_plane[:, 2] = -R_plane[:, 2]
    coords2d = centered @ R_plane[:, :2]
    return centroid, R_plane, coords2d, sv


def _homography_pose(points: np.ndarray, norm: np.ndarray):
    """Planar pose: homography from the tag plane, then orthonormalization."""
    centroid, R_plane, uv, _ = _plane_frame(points)
    n = len(points)
    A = np.zeros((2 * n, 9))
    for k, ((u, v), m) in enumerate(zip(uv, norm)):
        X = np.array([u, v, 1.0])
        A[2 * k, 0:3] = X
        A[2 * k, 6:9] = -m[0] * X
        A[2 * k + 1, 3:6] = X
        A[2 * k + 1, 6:9] = -m[1] * X
    _, _, Vt = np.linalg.svd(A)
    Hm = Vt[-1].reshape(3, 3)
    nrm = 0.5 * (np.linalg.norm(Hm[:, 0]) + np.linalg.norm(Hm[:, 1]))
    if nrm < 1e-12:
        raise DegenerateConfiguration("degenerate homography")
    Hm = Hm / nrm
    if Hm[2, 2] < 0:
        Hm = -Hm
    r1, r2, tp = Hm[:, 0], Hm[:, 1], Hm[:, 2]
    r3 = np.cross(r1, r2)
    R_cp = so3.project_to_rotation(np.column_stack([r1, r2, r3]))
    # Compose plane frame -> object frame.
    R = R_cp @ R_plane.T
    t = tp - R @ centroid
    return R, t


def solve_pnp(points: np.ndarray, pixels: np.ndarray, cam: CameraModel):
    """Camera-frame pose (R_obj_to_cam, t_obj_in_cam) from 2D-3D matches."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(points) < 4:
        raise DegenerateConfiguration(
            f"need at least 4 correspondences, got {len(points)}")
    unique = np.unique(np.round(points, 12), axis=0)
    if len(unique) < 4:
        raise DegenerateConfiguration("fewer than 4 distinct points")
    centroid, R_plane, coords2d, sv = _plane_frame(unique)
    span = sv[1] / max(sv[0], 1e-12)
    if span < 1e-6:
        raise DegenerateConfiguration("points are collinear")
    planar = (sv[2] / max(sv[0], 1e-12)) < 1e-9

    norm = _normalized_coords(cam, pixels)
    if planar:
        R, t = _homography_pose(points, norm)
    elif len(unique) >= 6:
        R, t = _dlt_pose(points, norm)
    else:
        raise DegenerateConfiguration(
            "non-planar configuration needs at least 6 distinct points")
    R, t = _reprojection_refine(points, pixels, cam, R, t)
    if _reprojection_rms(points, pixels, cam, R, t) == np.inf:
        raise DegenerateConfiguration("solution places points behind camera")
    return R, t


def pnp_initialize(observations: list, landmarks: dict, cam: CameraModel):
    """Relative pose (R follower-to-leader, t follower-in-leader) from one frame.

    Velocity and biases are the caller's to initialize (zero, per the
    tracking startup policy).
    """
    points = []
    pixels = []
    for obs in observations:
        if obs.feature_id in landmarks:
            points.append(landmarks[obs.feature_id])
            pixels.append(obs.pixel)
    if len(points) < 4:
        raise DegenerateConfiguration(
            f"need at least 4 known correspondences, got {len(points)}")
    R_fc, t_fc = solve_pnp(np.array(points), np.array(pixels), cam)
    R = cam.R_l_c.T @ R_fc
    t = cam.R_l_c.T @ (t_fc - cam.t_l_c)
    return R, t
