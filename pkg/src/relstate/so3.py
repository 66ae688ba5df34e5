"""Rotation-group primitives: hat map, exponential/logarithm, right Jacobian.

Rotations are plain 3x3 numpy arrays throughout. All maps use the right
perturbation convention R <- R Exp(delta) and switch to Taylor expansions
below ``SMALL_ANGLE`` to stay accurate in double precision.
"""

import numpy as np

SMALL_ANGLE = 1e-6

# Re-orthonormalize long products of rotations this often (see compose_chain).
ORTHONORMALIZE_EVERY = 1000


def skew(v: np.ndarray) -> np.ndarray:
    """Map a 3-vector to the antisymmetric matrix with skew(v) @ w = v x w."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(M: np.ndarray) -> np.ndarray:
    """Inverse of skew for antisymmetric M."""
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def exp_map(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula for Exp: rotation vector (rad) to rotation matrix."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    S = skew(phi)
    if theta2 < SMALL_ANGLE ** 2:
        # sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        return np.eye(3) + (1.0 - theta2 / 6.0) * S \
            + (0.5 - theta2 / 24.0) * (S @ S)
    theta = np.sqrt(theta2)
    return np.eye(3) + (np.sin(theta) / theta) * S \
        + ((1.0 - np.cos(theta)) / theta2) * (S @ S)


def log_map(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R, in (-pi, pi]; handles the theta = pi branch."""
    trace = float(np.trace(R))
    cos_theta = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    theta = np.arccos(cos_theta)
    if theta < SMALL_ANGLE:
        # phi ~ vee(R - R^T)/2 * (1 + theta^2/6)
        return vee(R - R.T) * 0.5 * (1.0 + theta * theta / 6.0)
    if np.pi - theta > 1e-7:
        return vee(R - R.T) * (0.5 * theta / np.sin(theta))
    # Near pi the antisymmetric part vanishes; recover the axis from the
    # symmetric part R ~ 2 a a^T - I and fix the signs off the largest axis.
    A = 0.5 * (R + np.eye(3))
    axis = np.sqrt(np.maximum(np.diag(A), 0.0))
    k = int(np.argmax(axis))
    if axis[k] < 1e-12:
        raise ValueError("log_map: matrix is not a rotation")
    for i in range(3):
        if i != k:
            axis[i] = A[i, k] / axis[k]
    axis /= np.linalg.norm(axis)
    # Residual antisymmetric part resolves the sign when theta < pi.
    w = vee(R - R.T)
    if w @ axis < 0.0:
        axis = -axis
    return theta * axis


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """J_r with Exp(phi + d) ~ Exp(phi) Exp(J_r(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    S = skew(phi)
    if theta2 < SMALL_ANGLE ** 2:
        return np.eye(3) - 0.5 * S + (S @ S) / 6.0
    theta = np.sqrt(theta2)
    return np.eye(3) - ((1.0 - np.cos(theta)) / theta2) * S \
        + ((theta - np.sin(theta)) / (theta2 * theta)) * (S @ S)


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse of the right Jacobian."""
    phi = np.asarray(phi, dtype=float)
    theta2 = float(phi @ phi)
    S = skew(phi)
    if theta2 < SMALL_ANGLE ** 2:
        return np.eye(3) + 0.5 * S + (S @ S) / 12.0
    theta = np.sqrt(theta2)
    # 1/theta^2 - (1 + cos)/(2 theta sin) = 1/theta^2 - cot(theta/2)/(2 theta)
    half = 0.5 * theta
    coeff = 1.0 / theta2 - np.cos(half) / (2.0 * theta * np.sin(half))
    return np.eye(3) + 0.5 * S + coeff * (S @ S)


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    """Orthonormality and det(R) = 1 within tol (Frobenius)."""
    if R.shape != (3, 3):
        return False
    err = np.linalg.norm(R.T @ R - np.eye(3))
    return err < tol and abs(np.linalg.det(R) - 1.0) < tol


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar projection via SVD)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


class RotationAccumulator:
    """Running product of rotations, re-orthonormalized periodically.

    Long chains of matrix products drift away from SO(3); projecting every
    ORTHONORMALIZE_EVERY compositions bounds the drift without measurable
    cost.
    """

    def __init__(self, R: np.ndarray | None = None):
        self.R = np.eye(3) if R is None else np.array(R, dtype=float)
        self._count = 0

    def compose(self, step: np.ndarray) -> np.ndarray:
        self.R = self.R @ step
        self._count += 1
        if self._count % ORTHONORMALIZE_EVERY == 0:
            self.R = project_to_rotation(self.R)
        return self.R
