"""Relative state container and the error-state layout used by the solver.

The state holds the follower pose/velocity expressed in the leader body
frame plus the IMU biases of both platforms. Error-state coordinates are
ordered [attitude, translation, velocity, follower gyro bias, follower
accel bias, (leader gyro bias, leader accel bias)], with the leader bias
blocks present only when they are estimated.
"""

from dataclasses import dataclass, field

import numpy as np

from . import so3

ATT = slice(0, 3)
TRA = slice(3, 6)
VEL = slice(6, 9)
BFG = slice(9, 12)
BFA = slice(12, 15)
BLG = slice(15, 18)
BLA = slice(18, 21)


class StateLayout:
    """Dimensions and block slices of the estimated error state."""

    def __init__(self, estimate_leader_bias: bool):
        self.estimate_leader_bias = estimate_leader_bias
        self.dim = 21 if estimate_leader_bias else 15

    def __repr__(self):
        return f"StateLayout(dim={self.dim})"


LAYOUT_FULL = StateLayout(estimate_leader_bias=True)
LAYOUT_MINOR = StateLayout(estimate_leader_bias=False)


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(3).copy()


@dataclass
class RelativeState:
    """Pose/velocity of the follower in the leader frame plus IMU biases."""

    R: np.ndarray                      # follower-to-leader rotation
    t: np.ndarray                      # m
    v: np.ndarray                      # m/s
    beta_fg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta_fa: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta_lg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta_la: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stamp: float = 0.0

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3).copy()
        for name in ("t", "v", "beta_fg", "beta_fa", "beta_lg", "beta_la"):
            setattr(self, name, _vec(getattr(self, name)))

    @classmethod
    def identity(cls, stamp: float = 0.0) -> "RelativeState":
        return cls(R=np.eye(3), t=np.zeros(3), v=np.zeros(3), stamp=stamp)

    def copy(self) -> "RelativeState":
        return RelativeState(self.R, self.t, self.v, self.beta_fg,
                             self.beta_fa, self.beta_lg, self.beta_la,
                             self.stamp)

    def retract(self, delta: np.ndarray, layout: StateLayout) -> "RelativeState":
        """Apply an error-state increment: R <- R Exp(da), additive elsewhere."""
        out = self.copy()
        out.R = self.R @ so3.exp_map(delta[ATT])
        out.t = self.t + delta[TRA]
        out.v = self.v + delta[VEL]
        out.beta_fg = self.beta_fg + delta[BFG]
        out.beta_fa = self.beta_fa + delta[BFA]
        if layout.estimate_leader_bias:
            out.beta_lg = self.beta_lg + delta[BLG]
            out.beta_la = self.beta_la + delta[BLA]
        return out

    def local(self, ref: "RelativeState", layout: StateLayout) -> np.ndarray:
        """Error-state coordinates of self relative to ref (self = ref + delta)."""
        delta = np.zeros(layout.dim)
        delta[ATT] = so3.log_map(ref.R.T @ self.R)
        delta[TRA] = self.t - ref.t
        delta[VEL] = self.v - ref.v
        delta[BFG] = self.beta_fg - ref.beta_fg
        delta[BFA] = self.beta_fa - ref.beta_fa
        if layout.estimate_leader_bias:
            delta[BLG] = self.beta_lg - ref.beta_lg
            delta[BLA] = self.beta_la - ref.beta_la
        return delta
