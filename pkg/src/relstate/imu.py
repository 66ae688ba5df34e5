"""Single-platform IMU preintegration between two image instants.

Accumulates the gravity-free motion increments (dR, dv, dp) from
bias-corrected samples under a zero-order hold, together with their 9x9
covariance (ordered [attitude, velocity, position]), the Jacobians of the
increments w.r.t. the bias linearization point, and a cache of the first
integration step. The first-step cache feeds the closed-form correlations
between the increment noise and the angular-rate noise at the window start,
which the two-platform factor needs for its cross-covariance terms.

Noise densities are continuous-time; each step converts white noise as
sigma_d^2 = sigma^2 / dt and the bias random walk as sigma^2 * dt.
"""

from bisect import bisect_left, bisect_right
from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import EmptyInterval, NonMonotonicTime


@dataclass
class ImuNoiseParams:
    """Continuous-time noise densities of one IMU."""

    sigma_gv: float   # rad/(s sqrt(Hz)) gyro white noise
    sigma_gu: float   # rad/(s^2 sqrt(Hz)) gyro bias random walk
    sigma_av: float   # m/(s^2 sqrt(Hz)) accel white noise
    sigma_au: float   # m/(s^3 sqrt(Hz)) accel bias random walk

    def __post_init__(self):
        for name in ("sigma_gv", "sigma_gu", "sigma_av", "sigma_au"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class ImuSample:
    t: float
    acc: np.ndarray    # m/s^2 specific force
    gyro: np.ndarray   # rad/s


@dataclass
class BoundaryRate:
    """Angular rate recovered at an exact instant from stream samples.

    ``w_earlier``/``w_later`` are the interpolation weights on the samples
    straddling the instant (earlier = the one starting before it). At a
    window start the later sample is the window's first integration sample;
    at a window end the earlier one is its last. ``var_scale`` is the sum of
    squared weights. All three feed the factor covariance, which must track
    how boundary-rate noise correlates with the increment noise.
    """

    value: np.ndarray
    w_earlier: float
    w_later: float
    var_scale: float


class ImuStream:
    """Time-ordered IMU samples held as flat arrays."""

    def __init__(self, t: np.ndarray, acc: np.ndarray, gyro: np.ndarray):
        self.t = np.asarray(t, dtype=float)
        self.acc = np.asarray(acc, dtype=float).reshape(-1, 3)
        self.gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.acc) == len(self.gyro)):
            raise ValueError("mismatched stream array lengths")
        if np.any(np.diff(self.t) <= 0.0):
            raise NonMonotonicTime("IMU timestamps must be strictly increasing")
        if not (np.all(np.isfinite(self.acc)) and np.all(np.isfinite(self.gyro))):
            raise ValueError("non-finite IMU samples")

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_samples(cls, samples: list) -> "ImuStream":
        t = np.array([s.t for s in samples])
        acc = np.array([s.acc for s in samples])
        gyro = np.array([s.gyro for s in samples])
        return cls(t, acc, gyro)

    def max_gap(self, t0: float, t1: float) -> float:
        i0 = max(bisect_right(self.t, t0) - 1, 0)
        i1 = min(bisect_left(self.t, t1) + 1, len(self.t))
        ts = self.t[i0:i1]
        return float(np.max(np.diff(ts))) if len(ts) > 1 else np.inf

    def measurement_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation of (acc, gyro) at the stated timestamps."""
        if t < self.t[0] or t > self.t[-1]:
            raise EmptyInterval(f"t={t} outside stream [{self.t[0]}, {self.t[-1]}]")
        k = bisect_left(self.t, t)
        if k < len(self.t) and self.t[k] == t:
            return self.acc[k].copy(), self.gyro[k].copy()
        w = (t - self.t[k - 1]) / (self.t[k] - self.t[k - 1])
        acc = (1.0 - w) * self.acc[k - 1] + w * self.acc[k]
        gyro = (1.0 - w) * self.gyro[k - 1] + w * self.gyro[k]
        return acc, gyro

    def rate_at(self, t: float) -> BoundaryRate:
        """Instantaneous angular rate at t from increment-style samples.

        Samples represent average rates over [t_k, t_{k+1}), so they are
        interpolated at effective times t_k + h_k/2. At a frame instant that
        coincides with sample k this returns the mean of samples k-1 and k.
        """
        if t < self.t[0] or t > self.t[-1]:
            raise EmptyInterval(f"t={t} outside stream [{self.t[0]}, {self.t[-1]}]")
        h = np.diff(self.t)
        eff = self.t[:-1] + 0.5 * h
        k = bisect_left(eff, t)
        if k == 0:
            return BoundaryRate(self.gyro[0].copy(), 0.0, 1.0, 1.0)
        if k >= len(eff):
            return BoundaryRate(self.gyro[len(eff) - 1].copy(), 1.0, 0.0, 1.0)
        w = (t - eff[k - 1]) / (eff[k] - eff[k - 1])
        value = (1.0 - w) * self.gyro[k - 1] + w * self.gyro[k]
        return BoundaryRate(value, float(1.0 - w), float(w),
                            float((1.0 - w) ** 2 + w ** 2))


@dataclass
class FirstStep:
    """Quantities of the first integration step used by cross covariances."""

    dR: np.ndarray    # increment rotation of the first step
    jr: np.ndarray    # right Jacobian of that increment
    dv: np.ndarray    # velocity increment after the first step
    dp: np.ndarray    # position increment after the first step
    dt: float


@dataclass
class LastStep:
    """Right Jacobian and length of the final step (end-boundary coupling)."""

    jr: np.ndarray
    dt: float


@dataclass
class Preintegration:
    """Accumulated increments over [t_start, t_end] at a bias linearization."""

    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    cov: np.ndarray                 # 9x9, ordered [attitude, velocity, position]
    jac_dR_dbg: np.ndarray
    jac_dv_dbg: np.ndarray
    jac_dv_dba: np.ndarray
    jac_dp_dbg: np.ndarray
    jac_dp_dba: np.ndarray
    bias_lin_g: np.ndarray
    bias_lin_a: np.ndarray
    T: float
    first_step: FirstStep
    last_step: LastStep
    n_samples: int


def _window(stream: ImuStream, t_start: float, t_end: float):
    """Sample times/values covering [t_start, t_end] with interpolated ends."""
    if t_end <= t_start:
        raise EmptyInterval("t_end must exceed t_start")
    if t_start < stream.t[0] - 1e-12 or t_end > stream.t[-1] + 1e-12:
        raise EmptyInterval(
            f"window [{t_start}, {t_end}] not covered by stream "
            f"[{stream.t[0]}, {stream.t[-1]}]")
    times = [t_start]
    accs = []
    gyros = []
    a0, g0 = stream.measurement_at(t_start)
    accs.append(a0)
    gyros.append(g0)
    lo = bisect_right(stream.t, t_start)
    hi = bisect_left(stream.t, t_end)
    for k in range(lo, hi):
        times.append(stream.t[k])
        accs.append(stream.acc[k].copy())
        gyros.append(stream.gyro[k].copy())
    times.append(t_end)
    return times, accs, gyros


def integrate(stream: ImuStream, bias_g: np.ndarray, bias_a: np.ndarray,
              noise: ImuNoiseParams, t_start: float, t_end: float) -> Preintegration:
    """Preintegrate one stream over [t_start, t_end] at the given biases.

    Zero-order hold on bias-corrected samples; gravity never enters (the
    increments are gravity-free by construction). The covariance and bias
    Jacobians are propagated step by step alongside the increments.
    """
    bias_g = np.asarray(bias_g, dtype=float)
    bias_a = np.asarray(bias_a, dtype=float)
    times, accs, gyros = _window(stream, t_start, t_end)

    acc_R = so3.RotationAccumulator()
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((9, 9))
    j_r_bg = np.zeros((3, 3))
    j_v_bg = np.zeros((3, 3))
    j_v_ba = np.zeros((3, 3))
    j_p_bg = np.zeros((3, 3))
    j_p_ba = np.zeros((3, 3))
    first: FirstStep | None = None
    last: LastStep | None = None

    sg2 = noise.sigma_gv ** 2
    sa2 = noise.sigma_av ** 2
    I3 = np.eye(3)

    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        if h <= 0.0:
            continue
        w = gyros[k] - bias_g
        a = accs[k] - bias_a
        dphi = w * h
        step_R = so3.exp_map(dphi)
        jr = so3.right_jacobian(dphi)
        dR = acc_R.R
        A_hat = so3.skew(a)
        dR_A = dR @ A_hat

        # Error propagation, error state [dphi, dv, dp]:
        #   dphi' = step_R^T dphi + J_r eta_g h
        #   dv'   = dv - dR a^ dphi h + dR eta_a h
        #   dp'   = dp + dv h - dR a^ dphi h^2/2 + dR eta_a h^2/2
        A = np.eye(9)
        A[0:3, 0:3] = step_R.T
        A[3:6, 0:3] = -dR_A * h
        A[6:9, 0:3] = -0.5 * dR_A * h * h
        A[6:9, 3:6] = I3 * h
        B = np.zeros((9, 6))
        B[0:3, 0:3] = jr * h
        B[3:6, 3:6] = dR * h
        B[6:9, 3:6] = 0.5 * dR * h * h
        Q = np.diag([sg2 / h] * 3 + [sa2 / h] * 3)
        cov = A @ cov @ A.T + B @ Q @ B.T
        cov = 0.5 * (cov + cov.T)

        # Bias Jacobians (position before velocity: they use pre-update values).
        j_p_bg = j_p_bg + j_v_bg * h - 0.5 * dR_A @ j_r_bg * h * h
        j_p_ba = j_p_ba + j_v_ba * h - 0.5 * dR * h * h
        j_v_bg = j_v_bg - dR_A @ j_r_bg * h
        j_v_ba = j_v_ba - dR * h
        j_r_bg = step_R.T @ j_r_bg - jr * h

        dp = dp + dv * h + 0.5 * dR @ a * h * h
        dv = dv + dR @ a * h
        acc_R.compose(step_R)

        if first is None:
            first = FirstStep(dR=step_R.copy(), jr=jr.copy(),
                              dv=dv.copy(), dp=dp.copy(), dt=h)
        last = LastStep(jr=jr.copy(), dt=h)

    if first is None:
        raise EmptyInterval("no integration step inside the window")

    return Preintegration(
        dR=acc_R.R, dv=dv, dp=dp, cov=cov,
        jac_dR_dbg=j_r_bg, jac_dv_dbg=j_v_bg, jac_dv_dba=j_v_ba,
        jac_dp_dbg=j_p_bg, jac_dp_dba=j_p_ba,
        bias_lin_g=bias_g.copy(), bias_lin_a=bias_a.copy(),
        T=times[-1] - times[0], first_step=first, last_step=last,
        n_samples=len(times) - 1)


def first_order_bias_update(p: Preintegration, delta_bg: np.ndarray,
                            delta_ba: np.ndarray):
    """Increments at a shifted bias, to first order in the shift.

    dR_bar = dR Exp(J_dR_bg db_g); dv and dp shift linearly through their
    bias Jacobians. Attitude is independent of the accel bias.
    """
    dR_bar = p.dR @ so3.exp_map(p.jac_dR_dbg @ delta_bg)
    dv_bar = p.dv + p.jac_dv_dbg @ delta_bg + p.jac_dv_dba @ delta_ba
    dp_bar = p.dp + p.jac_dp_dbg @ delta_bg + p.jac_dp_dba @ delta_ba
    return dR_bar, dv_bar, dp_bar


def cross_cov_terms(p: Preintegration, noise: ImuNoiseParams):
    """Correlation of the increment errors with the first-sample gyro noise.

    With W = dR_first J_r_first sigma_d^2 dt_first (sigma_d^2 the discrete
    variance sigma_gv^2/dt of the first step):

        E(dphi  eta^T) = dR^T W
        E(dv    eta^T) = (dv_first - dv)^  W
        E(dp    eta^T) = (dp_first - dp)^  W + (T - dt_first) dv_first^ W

    The last term carries the elapsed time after the first step; for uniform
    sampling it equals (n-1) dt dv_first^ W.
    """
    fs = p.first_step
    sigma_d2 = noise.sigma_gv ** 2 / fs.dt
    W = fs.dR @ fs.jr * (sigma_d2 * fs.dt)
    e_phi = p.dR.T @ W
    e_v = so3.skew(fs.dv - p.dv) @ W
    e_p = so3.skew(fs.dp - p.dp) @ W + (p.T - fs.dt) * so3.skew(fs.dv) @ W
    return e_phi, e_v, e_p
