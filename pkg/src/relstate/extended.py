"""Two-platform preintegration factor on the relative state.

Combines the leader and follower IMU preintegrations over one frame
interval into a single constraint between the relative states at the
interval ends. Gravity cancels between the two platforms, so nothing here
takes a gravity argument.

With dRf/dvf/dpf and dRl/dvl/dpl the (bias-corrected) increments, R_i the
relative attitude, t/v the relative translation/velocity, and w_i, w_j the
leader body rates at the interval ends, the noise-free propagation is

    R_j = dRl^T R_i dRf
    t_j = dRl^T (R_i dpf - dpl + t_i + v_i T + w_i^ t_i T)
    v_j = dRl^T (R_i dvf - dvl + v_i + w_i^ t_i) - w_j^ t_j

The factor covariance combines both preintegration covariances with the
boundary-rate noise and the closed-form correlation between the leader
increment errors and the leader's first in-window gyro sample (the S term).
"""

from dataclasses import dataclass

import numpy as np

from . import so3
from .errors import NonPsdResult
from .imu import ImuNoiseParams, Preintegration, cross_cov_terms, first_order_bias_update
from .state import ATT, BFA, BFG, BLA, BLG, TRA, VEL, RelativeState, StateLayout

_COV_JITTER = 1e-12


@dataclass
class ExtendedFactor:
    """Immutable constraint between relative states at instants i and j."""

    pre_f: Preintegration
    pre_l: Preintegration
    omega_li_meas: np.ndarray    # raw leader rate at t_i (bias re-corrected per state)
    omega_lj_meas: np.ndarray    # raw leader rate at t_j
    omega_li_hat: np.ndarray     # bias-corrected at build time
    omega_lj_hat: np.ndarray
    T: float
    cov_c: np.ndarray            # 9x9 [attitude, velocity, translation]
    info_c: np.ndarray
    # Boundary-rate interpolation bookkeeping (see ImuStream.rate_at):
    # weight of the boundary rate on the window's first / last gyro sample
    # and the variance scale of each interpolated rate.
    boundary_weight_i: float = 1.0
    boundary_weight_j: float = 1.0
    boundary_var_scale_i: float = 1.0
    boundary_var_scale_j: float = 1.0


def predict_state(pre_f: Preintegration, pre_l: Preintegration,
                  omega_li_hat: np.ndarray, omega_lj_hat: np.ndarray,
                  state_i: RelativeState):
    """Propagate state_i across the interval; returns (R_j, v_j, t_j).

    The increments are first-order corrected to state_i's biases. t_j is
    computed first and substituted into v_j.
    """
    dRf, dvf, dpf = first_order_bias_update(
        pre_f, state_i.beta_fg - pre_f.bias_lin_g,
        state_i.beta_fa - pre_f.bias_lin_a)
    dRl, dvl, dpl = first_order_bias_update(
        pre_l, state_i.beta_lg - pre_l.bias_lin_g,
        state_i.beta_la - pre_l.bias_lin_a)
    T = pre_l.T
    R_i, t_i, v_i = state_i.R, state_i.t, state_i.v
    wi_ti = np.cross(omega_li_hat, t_i)
    t_j = dRl.T @ (R_i @ dpf - dpl + t_i + v_i * T + wi_ti * T)
    v_j = dRl.T @ (R_i @ dvf - dvl + v_i + wi_ti) - np.cross(omega_lj_hat, t_j)
    R_j = dRl.T @ R_i @ dRf
    return R_j, v_j, t_j


def propagate_covariance(pre_f: Preintegration, pre_l: Preintegration,
                         state_i: RelativeState, state_j_pred,
                         omega_lj_hat: np.ndarray, noise_l: ImuNoiseParams,
                         boundary_weight_i: float = 1.0,
                         boundary_weight_j: float = 0.0,
                         boundary_var_scale_i: float = 1.0,
                         boundary_var_scale_j: float = 1.0) -> np.ndarray:
    """Covariance of the combined increment error, ordered [att, vel, tra].

    Linearized noise model (eta_i/eta_j the boundary gyro noises, dphi/dv/dp
    the per-platform increment errors):

        dphi_c = dphi_f - dRc^T dphi_l
        dv_c   = R_i dv_f - dv_l - t_i^ eta_i + dRl t_j^ eta_j
                 + dRl (v_j + w_j^ t_j)^ dphi_l
        dp_c   = R_i dp_f - dp_l + dRl t_j^ dphi_l - t_i^ eta_i T

    assembled as K_f S_f K_f^T + K_l S_l K_l^T + boundary terms + S + S^T.
    S collects the correlation of the leader increment errors with the
    boundary rates: the start-boundary rate shares the first in-window gyro
    sample (closed forms from cross_cov_terms, scaled by the interpolation
    weight), and the end-boundary rate shares the last one, which couples to
    the attitude error alone through the final step's right Jacobian.
    """
    R_i, t_i = state_i.R, state_i.t
    _, v_j, t_j = state_j_pred
    dRl = pre_l.dR
    dRc = dRl.T @ R_i @ pre_f.dR
    T = pre_l.T
    I3 = np.eye(3)

    K_f = np.zeros((9, 9))
    K_f[0:3, 0:3] = I3
    K_f[3:6, 3:6] = R_i
    K_f[6:9, 6:9] = R_i

    K_l = np.zeros((9, 9))
    K_l[0:3, 0:3] = -dRc.T
    K_l[3:6, 0:3] = dRl @ so3.skew(v_j + np.cross(omega_lj_hat, t_j))
    K_l[3:6, 3:6] = -I3
    K_l[6:9, 0:3] = dRl @ so3.skew(t_j)
    K_l[6:9, 6:9] = -I3

    K_gi = np.zeros((9, 3))
    K_gi[3:6, :] = -so3.skew(t_i)
    K_gi[6:9, :] = -so3.skew(t_i) * T
    K_gj = np.zeros((9, 3))
    K_gj[3:6, :] = dRl @ so3.skew(t_j)

    sigma_d2_i = noise_l.sigma_gv ** 2 / pre_l.first_step.dt
    sigma_d2_j = noise_l.sigma_gv ** 2 / pre_l.last_step.dt
    e_phi, e_v, e_p = cross_cov_terms(pre_l, noise_l)
    E_i = np.vstack([e_phi, e_v, e_p]) * boundary_weight_i
    E_j = np.zeros((9, 3))
    E_j[0:3, :] = boundary_weight_j * pre_l.last_step.jr \
        * (sigma_d2_j * pre_l.last_step.dt)
    S = K_l @ E_i @ K_gi.T + K_l @ E_j @ K_gj.T

    cov = (K_f @ pre_f.cov @ K_f.T
           + K_l @ pre_l.cov @ K_l.T
           + boundary_var_scale_i * sigma_d2_i * K_gi @ K_gi.T
           + boundary_var_scale_j * sigma_d2_j * K_gj @ K_gj.T
           + S + S.T)
    cov = 0.5 * (cov + cov.T)
    min_eig = float(np.linalg.eigvalsh(cov)[0])
    if min_eig < -1e-9:
        raise NonPsdResult(f"combined covariance indefinite (min eig {min_eig:.3e})")
    return cov + _COV_JITTER * np.eye(9)


def build_extended_factor(pre_f: Preintegration, pre_l: Preintegration,
                          rate_i, rate_j, state_i: RelativeState,
                          noise_l: ImuNoiseParams) -> ExtendedFactor:
    """Assemble the factor at state_i's linearization.

    rate_i / rate_j are BoundaryRate recoveries of the leader body rate at
    the interval ends (raw, uncorrected). The covariance is evaluated once
    at the propagated state and held fixed for the tracking cycle.
    """
    if abs(pre_f.T - pre_l.T) > 1e-9:
        raise ValueError("platform preintegrations span different intervals")
    w_i = np.asarray(rate_i.value, dtype=float)
    w_j = np.asarray(rate_j.value, dtype=float)
    w_i_hat = w_i - state_i.beta_lg
    w_j_hat = w_j - state_i.beta_lg
    pred = predict_state(pre_f, pre_l, w_i_hat, w_j_hat, state_i)
    cov = propagate_covariance(
        pre_f, pre_l, state_i, pred, w_j_hat, noise_l,
        boundary_weight_i=rate_i.w_later,
        boundary_weight_j=rate_j.w_earlier,
        boundary_var_scale_i=rate_i.var_scale,
        boundary_var_scale_j=rate_j.var_scale)
    info = np.linalg.inv(cov)
    info = 0.5 * (info + info.T)
    return ExtendedFactor(
        pre_f=pre_f, pre_l=pre_l,
        omega_li_meas=w_i, omega_lj_meas=w_j,
        omega_li_hat=w_i_hat, omega_lj_hat=w_j_hat,
        T=pre_l.T, cov_c=cov, info_c=info,
        boundary_weight_i=rate_i.w_later,
        boundary_weight_j=rate_j.w_earlier,
        boundary_var_scale_i=rate_i.var_scale,
        boundary_var_scale_j=rate_j.var_scale)


def _corrected(f: ExtendedFactor, state_i: RelativeState):
    dbg_f = state_i.beta_fg - f.pre_f.bias_lin_g
    dba_f = state_i.beta_fa - f.pre_f.bias_lin_a
    dbg_l = state_i.beta_lg - f.pre_l.bias_lin_g
    dba_l = state_i.beta_la - f.pre_l.bias_lin_a
    cf = first_order_bias_update(f.pre_f, dbg_f, dba_f)
    cl = first_order_bias_update(f.pre_l, dbg_l, dba_l)
    return cf, cl, dbg_f, dbg_l


def residual(f: ExtendedFactor, state_i: RelativeState,
             state_j: RelativeState) -> np.ndarray:
    """9-vector [r_att (rad), r_vel (m/s), r_tra (m)].

    Preintegrations are bias-corrected with the instant-i bias variables;
    the boundary rates are re-corrected with the bias variable of their own
    instant (w_i with state_i's, w_j with state_j's leader gyro bias).
    """
    (dRf, dvf, dpf), (dRl, dvl, dpl), _, _ = _corrected(f, state_i)
    R_i, t_i, v_i = state_i.R, state_i.t, state_i.v
    R_j, t_j, v_j = state_j.R, state_j.t, state_j.v
    w_i = f.omega_li_meas - state_i.beta_lg
    w_j = f.omega_lj_meas - state_j.beta_lg
    T = f.T

    r = np.zeros(9)
    r[0:3] = so3.log_map(R_j.T @ dRl.T @ R_i @ dRf)
    vi_term = v_i + np.cross(w_i, t_i)
    r[3:6] = R_i @ dvf - dvl - dRl @ (v_j + np.cross(w_j, t_j)) + vi_term
    r[6:9] = R_i @ dpf - dpl - dRl @ t_j + t_i + vi_term * T
    return r


def residual_jacobians(f: ExtendedFactor, state_i: RelativeState,
                       state_j: RelativeState, layout: StateLayout):
    """Residual and its 9 x 2*dim Jacobian w.r.t. [state_i | state_j].

    Attitude uses the right perturbation R <- R Exp(da); vector states are
    additive. Entries are exact derivatives of ``residual`` (the bias-update
    Exp chain contributes a right-Jacobian factor on the gyro-bias columns),
    so they match central finite differences at any state, not only near
    zero residual. Structural zeros are left untouched.
    """
    (dRf, dvf, dpf), (dRl, dvl, dpl), dbg_f, dbg_l = _corrected(f, state_i)
    R_i, t_i, v_i = state_i.R, state_i.t, state_i.v
    R_j, t_j, v_j = state_j.R, state_j.t, state_j.v
    w_i = f.omega_li_meas - state_i.beta_lg
    w_j = f.omega_lj_meas - state_j.beta_lg
    T = f.T
    I3 = np.eye(3)

    r = np.zeros(9)
    r_att = so3.log_map(R_j.T @ dRl.T @ R_i @ dRf)
    r[0:3] = r_att
    vi_term = v_i + np.cross(w_i, t_i)
    r[3:6] = R_i @ dvf - dvl - dRl @ (v_j + np.cross(w_j, t_j)) + vi_term
    r[6:9] = R_i @ dpf - dpl - dRl @ t_j + t_i + vi_term * T

    jr_inv = so3.right_jacobian_inv(r_att)
    jr_inv_neg = so3.right_jacobian_inv(-r_att)
    # Exact derivative of Exp(J (db + eps)) w.r.t. eps.
    jg_f = so3.right_jacobian(f.pre_f.jac_dR_dbg @ dbg_f) @ f.pre_f.jac_dR_dbg
    jg_l = so3.right_jacobian(f.pre_l.jac_dR_dbg @ dbg_l) @ f.pre_l.jac_dR_dbg

    D = layout.dim
    J = np.zeros((9, 2 * D))
    Ji = J[:, 0:D]
    Jj = J[:, D:2 * D]

    # Attitude rows.
    Ji[0:3, ATT] = jr_inv @ dRf.T
    Jj[0:3, ATT] = -jr_inv_neg
    Ji[0:3, BFG] = jr_inv @ jg_f
    if layout.estimate_leader_bias:
        # -J_r^{-1}(-r) R_j^T d(dRl)/db  (exact form of the listed entry)
        Ji[0:3, BLG] = -jr_inv_neg @ R_j.T @ jg_l

    # Velocity rows.
    Ji[3:6, ATT] = -R_i @ so3.skew(dvf)
    Ji[3:6, TRA] = so3.skew(w_i)
    Ji[3:6, VEL] = I3
    Ji[3:6, BFG] = R_i @ f.pre_f.jac_dv_dbg
    Ji[3:6, BFA] = R_i @ f.pre_f.jac_dv_dba
    Jj[3:6, TRA] = -dRl @ so3.skew(w_j)
    Jj[3:6, VEL] = -dRl
    if layout.estimate_leader_bias:
        Ji[3:6, BLG] = (-f.pre_l.jac_dv_dbg
                        + dRl @ so3.skew(v_j + np.cross(w_j, t_j)) @ jg_l
                        + so3.skew(t_i))
        Ji[3:6, BLA] = -f.pre_l.jac_dv_dba
        Jj[3:6, BLG] = -dRl @ so3.skew(t_j)

    # Translation rows.
    Ji[6:9, ATT] = -R_i @ so3.skew(dpf)
    Ji[6:9, TRA] = I3 + so3.skew(w_i) * T
    Ji[6:9, VEL] = I3 * T
    Ji[6:9, BFG] = R_i @ f.pre_f.jac_dp_dbg
    Ji[6:9, BFA] = R_i @ f.pre_f.jac_dp_dba
    Jj[6:9, TRA] = -dRl
    if layout.estimate_leader_bias:
        Ji[6:9, BLG] = (-f.pre_l.jac_dp_dbg
                        + dRl @ so3.skew(t_j) @ jg_l
                        + so3.skew(t_i) * T)
        Ji[6:9, BLA] = -f.pre_l.jac_dp_dba

    return r, J
