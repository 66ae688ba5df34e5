"""Dev smoke test: FD Jacobians of the extended factor + MC covariance."""
import numpy as np

from relstate import so3
from relstate.imu import ImuNoiseParams, ImuStream, integrate
from relstate.extended import build_extended_factor, predict_state, residual, residual_jacobians
from relstate.state import RelativeState, LAYOUT_FULL

rng = np.random.default_rng(7)

NOISE_F = ImuNoiseParams(2.269e-3, 1.536e-5, 8.182e-3, 6.154e-4)
NOISE_L = ImuNoiseParams(1.528e-3, 1.867e-5, 1.244e-2, 7.841e-4)


def random_stream(rng, n=12, h=0.004, wmag=3.0, amag=5.0):
    t = np.arange(n) * h
    w0 = rng.standard_normal(3)
    a0 = rng.standard_normal(3)
    w = wmag * (w0[None, :] + 0.3 * np.sin(2 * np.pi * 3 * t)[:, None] * rng.standard_normal(3)[None, :])
    a = amag * (a0[None, :] + 0.3 * np.cos(2 * np.pi * 2 * t)[:, None] * rng.standard_normal(3)[None, :])
    return ImuStream(t, a, w)


def random_state(rng, stamp=0.0):
    return RelativeState(
        R=so3.exp_map(rng.uniform(-1.5, 1.5, 3)),
        t=rng.normal(0, 0.5, 3), v=rng.normal(0, 0.5, 3),
        beta_fg=rng.normal(0, 0.01, 3), beta_fa=rng.normal(0, 0.05, 3),
        beta_lg=rng.normal(0, 0.01, 3), beta_la=rng.normal(0, 0.05, 3),
        stamp=stamp)


def make_factor(rng):
    sf = random_stream(rng)
    sl = random_stream(rng)
    t0, t1 = 0.0, 0.04
    pf = integrate(sf, np.zeros(3), np.zeros(3), NOISE_F, t0, t1)
    pl = integrate(sl, np.zeros(3), np.zeros(3), NOISE_L, t0, t1)
    si = random_state(rng)
    ri = sl.rate_at(t0)
    rj = sl.rate_at(t1)
    return build_extended_factor(pf, pl, ri, rj, si, NOISE_L), si


def fd_check(n_states=20, step=1e-6):
    worst = 0.0
    layout = LAYOUT_FULL
    for _ in range(n_states):
        f, si = make_factor(rng)
        sj = random_state(rng)
        r0, J = residual_jacobians(f, si, sj, layout)
        D = layout.dim
        J_fd = np.zeros_like(J)
        for col in range(2 * D):
            d = np.zeros(2 * D)
            d[col] = step
            sip = si.retract(d[:D], layout)
            sjp = sj.retract(d[D:], layout)
            sim_ = si.retract(-d[:D], layout)
            sjm = sj.retract(-d[D:], layout)
            rp = residual(f, sip, sjp)
            rm = residual(f, sim_, sjm)
            J_fd[:, col] = (rp - rm) / (2 * step)
        # blockwise relative error
        for br in range(3):
            for bc in range(2 * D // 3):
                A = J[3 * br:3 * br + 3, 3 * bc:3 * bc + 3]
                B = J_fd[3 * br:3 * br + 3, 3 * bc:3 * bc + 3]
                scale = max(np.linalg.norm(A), np.linalg.norm(B), 1.0)
                err = np.linalg.norm(A - B) / scale
                if err > worst:
                    worst = err
                    worst_blk = (br, bc, np.linalg.norm(A), np.linalg.norm(B))
    print("FD worst relative block error:", worst, worst_blk)


def residual_zero_at_prediction():
    f, si = make_factor(rng)
    R_j, v_j, t_j = predict_state(f.pre_f, f.pre_l, f.omega_li_hat, f.omega_lj_hat, si)
    sj = RelativeState(R=R_j, t=t_j, v=v_j, beta_fg=si.beta_fg, beta_fa=si.beta_fa,
                       beta_lg=si.beta_lg, beta_la=si.beta_la)
    r = residual(f, si, sj)
    print("residual at prediction:", np.linalg.norm(r))


# ---- MC covariance check -------------------------------------------------

def batched_exp(phi):
    theta2 = np.einsum('ij,ij->i', phi, phi)
    theta = np.sqrt(theta2)
    N = len(phi)
    S = np.zeros((N, 3, 3))
    S[:, 0, 1] = -phi[:, 2]; S[:, 0, 2] = phi[:, 1]
    S[:, 1, 0] = phi[:, 2];  S[:, 1, 2] = -phi[:, 0]
    S[:, 2, 0] = -phi[:, 1]; S[:, 2, 1] = phi[:, 0]
    S2 = S @ S
    small = theta < 1e-6
    with np.errstate(invalid='ignore', divide='ignore'):
        c1 = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / np.where(theta == 0, 1, theta))
        c2 = np.where(small, 0.5 - theta2 / 24.0, (1 - np.cos(theta)) / np.where(theta2 == 0, 1, theta2))
    return np.eye(3)[None] + c1[:, None, None] * S + c2[:, None, None] * S2


def batched_log(R):
    tr = np.trace(R, axis1=1, axis2=2)
    c = np.clip(0.5 * (tr - 1), -1, 1)
    theta = np.arccos(c)
    w = np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], 1)
    small = theta < 1e-6
    with np.errstate(invalid='ignore', divide='ignore'):
        coef = np.where(small, 0.5 + theta**2 / 12, 0.5 * theta / np.sin(np.where(theta == 0, 1, theta)))
    return coef[:, None] * w


def batched_integrate(t, acc, gyro, noise, rng, n_trials):
    """Return noisy (dR, dv, dp) over all steps plus first-sample gyro noise."""
    n = len(t) - 1
    sg = noise.sigma_gv; sa = noise.sigma_av
    dR = np.broadcast_to(np.eye(3), (n_trials, 3, 3)).copy()
    dv = np.zeros((n_trials, 3)); dp = np.zeros((n_trials, 3))
    eta_first = None
    for k in range(n):
        h = t[k + 1] - t[k]
        eg = rng.normal(0, sg / np.sqrt(h), (n_trials, 3))
        ea = rng.normal(0, sa / np.sqrt(h), (n_trials, 3))
        if k == 0:
            eta_first = eg.copy()
        w = gyro[k][None] + eg
        a = acc[k][None] + ea
        dp = dp + dv * h + 0.5 * np.einsum('nij,nj->ni', dR, a) * h * h
        dv = dv + np.einsum('nij,nj->ni', dR, a) * h
        dR = dR @ batched_exp(w * h)
    return dR, dv, dp, eta_first


def mc_covariance(n_trials=60000):
    rng2 = np.random.default_rng(42)
    # constant-ish deterministic signals
    n = 12
    h = 0.004
    t = np.arange(n) * h
    gy_f = np.array([0.5, -0.3, 0.8])[None] * np.ones((n, 1)) + 0.2 * np.sin(t)[:, None]
    ac_f = np.array([1.0, 2.0, -9.0])[None] * np.ones((n, 1)) + 0.5 * np.cos(t)[:, None]
    gy_l = np.array([4.0, 2.0, -1.0])[None] * np.ones((n, 1)) + 0.3 * np.sin(2 * t)[:, None]
    ac_l = np.array([-3.0, 40.0, 2.0])[None] * np.ones((n, 1)) + 1.0 * np.cos(3 * t)[:, None]
    sf = ImuStream(t, ac_f, gy_f)
    sl = ImuStream(t, ac_l, gy_l)
    t0, t1 = h, 0.004 * 10 + h  # use [h, h+0.036]? keep 9 steps inside
    t0, t1 = 0.004, 0.04        # 9 steps: samples 1..9, boundary uses sample 0 too
    pf = integrate(sf, np.zeros(3), np.zeros(3), NOISE_F, t0, t1)
    pl = integrate(sl, np.zeros(3), np.zeros(3), NOISE_L, t0, t1)
    si = random_state(np.random.default_rng(3))
    si.beta_fg[:] = 0; si.beta_fa[:] = 0; si.beta_lg[:] = 0; si.beta_la[:] = 0
    ri = sl.rate_at(t0); rj = sl.rate_at(t1)
    fac = build_extended_factor(pf, pl, ri, rj, si, NOISE_L)
    R_j, v_j, t_j = predict_state(pf, pl, fac.omega_li_hat, fac.omega_lj_hat, si)

    # clean extended deltas
    def extended_deltas(dRf, dvf, dpf, dRl, dvl, dpl, wi, wj):
        T = t1 - t0
        dRc = np.swapaxes(dRl, -1, -2) @ (si.R[None] @ dRf)
        dvc = (np.einsum('ij,nj->ni', si.R, dvf) - dvl
               - np.einsum('nij,j->ni', dRl, v_j + 0 * t_j)
               - np.einsum('nij,nj->ni', dRl, np.cross(wj, t_j[None]))
               + np.cross(wi, t_i_const[None]))
        dtc = (np.einsum('ij,nj->ni', si.R, dpf) - dpl
               - np.einsum('nij,j->ni', dRl, t_j)
               + np.cross(wi, t_i_const[None]) * T)
        return dRc, dvc, dtc

    t_i_const = si.t
    # window samples for integration: indices where t in [t0, t1)
    sel = slice(1, 10)  # samples 1..9 (9 steps, ends at t=0.040)
    tw = t[1:11]
    n_tr = n_trials
    # follower/leader noisy increments
    dRf, dvf, dpf, _ = batched_integrate(tw, ac_f[sel], gy_f[sel], NOISE_F, rng2, n_tr)
    # leader: need noise on samples 0..10 for boundary interp; handle manually
    sg = NOISE_L.sigma_gv; sa = NOISE_L.sigma_av
    eg_all = rng2.normal(0, sg / np.sqrt(h), (12, n_tr, 3))
    ea_all = rng2.normal(0, sa / np.sqrt(h), (12, n_tr, 3))
    dRl = np.broadcast_to(np.eye(3), (n_tr, 3, 3)).copy()
    dvl = np.zeros((n_tr, 3)); dpl = np.zeros((n_tr, 3))
    for k in range(1, 10):
        w = gy_l[k][None] + eg_all[k]
        a = ac_l[k][None] + ea_all[k]
        dpl = dpl + dvl * h + 0.5 * np.einsum('nij,nj->ni', dRl, a) * h * h
        dvl = dvl + np.einsum('nij,nj->ni', dRl, a) * h
        dRl = dRl @ batched_exp(w * h)
    wi_n = 0.5 * (gy_l[0][None] + eg_all[0] + gy_l[1][None] + eg_all[1])
    wj_n = 0.5 * (gy_l[9][None] + eg_all[9] + gy_l[10][None] + eg_all[10])

    dRc_n, dvc_n, dtc_n = extended_deltas(dRf, dvf, dpf, dRl, dvl, dpl, wi_n, wj_n)
    # clean (boundary rates from clean samples, same interpolation)
    one = lambda x: np.broadcast_to(x, (1,) + x.shape).copy()
    dRf0 = one(pf.dR); dvf0 = one(pf.dv); dpf0 = one(pf.dp)
    dRl0 = one(pl.dR); dvl0 = one(pl.dv); dpl0 = one(pl.dp)
    wi0 = 0.5 * (gy_l[0] + gy_l[1])[None]
    wj0 = 0.5 * (gy_l[9] + gy_l[10])[None]
    dRc_c, dvc_c, dtc_c = extended_deltas(dRf0, dvf0, dpf0, dRl0, dvl0, dpl0, wi0, wj0)

    dphi = -batched_log(np.swapaxes(dRc_n, -1, -2) @ dRc_c)
    dv = dvc_n - dvc_c
    dt = dtc_n - dtc_c
    err = np.hstack([dphi, dv, dt])
    err -= err.mean(axis=0)
    S_mc = (err.T @ err) / n_tr
    S_an = fac.cov_c
    rel = np.linalg.norm(S_mc - S_an) / np.linalg.norm(S_mc)
    print("MC vs analytic covariance rel Frobenius:", rel)
    # without S terms
    from relstate.extended import propagate_covariance
    cov_noS = propagate_covariance(pf, pl, si, (R_j, v_j, t_j), fac.omega_lj_hat,
                                   NOISE_L, boundary_weight_i=0.0, boundary_weight_j=0.0,
                                   boundary_var_scale_i=0.5, boundary_var_scale_j=0.5)
    rel_noS = np.linalg.norm(S_mc - cov_noS) / np.linalg.norm(S_mc)
    print("without S:", rel_noS)
    labels = ["att", "vel", "tra"]
    for bi in range(3):
        for bj in range(3):
            m = S_mc[3*bi:3*bi+3, 3*bj:3*bj+3]
            a = S_an[3*bi:3*bi+3, 3*bj:3*bj+3]
            ns = cov_noS[3*bi:3*bi+3, 3*bj:3*bj+3]
            print(f"  {labels[bi]}-{labels[bj]}: mc={np.linalg.norm(m):.3e} "
                  f"an={np.linalg.norm(a):.3e} noS={np.linalg.norm(ns):.3e} "
                  f"relerr={np.linalg.norm(m-a)/max(np.linalg.norm(m),1e-30):.3f}")


def mc_cross_blocks(n_trials=400000):
    """Directly sample E(dphi eta_1), E(dv eta_1), E(dp eta_1) vs closed form."""
    rng3 = np.random.default_rng(5)
    n = 11
    h = 0.004
    t = np.arange(n) * h
    gy = np.array([4.0, 2.0, -1.0])[None] * np.ones((n, 1)) + 0.3 * np.sin(2 * t)[:, None]
    ac = np.array([-3.0, 40.0, 2.0])[None] * np.ones((n, 1)) + 1.0 * np.cos(3 * t)[:, None]
    stream = ImuStream(t, ac, gy)
    p = integrate(stream, np.zeros(3), np.zeros(3), NOISE_L, 0.0, 0.04)
    from relstate.imu import cross_cov_terms
    e_phi, e_v, e_p = cross_cov_terms(p, NOISE_L)

    dR, dv, dp, eta1 = batched_integrate(t[:11], ac[:10], gy[:10], NOISE_L, rng3, n_trials)
    # errors vs clean
    dphi = batched_log(np.broadcast_to(p.dR.T, (1, 3, 3)) @ dR)  # Ln(dR_clean^T dR_noisy)
    ddv = dv - p.dv[None]
    ddp = dp - p.dp[None]
    E_phi_mc = dphi.T @ eta1 / n_trials
    E_v_mc = ddv.T @ eta1 / n_trials
    E_p_mc = ddp.T @ eta1 / n_trials
    for name, mc, an in [("E_phi", E_phi_mc, e_phi), ("E_v", E_v_mc, e_v), ("E_p", E_p_mc, e_p)]:
        rel = np.linalg.norm(mc - an) / max(np.linalg.norm(mc), 1e-30)
        print(f"{name}: |mc|={np.linalg.norm(mc):.4e} |an|={np.linalg.norm(an):.4e} rel={rel:.4f}")


if __name__ == "__main__":
    residual_zero_at_prediction()
    fd_check()
    mc_cross_blocks()
    mc_covariance()
