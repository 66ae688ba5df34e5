"""Gauss-Newton solver over relative-state and landmark nodes.

Factors contribute (residual, per-node Jacobian blocks, information).
Problems at tracking scale (two states) are solved densely; the smoother's
normal equations go through scipy.sparse. Marginalization is the Schur
complement of the dropped block evaluated at the current linearization.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import so3
from .camera import CameraModel, FeatureObservation, feature_residual_jacobian
from .errors import BehindCamera, SingularBlock, SingularSystem
from .extended import ExtendedFactor, residual_jacobians
from .state import ATT, RelativeState, StateLayout

logger = logging.getLogger(__name__)

_DENSE_LIMIT = 200


@dataclass
class PriorFactor:
    """Gaussian prior on one relative state (output of marginalization)."""

    mean: RelativeState
    info: np.ndarray
    layout: StateLayout
    key: str = "x"

    def keys(self):
        return (self.key,)

    def evaluate(self, values):
        x = values[self.key]
        r = x.local(self.mean, self.layout)
        J = np.eye(self.layout.dim)
        # Exact derivative of the attitude local coordinates.
        J[ATT, ATT] = so3.right_jacobian_inv(r[ATT])
        return r, {self.key: J}, self.info


class ExtendedMotionFactor:
    """Graph adapter for the two-platform preintegration constraint."""

    def __init__(self, key_i: str, key_j: str, factor: ExtendedFactor,
                 layout: StateLayout):
        self.key_i = key_i
        self.key_j = key_j
        self.factor = factor
        self.layout = layout

    def keys(self):
        return (self.key_i, self.key_j)

    def evaluate(self, values):
        r, J = residual_jacobians(self.factor, values[self.key_i],
                                  values[self.key_j], self.layout)
        D = self.layout.dim
        return r, {self.key_i: J[:, :D], self.key_j: J[:, D:]}, self.factor.info_c


class FeatureFactor:
    """Reprojection of one known (or estimated) fiducial corner."""

    robust = True

    def __init__(self, key_state: str, cam: CameraModel, obs: FeatureObservation,
                 landmark: np.ndarray, key_landmark: str | None = None):
        self.key_state = key_state
        self.cam = cam
        self.obs = obs
        self.landmark = np.asarray(landmark, dtype=float)
        self.key_landmark = key_landmark

    def keys(self):
        if self.key_landmark is None:
            return (self.key_state,)
        return (self.key_state, self.key_landmark)

    def evaluate(self, values):
        state = values[self.key_state]
        landmark = (self.landmark if self.key_landmark is None
                    else values[self.key_landmark])
        try:
            r, J = feature_residual_jacobian(
                self.cam, state, self.obs, landmark,
                with_landmark=self.key_landmark is not None)
        except BehindCamera:
            return None
        D = state_dim(values[self.key_state], self._layout)
        Jx = np.zeros((2, D))
        Jx[:, 0:3] = J[:, 0:3]
        Jx[:, 3:6] = J[:, 3:6]
        out = {self.key_state: Jx}
        if self.key_landmark is not None:
            out[self.key_landmark] = J[:, 6:9]
        return r, out, None

    # The state dimension depends on the problem layout; set by the problem.
    _layout: StateLayout | None = None


def state_dim(value, layout: StateLayout | None) -> int:
    if isinstance(value, RelativeState):
        return layout.dim
    return np.asarray(value).size


class BiasWalkFactor:
    """Random-walk link between one bias block at instants i and j."""

    def __init__(self, key_i: str, key_j: str, block: slice,
                 sigma_u: float, T: float):
        self.key_i = key_i
        self.key_j = key_j
        self.block = block
        self.scale = 1.0 / (sigma_u * np.sqrt(T))

    def keys(self):
        return (self.key_i, self.key_j)

    def _bias(self, state: RelativeState) -> np.ndarray:
        from .state import BFA, BFG, BLA, BLG
        return {BFG.start: state.beta_fg, BFA.start: state.beta_fa,
                BLG.start: state.beta_lg, BLA.start: state.beta_la}[self.block.start]

    def evaluate(self, values):
        bi = self._bias(values[self.key_i])
        bj = self._bias(values[self.key_j])
        r = (bj - bi) * self.scale
        D = self._dim
        Ji = np.zeros((3, D))
        Jj = np.zeros((3, D))
        Ji[:, self.block] = -np.eye(3) * self.scale
        Jj[:, self.block] = np.eye(3) * self.scale
        return r, {self.key_i: Ji, self.key_j: Jj}, None

    _dim: int = 21


class VectorPrior:
    """Gaussian prior on a plain vector node (landmark coordinates)."""

    def __init__(self, key: str, mean: np.ndarray, sigma: float):
        self.key = key
        self.mean = np.asarray(mean, dtype=float)
        self.scale = 1.0 / sigma

    def keys(self):
        return (self.key,)

    def evaluate(self, values):
        r = (values[self.key] - self.mean) * self.scale
        return r, {self.key: np.eye(len(self.mean)) * self.scale}, None


def _huber_weight(e2: float, k: float) -> float:
    e = np.sqrt(e2)
    return 1.0 if e <= k else k / e


class GaussNewtonProblem:
    """Node/factor container with a dense-or-sparse normal-equation solver."""

    def __init__(self, layout: StateLayout, huber_k: float = 2.0):
        self.layout = layout
        self.huber_k = huber_k
        self.values: dict = {}
        self.factors: list = []
        self._order: list[str] = []

    def add_state(self, key: str, state: RelativeState):
        self.values[key] = state.copy()
        self._order.append(key)

    def add_vector(self, key: str, vec: np.ndarray):
        self.values[key] = np.asarray(vec, dtype=float).copy()
        self._order.append(key)

    def add_factor(self, factor):
        if isinstance(factor, FeatureFactor):
            factor._layout = self.layout
        if isinstance(factor, BiasWalkFactor):
            factor._dim = self.layout.dim
        self.factors.append(factor)

    def _offsets(self):
        offsets = {}
        dim = 0
        for key in self._order:
            d = state_dim(self.values[key], self.layout)
            offsets[key] = (dim, d)
            dim += d
        return offsets, dim

    def _evaluate_all(self, values):
        total_cost = 0.0
        evaluated = []
        for f in self.factors:
            out = f.evaluate(values)
            if out is None:
                continue
            r, jacs, info = out
            if info is None:
                e2 = float(r @ r)
            else:
                e2 = float(r @ info @ r)
            w = 1.0
            if getattr(f, "robust", False):
                w = _huber_weight(e2, self.huber_k)
                k = self.huber_k
                cost = e2 if w == 1.0 else 2.0 * k * np.sqrt(e2) - k * k
            else:
                cost = e2
            total_cost += cost
            evaluated.append((r, jacs, info, w))
        return total_cost, evaluated

    def build_normal_equations(self, values=None):
        """Assemble H, g (H d = -g), current cost and the variable offsets."""
        values = self.values if values is None else values
        offsets, dim = self._offsets()
        cost, evaluated = self._evaluate_all(values)
        dense = dim <= _DENSE_LIMIT
        if dense:
            H = np.zeros((dim, dim))
        else:
            rows, cols, data = [], [], []
        g = np.zeros(dim)
        for r, jacs, info, w in evaluated:
            wr = r if info is None else info @ r
            items = list(jacs.items())
            for key_a, J_a in items:
                oa, da = offsets[key_a]
                g[oa:oa + da] += w * (J_a.T @ wr)
                for key_b, J_b in items:
                    ob, db = offsets[key_b]
                    blk = w * (J_a.T @ (J_b if info is None else info @ J_b))
                    if dense:
                        H[oa:oa + da, ob:ob + db] += blk
                    else:
                        ii, jj = np.meshgrid(np.arange(oa, oa + da),
                                             np.arange(ob, ob + db),
                                             indexing="ij")
                        rows.append(ii.ravel())
                        cols.append(jj.ravel())
                        data.append(blk.ravel())
        if not dense:
            H = scipy.sparse.csr_matrix(
                (np.concatenate(data),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(dim, dim))
        return H, g, cost, offsets

    def _solve_linear(self, H, g):
        if isinstance(H, np.ndarray):
            try:
                L = np.linalg.cholesky(H)
            except np.linalg.LinAlgError as exc:
                raise SingularSystem("normal equations not positive definite; "
                                     "missing prior?") from exc
            y = np.linalg.solve(L, -g)
            return np.linalg.solve(L.T, y)
        delta = scipy.sparse.linalg.spsolve(H.tocsc(), -g)
        if not np.all(np.isfinite(delta)):
            raise SingularSystem("sparse solve returned non-finite step")
        return delta

    def _retract_all(self, values, delta, offsets):
        out = {}
        for key in self._order:
            o, d = offsets[key]
            v = values[key]
            if isinstance(v, RelativeState):
                out[key] = v.retract(delta[o:o + d], self.layout)
            else:
                out[key] = v + delta[o:o + d]
        return out

    def solve(self, iterations: int = 1, tol: float = 1e-10,
              step_halving: bool = True, max_halvings: int = 6):
        """Iterate H d = -g with retraction; returns an iteration summary."""
        costs = []
        for it in range(iterations):
            H, g, cost, offsets = self.build_normal_equations()
            costs.append(cost)
            delta = self._solve_linear(H, g)
            if step_halving:
                trial = delta
                for _ in range(max_halvings + 1):
                    candidate = self._retract_all(self.values, trial, offsets)
                    new_cost, _ = self._evaluate_all(candidate)
                    if new_cost <= cost or not np.isfinite(cost):
                        break
                    trial = 0.5 * trial
                self.values = candidate
            else:
                self.values = self._retract_all(self.values, delta, offsets)
            if np.linalg.norm(delta) < tol:
                break
        return {"iterations": it + 1, "costs": costs,
                "final_step_norm": float(np.linalg.norm(delta))}

    def marginalize(self, drop_key: str, keep_key: str) -> PriorFactor:
        """Schur-complement the dropped state onto the kept one.

        Uses the normal equations at the current values (first-estimate
        style); the returned prior has the kept state's current value as
        mean and the complement, PSD-projected, as information.
        """
        H, _, _, offsets = self.build_normal_equations()
        if not isinstance(H, np.ndarray):
            H = H.toarray()
        od, dd = offsets[drop_key]
        ok, dk = offsets[keep_key]
        H_dd = H[od:od + dd, od:od + dd]
        H_kd = H[ok:ok + dk, od:od + dd]
        H_kk = H[ok:ok + dk, ok:ok + dk]
        try:
            sol = np.linalg.solve(H_dd, H_kd.T)
        except np.linalg.LinAlgError:
            logger.warning("marginalized block singular; regularizing")
            try:
                sol = np.linalg.solve(H_dd + 1e-12 * np.eye(dd), H_kd.T)
            except np.linalg.LinAlgError as exc:
                raise SingularBlock("cannot invert marginalized block") from exc
        info = H_kk - H_kd @ sol
        info = 0.5 * (info + info.T)
        eigval, eigvec = np.linalg.eigh(info)
        info = (eigvec * np.maximum(eigval, 0.0)) @ eigvec.T
        return PriorFactor(mean=self.values[keep_key].copy(), info=info,
                           layout=self.layout, key=keep_key)
