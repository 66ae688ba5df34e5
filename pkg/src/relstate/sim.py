"""Scenario generator: twin square-spiral trajectories, IMU and camera synthesis.

Both platforms traverse concentric diamond squares (clockwise, synchronized
vertex arrivals) while climbing a fixed amount per segment, with a
triangular along-track speed profile of configurable acceleration
amplitude. The follower carries a cube of fiducial tags; the leader carries
the camera and spins in yaw and pitch. Everything is closed-form, so
kinematics are exact at any timestamp and generation is deterministic under
a seed.

IMU samples are increment-consistent: each sample holds the average body
rate / specific force over its interval (delta-angle and delta-velocity
divided by the interval, resolved at the interval-start attitude), which is
how integrating IMUs report and what keeps noise-free integration errors at
second order in the sample period.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .camera import CameraModel, FeatureObservation, project_camera_point, Z_MIN
from .imu import ImuNoiseParams, ImuStream
from .state import RelativeState

GRAVITY_DEFAULT = 9.81

# Continuous-time noise densities of the two platforms' IMUs.
LEADER_NOISE = dict(sigma_gv=1.528e-3, sigma_gu=1.867e-5,
                    sigma_av=1.244e-2, sigma_au=7.841e-4)
FOLLOWER_NOISE = dict(sigma_gv=2.269e-3, sigma_gu=1.536e-5,
                      sigma_av=8.182e-3, sigma_au=6.154e-4)

# Camera mount: optical axis along leader body +y (the pitch axis), image x
# along body x, image y pointing down. Keeps the cube in view while the
# leader pitches (which then only rolls the image).
CAM_MOUNT_Y = np.array([[1.0, 0.0, 0.0],
                        [0.0, 0.0, -1.0],
                        [0.0, 1.0, 0.0]])


def default_camera() -> CameraModel:
    return CameraModel(fx=340.0, fy=340.0, cx=320.0, cy=240.0,
                       width=640, height=480,
                       R_l_c=CAM_MOUNT_Y.copy(), t_l_c=np.zeros(3))


@dataclass
class InitialErrorSigmas:
    att: float = 0.02     # rad
    trans: float = 0.02   # m
    vel: float = 0.2      # m/s
    bg: float = 0.01      # rad/s
    ba: float = 0.05      # m/s^2


@dataclass
class ScenarioConfig:
    lambda_accel: float = 9.0        # m/s^2 follower along-track amplitude
    gamma: float = 1.0               # fraction of frames with detections
    seed: int = 0
    imu_rate: float = 250.0
    frame_rate: float = 25.0
    n_segments: int = 12
    noise_f: ImuNoiseParams = field(
        default_factory=lambda: ImuNoiseParams(**FOLLOWER_NOISE))
    noise_l: ImuNoiseParams = field(
        default_factory=lambda: ImuNoiseParams(**LEADER_NOISE))
    cam: CameraModel = field(default_factory=default_camera)
    tag_side: float = 0.14           # tag square side; cube side matches
    sigma_px: float = 1.0
    follower_radius: float = 0.2     # planar circumradius of the small square
    leader_radius: float = 1.0
    climb: float = 0.1               # m per segment
    rel_height: float = 0.2          # follower above leader, inertial
    gravity: float = GRAVITY_DEFAULT
    init_sigmas: InitialErrorSigmas = field(default_factory=InitialErrorSigmas)
    draw_follower_bias: bool = True
    draw_leader_bias: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.lambda_accel <= 0.0:
            raise ValueError("lambda_accel must be positive")
        ratio = self.imu_rate / self.frame_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("imu_rate must be a multiple of frame_rate")

    @property
    def segment_length_follower(self) -> float:
        chord = self.follower_radius * math.sqrt(2.0)
        return math.hypot(chord, self.climb)

    @property
    def segment_length_leader(self) -> float:
        chord = self.leader_radius * math.sqrt(2.0)
        return math.hypot(chord, self.climb)

    @property
    def t_segment(self) -> float:
        # Timing is set by the follower's segment under its amplitude.
        return 2.0 * math.sqrt(self.segment_length_follower / self.lambda_accel)

    @property
    def duration(self) -> float:
        return self.n_segments * self.t_segment


@dataclass
class PlatformKinematics:
    R: np.ndarray       # body to inertial
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    omega: np.ndarray   # body frame


def _triangular_profile(tau: float, T: float, alpha: float):
    """Distance/speed/acceleration along track at time tau into a segment."""
    half = 0.5 * T
    if tau <= half:
        return 0.5 * alpha * tau * tau, alpha * tau, alpha
    dt = tau - half
    v_peak = alpha * half
    s = 0.5 * alpha * half * half + v_peak * dt - 0.5 * alpha * dt * dt
    return s, v_peak - alpha * dt, -alpha


class SquareCircuitProfile:
    """Clockwise diamond circuit with per-segment climb and triangular speed."""

    def __init__(self, radius: float, z0: float, t_segment: float,
                 n_segments: int, climb: float):
        self.radius = radius
        self.z0 = z0
        self.t_segment = t_segment
        self.n_segments = n_segments
        self.climb = climb
        r = radius
        self._planar = [np.array([r, 0.0]), np.array([0.0, -r]),
                        np.array([-r, 0.0]), np.array([0.0, r])]
        self._chord = r * math.sqrt(2.0)
        self._seg_len = math.hypot(self._chord, climb)
        self._alpha = 4.0 * self._seg_len / (t_segment * t_segment)

    def vertex(self, k: int) -> np.ndarray:
        planar = self._planar[k % 4]
        return np.array([planar[0], planar[1], self.z0 + self.climb * k])

    def kinematics(self, t: float):
        T = self.t_segment
        total = self.n_segments * T
        if t >= total:
            p = self.vertex(self.n_segments)
            return p, np.zeros(3), np.zeros(3)
        k = min(int(t // T), self.n_segments - 1)
        tau = t - k * T
        v0 = self.vertex(k)
        v1 = self.vertex(k + 1)
        u = (v1 - v0) / self._seg_len
        s, sd, sdd = _triangular_profile(tau, T, self._alpha)
        return v0 + u * s, u * sd, u * sdd


class LeaderAttitudeProfile:
    """Yaw and pitch both sweep -pi/2 per segment (ZYX order, roll zero)."""

    def __init__(self, t_segment: float, yaw0: float = 0.5 * math.pi):
        self.t_segment = t_segment
        self.yaw0 = yaw0
        self.rate = -0.5 * math.pi / t_segment

    def rotation(self, t: float) -> np.ndarray:
        psi = self.yaw0 + self.rate * t
        theta = self.rate * t
        cy, sy = math.cos(psi), math.sin(psi)
        cp, sp = math.cos(theta), math.sin(theta)
        Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        return Rz @ Ry

    def body_rate(self, t: float) -> np.ndarray:
        theta = self.rate * t
        return np.array([-self.rate * math.sin(theta),
                         self.rate,
                         self.rate * math.cos(theta)])


class FollowerAttitudeProfile:
    """45 degrees per 4-segment group about cycling body axes x, y, (1,1,1)."""

    AXES = [np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]),
            np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)]

    def __init__(self, t_segment: float, n_segments: int):
        self.group_T = 4.0 * t_segment
        self.rate = (0.25 * math.pi) / self.group_T
        n_groups = max(1, math.ceil(n_segments / 4)) + 1
        self._bases = [np.eye(3)]
        for g in range(n_groups):
            axis = self.AXES[g % 3]
            self._bases.append(self._bases[-1]
                               @ so3.exp_map(axis * 0.25 * math.pi))

    def _group(self, t: float) -> int:
        return max(0, min(int(t // self.group_T), len(self._bases) - 2))

    def rotation(self, t: float) -> np.ndarray:
        g = self._group(t)
        tau = t - g * self.group_T
        axis = self.AXES[g % 3]
        return self._bases[g] @ so3.exp_map(axis * self.rate * tau)

    def body_rate(self, t: float) -> np.ndarray:
        g = self._group(t)
        return self.AXES[g % 3] * self.rate


class StaticProfile:
    """Fixed pose; for fixed-point tests."""

    def __init__(self, R: np.ndarray, p: np.ndarray):
        self.R0 = np.asarray(R, dtype=float)
        self.p0 = np.asarray(p, dtype=float)

    def rotation(self, t):
        return self.R0.copy()

    def body_rate(self, t):
        return np.zeros(3)

    def kinematics(self, t):
        return self.p0.copy(), np.zeros(3), np.zeros(3)


class ConstantVelocityProfile:
    """Fixed attitude, constant inertial velocity; for kinematic tests."""

    def __init__(self, R: np.ndarray, p0: np.ndarray, v: np.ndarray):
        self.R0 = np.asarray(R, dtype=float)
        self.p0 = np.asarray(p0, dtype=float)
        self.v0 = np.asarray(v, dtype=float)

    def rotation(self, t):
        return self.R0.copy()

    def body_rate(self, t):
        return np.zeros(3)

    def kinematics(self, t):
        return self.p0 + self.v0 * t, self.v0.copy(), np.zeros(3)


class PlatformModel:
    """Pairs a translation circuit with an attitude profile."""

    def __init__(self, circuit, attitude):
        self.circuit = circuit
        self.attitude = attitude

    def state(self, t: float) -> PlatformKinematics:
        p, v, a = self.circuit.kinematics(t)
        return PlatformKinematics(R=self.attitude.rotation(t), p=p, v=v, a=a,
                                  omega=self.attitude.body_rate(t))


class GroundTruth:
    """Closed-form twin trajectories plus true biases and landmark truth."""

    def __init__(self, leader: PlatformModel, follower: PlatformModel,
                 duration: float, landmarks: dict,
                 faces: list, cfg: ScenarioConfig | None = None):
        self.leader_model = leader
        self.follower_model = follower
        self.duration = duration
        self.landmarks = landmarks
        self.faces = faces
        self.cfg = cfg
        self.bias_fg = np.zeros(3)
        self.bias_fa = np.zeros(3)
        self.bias_lg = np.zeros(3)
        self.bias_la = np.zeros(3)

    def leader(self, t: float) -> PlatformKinematics:
        return self.leader_model.state(t)

    def follower(self, t: float) -> PlatformKinematics:
        return self.follower_model.state(t)

    def relative_state(self, t: float) -> RelativeState:
        L = self.leader(t)
        F = self.follower(t)
        R_il = L.R.T
        R_rel = R_il @ F.R
        t_rel = R_il @ (F.p - L.p)
        v_rel = R_il @ (F.v - L.v) - np.cross(L.omega, t_rel)
        return RelativeState(R=R_rel, t=t_rel, v=v_rel,
                             beta_fg=self.bias_fg, beta_fa=self.bias_fa,
                             beta_lg=self.bias_lg, beta_la=self.bias_la,
                             stamp=t)


def build_cube_landmarks(side: float):
    """24 tag corners, 4 per face of a cube centered on the follower origin.

    Returns (landmarks: id -> coordinates, faces: list of (normal, ids)).
    """
    half = 0.5 * side
    axes = [(np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0])),
            (np.array([-1.0, 0, 0]), np.array([0, -1.0, 0]), np.array([0, 0, 1.0])),
            (np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), np.array([1.0, 0, 0])),
            (np.array([0, -1.0, 0]), np.array([0, 0, -1.0]), np.array([1.0, 0, 0])),
            (np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), np.array([0, 1.0, 0])),
            (np.array([0, 0, -1.0]), np.array([-1.0, 0, 0]), np.array([0, 1.0, 0]))]
    landmarks = {}
    faces = []
    fid = 0
    for normal, u, v in axes:
        center = normal * half
        ids = []
        for su, sv in ((1, 1), (1, -1), (-1, -1), (-1, 1)):
            landmarks[fid] = center + su * half * u + sv * half * v
            ids.append(fid)
            fid += 1
        faces.append((normal, ids))
    return landmarks, faces


def generate_trajectories(cfg: ScenarioConfig) -> GroundTruth:
    T = cfg.t_segment
    leader = PlatformModel(
        SquareCircuitProfile(cfg.leader_radius, 0.0, T, cfg.n_segments, cfg.climb),
        LeaderAttitudeProfile(T))
    follower = PlatformModel(
        SquareCircuitProfile(cfg.follower_radius, cfg.rel_height, T,
                             cfg.n_segments, cfg.climb),
        FollowerAttitudeProfile(T, cfg.n_segments))
    landmarks, faces = build_cube_landmarks(cfg.tag_side)
    return GroundTruth(leader, follower, cfg.duration, landmarks, faces, cfg)


def synthesize_imu(gt: GroundTruth, cfg: ScenarioConfig, platform: str,
                   rng: np.random.Generator | None = None,
                   rate: float | None = None, t_end: float | None = None,
                   bias_g=None, bias_a=None) -> ImuStream:
    """Increment-consistent samples with constant bias and white noise.

    Sample k holds Log(R_k^T R_{k+1})/h and R_k^T (v_{k+1} - v_k - g h)/h,
    i.e. the averaged body rate and specific force over its interval.
    Deterministic given the generator state; rng=None gives noise-free data.
    """
    model = gt.leader_model if platform == "leader" else gt.follower_model
    if bias_g is None:
        bias_g = gt.bias_lg if platform == "leader" else gt.bias_fg
    if bias_a is None:
        bias_a = gt.bias_la if platform == "leader" else gt.bias_fa
    noise = cfg.noise_l if platform == "leader" else cfg.noise_f
    rate = cfg.imu_rate if rate is None else rate
    h = 1.0 / rate
    t_end = (gt.duration if t_end is None else t_end) + 2.0 * h
    n = int(math.ceil(t_end / h)) + 1
    times = np.arange(n) * h

    gyro = np.empty((n, 3))
    acc = np.empty((n, 3))
    g_vec = np.array([0.0, 0.0, -cfg.gravity])
    R_prev = model.attitude.rotation(times[0])
    p_prev, v_prev, _ = model.circuit.kinematics(times[0])
    for k in range(n):
        t_next = times[k] + h
        R_next = model.attitude.rotation(t_next)
        _, v_next, _ = model.circuit.kinematics(t_next)
        gyro[k] = so3.log_map(R_prev.T @ R_next) / h
        acc[k] = R_prev.T @ (v_next - v_prev - g_vec * h) / h
        R_prev = R_next
        v_prev = v_next

    gyro += np.asarray(bias_g)[None, :]
    acc += np.asarray(bias_a)[None, :]
    if rng is not None:
        gyro = gyro + rng.normal(0.0, noise.sigma_gv / math.sqrt(h), (n, 3))
        acc = acc + rng.normal(0.0, noise.sigma_av / math.sqrt(h), (n, 3))
    return ImuStream(times, acc, gyro)


@dataclass
class Frame:
    index: int
    t: float
    observations: list
    dropped: bool = False


def _drop_pattern(n_frames: int, gamma: float):
    """Evenly spaced drops; exactly floor(n*(1-gamma)) frames removed."""
    q = 1.0 - gamma
    dropped = np.zeros(n_frames, dtype=bool)
    for i in range(n_frames):
        if math.floor((i + 1) * q) > math.floor(i * q):
            dropped[i] = True
    return dropped


def frame_times(cfg: ScenarioConfig) -> np.ndarray:
    n = int(math.floor(cfg.duration * cfg.frame_rate)) + 1
    return np.arange(n) / cfg.frame_rate


def synthesize_frames(gt: GroundTruth, cfg: ScenarioConfig,
                      seed_seq: np.random.SeedSequence | None = None) -> list:
    """Project visible cube corners at every frame time, then apply dropout.

    A face is emitted only when the angle between its outward normal and the
    camera line of sight lies in [120, 240] degrees and all 4 corners fall
    inside the image. Pixel noise is drawn from a per-frame child seed so
    paired scenarios with different dropout rates share noise on the frames
    they have in common.
    """
    times = frame_times(cfg)
    dropped = _drop_pattern(len(times), cfg.gamma)
    seed_seq = np.random.SeedSequence(cfg.seed) if seed_seq is None else seed_seq
    children = seed_seq.spawn(len(times))
    cam = cfg.cam
    frames = []
    for i, t in enumerate(times):
        if dropped[i]:
            frames.append(Frame(index=i, t=float(t), observations=[], dropped=True))
            continue
        state = gt.relative_state(t)
        rng = np.random.default_rng(children[i])
        obs = []
        for normal, ids in gt.faces:
            corners_c = []
            ok = True
            for fid in ids:
                p_c = cam.R_l_c @ (state.R @ gt.landmarks[fid] + state.t) + cam.t_l_c
                if p_c[2] <= Z_MIN:
                    ok = False
                    break
                corners_c.append(p_c)
            if not ok:
                continue
            center_c = np.mean(corners_c, axis=0)
            n_c = cam.R_l_c @ (state.R @ normal)
            los = center_c / np.linalg.norm(center_c)
            if float(n_c @ los) > -0.5:
                continue
            pixels = [project_camera_point(cam, p_c) for p_c in corners_c]
            if not all(cam.in_bounds(px) for px in pixels):
                continue
            for fid, px in zip(ids, pixels):
                noisy = px + rng.normal(0.0, cfg.sigma_px, 2)
                obs.append(FeatureObservation(fid, noisy, cfg.sigma_px))
        frames.append(Frame(index=i, t=float(t), observations=obs, dropped=False))
    return frames


@dataclass
class SimDataset:
    """One synthesized scenario: truth, streams, frames, map."""

    cfg: ScenarioConfig
    gt: GroundTruth
    imu_f: ImuStream
    imu_l: ImuStream
    frames: list
    landmarks: dict


def make_dataset(cfg: ScenarioConfig,
                 seed_seq: np.random.SeedSequence | None = None) -> SimDataset:
    """Generate a full scenario. Identical cfg and seed give identical data."""
    seed_seq = np.random.SeedSequence(cfg.seed) if seed_seq is None else seed_seq
    s_bias, s_imu_f, s_imu_l, s_frames = seed_seq.spawn(4)
    gt = generate_trajectories(cfg)
    rng_b = np.random.default_rng(s_bias)
    # Bias draws are consumed from the generator regardless of the flags so
    # toggling one platform does not reshuffle the other's draw.
    bf_g = rng_b.normal(0.0, cfg.init_sigmas.bg, 3)
    bf_a = rng_b.normal(0.0, cfg.init_sigmas.ba, 3)
    bl_g = rng_b.normal(0.0, cfg.init_sigmas.bg, 3)
    bl_a = rng_b.normal(0.0, cfg.init_sigmas.ba, 3)
    if cfg.draw_follower_bias:
        gt.bias_fg, gt.bias_fa = bf_g, bf_a
    if cfg.draw_leader_bias:
        gt.bias_lg, gt.bias_la = bl_g, bl_a
    imu_f = synthesize_imu(gt, cfg, "follower", np.random.default_rng(s_imu_f))
    imu_l = synthesize_imu(gt, cfg, "leader", np.random.default_rng(s_imu_l))
    frames = synthesize_frames(gt, cfg, s_frames)
    return SimDataset(cfg=cfg, gt=gt, imu_f=imu_f, imu_l=imu_l,
                      frames=frames, landmarks=dict(gt.landmarks))
