"""The assembly MDP: 27 discrete motion actions, multi-sensor observations,
descent-shaped rewards, termination rules, and the wrist-yaw selection that
resolves the camera blind spot at reset."""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .kinematics import Pose
from .tcs import SafetyThresholds, Supervisor, TcsMemory
from .world import FtCalibration, World

TRANS_STEPS_MM = (0.1, 0.5, 1.0)
ROT_STEPS_DEG = (0.05, 0.08, 0.1)
N_ACTIONS = 27
AASM_YAWS_DEG = (0.0, -45.0, 45.0, -90.0, 90.0)

R_GEN = -0.001
R_EXT_SCALE = 75.0


@dataclass(frozen=True)
class MotionPrimitive:
    kind: str        # "translate" | "rotate"
    axis: str        # X | Y | Z (Z only for translate)
    sign: int        # +1 | -1
    magnitude: float  # meters or radians


def _build_action_table() -> tuple[MotionPrimitive, ...]:
    prims = []
    for axis, sign in (("X", +1), ("X", -1), ("Y", +1), ("Y", -1), ("Z", +1)):
        for mm in TRANS_STEPS_MM:
            prims.append(MotionPrimitive("translate", axis, sign, mm * 1e-3))
    for axis, sign in (("X", +1), ("X", -1), ("Y", +1), ("Y", -1)):
        for deg in ROT_STEPS_DEG:
            prims.append(MotionPrimitive("rotate", axis, sign, np.deg2rad(deg)))
    assert len(prims) == N_ACTIONS
    return tuple(prims)


ACTION_TABLE = _build_action_table()


def decode_action(index: int) -> MotionPrimitive:
    """Map an action index in [0, 27) to its motion primitive.

    Enumeration is dimension-major (+X, -X, +Y, -Y translations, then the
    single-direction Z descent, then +-X/+-Y rotations), magnitudes ascending.
    The order is frozen; checkpoints carry its hash.
    """
    if not 0 <= index < N_ACTIONS:
        raise IndexError(f"action index {index} out of range [0, {N_ACTIONS})")
    return ACTION_TABLE[index]


def action_enumeration_string() -> str:
    """Canonical text form of the action table, hashed into checkpoints."""
    return ";".join(f"{p.kind}:{p.axis}{'+' if p.sign > 0 else '-'}:{p.magnitude:.9e}"
                    for p in ACTION_TABLE)


class Outcome(enum.Enum):
    SUCCESS = "success"
    OUT_OF_REGION = "out_of_region"
    STEP_LIMIT = "step_limit"
    DANGER_ABORT = "danger_abort"


@dataclass
class EpisodeOutcome:
    status: Outcome
    steps_taken: int
    episode_reward: float


@dataclass
class RewardBreakdown:
    r_gen: float
    r_ext: float
    r_suc: float
    r_pun: float

    @property
    def total(self) -> float:
        return self.r_gen + self.r_ext + self.r_suc + self.r_pun


@dataclass
class StateObs:
    """Network input: normalized image, pose relative to the estimated hole
    center, and bias-corrected wrench without the spin torque axis."""
    image: np.ndarray      # (64, 64) float32 in [0, 1]
    pose_n: np.ndarray     # (6,) float32
    wrench_n: np.ndarray   # (5,) float32: fx, fy, fz, mx, my


def normalize_image(gray8: np.ndarray) -> np.ndarray:
    """Per-pixel 1 - v/256 on an 8-bit grayscale image."""
    return (1.0 - np.asarray(gray8, dtype=np.float32) / 256.0).astype(np.float32)


def normalize_ft(raw: np.ndarray, calib: FtCalibration) -> np.ndarray:
    """Bias-corrected wrench restricted to (fx, fy, fz, mx, my)."""
    return (np.asarray(raw, dtype=np.float64) - calib.f_star)[:5]


def normalize_pose(tcp: Pose, hole_est: np.ndarray) -> np.ndarray:
    """Translation relative to the estimated hole center; rotation unchanged."""
    return np.concatenate([tcp.position - hole_est, tcp.rpy])


def compute_reward(prev_z: float, next_z: float, success: bool,
                   step_f: int, step_max: int, r_pun: float) -> RewardBreakdown:
    r_ext = R_EXT_SCALE * (prev_z - next_z)
    r_suc = (1.0 - step_f / step_max) if success else 0.0
    return RewardBreakdown(r_gen=R_GEN, r_ext=r_ext, r_suc=r_suc, r_pun=r_pun)


@dataclass
class EnvConfig:
    step_max: int = 5000
    start_height: float = 1.0e-3        # peg tip above the surface at reset
    fixed_offset: float = 3.0e-3        # planar start offset, fixed mode (+X)
    random_offset_max: float = 4.0e-3
    success_depth: float = 0.01         # required descent of Pz from the start
    out_of_region: float = 0.01         # max CBP distance from the true CPH
    grasp_offset_max: float = 1.0e-3
    aasm_enabled: bool = True


class AssemblyEnv:
    """Sequential MDP over one world instance."""

    def __init__(self, world: World, thresholds: SafetyThresholds,
                 config: EnvConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.world = world
        self.supervisor = Supervisor(thresholds, world)
        self.config = config or EnvConfig()
        self.rng = rng or np.random.default_rng(0)
        self.mem = TcsMemory()
        self.calib = FtCalibration()
        self.hole_est = world.hole.center_true.copy()
        self.start_pose: Pose | None = None
        self.steps = 0
        self.episode_reward = 0.0
        self.warning_substeps = 0
        self.danger_events = 0
        self.done = True
        self.last_wrench_n5 = np.zeros(5)
        self.record_trace = False
        self.trace: list[tuple[int, np.ndarray]] = []

    # -- observation assembly ---------------------------------------------

    def _observe(self) -> StateObs:
        gray = self.world.render_raw()
        # the controlled point fed to the network is the nominal peg tip, so
        # the relative translation stays a small vector around the hole
        tip_pose = Pose(kin.cbp_world(self.world.tcp, self.world.peg.length),
                        self.world.tcp.rpy)
        return StateObs(image=normalize_image(gray),
                        pose_n=normalize_pose(tip_pose, self.hole_est).astype(np.float32),
                        wrench_n=self.last_wrench_n5.astype(np.float32))

    # -- reset -------------------------------------------------------------

    def _hole_pixel_count(self, tcp: Pose) -> int:
        img = normalize_image(self.world.render_raw(tcp))
        return int((img > 0.5).sum())

    def aasm_select_angle(self) -> float:
        """Probe wrist yaws 0 / +-45 / +-90 deg and pick the view that shows
        the most hole pixels.  Ties prefer 0 deg, then the smaller |yaw|."""
        base = self.world.tcp
        best_yaw, best_count = 0.0, -1
        for yaw_deg in AASM_YAWS_DEG:
            rpy = base.rpy.copy()
            rpy[2] = kin.wrap_angle(rpy[2] + np.deg2rad(yaw_deg))
            count = self._hole_pixel_count(Pose(base.position, rpy))
            if count > best_count:
                best_yaw, best_count = yaw_deg, count
        return best_yaw

    def reset(self, mode: str = "fixed") -> StateObs:
        """Start an episode: place the peg tip 1 mm above the surface with a
        planar offset from the true hole center, capture the sensor bias,
        draw the hole estimate, and apply the blind-spot yaw selection."""
        cfg = self.config
        world = self.world
        if mode == "fixed":
            offset = np.array([cfg.fixed_offset, 0.0])
        elif mode == "random":
            r = cfg.random_offset_max * np.sqrt(self.rng.uniform())
            a = self.rng.uniform(0.0, 2.0 * np.pi)
            offset = np.array([r * np.cos(a), r * np.sin(a)])
        else:
            raise ValueError(f"unknown reset mode {mode!r}")

        world.peg.grasp_offset = np.array([
            *self.rng.uniform(-cfg.grasp_offset_max / np.sqrt(2),
                              cfg.grasp_offset_max / np.sqrt(2), 2), 0.0])

        # nominal working orientation: tool flipped so the peg points down
        rpy = np.array([np.pi, 0.0, 0.0])
        tip = np.array([world.hole.center_true[0] + offset[0],
                        world.hole.center_true[1] + offset[1],
                        world.hole.surface_z + cfg.start_height])
        m = kin.rpy_to_matrix(rpy)
        pos = tip - m @ (world.peg.grasp_offset + np.array([0.0, 0.0, world.peg.length]))
        world.set_pose(Pose(pos, rpy), "free")

        self.mem = TcsMemory(latest_safe_pose=world.tcp.copy())
        self.hole_est = world.estimate_hole_center(self.rng)
        # capture the bias with the very first sensed sample, so the initial
        # normalized wrench is exactly zero
        calib = world.draw_calibration(self.rng)
        _, true_w = world.step_world(world.tcp)
        first = world.sense_ft(true_w, calib, self.rng)
        self.calib = FtCalibration(f_star=first.copy())
        self.last_wrench_n5 = np.zeros(5)

        if cfg.aasm_enabled:
            yaw = self.aasm_select_angle()
            if yaw != 0.0:
                rpy2 = world.tcp.rpy.copy()
                rpy2[2] = kin.wrap_angle(rpy2[2] + np.deg2rad(yaw))
                world.set_pose(Pose(world.tcp.position, rpy2), "free")
                self.mem.latest_safe_pose = world.tcp.copy()

        self.start_pose = world.tcp.copy()
        self.steps = 0
        self.episode_reward = 0.0
        self.warning_substeps = 0
        self.danger_events = 0
        self.done = False
        self.trace = []
        return self._observe()

    # -- termination --------------------------------------------------------

    def check_termination(self) -> EpisodeOutcome | None:
        assert self.start_pose is not None
        tcp = self.world.tcp
        if self.start_pose.position[2] - tcp.position[2] >= self.config.success_depth:
            return EpisodeOutcome(Outcome.SUCCESS, self.steps, self.episode_reward)
        cbp = kin.cbp_world(tcp, self.world.peg.length)
        if np.linalg.norm(cbp[:2] - self.world.hole.center_true[:2]) > self.config.out_of_region:
            return EpisodeOutcome(Outcome.OUT_OF_REGION, self.steps, self.episode_reward)
        if self.steps >= self.config.step_max:
            return EpisodeOutcome(Outcome.STEP_LIMIT, self.steps, self.episode_reward)
        return None

    # -- stepping ------------------------------------------------------------

    def _target_pose(self, prim: MotionPrimitive) -> Pose:
        tcp = self.world.tcp
        if prim.kind == "translate":
            direction = {"X": [1.0, 0, 0], "Y": [0, 1.0, 0], "Z": [0, 0, 1.0]}[prim.axis]
            move = kin.peg_frame_translation_to_base(
                np.array(direction) * prim.sign * prim.magnitude, tcp)
            return Pose(tcp.position + move, tcp.rpy)
        return kin.tcp_after_rotation(tcp, prim.axis, prim.sign * prim.magnitude,
                                      self.world.peg.length)

    def step(self, action: int) -> tuple[StateObs, RewardBreakdown, EpisodeOutcome | None]:
        if self.done:
            raise RuntimeError("step() called on a finished episode")
        prim = decode_action(action)
        prev_z = self.world.tcp.position[2]
        target = self._target_pose(prim)
        # keep the commanded peg tip above the hole bottom so repeated descent
        # actions cannot leave the workspace box
        tip_z = self.world.peg_bottom(target)[2]
        floor = self.world.hole.surface_z - self.world.hole.depth
        if tip_z < floor:
            target = Pose(target.position + np.array([0.0, 0.0, floor - tip_z]), target.rpy)

        noise_rng = self.rng if self.world.sensor.noise_enabled else None
        result = self.supervisor.supervised_move(target, self.mem, self.calib, noise_rng)
        self.last_wrench_n5 = result.wrench[:5].copy()
        if self.record_trace:
            self.trace.extend((self.steps + 1, w) for w in result.accepted_wrenches)
        self.warning_substeps += result.warning_substeps
        self.danger_events += result.danger_events
        self.steps += 1

        outcome = None
        if result.aborted:
            outcome = EpisodeOutcome(Outcome.DANGER_ABORT, self.steps, 0.0)
        else:
            outcome = self.check_termination()
        success = outcome is not None and outcome.status == Outcome.SUCCESS
        reward = compute_reward(prev_z, self.world.tcp.position[2], success,
                                self.steps, self.config.step_max, result.r_pun)
        self.episode_reward += reward.total
        if outcome is not None:
            outcome.episode_reward = self.episode_reward
            self.done = True
        return self._observe(), reward, outcome
