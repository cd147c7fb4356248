"""Three-layer cushioning supervisor.

Every motion is interpolated into small sub-steps; after each sub-step the
contact wrench is classified Safe / Warning / Dangerous and the decision
table is applied.  Two variables persist across an episode: the last
classification and the latest pose known to be safe.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .kinematics import Pose
from .world import FtCalibration, World


class SafetyZone(enum.IntEnum):
    SAFE = 0
    WARNING = 1
    DANGEROUS = 2


class TcsAction(enum.Enum):
    PROCEED = "proceed"
    HALT_HERE = "halt_here"
    REVERT_TO_SAFE = "revert_to_safe"
    ABORT_EPISODE = "abort_episode"


R_PUN_REVERT = -0.003
R_PUN_ABORT = -0.01
ABORT_AFTER_CONSECUTIVE = 10


@dataclass
class SafetyThresholds:
    warn_f: float = 5.0        # N, per force axis
    danger_f: float = 10.0
    warn_m: float = 0.8        # N*m, per torque axis
    danger_m: float = 1.5

    def __post_init__(self):
        if not (0 < self.warn_f < self.danger_f and 0 < self.warn_m < self.danger_m):
            raise ValueError("thresholds must satisfy 0 < warn < danger on both axes")


@dataclass
class TcsMemory:
    last_state: SafetyZone = SafetyZone.SAFE
    latest_safe_pose: Pose = field(default_factory=Pose)
    consecutive_danger: int = 0


@dataclass
class TcsDecision:
    action: TcsAction
    r_pun: float


@dataclass
class MoveResult:
    final: Pose
    r_pun: float
    aborted: bool
    warning_substeps: int
    danger_events: int
    substeps: int
    wrench: np.ndarray            # sensed wrench at the final pose, bias-corrected
    accepted_wrenches: list


def classify(wrench: np.ndarray, th: SafetyThresholds) -> SafetyZone:
    """Classify a 6-axis wrench sample; the largest-violation axis wins."""
    f = np.abs(wrench[:3])
    m = np.abs(wrench[3:])
    if (f >= th.danger_f).any() or (m >= th.danger_m).any():
        return SafetyZone.DANGEROUS
    if (f >= th.warn_f).any() or (m >= th.warn_m).any():
        return SafetyZone.WARNING
    return SafetyZone.SAFE


def decide(last: SafetyZone, current: SafetyZone, mem: TcsMemory) -> TcsDecision:
    """Decision table over (last, current) classifications.

    Safe->Dangerous is not in the published table; it is conservatively
    treated like Warning->Dangerous.  Leaving the dangerous zone resets the
    consecutive-danger counter and proceeds.
    """
    if current == SafetyZone.SAFE:
        return TcsDecision(TcsAction.PROCEED, 0.0)
    if current == SafetyZone.WARNING:
        if last == SafetyZone.SAFE:
            return TcsDecision(TcsAction.HALT_HERE, 0.0)
        # Warning->Warning: do nothing and hope the robot saves itself;
        # Dangerous->Warning: recovered, keep going.
        return TcsDecision(TcsAction.PROCEED, 0.0)
    # current == DANGEROUS
    if last == SafetyZone.DANGEROUS and mem.consecutive_danger >= ABORT_AFTER_CONSECUTIVE:
        return TcsDecision(TcsAction.ABORT_EPISODE, R_PUN_ABORT)
    return TcsDecision(TcsAction.REVERT_TO_SAFE, R_PUN_REVERT)


class Supervisor:
    """Executes supervised motions against a world instance."""

    SUB_TRANS = 0.05e-3           # m per sub-step
    SUB_ROT = np.deg2rad(0.01)    # rad per sub-step

    def __init__(self, thresholds: SafetyThresholds, world: World):
        self.thresholds = thresholds
        self.world = world

    def _evaluate(self, pose: Pose, calib: FtCalibration,
                  rng: np.random.Generator | None) -> tuple[Pose, np.ndarray]:
        achieved, true_w = self.world.step_world(pose)
        sensed = self.world.sense_ft(true_w, calib, rng)
        return achieved, sensed - calib.f_star

    def supervised_move(self, target: Pose, mem: TcsMemory, calib: FtCalibration,
                        rng: np.random.Generator | None = None) -> MoveResult:
        """Move toward the target pose under supervision.

        Interpolates in sub-steps of at most 0.05 mm translation / 0.01 deg
        rotation, classifying the bias-corrected wrench after each one.
        """
        start = self.world.tcp.copy()
        d_pos = target.position - start.position
        d_rpy = np.array([((b - a + np.pi) % (2 * np.pi)) - np.pi
                          for a, b in zip(start.rpy, target.rpy)])
        n_sub = max(1, int(np.ceil(max(np.linalg.norm(d_pos) / self.SUB_TRANS,
                                       np.abs(d_rpy).max() / self.SUB_ROT))))

        r_pun_total = 0.0
        warning_substeps = 0
        danger_events = 0
        aborted = False
        final = start
        wrench = np.zeros(6)
        accepted = []

        for i in range(1, n_sub + 1):
            frac = i / n_sub
            sub = Pose(start.position + frac * d_pos, start.rpy + frac * d_rpy)
            achieved, wrench = self._evaluate(sub, calib, rng)
            zone = classify(wrench, self.thresholds)
            if zone == SafetyZone.DANGEROUS:
                mem.consecutive_danger += 1
            dec = decide(mem.last_state, zone, mem)
            mem.last_state = zone
            if zone != SafetyZone.DANGEROUS:
                mem.consecutive_danger = 0
            if zone == SafetyZone.WARNING:
                warning_substeps += 1

            if dec.action == TcsAction.PROCEED:
                accepted.append(wrench.copy())
                final = achieved
                if zone == SafetyZone.SAFE:
                    mem.latest_safe_pose = achieved.copy()
                continue
            if dec.action == TcsAction.HALT_HERE:
                accepted.append(wrench.copy())
                final = achieved
                break
            # revert or abort: move back to the latest safe pose
            danger_events += 1
            r_pun_total += dec.r_pun
            final, wrench = self._evaluate(mem.latest_safe_pose, calib, rng)
            mem.last_state = classify(wrench, self.thresholds)
            if mem.last_state != SafetyZone.DANGEROUS:
                mem.consecutive_danger = 0
            accepted.append(wrench.copy())
            if dec.action == TcsAction.ABORT_EPISODE:
                aborted = True
            break

        return MoveResult(final=final, r_pun=r_pun_total, aborted=aborted,
                          warning_substeps=warning_substeps,
                          danger_events=danger_events, substeps=n_sub,
                          wrench=wrench, accepted_wrenches=accepted)
