"""Frame math for the peg-on-tool geometry.

Conventions:
  - All angles are radians internally; degrees appear only at the config/CLI
    boundary.
  - Orientation is stored as roll-pitch-yaw (gamma about X, beta about Y,
    alpha about Z), composed as Rz(alpha) @ Ry(beta) @ Rx(gamma).
  - The peg extends along +Z of the tool frame. At the working orientation
    the tool is flipped (gamma ~ pi), so the peg points down in the world.
"""

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

# The workspace keeps the peg nearly vertical; beyond this pitch the Euler
# parametrization would approach gimbal lock and we refuse to operate.
MAX_PITCH = 1.0


def wrap_angle(a: float) -> float:
    """Wrap an angle into the principal range (-pi, pi]."""
    w = (a + np.pi) % TWO_PI - np.pi
    if w == -np.pi:
        w = np.pi
    return float(w)


@dataclass
class Pose:
    """6-DoF tool pose: position in meters (base frame) + roll-pitch-yaw."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rpy: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.rpy = np.asarray(self.rpy, dtype=np.float64).copy()
        if self.position.shape != (3,) or self.rpy.shape != (3,):
            raise ValueError("Pose needs 3 position and 3 rpy components")
        if not (np.isfinite(self.position).all() and np.isfinite(self.rpy).all()):
            raise ValueError("Pose components must be finite")
        self.rpy = np.array([wrap_angle(a) for a in self.rpy])
        if abs(self.rpy[1]) > MAX_PITCH:
            raise ValueError(f"pitch {self.rpy[1]:.3f} rad exceeds workspace limit")

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.rpy.copy())

    def as_vector(self) -> np.ndarray:
        """(Px, Py, Pz, Rx, Ry, Rz) as a flat array."""
        return np.concatenate([self.position, self.rpy])


def rot_x(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(t: float) -> np.ndarray:
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rpy_to_matrix(rpy: np.ndarray) -> np.ndarray:
    """Rotation matrix Rz(alpha) @ Ry(beta) @ Rx(gamma) for rpy = (gamma, beta, alpha)."""
    gamma, beta, alpha = (float(a) for a in rpy)
    cg, sg = np.cos(gamma), np.sin(gamma)
    cb, sb = np.cos(beta), np.sin(beta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg],
        [sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg],
        [-sb, cb * sg, cb * cg],
    ])


def _tool_z_axis(rpy: np.ndarray) -> np.ndarray:
    """Third column of rpy_to_matrix: the tool +Z direction in the base frame."""
    gamma, beta, alpha = (float(a) for a in rpy)
    cg, sg = np.cos(gamma), np.sin(gamma)
    cb, sb = np.cos(beta), np.sin(beta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([ca * sb * cg + sa * sg, sa * sb * cg - ca * sg, cb * cg])


def cbp_world(tcp: Pose, z_peg: float) -> np.ndarray:
    """World position of the peg's bottom-center point.

    The peg tip sits at [0, 0, z_peg] in the tool frame; z_peg is the peg
    length and must be non-negative.
    """
    if z_peg < 0:
        raise ValueError("z_peg must be non-negative")
    return tcp.position + z_peg * _tool_z_axis(tcp.rpy)


def tcp_after_rotation(tcp_old: Pose, axis: str, delta: float, z_peg: float) -> Pose:
    """Rotate the tool about its X or Y Euler angle keeping the peg tip fixed.

    The new TCP position compensates the lever arm so that cbp_world is
    unchanged: P_new = M_old @ [0,0,z_peg] + P_old - M_new @ [0,0,z_peg].
    """
    axis = axis.upper()
    if axis not in ("X", "Y"):
        raise ValueError(f"rotation axis must be X or Y, got {axis!r}")
    rpy_new = tcp_old.rpy.copy()
    rpy_new[0 if axis == "X" else 1] = wrap_angle(rpy_new[0 if axis == "X" else 1] + delta)
    pos_new = (tcp_old.position
               + z_peg * (_tool_z_axis(tcp_old.rpy) - _tool_z_axis(rpy_new)))
    return Pose(pos_new, rpy_new)


def peg_frame_translation_to_base(direction: np.ndarray, tcp: Pose) -> np.ndarray:
    """Map a translation expressed in the peg/tool frame to the base frame."""
    direction = np.asarray(direction, dtype=np.float64)
    if np.linalg.norm(direction) == 0.0:
        raise ValueError("translation direction must be non-zero")
    return rpy_to_matrix(tcp.rpy) @ direction
