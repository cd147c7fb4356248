"""Simulated contact world: rigid peg/hole geometry with penalty compliance,
a synthetic eye-in-hand top-down camera, and a biased/noisy F/T sensor.

The contact model is quasi-static and fully analytic, with three cases:
flat-surface / hole-rim support, in-hole wall contact, and hole-bottom
contact.  Forces come from a penalty stiffness on the penetration depth and
are capped, so the wrench is bounded and continuous in the commanded pose.
"""

from dataclasses import dataclass, field

import numpy as np

from .kinematics import Pose, rpy_to_matrix


class WorkspaceViolation(ValueError):
    """Commanded pose left the allowed workspace box."""


@dataclass
class PegSpec:
    radius: float = 0.010          # m
    length: float = 0.100          # m, peg tip offset along tool +Z
    grasp_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.grasp_offset = np.asarray(self.grasp_offset, dtype=np.float64)
        if self.radius <= 0 or self.length <= 0:
            raise ValueError("peg radius and length must be positive")
        if np.linalg.norm(self.grasp_offset) > 1.1e-3:
            raise ValueError("grasp offset exceeds 1 mm")


@dataclass
class HoleSpec:
    center_true: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.010 + 0.05e-3
    depth: float = 0.012

    def __post_init__(self):
        self.center_true = np.asarray(self.center_true, dtype=np.float64)
        if self.depth < 0.012:
            raise ValueError("hole depth must be at least 12 mm")

    @property
    def surface_z(self) -> float:
        return float(self.center_true[2])


@dataclass
class ContactParams:
    k_z: float = 1.0e5             # N/m (100 N/mm): 0.1 mm penetration -> 10 N
    k_xy: float = 5.0e4            # N/m wall stiffness
    pen_max: float = 0.2e-3        # penalty-compliance limit
    force_cap: float = 50.0        # N
    moment_cap: float = 5.0        # N*m


@dataclass
class CameraParams:
    size: int = 64
    mm_per_px: float = 0.5
    offset: float = 0.015          # camera displacement from TCP, tool-frame X
    parallax: float = 0.4          # how far the peg's occlusion shadow shifts
    background_gray: int = 200
    hole_gray: int = 30
    peg_gray: int = 150


@dataclass
class SensorParams:
    noise_enabled: bool = True
    sigma_f: float = 0.05          # N
    sigma_m: float = 0.005         # N*m
    bias_f: float = 2.0            # bias drawn uniform in +-bias_f per force axis
    bias_m: float = 0.2


@dataclass
class FtCalibration:
    """Constant sensor bias snapshot taken at the start of an episode."""
    f_star: np.ndarray = field(default_factory=lambda: np.zeros(6))


def circle_overlap_area(r1: float, r2: float, d: float) -> float:
    """Area of intersection of two discs with radii r1, r2 at center distance d."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return np.pi * r * r
    a1 = r1 * r1 * np.arccos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1))
    a2 = r2 * r2 * np.arccos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2))
    tri = 0.5 * np.sqrt(max(0.0, (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)))
    return float(a1 + a2 - tri)


class World:
    """One peg/hole scene.  Owns the current TCP pose and contact state.

    Instances are strictly sequential; run one per evaluation worker.
    """

    def __init__(self, peg: PegSpec, hole: HoleSpec,
                 contact: ContactParams | None = None,
                 camera: CameraParams | None = None,
                 sensor: SensorParams | None = None):
        self.peg = peg
        self.hole = hole
        self.contact = contact or ContactParams()
        self.camera = camera or CameraParams()
        self.sensor = sensor or SensorParams()
        self.tcp = Pose()
        self.contact_state = "free"   # free | surface | in-hole

    # -- geometry helpers -------------------------------------------------

    def peg_bottom(self, tcp: Pose) -> np.ndarray:
        """World position of the actual peg tip (includes grasp offset)."""
        m = rpy_to_matrix(tcp.rpy)
        return tcp.position + m @ (self.peg.grasp_offset + np.array([0.0, 0.0, self.peg.length]))

    def peg_tilt(self, tcp: Pose) -> float:
        """Angle between the peg axis and vertical-down."""
        axis = rpy_to_matrix(tcp.rpy) @ np.array([0.0, 0.0, 1.0])
        return float(np.arccos(np.clip(-axis[2], -1.0, 1.0)))

    def set_pose(self, tcp: Pose, contact_state: str = "free"):
        self.tcp = tcp.copy()
        self.contact_state = contact_state

    def check_workspace(self, tcp: Pose):
        b = self.peg_bottom(tcp)
        c = self.hole.center_true
        if abs(b[0] - c[0]) > 0.05 or abs(b[1] - c[1]) > 0.05:
            raise WorkspaceViolation(f"peg tip {b[:2]} beyond +-5 cm of hole center")
        if not (self.hole.surface_z - self.hole.depth - 1e-9 <= b[2] <= self.hole.surface_z + 0.05):
            raise WorkspaceViolation(f"peg tip z {b[2]:.4f} outside workspace")

    # -- contact resolution ----------------------------------------------

    def step_world(self, command: Pose) -> tuple[Pose, np.ndarray]:
        """Advance to the commanded pose, projecting out of rigid geometry.

        Returns the achieved pose and the true contact wrench
        (fx, fy, fz, mx, my, mz) in the end-effector frame.  Deterministic.
        """
        self.check_workspace(command)
        cp = self.contact
        hole = self.hole
        m = rpy_to_matrix(command.rpy)
        b = self.peg_bottom(command)
        e = b[:2] - hole.center_true[:2]
        d = float(np.linalg.norm(e))
        e_hat = e / d if d > 1e-12 else np.array([1.0, 0.0])
        clearance = hole.radius - self.peg.radius
        tilt = self.peg_tilt(command)

        achieved = command.copy()
        f_world = np.zeros(3)
        contact_points: list[tuple[np.ndarray, np.ndarray]] = []  # (point, force)

        pen_z = hole.surface_z - b[2]
        if pen_z <= 0:
            self.contact_state = "free"
            self.set_pose(achieved, "free")
            return achieved, np.zeros(6)

        engage = min(pen_z, hole.depth)
        d_eff = d + engage * np.tan(tilt)
        was_inside = self.contact_state == "in-hole"
        inside = d_eff <= clearance or (was_inside and d_eff <= clearance + cp.pen_max)

        if inside:
            state = "in-hole"
            # wall contact: lateral penetration beyond the radial clearance
            p_lat = max(0.0, d_eff - clearance)
            if p_lat > cp.pen_max:
                shift = (p_lat - cp.pen_max) * e_hat
                achieved.position[:2] -= shift
                b[:2] -= shift
                p_lat = cp.pen_max
            if p_lat > 0:
                f_lat = -cp.k_xy * p_lat * e_hat
                rim = np.array([hole.center_true[0] + hole.radius * e_hat[0],
                                hole.center_true[1] + hole.radius * e_hat[1],
                                hole.surface_z])
                contact_points.append((rim, np.array([f_lat[0], f_lat[1], 0.0])))
                f_world[:2] += f_lat
            # bottom of the hole
            p_bot = pen_z - hole.depth
            if p_bot > 0:
                if p_bot > cp.pen_max:
                    achieved.position[2] += p_bot - cp.pen_max
                    b[2] += p_bot - cp.pen_max
                    p_bot = cp.pen_max
                f_bot = np.array([0.0, 0.0, cp.k_z * p_bot])
                contact_points.append((b.copy(), f_bot))
                f_world[2] += f_bot[2]
        else:
            state = "surface"
            # support fraction: part of the bottom face resting outside the hole
            a_disc = np.pi * self.peg.radius ** 2
            a_lens = circle_overlap_area(self.peg.radius, hole.radius, d)
            f_sup = max(0.0, (a_disc - a_lens) / a_disc)
            if pen_z > cp.pen_max:
                achieved.position[2] += pen_z - cp.pen_max
                b[2] += pen_z - cp.pen_max
                pen_z = cp.pen_max
            fz = cp.k_z * pen_z * f_sup
            if fz > 0:
                # support centroid drifts away from the hole as overlap grows
                c_off = e_hat * (self.peg.radius / 2.0) * (a_lens / a_disc)
                point = np.array([b[0] + c_off[0], b[1] + c_off[1], hole.surface_z])
                contact_points.append((point, np.array([0.0, 0.0, fz])))
                f_world[2] += fz

        m_world = np.zeros(3)
        for point, force in contact_points:
            m_world += np.cross(point - achieved.position, force)

        # cap, then express in the end-effector frame
        fn = np.linalg.norm(f_world)
        if fn > cp.force_cap:
            f_world *= cp.force_cap / fn
        mn = np.linalg.norm(m_world)
        if mn > cp.moment_cap:
            m_world *= cp.moment_cap / mn
        f_tool = m.T @ f_world
        m_tool = m.T @ m_world
        self.set_pose(achieved, state)
        return achieved, np.concatenate([f_tool, m_tool])

    # -- sensing ----------------------------------------------------------

    def draw_calibration(self, rng: np.random.Generator) -> FtCalibration:
        sp = self.sensor
        bias = np.concatenate([rng.uniform(-sp.bias_f, sp.bias_f, 3),
                               rng.uniform(-sp.bias_m, sp.bias_m, 3)])
        return FtCalibration(f_star=bias)

    def sense_ft(self, true_wrench: np.ndarray, calib: FtCalibration,
                 rng: np.random.Generator | None = None) -> np.ndarray:
        """True wrench + constant bias + optional zero-mean Gaussian noise."""
        out = np.asarray(true_wrench, dtype=np.float64) + calib.f_star
        if self.sensor.noise_enabled and rng is not None:
            sp = self.sensor
            out = out + np.concatenate([rng.normal(0.0, sp.sigma_f, 3),
                                        rng.normal(0.0, sp.sigma_m, 3)])
        return out

    def estimate_hole_center(self, rng: np.random.Generator) -> np.ndarray:
        """Noisy CPH estimate: 3-4 mm planar error, +-1 mm vertical error."""
        mag = rng.uniform(3.0e-3, 4.0e-3)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        dz = rng.uniform(-1.0e-3, 1.0e-3)
        return self.hole.center_true + np.array([mag * np.cos(ang), mag * np.sin(ang), dz])

    # -- imaging ----------------------------------------------------------

    def render_raw(self, tcp: Pose | None = None) -> np.ndarray:
        """Top-down orthographic 8-bit grayscale view, pixel axes aligned with
        the tool frame.  The peg occludes a disc shifted away from the camera
        (parallax), which reproduces the eye-in-hand blind spot."""
        cam = self.camera
        tcp = tcp or self.tcp
        m = rpy_to_matrix(tcp.rpy)
        ex = m @ np.array([1.0, 0.0, 0.0])
        ey = m @ np.array([0.0, 1.0, 0.0])
        ex2, ey2 = ex[:2], ey[:2]
        nx = np.linalg.norm(ex2)
        ny = np.linalg.norm(ey2)
        ex2 = ex2 / nx if nx > 1e-9 else np.array([1.0, 0.0])
        ey2 = ey2 / ny if ny > 1e-9 else np.array([0.0, 1.0])

        b = self.peg_bottom(tcp)
        cam_xy = tcp.position[:2] + cam.offset * ex2
        occ_xy = b[:2] + cam.parallax * (b[:2] - cam_xy)

        n = cam.size
        px = (np.arange(n) - (n - 1) / 2.0) * cam.mm_per_px * 1e-3
        uu, vv = np.meshgrid(px, px, indexing="xy")
        # world coordinates of each pixel (view centered on the tool axis)
        wx = tcp.position[0] + uu * ex2[0] + vv * ey2[0]
        wy = tcp.position[1] + uu * ex2[1] + vv * ey2[1]

        img = np.full((n, n), cam.background_gray, dtype=np.uint8)
        hc = self.hole.center_true
        hole_mask = (wx - hc[0]) ** 2 + (wy - hc[1]) ** 2 <= self.hole.radius ** 2
        img[hole_mask] = cam.hole_gray
        peg_mask = (wx - occ_xy[0]) ** 2 + (wy - occ_xy[1]) ** 2 <= self.peg.radius ** 2
        img[peg_mask] = cam.peg_gray
        return img
