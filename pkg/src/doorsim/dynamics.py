"""Analytic articulated dynamics: door + knob + floating end-effector.

Replaces a general-purpose physics engine at desk scale with a small,
deterministic, penalty-based model integrated by semi-implicit Euler at
500 Hz (10 substeps per 20 ms control tick).

World frame and conventions
---------------------------
* z is up.  The closed door panel lies in the plane x = 0 and the robot
  works its +x side.  The hinge axis is vertical.
* hinge_side "right" puts the hinge at y = wall_offset + width/2, "left"
  at y = wall_offset - width/2; the panel extends from the hinge toward
  the opposite side, so the closed panel is centered on wall_offset.
* door_angle is opening-positive regardless of swing direction: the panel
  rotates about the hinge by swing_sign * door_angle, with swing_sign
  chosen so "pull" swings toward +x and "push" toward -x.
* The knob center sits on the panel at height knob_height, at distance
  (1 - knob_edge_ratio) * width from the hinge axis.  The lever handle
  (length lever_handle_len) and the round-knob rim reference point (radius
  round_knob_radius) start pointing toward the hinge and swing downward as
  knob_angle grows; a pull knob is grasped at its center.
* The end-effector is a gravity-compensated floating body: x, y, z plus
  roll/pitch/yaw.  Its approach axis is Rz(yaw) Ry(pitch) Rx(roll) (-x),
  i.e. it faces the door at identity orientation.  The ideal grasp axis is
  the door normal pointing away from the robot, rotated with the door.

Couplings
---------
* Attachment: when the tip comes within attach_radius of the grasp point
  with orientation error below attach_max_angle (and, for the gripper,
  aperture below grip_close_engage), a spring--damper ties tip to grasp
  point.  Its moment about the hinge drives the door; its moment about the
  knob axis, scaled by a grip transfer factor (hook on round knob: 0.1;
  closed gripper: the world's knob surface friction; hook on lever: 1),
  drives the knob.  A hook stays attached for the rest of the episode; a
  gripper releases when opened past grip_open_release.
* Latch: lever/round worlds start latched; external door torque transmits
  only once knob_angle >= unlatch_fraction * knob_rot_range, and the latch
  releases permanently once the door is past ajar_angle.
* Push worlds additionally get a unilateral plane contact so the tip can
  shove the panel directly.

Every constant a full simulator would supply implicitly (inertias,
actuator limits, penalty gains) lives in DynamicsConstants; evaluation
reports record any overrides.
"""

import math
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from .worldgen import WorldSpec

ARM_TYPES = ("hook", "gripper")
CONTROL_DT = 0.02
N_SUBSTEPS = 10
DOOR_MAX_ANGLE = math.pi / 2


class NumericsError(RuntimeError):
    """The simulation produced a non-finite quantity."""

    def __init__(self, quantity: str, env_index: int = 0, world_id: str | None = None):
        self.quantity = quantity
        self.env_index = env_index
        self.world_id = world_id
        msg = f"non-finite {quantity} in environment {env_index}"
        if world_id:
            msg += f" (world {world_id})"
        super().__init__(msg)


def arm_dof(arm: str) -> int:
    if arm not in ARM_TYPES:
        raise ValueError(f"unknown arm type {arm!r}, expected one of {ARM_TYPES}")
    return 7 if arm == "gripper" else 6


@dataclass(frozen=True)
class DynamicsConstants:
    """Calibration constants (SI).  Scaling-factor fields of a world are
    multiplied by the matching *_si base to obtain coefficients."""

    # hinge and knob joint coefficient bases
    frame_damper_si: float = 100.0     # N*m*s/rad per unit factor
    frame_spring_si: float = 10.0      # N*m/rad per unit factor
    frame_friction_si: float = 5.0     # N*m per unit factor
    knob_damper_si: float = 1.0
    knob_spring_si: float = 2.0
    knob_friction_si: float = 0.5
    # end-effector body and actuators
    ee_mass: float = 2.0               # kg
    ee_inertia: float = 0.05           # kg*m^2 per rotation axis
    force_limit: float = 80.0          # N per linear axis at |u| = 1
    torque_limit: float = 20.0         # N*m per rotation axis at |u| = 1
    aperture_rate: float = 2.0         # gripper open/close speed at |u| = 1, 1/s
    # attachment and contact penalties
    attach_radius: float = 0.04        # m
    attach_max_angle: float = 0.5      # rad
    contact_stiffness: float = 5000.0  # N/m
    contact_damping: float = 200.0     # N*s/m
    contact_depth: float = 0.15        # m, tunneling guard for panel contact
    grip_close_engage: float = 0.3     # aperture below this can grab
    grip_open_release: float = 0.7     # aperture above this lets go
    # latch
    unlatch_fraction: float = 0.9
    ajar_angle: float = 0.05           # rad
    # grasp geometry and grip transfer
    lever_handle_len: float = 0.12     # m
    round_knob_radius: float = 0.035   # m
    hook_round_transfer: float = 0.1
    knob_rotor_inertia: float = 0.002  # kg*m^2, keeps the knob ODE well conditioned
    # robot damping bases (times world.robot_joint_damping)
    robot_lin_damping_si: float = 10.0  # N*s/m per unit factor
    robot_rot_damping_si: float = 1.0   # N*m*s/rad per unit factor
    # workspace box (room walls and floor); positions clamp here
    room_min: tuple[float, float, float] = (-2.0, -2.5, 0.05)
    room_max: tuple[float, float, float] = (2.5, 2.5, 2.6)
    # episode start distribution (distance from door plane, lateral offset
    # about the knob, height, and orientation jitter about knob-facing)
    init_dist_x: tuple[float, float] = (0.6, 1.2)
    init_y_halfwidth: float = 0.4
    init_z: tuple[float, float] = (0.8, 1.2)
    init_angle_jitter: float = 0.3     # rad

    def overrides(self) -> dict:
        """Fields that differ from the defaults (for run metadata)."""
        default = DynamicsConstants()
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) != getattr(default, f.name)}


DEFAULT_CONSTANTS = DynamicsConstants()


@dataclass
class SimState:
    """Single-environment snapshot.

    q packs [x, y, z, roll, pitch, yaw] for the hook and appends the
    gripper aperture in [0, 1] for the gripper arm; qdot matches.
    """

    q: np.ndarray
    qdot: np.ndarray
    door_angle: float
    door_vel: float
    knob_angle: float
    knob_vel: float
    latched: bool
    attached: bool
    t: float
    door_angle_max: float

    @property
    def dof(self) -> int:
        return len(self.q)


class BatchState:
    """Struct-of-arrays state for N environments stepped in lockstep."""

    __slots__ = ("pos", "vel", "ang", "angvel", "grip", "grip_vel",
                 "door_angle", "door_vel", "knob_angle", "knob_vel",
                 "latched", "attached", "t", "door_angle_max")

    def __init__(self, n: int):
        self.pos = np.zeros((n, 3))
        self.vel = np.zeros((n, 3))
        self.ang = np.zeros((n, 3))
        self.angvel = np.zeros((n, 3))
        self.grip = np.zeros(n)
        self.grip_vel = np.zeros(n)
        self.door_angle = np.zeros(n)
        self.door_vel = np.zeros(n)
        self.knob_angle = np.zeros(n)
        self.knob_vel = np.zeros(n)
        self.latched = np.zeros(n, dtype=bool)
        self.attached = np.zeros(n, dtype=bool)
        self.t = np.zeros(n)
        self.door_angle_max = np.zeros(n)

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    def copy(self) -> "BatchState":
        out = BatchState(self.n)
        for name in self.__slots__:
            setattr(out, name, getattr(self, name).copy())
        return out

    def q_matrix(self, dof: int) -> np.ndarray:
        cols = [self.pos, self.ang] if dof == 6 else [self.pos, self.ang, self.grip[:, None]]
        return np.concatenate(cols, axis=1)

    def qdot_matrix(self, dof: int) -> np.ndarray:
        cols = [self.vel, self.angvel] if dof == 6 else [self.vel, self.angvel, self.grip_vel[:, None]]
        return np.concatenate(cols, axis=1)

    def to_single(self, i: int, dof: int) -> SimState:
        if dof == 7:
            q = np.concatenate([self.pos[i], self.ang[i], [self.grip[i]]])
            qd = np.concatenate([self.vel[i], self.angvel[i], [self.grip_vel[i]]])
        else:
            q = np.concatenate([self.pos[i], self.ang[i]])
            qd = np.concatenate([self.vel[i], self.angvel[i]])
        return SimState(
            q=q, qdot=qd,
            door_angle=float(self.door_angle[i]), door_vel=float(self.door_vel[i]),
            knob_angle=float(self.knob_angle[i]), knob_vel=float(self.knob_vel[i]),
            latched=bool(self.latched[i]), attached=bool(self.attached[i]),
            t=float(self.t[i]), door_angle_max=float(self.door_angle_max[i]),
        )

    def load_single(self, i: int, state: SimState) -> None:
        self.pos[i] = state.q[:3]
        self.ang[i] = state.q[3:6]
        self.vel[i] = state.qdot[:3]
        self.angvel[i] = state.qdot[3:6]
        if state.dof == 7:
            self.grip[i] = state.q[6]
            self.grip_vel[i] = state.qdot[6]
        self.door_angle[i] = state.door_angle
        self.door_vel[i] = state.door_vel
        self.knob_angle[i] = state.knob_angle
        self.knob_vel[i] = state.knob_vel
        self.latched[i] = state.latched
        self.attached[i] = state.attached
        self.t[i] = state.t
        self.door_angle_max[i] = state.door_angle_max


def approach_axis(ang) -> np.ndarray:
    """Unit approach axis for roll/pitch/yaw rows; (-x at identity).

    Roll spins the body about its own approach axis, so the axis depends
    only on pitch and yaw.
    """
    ang = np.asarray(ang, dtype=float)
    single = ang.ndim == 1
    a = ang.reshape(-1, 3)
    cp, sp = np.cos(a[:, 1]), np.sin(a[:, 1])
    cy, sy = np.cos(a[:, 2]), np.sin(a[:, 2])
    axis = np.stack([-cp * cy, -cp * sy, sp], axis=1)
    return axis[0] if single else axis


def facing_angles(direction) -> tuple[float, float]:
    """(pitch, yaw) whose approach axis points along the given direction."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    pitch = math.asin(float(np.clip(d[2], -1.0, 1.0)))
    yaw = math.atan2(-d[1], -d[0])
    return pitch, yaw


class BatchDynamics:
    """Precomputed per-world coefficient arrays plus the substep kernel."""

    def __init__(self, worlds, arm: str = "hook", constants: DynamicsConstants = DEFAULT_CONSTANTS):
        self.worlds = list(worlds)
        self.arm = arm
        self.dof = arm_dof(arm)
        self.constants = constants
        n = len(self.worlds)
        if n == 0:
            raise ValueError("need at least one world")
        c = constants

        def arr(fn):
            return np.array([fn(w) for w in self.worlds], dtype=float)

        self.world_ids = [w.world_id for w in self.worlds]
        self.side = arr(lambda w: 1.0 if w.hinge_side == "right" else -1.0)
        self.open_sign = arr(lambda w: 1.0 if w.open_direction == "pull" else -1.0)
        self.swing = self.open_sign * self.side
        self.hinge_y = arr(lambda w: w.wall_offset_y_m) + self.side * arr(lambda w: w.door_width_m) / 2.0
        self.width = arr(lambda w: w.door_width_m)
        self.height = arr(lambda w: w.door_height_m)
        self.knob_r = (1.0 - arr(lambda w: w.knob_edge_ratio)) * self.width
        self.knob_z = arr(lambda w: w.knob_height_m)
        self.has_knob = np.array([w.knob_type != "pull" for w in self.worlds])
        self.is_push = np.array([w.open_direction == "push" for w in self.worlds])

        grasp_len = {"pull": 0.0, "lever": c.lever_handle_len, "round": c.round_knob_radius}
        self.grasp_len = np.array([grasp_len[w.knob_type] for w in self.worlds])
        if arm == "gripper":
            transfer = [w.knob_surface_friction for w in self.worlds]
        else:
            transfer = [c.hook_round_transfer if w.knob_type == "round" else 1.0
                        for w in self.worlds]
        self.transfer = np.array(transfer, dtype=float)

        self.door_inertia = arr(lambda w: w.door_mass_kg) * self.width ** 2 / 3.0
        self.door_damping = arr(lambda w: w.frame_damper) * c.frame_damper_si
        self.door_spring = arr(lambda w: w.frame_spring) * c.frame_spring_si
        self.door_friction = arr(lambda w: w.frame_frictionloss) * c.frame_friction_si
        self.knob_inertia = arr(lambda w: w.knob_mass_kg) * self.grasp_len ** 2 + c.knob_rotor_inertia
        self.knob_damping = arr(lambda w: w.knob_damper) * c.knob_damper_si
        self.knob_spring = arr(lambda w: w.knob_spring) * c.knob_spring_si
        self.knob_friction = arr(lambda w: w.knob_frictionloss) * c.knob_friction_si
        self.knob_range = arr(lambda w: w.knob_rot_range_rad)
        self.knob_bypass = c.unlatch_fraction * self.knob_range
        self.lin_damping = arr(lambda w: w.robot_joint_damping) * c.robot_lin_damping_si
        self.rot_damping = arr(lambda w: w.robot_joint_damping) * c.robot_rot_damping_si

        self._cos_attach_gate = math.cos(c.attach_max_angle)
        self._room_min = np.array(c.room_min)
        self._room_max = np.array(c.room_max)

    @property
    def n(self) -> int:
        return len(self.worlds)

    # -- episode start ----------------------------------------------------

    def init_state(self, episode_seeds) -> BatchState:
        """Fresh state; robot pose drawn from the documented start box.

        Per-env draws come from PCG64 seeded with (world.rng_seed,
        episode_seed, 0) in a fixed order: distance from the door plane,
        lateral offset, height, yaw jitter, pitch jitter, roll.
        """
        if len(episode_seeds) != self.n:
            raise ValueError(f"need {self.n} episode seeds, got {len(episode_seeds)}")
        c = self.constants
        st = BatchState(self.n)
        knob_y0 = self.hinge_y - self.side * self.knob_r
        for i, seed in enumerate(episode_seeds):
            rng = np.random.default_rng([self.worlds[i].rng_seed, int(seed) & ((1 << 64) - 1), 0])
            dist = rng.uniform(*c.init_dist_x)
            dy = rng.uniform(-c.init_y_halfwidth, c.init_y_halfwidth)
            z = rng.uniform(*c.init_z)
            jyaw = rng.uniform(-c.init_angle_jitter, c.init_angle_jitter)
            jpitch = rng.uniform(-c.init_angle_jitter, c.init_angle_jitter)
            roll = rng.uniform(-c.init_angle_jitter, c.init_angle_jitter)
            pos = np.array([dist, knob_y0[i] + dy, z])
            target = np.array([0.0, knob_y0[i], self.knob_z[i]])
            pitch, yaw = facing_angles(target - pos)
            st.pos[i] = pos
            st.ang[i] = (roll, pitch + jpitch, yaw + jyaw)
        if self.arm == "gripper":
            st.grip[:] = 1.0  # start fully open
        st.latched[:] = self.has_knob
        return st

    # -- geometry ---------------------------------------------------------

    def geometry(self, st: BatchState) -> dict:
        """Knob center, grasp point, panel normal, orientation error, d_t."""
        theta = self.swing * st.door_angle
        stheta, ctheta = np.sin(theta), np.cos(theta)
        dhat_x, dhat_y = self.side * stheta, -self.side * ctheta
        nhat_x, nhat_y = ctheta, stheta
        knob = np.stack([self.knob_r * dhat_x,
                         self.hinge_y + self.knob_r * dhat_y,
                         self.knob_z], axis=1)
        cpsi, spsi = np.cos(st.knob_angle), np.sin(st.knob_angle)
        grasp = knob - np.stack([self.grasp_len * cpsi * dhat_x,
                                 self.grasp_len * cpsi * dhat_y,
                                 self.grasp_len * spsi], axis=1)
        axis = approach_axis(st.ang)
        cos_o = np.clip(-(axis[:, 0] * nhat_x + axis[:, 1] * nhat_y), -1.0, 1.0)
        orient_err = np.arccos(cos_o)
        d_t = np.linalg.norm(knob - st.pos, axis=1)
        return {
            "knob_center": knob,
            "grasp_point": grasp,
            "normal": np.stack([nhat_x, nhat_y, np.zeros(self.n)], axis=1),
            "panel_dir": np.stack([dhat_x, dhat_y, np.zeros(self.n)], axis=1),
            "approach_axis": axis,
            "orientation_error": orient_err,
            "knob_distance": d_t,
        }

    def energy(self, st: BatchState) -> np.ndarray:
        """Door + knob kinetic energy plus joint spring potential."""
        e = (0.5 * self.door_inertia * st.door_vel ** 2
             + 0.5 * self.door_spring * st.door_angle ** 2)
        knob = (0.5 * self.knob_inertia * st.knob_vel ** 2
                + 0.5 * self.knob_spring * st.knob_angle ** 2)
        return e + np.where(self.has_knob, knob, 0.0)

    # -- integration ------------------------------------------------------

    def step(self, st: BatchState, controls: np.ndarray,
             dt_control: float = CONTROL_DT, n_substeps: int = N_SUBSTEPS) -> BatchState:
        """Advance dt_control in place via n_substeps semi-implicit Euler steps.

        controls is (n, dof); components are clamped to [-1, 1] and scaled
        by the actuator limits.  Raises NumericsError on non-finite state.
        """
        c = self.constants
        u = np.clip(np.asarray(controls, dtype=float).reshape(self.n, self.dof), -1.0, 1.0)
        fx_cmd = u[:, 0] * c.force_limit
        fy_cmd = u[:, 1] * c.force_limit
        fz_cmd = u[:, 2] * c.force_limit
        torque_cmd = u[:, 3:6] * c.torque_limit
        grip_rate = u[:, 6] * c.aperture_rate if self.dof == 7 else None
        dt = dt_control / n_substeps
        is_gripper = self.arm == "gripper"
        kc, cc = c.contact_stiffness, c.contact_damping

        pos, vel = st.pos, st.vel
        for _ in range(n_substeps):
            theta = self.swing * st.door_angle
            stheta, ctheta = np.sin(theta), np.cos(theta)
            dhat_x, dhat_y = self.side * stheta, -self.side * ctheta
            nhat_x, nhat_y = ctheta, stheta

            knob_x = self.knob_r * dhat_x
            knob_y = self.hinge_y + self.knob_r * dhat_y
            cpsi, spsi = np.cos(st.knob_angle), np.sin(st.knob_angle)
            lc, ls = self.grasp_len * cpsi, self.grasp_len * spsi
            gx = knob_x - lc * dhat_x
            gy = knob_y - lc * dhat_y
            gz = self.knob_z - ls

            ex = gx - pos[:, 0]
            ey = gy - pos[:, 1]
            ez = gz - pos[:, 2]
            dist2 = ex * ex + ey * ey + ez * ez

            # engagement gate (cosine compare avoids arccos in the hot path)
            cp, sp = np.cos(st.ang[:, 1]), np.sin(st.ang[:, 1])
            cy, sy = np.cos(st.ang[:, 2]), np.sin(st.ang[:, 2])
            cos_o = cp * cy * nhat_x + cp * sy * nhat_y
            can_grab = st.grip < c.grip_close_engage if is_gripper else True
            engage = (~st.attached) & (dist2 < c.attach_radius ** 2) \
                & (cos_o > self._cos_attach_gate) & can_grab
            st.attached |= engage
            if is_gripper:
                st.attached &= st.grip <= c.grip_open_release

            att = st.attached
            # grasp-point velocity: hinge swing plus knob spin
            wz = self.swing * st.door_vel
            spin = self.grasp_len * st.knob_vel
            vgx = -wz * (gy - self.hinge_y) + spin * spsi * dhat_x
            vgy = wz * gx + spin * spsi * dhat_y
            vgz = -spin * cpsi

            fax = np.where(att, kc * ex + cc * (vgx - vel[:, 0]), 0.0)
            fay = np.where(att, kc * ey + cc * (vgy - vel[:, 1]), 0.0)
            faz = np.where(att, kc * ez + cc * (vgz - vel[:, 2]), 0.0)

            # door torque: moment about the hinge of the reaction -F at grasp
            tau_door = self.swing * ((gy - self.hinge_y) * fax - gx * fay)

            # knob torque: moment of -F about the knob center along its axis
            rgx = gx - knob_x
            rgy = gy - knob_y
            rgz = gz - self.knob_z
            mx = rgz * fay - rgy * faz
            my = rgx * faz - rgz * fax
            tau_knob = self.transfer * (-self.side) * (mx * nhat_x + my * nhat_y)
            tau_knob = np.where(self.has_knob, tau_knob, 0.0)

            # unilateral panel contact (push worlds)
            rel_y = pos[:, 1] - self.hinge_y
            xi = pos[:, 0] * nhat_x + rel_y * nhat_y
            rho = pos[:, 0] * dhat_x + rel_y * dhat_y
            inside = (self.is_push & (xi < 0.0) & (xi > -c.contact_depth)
                      & (rho >= 0.0) & (rho <= self.width)
                      & (pos[:, 2] >= 0.0) & (pos[:, 2] <= self.height))
            vn = vel[:, 0] * nhat_x + vel[:, 1] * nhat_y - self.swing * self.side * st.door_vel * rho
            fn = np.where(inside, np.maximum(0.0, -kc * xi - cc * vn), 0.0)
            fax = fax + fn * nhat_x
            fay = fay + fn * nhat_y
            tau_door = tau_door - self.open_sign * fn * rho

            # latch gates all externally applied door torque
            transmit = (~st.latched) | (st.knob_angle >= self.knob_bypass)
            tau_door = np.where(transmit, tau_door, 0.0)

            # knob: semi-implicit Euler with per-substep capped Coulomb decay
            acc_k = (tau_knob - self.knob_damping * st.knob_vel
                     - self.knob_spring * st.knob_angle) / self.knob_inertia
            v1 = st.knob_vel + dt * acc_k
            dvf = dt * self.knob_friction / self.knob_inertia
            v1 = np.sign(v1) * np.maximum(np.abs(v1) - dvf, 0.0)
            v1 = np.where(self.has_knob, v1, 0.0)
            psi_new = st.knob_angle + dt * v1
            k_hi = psi_new > self.knob_range
            k_lo = psi_new < 0.0
            st.knob_angle = np.where(k_hi, self.knob_range, np.where(k_lo, 0.0, psi_new))
            st.knob_vel = np.where(k_hi | k_lo, 0.0, v1)

            # door
            acc_d = (tau_door - self.door_damping * st.door_vel
                     - self.door_spring * st.door_angle) / self.door_inertia
            w1 = st.door_vel + dt * acc_d
            dwf = dt * self.door_friction / self.door_inertia
            w1 = np.sign(w1) * np.maximum(np.abs(w1) - dwf, 0.0)
            phi_new = st.door_angle + dt * w1
            hi = phi_new > DOOR_MAX_ANGLE
            lo = phi_new < 0.0
            phi_new = np.where(hi, DOOR_MAX_ANGLE, np.where(lo, 0.0, phi_new))
            st.door_vel = np.where(hi | lo, 0.0, w1)
            st.door_angle = phi_new
            st.latched &= st.door_angle <= c.ajar_angle
            np.maximum(st.door_angle_max, st.door_angle, out=st.door_angle_max)

            # end-effector body (fax/fay/faz are the forces ON the tip)
            inv_m = 1.0 / c.ee_mass
            vel[:, 0] += dt * (fx_cmd + fax - self.lin_damping * vel[:, 0]) * inv_m
            vel[:, 1] += dt * (fy_cmd + fay - self.lin_damping * vel[:, 1]) * inv_m
            vel[:, 2] += dt * (fz_cmd + faz - self.lin_damping * vel[:, 2]) * inv_m
            pos += dt * vel
            clipped = np.clip(pos, self._room_min, self._room_max)
            moved = clipped != pos
            if moved.any():
                vel[moved] = 0.0
                pos[:] = clipped

            st.angvel += dt * (torque_cmd - self.rot_damping[:, None] * st.angvel) / c.ee_inertia
            st.ang += dt * st.angvel

            if is_gripper:
                g_new = np.clip(st.grip + dt * grip_rate, 0.0, 1.0)
                st.grip_vel = (g_new - st.grip) / dt
                st.grip = g_new

        st.t += dt_control
        self._check_finite(st)
        return st

    def _check_finite(self, st: BatchState) -> None:
        for name in ("pos", "vel", "ang", "angvel", "door_angle", "door_vel",
                     "knob_angle", "knob_vel"):
            a = getattr(st, name)
            finite = np.isfinite(a)
            if not finite.all():
                idx = int(np.argwhere(~finite)[0][0])  # first row = env index
                raise NumericsError(name, idx, self.world_ids[idx])


# -- single-environment API ------------------------------------------------

@lru_cache(maxsize=128)
def _cached_dynamics(world: WorldSpec, arm: str, constants: DynamicsConstants) -> BatchDynamics:
    return BatchDynamics([world], arm=arm, constants=constants)


def init_state(world: WorldSpec, episode_seed: int, arm: str = "hook",
               constants: DynamicsConstants = DEFAULT_CONSTANTS) -> SimState:
    """Episode start state, deterministic in (world, episode_seed)."""
    dyn = _cached_dynamics(world, arm, constants)
    return dyn.init_state([episode_seed]).to_single(0, dyn.dof)


def step_physics(world: WorldSpec, state: SimState, control,
                 dt_control: float = CONTROL_DT, n_substeps: int = N_SUBSTEPS,
                 constants: DynamicsConstants = DEFAULT_CONSTANTS) -> SimState:
    """Pure-function step: returns the successor state, input untouched."""
    arm = "gripper" if state.dof == 7 else "hook"
    control = np.asarray(control, dtype=float)
    if control.shape != (state.dof,):
        raise ValueError(f"control shape {control.shape} does not match dof {state.dof}")
    dyn = _cached_dynamics(world, arm, constants)
    batch = BatchState(1)
    batch.load_single(0, state)
    dyn.step(batch, control[None, :], dt_control=dt_control, n_substeps=n_substeps)
    return batch.to_single(0, dyn.dof)


def end_effector_pose(state: SimState) -> tuple[np.ndarray, np.ndarray]:
    """(position, unit approach axis) of the end-effector."""
    return state.q[:3].copy(), approach_axis(state.q[3:6])


def _single_geometry(world: WorldSpec, state: SimState,
                     constants: DynamicsConstants) -> dict:
    arm = "gripper" if state.dof == 7 else "hook"
    dyn = _cached_dynamics(world, arm, constants)
    batch = BatchState(1)
    batch.load_single(0, state)
    return dyn.geometry(batch)


def knob_center_point(world: WorldSpec, state: SimState,
                      constants: DynamicsConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Knob center in world coordinates, rotated with the door."""
    return _single_geometry(world, state, constants)["knob_center"][0]


def knob_grasp_point(world: WorldSpec, state: SimState,
                     constants: DynamicsConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Grasp target: knob center (pull) or handle/rim point (lever/round)."""
    return _single_geometry(world, state, constants)["grasp_point"][0]


def orientation_error(world: WorldSpec, state: SimState,
                      constants: DynamicsConstants = DEFAULT_CONSTANTS) -> float:
    """Angle in [0, pi] between approach axis and the ideal grasp axis."""
    return float(_single_geometry(world, state, constants)["orientation_error"][0])


def door_knob_energy(world: WorldSpec, state: SimState,
                     constants: DynamicsConstants = DEFAULT_CONSTANTS) -> float:
    """Door + knob kinetic plus spring potential energy (passivity probe)."""
    arm = "gripper" if state.dof == 7 else "hook"
    dyn = _cached_dynamics(world, arm, constants)
    batch = BatchState(1)
    batch.load_single(0, state)
    return float(dyn.energy(batch)[0])
