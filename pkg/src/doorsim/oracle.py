"""Scripted staged controller certifying that generated worlds are solvable
independent of any learning.

Stages per environment: approach a standoff point in front of the grasp
target while aligning the approach axis; move in and engage (closing the
gripper if present); turn the knob to the latch bypass angle for latched
knobs; then pull or push along the door tangent.  The knob position comes
from the observation's direction vector, so estimate noise degrades the
controller the same way it degrades a policy; door/knob angles and the
attachment flag come from the environment's step info.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import BatchDynamics, DEFAULT_CONSTANTS, DynamicsConstants

STAGE_APPROACH = 0
STAGE_ENGAGE = 1
STAGE_TURN = 2
STAGE_OPEN = 3


@dataclass(frozen=True)
class OracleGains:
    kp_approach: float = 140.0
    kd_approach: float = 32.0
    kp_engage: float = 120.0
    kd_engage: float = 28.0
    turn_force: float = 60.0     # N along the knob tangent
    turn_damping: float = 4.0
    open_force: float = 55.0     # N along the door tangent
    open_damping: float = 5.0
    kp_rot: float = 8.0
    kd_rot: float = 1.6
    standoff: float = 0.10       # m in front of the grasp point
    standoff_tol: float = 0.06
    align_tol: float = 0.35      # rad, comfortably inside the attach gate


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


class OracleController:
    """Closed-loop scripted policy over (observation, step info)."""

    def __init__(self, worlds, arm: str = "hook",
                 constants: DynamicsConstants = DEFAULT_CONSTANTS,
                 gains: OracleGains = OracleGains()):
        self.dyn = BatchDynamics(worlds, arm=arm, constants=constants)
        self.arm = arm
        self.dof = self.dyn.dof
        self.gains = gains
        self.constants = constants
        self.stage = np.zeros(self.dyn.n, dtype=int)

    @property
    def n(self) -> int:
        return self.dyn.n

    def begin_episode(self) -> None:
        self.stage[:] = STAGE_APPROACH

    def act(self, obs: np.ndarray, info: dict) -> np.ndarray:
        g = self.gains
        dyn = self.dyn
        dof = self.dof
        obs = np.asarray(obs)
        tip = obs[:, 0:3]
        ang = obs[:, 3:6]
        vel = obs[:, dof:dof + 3]
        angvel = obs[:, dof + 3:dof + 6]
        est_knob = tip + obs[:, 2 * dof:2 * dof + 3]
        phi = np.asarray(info["phi"])
        psi = np.asarray(info["psi"])
        attached = np.asarray(info["attached"])
        latched = np.asarray(info["latched"])

        theta = dyn.swing * phi
        stheta, ctheta = np.sin(theta), np.cos(theta)
        dhat = np.stack([dyn.side * stheta, -dyn.side * ctheta, np.zeros(dyn.n)], axis=1)
        nhat = np.stack([ctheta, stheta, np.zeros(dyn.n)], axis=1)
        cpsi, spsi = np.cos(psi), np.sin(psi)
        grasp = est_knob - (dyn.grasp_len * cpsi)[:, None] * dhat
        grasp[:, 2] -= dyn.grasp_len * spsi

        # stage transitions
        standoff_pt = grasp + g.standoff * nhat
        orient_err = np.arccos(np.clip(
            np.cos(ang[:, 1]) * np.cos(ang[:, 2]) * nhat[:, 0]
            + np.cos(ang[:, 1]) * np.sin(ang[:, 2]) * nhat[:, 1], -1.0, 1.0))
        near_standoff = np.linalg.norm(standoff_pt - tip, axis=1) < g.standoff_tol
        self.stage = np.where((self.stage == STAGE_APPROACH) & near_standoff
                              & (orient_err < g.align_tol), STAGE_ENGAGE, self.stage)
        needs_turn = dyn.has_knob & latched & (psi < dyn.knob_bypass)
        self.stage = np.where((self.stage == STAGE_ENGAGE) & attached,
                              np.where(needs_turn, STAGE_TURN, STAGE_OPEN), self.stage)
        self.stage = np.where((self.stage == STAGE_TURN) & ~needs_turn, STAGE_OPEN, self.stage)

        # stage forces
        f_approach = g.kp_approach * (standoff_pt - tip) - g.kd_approach * vel
        f_engage = g.kp_engage * (grasp - tip) - g.kd_engage * vel
        tangent = spsi[:, None] * dhat
        tangent[:, 2] -= cpsi
        f_turn = g.turn_force * tangent - g.turn_damping * vel
        f_open = (g.open_force * dyn.open_sign)[:, None] * nhat - g.open_damping * vel
        stage = self.stage[:, None]
        force = np.select(
            [stage == STAGE_APPROACH, stage == STAGE_ENGAGE, stage == STAGE_TURN],
            [f_approach, f_engage, f_turn], default=f_open)

        # orientation servo toward the ideal grasp axis (yaw = theta, pitch = 0)
        ang_err = np.stack([_wrap_angle(-ang[:, 0]),
                            _wrap_angle(-ang[:, 1]),
                            _wrap_angle(theta - ang[:, 2])], axis=1)
        torque = g.kp_rot * ang_err - g.kd_rot * angvel

        c = self.constants
        action = np.concatenate([force / c.force_limit, torque / c.torque_limit], axis=1)
        if dof == 7:
            close = np.full((dyn.n, 1), -1.0)  # keep the gripper closing
            action = np.concatenate([action, close], axis=1)
        return np.clip(action, -1.0, 1.0)


def scripted_oracle(world, arm: str = "hook",
                    constants: DynamicsConstants = DEFAULT_CONSTANTS,
                    gains: OracleGains = OracleGains()) -> OracleController:
    """Single-world controller (the batched form takes a world list)."""
    return OracleController([world], arm=arm, constants=constants, gains=gains)
