"""Per-step reward with an 18-term breakdown.

Terms fall into four groups: task (velocity tracking or sparse goal bonuses,
switched by `ObjectiveMode`), dense goal shaping (off unless explicitly
enabled), posture penalties, and smoothness/contact penalties. Every term is
reported raw and weighted; the total is the weighted sum taken in a fixed
order so identical inputs always reduce to the identical float.

All formulas accept scalar or batched `StepInfo` fields and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from .hopper import FOOT, StepInfo, TermReason

TRACK_SIGMA = 0.25
OUT_PLATFORM_DIST = 3.0
COLLISION_FORCE_MIN = 0.1
STUMBLE_RATIO = 4.0
EDGE_DECAY = 0.05

# fixed evaluation order; the breakdown total sums in exactly this order
TERM_ORDER = (
    "track_lin_vel", "track_ang_vel", "termination", "out_bound",
    "out_platform", "reach_far", "lin_vel_z", "ang_vel_xy", "orientation",
    "joint_torques", "action_rate", "action_smoothness", "joint_power",
    "joint_acc", "joint_deviation", "collision", "stumble", "feet_edge",
)


class ObjectiveMode(Enum):
    VELOCITY_TRACKING = 0
    GOAL_REACHING = 1


@dataclass(frozen=True)
class RewardWeights:
    track_lin_vel: float = 1.5
    track_ang_vel: float = 0.5
    termination: float = -200.0
    out_bound: float = 200.0
    out_platform: float = 10.0
    reach_far: float = -0.5
    lin_vel_z: float = -0.5
    ang_vel_xy: float = -0.05
    orientation: float = -1.0
    joint_torques: float = -1.0e-5
    action_rate: float = -0.01
    action_smoothness: float = -0.01
    joint_power: float = -2.0e-5
    joint_acc: float = -2.5e-7
    joint_deviation: float = -0.01
    collision: float = -10.0
    stumble: float = -1.0
    feet_edge: float = -1.0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RewardBreakdown:
    total: np.ndarray
    terms: dict  # name -> (raw, weighted)


def compute_reward(info: StepInfo, weights: RewardWeights | None = None,
                   mode: ObjectiveMode = ObjectiveMode.VELOCITY_TRACKING,
                   dense_reach: bool = False,
                   reach_from_spawn: bool = False) -> RewardBreakdown:
    """Evaluate every reward term for one control step (scalar or batch)."""
    w = weights or RewardWeights()
    goal_mode = mode is ObjectiveMode.GOAL_REACHING

    vx = np.asarray(info.v, dtype=np.float64)[..., 0]
    cmd = np.asarray(info.cmd, dtype=np.float64)
    omega = np.asarray(info.omega, dtype=np.float64)
    x = np.asarray(info.x, dtype=np.float64)
    reason = np.asarray(info.reason)

    raw = {}

    # tracking: elementwise min forgives overspeed in the commanded direction
    err_x = np.minimum(vx, cmd[..., 0]) - cmd[..., 0]
    err_lat = np.minimum(np.zeros_like(vx), cmd[..., 1]) - cmd[..., 1]
    raw["track_lin_vel"] = np.exp(-(err_x ** 2 + err_lat ** 2) / TRACK_SIGMA)
    yaw_rate = np.zeros_like(omega)  # no yaw in the planar model
    yaw_err = yaw_rate - np.asarray(info.omega_cmd_yaw, dtype=np.float64)
    raw["track_ang_vel"] = np.exp(-yaw_err ** 2 / TRACK_SIGMA)

    raw["termination"] = (reason == TermReason.NON_FOOT_CONTACT).astype(np.float64)

    zeros = np.zeros_like(x)
    if goal_mode:
        raw["out_bound"] = (reason == TermReason.OUT_OF_BOUNDS).astype(np.float64)
        raw["out_platform"] = (np.abs(x - info.spawn_x)
                               > OUT_PLATFORM_DIST).astype(np.float64)
        if dense_reach:
            ref = info.spawn_x if reach_from_spawn else info.goal_x
            raw["reach_far"] = np.exp(-np.abs(x - ref))
        else:
            raw["reach_far"] = zeros
    else:
        raw["out_bound"] = zeros
        raw["out_platform"] = zeros
        raw["reach_far"] = zeros

    vz = np.asarray(info.v, dtype=np.float64)[..., 1]
    raw["lin_vel_z"] = vz ** 2
    raw["ang_vel_xy"] = omega ** 2
    g_err = np.asarray(info.g, dtype=np.float64) - np.asarray(info.g_target)
    raw["orientation"] = np.sum(g_err ** 2, axis=-1)

    tau = np.asarray(info.tau, dtype=np.float64)
    theta = np.asarray(info.theta, dtype=np.float64)
    theta_dot = np.asarray(info.theta_dot, dtype=np.float64)
    a = np.asarray(info.action, dtype=np.float64)
    a1 = np.asarray(info.action_prev, dtype=np.float64)
    a2 = np.asarray(info.action_prev2, dtype=np.float64)
    raw["joint_torques"] = np.sum(tau ** 2, axis=-1)
    raw["action_rate"] = np.sum((a - a1) ** 2, axis=-1)
    raw["action_smoothness"] = np.sum((a - 2 * a1 + a2) ** 2, axis=-1)
    raw["joint_power"] = np.sum(np.abs(tau * theta_dot), axis=-1)
    raw["joint_acc"] = np.sum(np.asarray(info.theta_ddot) ** 2, axis=-1)
    raw["joint_deviation"] = np.sum((theta - np.asarray(info.q_default)) ** 2,
                                    axis=-1)

    forces = np.asarray(info.body_forces, dtype=np.float64)
    mag = np.linalg.norm(forces, axis=-1)
    raw["collision"] = np.sum(mag[..., 1:] > COLLISION_FORCE_MIN,
                              axis=-1).astype(np.float64)
    foot_f = forces[..., FOOT, :]
    raw["stumble"] = (np.abs(foot_f[..., 0])
                      > STUMBLE_RATIO * np.abs(foot_f[..., 1])).astype(np.float64)
    contact = np.asarray(info.foot_contact).astype(np.float64)
    raw["feet_edge"] = contact * np.exp(-np.asarray(info.edge_dist) / EDGE_DECAY)

    wd = w.as_dict()
    # GoalReaching keeps the tracking formulas but zeroes their weights
    if goal_mode:
        wd["track_lin_vel"] = 0.0
        wd["track_ang_vel"] = 0.0

    terms = {}
    total = np.zeros_like(x)
    for name in TERM_ORDER:
        weighted = wd[name] * raw[name]
        terms[name] = (raw[name], weighted)
        total = total + weighted
    return RewardBreakdown(total=total, terms=terms)
