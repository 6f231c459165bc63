"""Planar monoped-hopper physics with monopedal termination semantics.

The mechanism is a floating torso (x, z, pitch) with a two-joint leg
(hip, knee). Dynamics use the exact 5-DOF mass matrix of the articulated
chain (point-mass links with rod inertia), semi-implicit Euler integration,
and penalty contact: a spring-damper normal force against the heightfield
with regularized Coulomb friction. Contact proxies are spheres at the foot,
knee, shank midpoint, thigh midpoint and torso center; any ground force on
a non-foot proxy ends the episode.

All core math is batched over environments; the single-environment API
wraps batch size 1. A `VecHopper` owns per-environment state, RNG streams
(seeded base_seed + env_index) and heightfields for parallel collection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .terrain import EDGE_THRESHOLD, Heightfield, height_at, sample_heightmap

# contact proxy bodies, in force-array order
FOOT, SHANK, THIGH, TORSO = 0, 1, 2, 3
BODY_NAMES = ("foot", "shank", "thigh", "torso")

PROPRIO_DIM = 11
HEIGHTMAP_CLIP = 1.0
RATE_SCALE = 0.25          # observation scaling for omega and joint rates
FRICTION_VEL_SCALE = 0.1   # m/s at which regularized friction saturates


class TermReason(IntEnum):
    NONE = 0
    NON_FOOT_CONTACT = 1
    OUT_OF_BOUNDS = 2
    TIMEOUT = 3


class ObsMode(Enum):
    PROPRIO = 0
    TERRAIN_AWARE = 1


def default_body_offsets() -> np.ndarray:
    return np.linspace(-0.5, 1.0, 16)


def default_foot_offsets() -> np.ndarray:
    return np.linspace(-0.3, 0.5, 16)


@dataclass(frozen=True)
class ObsSpec:
    mode: ObsMode
    proprio_dim: int = PROPRIO_DIM
    heightmap_offsets_body: np.ndarray = field(default_factory=lambda: np.zeros(0))
    heightmap_offsets_foot: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def total_dim(self) -> int:
        if self.mode is ObsMode.PROPRIO:
            return self.proprio_dim
        return (self.proprio_dim + len(self.heightmap_offsets_body)
                + len(self.heightmap_offsets_foot))

    def header(self) -> tuple:
        """Checkpoint header: (mode tag, proprio, n_body, n_foot, total)."""
        return (self.mode.value, self.proprio_dim,
                len(self.heightmap_offsets_body),
                len(self.heightmap_offsets_foot), self.total_dim)

    @staticmethod
    def proprio() -> "ObsSpec":
        return ObsSpec(mode=ObsMode.PROPRIO)

    @staticmethod
    def terrain_aware(body_offsets=None, foot_offsets=None) -> "ObsSpec":
        return ObsSpec(
            mode=ObsMode.TERRAIN_AWARE,
            heightmap_offsets_body=np.asarray(
                default_body_offsets() if body_offsets is None else body_offsets,
                dtype=np.float64),
            heightmap_offsets_foot=np.asarray(
                default_foot_offsets() if foot_offsets is None else foot_offsets,
                dtype=np.float64),
        )

    @staticmethod
    def from_header(header) -> "ObsSpec":
        """Rebuild a spec from a checkpoint header tuple.

        Heightmap offsets are not stored in checkpoints, so terrain-aware
        specs are reconstructed with the default offset grids; any other
        sample count cannot be recovered.
        """
        mode_tag, proprio, n_body, n_foot, total = header
        if mode_tag == ObsMode.PROPRIO.value:
            if (proprio, total) != (PROPRIO_DIM, PROPRIO_DIM):
                raise ValueError(f"unsupported proprio header {header}")
            return ObsSpec.proprio()
        body = default_body_offsets()
        foot = default_foot_offsets()
        if (proprio, n_body, n_foot) != (PROPRIO_DIM, len(body), len(foot)):
            raise ValueError(f"unsupported terrain-aware header {header}")
        return ObsSpec.terrain_aware(body, foot)


@dataclass(frozen=True)
class HopperModel:
    torso_mass: float = 3.0
    thigh_mass: float = 0.5
    shank_mass: float = 0.3
    thigh_length: float = 0.22
    shank_length: float = 0.22
    torso_inertia: float = 0.03
    gravity: float = 9.81
    sim_dt: float = 0.005
    control_decimation: int = 4
    pd_kp: float = 30.0
    pd_kd: float = 1.0
    torque_limit: float = 23.5
    joint_limits: tuple = ((-1.2, 1.2), (-2.4, 0.0))
    # knee angle picked so the crouch is a loaded static equilibrium: with
    # the foot planted and carrying full weight, PD targets at q_default
    # hold the pose without gravity droop
    q_default: tuple = (0.3, -0.4972)
    g_target: tuple = (0.0, -1.0)
    friction_coeff: float = 0.8
    contact_stiffness: float = 5000.0
    contact_damping: float = 100.0
    foot_radius: float = 0.02
    torso_radius: float = 0.10
    assist_spring: bool = False
    assist_kp: float = 80.0
    assist_kd: float = 8.0
    action_scale: float = 0.25
    horizon: int = 1000

    @property
    def control_dt(self) -> float:
        return self.sim_dt * self.control_decimation

    @property
    def thigh_inertia(self) -> float:
        return self.thigh_mass * self.thigh_length ** 2 / 12.0

    @property
    def shank_inertia(self) -> float:
        return self.shank_mass * self.shank_length ** 2 / 12.0


@dataclass
class HopperState:
    x: float
    z: float
    phi: float
    vx: float
    vz: float
    omega: float
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    tau: np.ndarray
    action_prev: np.ndarray
    action_prev2: np.ndarray
    contact_forces: np.ndarray   # (4, 2): (Fx, Fz) for foot/shank/thigh/torso
    t: int = 0
    term_reason: int = 0


@dataclass
class StepInfo:
    """Reward-operand snapshot for one control step (fields may be batched)."""

    v: np.ndarray               # (..., 2) torso linear velocity
    cmd: np.ndarray             # (..., 2) (vx command, yaw-rate placeholder)
    omega: np.ndarray           # pitch rate
    omega_cmd_yaw: np.ndarray   # zero placeholder in the planar reduction
    g: np.ndarray               # (..., 2) gravity direction in body frame
    g_target: np.ndarray        # (2,)
    tau: np.ndarray             # (..., 2)
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    q_default: np.ndarray       # (2,)
    action: np.ndarray          # (..., 2) PD targets commanded this step
    action_prev: np.ndarray
    action_prev2: np.ndarray
    body_forces: np.ndarray     # (..., 4, 2)
    foot_x: np.ndarray
    edge_dist: np.ndarray       # distance from foot to nearest terrain edge
    foot_contact: np.ndarray    # bool
    x: np.ndarray
    spawn_x: np.ndarray
    goal_x: np.ndarray
    terminated: np.ndarray      # bool
    reason: np.ndarray          # TermReason values
    first_contact_body: np.ndarray  # body index that fired termination, -1 otherwise
    t: np.ndarray


# ---------------------------------------------------------------------------
# Batched heightfield stack
# ---------------------------------------------------------------------------

class HeightStack:
    """Heights of B same-shape heightfields stacked for vectorized lookup."""

    def __init__(self, hfs: list):
        n = len(hfs[0].heights)
        res = hfs[0].resolution
        for hf in hfs:
            if len(hf.heights) != n or hf.resolution != res:
                raise ValueError("stacked heightfields must share shape")
        self.resolution = res
        self.extent = hfs[0].extent
        self.n_cells = n
        self.heights = np.stack([hf.heights for hf in hfs]).copy()
        self.goal_x = np.array([hf.goal_x for hf in hfs])
        self.spawn_x = np.array([hf.spawn_x for hf in hfs])
        self._edge_pos = self._pad_edges(hfs)

    def _pad_edges(self, hfs) -> np.ndarray:
        emax = max(1, max(len(hf.edges) for hf in hfs))
        pos = np.full((len(hfs), emax), np.inf)
        for i, hf in enumerate(hfs):
            if len(hf.edges):
                pos[i, : len(hf.edges)] = (hf.edges + 1) * self.resolution
        return pos

    def replace(self, i: int, hf: Heightfield):
        if len(hf.heights) != self.n_cells or hf.resolution != self.resolution:
            raise ValueError("replacement heightfield must share shape")
        self.heights[i] = hf.heights
        self.goal_x[i] = hf.goal_x
        self.spawn_x[i] = hf.spawn_x
        pos = np.full(self._edge_pos.shape[1], np.inf)
        k = min(len(hf.edges), len(pos))
        if len(hf.edges) > len(pos):
            grown = np.full((self._edge_pos.shape[0], len(hf.edges)), np.inf)
            grown[:, : self._edge_pos.shape[1]] = self._edge_pos
            self._edge_pos = grown
            pos = np.full(len(hf.edges), np.inf)
            k = len(hf.edges)
        if k:
            pos[:k] = ((hf.edges + 1) * self.resolution)[:k]
        self._edge_pos[i] = pos

    def height(self, env_idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Vectorized terrain height; semantics match terrain.height_at."""
        h = self.heights
        nc = self.n_cells
        xq = np.clip(x, 0.0, self.extent)
        u = xq / self.resolution - 0.5
        i0 = np.clip(np.floor(u), 0, nc - 1).astype(np.int64)
        i1 = np.minimum(i0 + 1, nc - 1)
        frac = np.clip(u - i0, 0.0, 1.0)
        h0 = h[env_idx, i0]
        h1 = h[env_idx, i1]
        lerped = h0 + (h1 - h0) * frac
        is_edge = np.abs(h1 - h0) >= EDGE_THRESHOLD - 1e-12
        stepped = np.where(xq < (i0 + 1) * self.resolution, h0, h1)
        return np.where(is_edge, stepped, lerped)

    def edge_distance(self, x: np.ndarray) -> np.ndarray:
        return np.min(np.abs(x[:, None] - self._edge_pos), axis=1)


# ---------------------------------------------------------------------------
# Kinematics and dynamics
# ---------------------------------------------------------------------------

def _chain_terms(model: HopperModel, q: np.ndarray):
    """Sines/cosines and direction vectors of the leg chain; q is (B, 5)."""
    a1 = q[:, 2] + q[:, 3]
    a2 = a1 + q[:, 4]
    s1, c1 = np.sin(a1), np.cos(a1)
    s2, c2 = np.sin(a2), np.cos(a2)
    d1 = np.stack([s1, -c1], axis=1)
    d1p = np.stack([c1, s1], axis=1)
    d2 = np.stack([s2, -c2], axis=1)
    d2p = np.stack([c2, s2], axis=1)
    return d1, d1p, d2, d2p


def _point(q, d1, d2, r1, r2):
    return q[:, 0:2] + r1 * d1 + r2 * d2


def _point_vel(q, u, d1p, d2p, r1, r2):
    a1dot = (u[:, 2] + u[:, 3])[:, None]
    a2dot = a1dot + u[:, 4][:, None]
    return u[:, 0:2] + r1 * d1p * a1dot + r2 * d2p * a2dot


def _jac_w_v(d1p, d2p, r1, r2):
    """Jacobian columns: w multiplies (phi, th1), v multiplies th2."""
    w = r1 * d1p + r2 * d2p
    v = r2 * d2p
    return w, v


def _accumulate_mass(M, mass, w, v):
    """Add mass * J^T J for a point whose Jacobian has columns (w, w, v)."""
    ww = mass * np.sum(w * w, axis=1)
    wv = mass * np.sum(w * v, axis=1)
    vv = mass * np.sum(v * v, axis=1)
    mw = mass * w
    mv = mass * v
    M[:, 0, 0] += mass
    M[:, 1, 1] += mass
    for j, col in ((2, mw), (3, mw), (4, mv)):
        M[:, 0, j] += col[:, 0]
        M[:, j, 0] += col[:, 0]
        M[:, 1, j] += col[:, 1]
        M[:, j, 1] += col[:, 1]
    for (a, b), val in (((2, 2), ww), ((2, 3), ww), ((3, 3), ww),
                        ((2, 4), wv), ((3, 4), wv), ((4, 4), vv)):
        M[:, a, b] += val
        if a != b:
            M[:, b, a] += val


def _point_force_to_gen(Q, F, w, v):
    Q[:, 0] += F[:, 0]
    Q[:, 1] += F[:, 1]
    wf = np.sum(w * F, axis=1)
    Q[:, 2] += wf
    Q[:, 3] += wf
    Q[:, 4] += np.sum(v * F, axis=1)


def _contact_proxies(model: HopperModel):
    l1, l2 = model.thigh_length, model.shank_length
    r = 0.02
    return (
        (l1, l2, model.foot_radius, FOOT),
        (l1, 0.0, r, SHANK),          # knee
        (l1, l2 / 2, r, SHANK),       # shank midpoint
        (l1 / 2, 0.0, r, THIGH),      # thigh midpoint
        (0.0, 0.0, model.torso_radius, TORSO),
    )


def _substep(model: HopperModel, stack: HeightStack, env_idx, q, u,
             targets, assist_mask):
    """One physics substep; returns (q', u', tau, body_forces, foot_pos)."""
    B = q.shape[0]
    d1, d1p, d2, d2p = _chain_terms(model, q)
    l1, l2 = model.thigh_length, model.shank_length

    # PD torques from current joint state
    tau = model.pd_kp * (targets - q[:, 3:5]) - model.pd_kd * u[:, 3:5]
    tau = np.clip(tau, -model.torque_limit, model.torque_limit)

    # mass matrix
    M = np.zeros((B, 5, 5))
    _accumulate_mass(M, model.torso_mass, np.zeros((B, 2)), np.zeros((B, 2)))
    w1, v1 = _jac_w_v(d1p, d2p, l1 / 2, 0.0)
    _accumulate_mass(M, model.thigh_mass, w1, v1)
    w2, v2 = _jac_w_v(d1p, d2p, l1, l2 / 2)
    _accumulate_mass(M, model.shank_mass, w2, v2)
    M[:, 2, 2] += model.torso_inertia
    for (a, b) in ((2, 2), (2, 3), (3, 2), (3, 3)):
        M[:, a, b] += model.thigh_inertia + model.shank_inertia
    for (a, b) in ((2, 4), (4, 2), (3, 4), (4, 3), (4, 4)):
        M[:, a, b] += model.shank_inertia

    Q = np.zeros((B, 5))
    # velocity-dependent forces are evaluated at the pre-step state; their
    # sensitivity D goes on the matrix side as M + dt*D so the solve is
    # implicit in the damping (explicit update is unstable at this dt)
    D = np.zeros((B, 5, 5))
    D[:, 3, 3] += model.pd_kd
    D[:, 4, 4] += model.pd_kd

    # gravity on each center of mass
    grav = np.zeros((B, 2))
    grav[:, 1] = -model.gravity
    _point_force_to_gen(Q, model.torso_mass * grav, np.zeros((B, 2)),
                        np.zeros((B, 2)))
    _point_force_to_gen(Q, model.thigh_mass * grav, w1, v1)
    _point_force_to_gen(Q, model.shank_mass * grav, w2, v2)

    # velocity-product bias: for a com at r1*d1 + r2*d2 the acceleration
    # carries -(r1*d1*a1dot^2 + r2*d2*a2dot^2); move it to the force side
    a1dot = (u[:, 2] + u[:, 3])[:, None]
    a2dot = a1dot + u[:, 4][:, None]
    g1 = -(l1 / 2) * d1 * a1dot ** 2
    g2 = -(l1 * d1 * a1dot ** 2 + (l2 / 2) * d2 * a2dot ** 2)
    _point_force_to_gen(Q, -model.thigh_mass * g1, w1, v1)
    _point_force_to_gen(Q, -model.shank_mass * g2, w2, v2)

    # joint torques and pitch-assist spring
    Q[:, 3] += tau[:, 0]
    Q[:, 4] += tau[:, 1]
    if assist_mask is not None and np.any(assist_mask):
        t_assist = -model.assist_kp * q[:, 2] - model.assist_kd * u[:, 2]
        Q[:, 2] += np.where(assist_mask, t_assist, 0.0)
        D[:, 2, 2] += np.where(assist_mask, model.assist_kd, 0.0)

    # penalty contacts
    body_forces = np.zeros((B, 4, 2))
    foot_pos = None
    for r1, r2, radius, body in _contact_proxies(model):
        p = _point(q, d1, d2, r1, r2)
        if body == FOOT:
            foot_pos = p
        ground = stack.height(env_idx, p[:, 0])
        pen = ground + radius - p[:, 1]
        active = pen > 0.0
        if not np.any(active):
            continue
        pv = _point_vel(q, u, d1p, d2p, r1, r2)
        fz = np.maximum(0.0, model.contact_stiffness * pen
                        - model.contact_damping * pv[:, 1])
        fz = np.where(active, fz, 0.0)
        fx = -model.friction_coeff * fz * np.clip(
            pv[:, 0] / FRICTION_VEL_SCALE, -1.0, 1.0)
        F = np.stack([fx, fz], axis=1)
        w, v = _jac_w_v(d1p, d2p, r1, r2)
        _point_force_to_gen(Q, F, w, v)
        body_forces[:, body, 0] += fx
        body_forces[:, body, 1] += fz

        # implicit contact damping: normal dashpot plus the friction
        # secant inside the sticking band, gated on a live normal force
        # so separation never turns adhesive
        live = fz > 0.0
        if np.any(live):
            Jz = np.zeros((B, 5))
            Jz[:, 1] = 1.0
            Jz[:, 2] = w[:, 1]
            Jz[:, 3] = w[:, 1]
            Jz[:, 4] = v[:, 1]
            cn = np.where(live, model.contact_damping, 0.0)
            D += cn[:, None, None] * np.einsum("bi,bj->bij", Jz, Jz)
            band = live & (np.abs(pv[:, 0]) < FRICTION_VEL_SCALE)
            if np.any(band):
                Jx = np.zeros((B, 5))
                Jx[:, 0] = 1.0
                Jx[:, 2] = w[:, 0]
                Jx[:, 3] = w[:, 0]
                Jx[:, 4] = v[:, 0]
                cf = np.where(band, model.friction_coeff * fz
                              / FRICTION_VEL_SCALE, 0.0)
                D += cf[:, None, None] * np.einsum("bi,bj->bij", Jx, Jx)

    A = M + model.sim_dt * D
    qdd = np.linalg.solve(A, Q[:, :, None])[:, :, 0]
    u2 = u + model.sim_dt * qdd
    q2 = q + model.sim_dt * u2

    # hard joint-limit clamp; zero the rate of a clamped joint
    lims = np.asarray(model.joint_limits)
    clipped = np.clip(q2[:, 3:5], lims[:, 0], lims[:, 1])
    hit = clipped != q2[:, 3:5]
    u2[:, 3:5] = np.where(hit, 0.0, u2[:, 3:5])
    q2[:, 3:5] = clipped

    return q2, u2, tau, body_forces, foot_pos


def foot_position(model: HopperModel, q: np.ndarray) -> np.ndarray:
    d1, _, d2, _ = _chain_terms(model, q)
    return _point(q, d1, d2, model.thigh_length, model.shank_length)


def standing_height(model: HopperModel) -> float:
    """Torso height above ground with the foot touching at q_default."""
    qd = np.array([[0.0, 0.0, 0.0, *model.q_default]])
    foot_z = foot_position(model, qd)[0, 1]
    return -foot_z + model.foot_radius


def mechanical_energy(model: HopperModel, q: np.ndarray, u: np.ndarray):
    """Kinetic + gravitational potential energy per environment."""
    d1, d1p, d2, d2p = _chain_terms(model, q)
    l1, l2 = model.thigh_length, model.shank_length
    p1 = _point(q, d1, d2, l1 / 2, 0.0)
    p2 = _point(q, d1, d2, l1, l2 / 2)
    v1 = _point_vel(q, u, d1p, d2p, l1 / 2, 0.0)
    v2 = _point_vel(q, u, d1p, d2p, l1, l2 / 2)
    a1dot = u[:, 2] + u[:, 3]
    a2dot = a1dot + u[:, 4]
    ke = (0.5 * model.torso_mass * np.sum(u[:, 0:2] ** 2, axis=1)
          + 0.5 * model.torso_inertia * u[:, 2] ** 2
          + 0.5 * model.thigh_mass * np.sum(v1 ** 2, axis=1)
          + 0.5 * model.thigh_inertia * a1dot ** 2
          + 0.5 * model.shank_mass * np.sum(v2 ** 2, axis=1)
          + 0.5 * model.shank_inertia * a2dot ** 2)
    pe = model.gravity * (model.torso_mass * q[:, 1]
                          + model.thigh_mass * p1[:, 1]
                          + model.shank_mass * p2[:, 1])
    return ke + pe


# ---------------------------------------------------------------------------
# Vectorized environment
# ---------------------------------------------------------------------------

class VecHopper:
    """B hopper instances stepping in lockstep over per-env heightfields."""

    def __init__(self, model: HopperModel, heightfields: list, seed: int,
                 cmd_range=(0.0, 0.0), horizon: int | None = None):
        self.model = model
        self.n_envs = len(heightfields)
        self.horizon = model.horizon if horizon is None else horizon
        self.stack = HeightStack(heightfields)
        self.rngs = [np.random.default_rng(seed + i)
                     for i in range(self.n_envs)]
        self.cmd_range = cmd_range
        B = self.n_envs
        self.q = np.zeros((B, 5))
        self.u = np.zeros((B, 5))
        self.theta_ddot = np.zeros((B, 2))
        self.tau = np.zeros((B, 2))
        self.action_prev = np.zeros((B, 2))
        self.action_prev2 = np.zeros((B, 2))
        self.body_forces = np.zeros((B, 4, 2))
        self.t = np.zeros(B, dtype=np.int64)
        self.cmd = np.zeros((B, 2))
        self._env_idx = np.arange(B)
        for i in range(B):
            self.reset_env(i)

    def reset_env(self, i: int, hf: Heightfield | None = None):
        if hf is not None:
            self.stack.replace(i, hf)
        rng = self.rngs[i]
        noise = rng.uniform(-0.05, 0.05, size=2)
        cmd_x = rng.uniform(self.cmd_range[0], self.cmd_range[1])
        spawn = self.stack.spawn_x[i]
        ground = float(self.stack.height(np.array([i]), np.array([spawn]))[0])
        self.q[i] = [spawn, ground + standing_height(self.model), 0.0,
                     self.model.q_default[0] + noise[0],
                     self.model.q_default[1] + noise[1]]
        self.u[i] = 0.0
        self.theta_ddot[i] = 0.0
        self.tau[i] = 0.0
        self.action_prev[i] = self.model.q_default
        self.action_prev2[i] = self.model.q_default
        self.body_forces[i] = 0.0
        self.t[i] = 0
        self.cmd[i] = [cmd_x, 0.0]

    def step(self, targets: np.ndarray, assist_mask=None) -> StepInfo:
        """Advance every environment one control step (decimated substeps)."""
        model = self.model
        targets = np.asarray(targets, dtype=np.float64)
        if not np.all(np.isfinite(targets)):
            raise ValueError("non-finite action")
        if assist_mask is None:
            assist_mask = np.full(self.n_envs, model.assist_spring)

        alive = np.ones(self.n_envs, dtype=bool)
        theta_dot_start = self.u[:, 3:5].copy()
        last_forces = np.zeros_like(self.body_forces)
        last_tau = np.zeros_like(self.tau)
        foot_x = foot_position(model, self.q)[:, 0]
        crashed = np.zeros(self.n_envs, dtype=bool)

        for _ in range(model.control_decimation):
            q2, u2, tau, forces, foot_p = _substep(
                model, self.stack, self._env_idx, self.q, self.u,
                targets, assist_mask)
            upd = alive
            self.q[upd] = q2[upd]
            self.u[upd] = u2[upd]
            last_forces[upd] = forces[upd]
            last_tau[upd] = tau[upd]
            foot_x = np.where(upd, foot_p[:, 0], foot_x)
            nonfoot = np.any(forces[:, 1:, 1] > 0.0, axis=1)
            crashed |= alive & nonfoot
            alive &= ~nonfoot
            if not np.any(alive):
                break

        self.tau = last_tau
        self.body_forces = last_forces
        self.theta_ddot = (self.u[:, 3:5] - theta_dot_start) / model.control_dt
        self.t += 1

        out_of_bounds = (self.q[:, 0] >= self.stack.goal_x) | \
                        (self.q[:, 0] >= self.stack.extent)
        timeout = self.t >= self.horizon
        reason = np.zeros(self.n_envs, dtype=np.int64)
        reason[timeout] = TermReason.TIMEOUT
        reason[crashed] = TermReason.NON_FOOT_CONTACT
        reason[out_of_bounds] = TermReason.OUT_OF_BOUNDS
        terminated = reason != TermReason.NONE

        first_body = np.full(self.n_envs, -1, dtype=np.int64)
        if np.any(crashed):
            nb = last_forces[:, 1:, 1] > 0.0
            first = np.argmax(nb, axis=1) + 1
            first_body = np.where(crashed, first, first_body)

        g_body = np.stack([-np.sin(self.q[:, 2]), -np.cos(self.q[:, 2])],
                          axis=1)
        info = StepInfo(
            v=self.u[:, 0:2].copy(),
            cmd=self.cmd.copy(),
            omega=self.u[:, 2].copy(),
            omega_cmd_yaw=np.zeros(self.n_envs),
            g=g_body,
            g_target=np.asarray(model.g_target, dtype=np.float64),
            tau=last_tau.copy(),
            theta=self.q[:, 3:5].copy(),
            theta_dot=self.u[:, 3:5].copy(),
            theta_ddot=self.theta_ddot.copy(),
            q_default=np.asarray(model.q_default, dtype=np.float64),
            action=targets.copy(),
            action_prev=self.action_prev.copy(),
            action_prev2=self.action_prev2.copy(),
            body_forces=last_forces.copy(),
            foot_x=foot_x.copy(),
            edge_dist=self.stack.edge_distance(foot_x),
            foot_contact=last_forces[:, FOOT, 1] > 0.0,
            x=self.q[:, 0].copy(),
            spawn_x=self.stack.spawn_x.copy(),
            goal_x=self.stack.goal_x.copy(),
            terminated=terminated,
            reason=reason,
            first_contact_body=first_body,
            t=self.t.copy(),
        )
        self.action_prev2 = self.action_prev
        self.action_prev = targets.copy()
        return info

    def observe(self, spec: ObsSpec) -> np.ndarray:
        B = self.n_envs
        g_body = np.stack([-np.sin(self.q[:, 2]), -np.cos(self.q[:, 2])],
                          axis=1)
        prop = np.concatenate([
            (self.u[:, 2] * RATE_SCALE)[:, None],
            g_body,
            self.cmd,
            self.q[:, 3:5],
            self.u[:, 3:5] * RATE_SCALE,
            self.action_prev,
        ], axis=1)
        if spec.mode is ObsMode.PROPRIO:
            return prop
        fx = foot_position(self.model, self.q)[:, 0]
        bx = self.q[:, 0]
        maps = []
        for center, offsets in ((bx, spec.heightmap_offsets_body),
                                (fx, spec.heightmap_offsets_foot)):
            pts = center[:, None] + offsets[None, :]
            idx = np.broadcast_to(self._env_idx[:, None], pts.shape)
            h = self.stack.height(idx, pts)
            h0 = self.stack.height(self._env_idx, center)
            maps.append(np.clip(h - h0[:, None],
                                -HEIGHTMAP_CLIP, HEIGHTMAP_CLIP))
        return np.concatenate([prop, *maps], axis=1)

    def state_of(self, i: int) -> HopperState:
        return HopperState(
            x=float(self.q[i, 0]), z=float(self.q[i, 1]),
            phi=float(self.q[i, 2]),
            vx=float(self.u[i, 0]), vz=float(self.u[i, 1]),
            omega=float(self.u[i, 2]),
            theta=self.q[i, 3:5].copy(),
            theta_dot=self.u[i, 3:5].copy(),
            theta_ddot=self.theta_ddot[i].copy(),
            tau=self.tau[i].copy(),
            action_prev=self.action_prev[i].copy(),
            action_prev2=self.action_prev2[i].copy(),
            contact_forces=self.body_forces[i].copy(),
            t=int(self.t[i]),
        )

    def load_state(self, i: int, s: HopperState):
        self.q[i] = [s.x, s.z, s.phi, s.theta[0], s.theta[1]]
        self.u[i] = [s.vx, s.vz, s.omega, s.theta_dot[0], s.theta_dot[1]]
        self.theta_ddot[i] = s.theta_ddot
        self.tau[i] = s.tau
        self.action_prev[i] = s.action_prev
        self.action_prev2[i] = s.action_prev2
        self.body_forces[i] = s.contact_forces
        self.t[i] = s.t


# ---------------------------------------------------------------------------
# Single-environment API
# ---------------------------------------------------------------------------

def _single(model: HopperModel, hf: Heightfield, seed: int = 0,
            cmd=(0.0, 0.0)) -> VecHopper:
    venv = VecHopper(model, [hf], seed)
    venv.cmd[0] = cmd
    return venv


def reset(model: HopperModel, hf: Heightfield, seed: int,
          spec: ObsSpec | None = None, cmd=(0.0, 0.0)):
    """Place the hopper at spawn with seeded joint noise; returns (state, obs)."""
    spec = spec or ObsSpec.proprio()
    venv = _single(model, hf, seed, cmd)
    return venv.state_of(0), venv.observe(spec)[0]


def step(model: HopperModel, state: HopperState, hf: Heightfield,
         action, spec: ObsSpec | None = None, cmd=(0.0, 0.0)):
    """Advance one control step; returns (state', StepInfo, obs)."""
    if state.term_reason != TermReason.NONE:
        raise RuntimeError("stepping a terminated episode")
    spec = spec or ObsSpec.proprio()
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (2,) or not np.all(np.isfinite(action)):
        raise ValueError("action must be 2 finite target joint positions")
    venv = _single(model, hf, 0, cmd)
    venv.load_state(0, state)
    info = venv.step(action[None, :])
    new_state = venv.state_of(0)
    new_state.term_reason = int(info.reason[0])
    obs = venv.observe(spec)[0]
    return new_state, _scalarize(info), obs


def assemble_obs(state: HopperState, hf: Heightfield, spec: ObsSpec,
                 cmd=(0.0, 0.0), model: HopperModel | None = None) -> np.ndarray:
    """Observation vector for a state: proprio prefix, optional heightmaps."""
    g_body = np.array([-np.sin(state.phi), -np.cos(state.phi)])
    prop = np.concatenate([
        [state.omega * RATE_SCALE],
        g_body,
        np.asarray(cmd, dtype=np.float64),
        state.theta,
        state.theta_dot * RATE_SCALE,
        state.action_prev,
    ])
    if spec.mode is ObsMode.PROPRIO:
        return prop
    model = model or HopperModel()
    q = np.array([[state.x, state.z, state.phi, *state.theta]])
    fx = float(foot_position(model, q)[0, 0])
    body = np.clip(sample_heightmap(hf, state.x, spec.heightmap_offsets_body),
                   -HEIGHTMAP_CLIP, HEIGHTMAP_CLIP)
    foot = np.clip(sample_heightmap(hf, fx, spec.heightmap_offsets_foot),
                   -HEIGHTMAP_CLIP, HEIGHTMAP_CLIP)
    return np.concatenate([prop, body, foot])


def _scalarize(info: StepInfo) -> StepInfo:
    def one(a):
        a = np.asarray(a)
        return a[0] if a.ndim and a.shape[0] == 1 else a

    return StepInfo(**{k: one(v) for k, v in info.__dict__.items()})
