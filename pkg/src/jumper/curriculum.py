"""Per-environment difficulty tracking and evaluation metrics.

Levels move one step at a time inside [0, 9]: promotion after enough
successes in the rolling window, demotion only after a full window of
failures. Evaluation rolls out deterministic mean actions and aggregates
the posture/tracking/reach metrics used by the benchmark tables.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .hopper import FOOT, TORSO, HopperModel, ObsSpec, TermReason, VecHopper
from .rewards import ObjectiveMode, RewardWeights, compute_reward
from .terrain import MAX_LEVEL, TerrainKind, generate

REACH_DIST_FLOOR = 0.1


@dataclass(frozen=True)
class EpisodeOutcome:
    success: bool
    reason: int


class LevelTracker:
    """Rolling success windows driving per-environment terrain levels."""

    def __init__(self, n_envs: int, window: int = 5,
                 promote_threshold: float = 0.8,
                 demote_threshold: float = 0.0):
        self.window = window
        self.promote_threshold = promote_threshold
        self.demote_threshold = demote_threshold
        self.levels = np.zeros(n_envs, dtype=np.int64)
        self.windows = [deque(maxlen=window) for _ in range(n_envs)]

    @property
    def n_envs(self) -> int:
        return len(self.windows)


def record_episode(tracker: LevelTracker, env_index: int,
                   outcome: EpisodeOutcome) -> int:
    """Fold one episode outcome into the window; returns the new level."""
    w = tracker.windows[env_index]
    w.append(1.0 if outcome.success else 0.0)
    successes = sum(w)
    if successes >= tracker.promote_threshold * tracker.window:
        tracker.levels[env_index] = min(MAX_LEVEL,
                                        tracker.levels[env_index] + 1)
        w.clear()
    elif (len(w) == tracker.window
          and successes <= tracker.demote_threshold * tracker.window):
        tracker.levels[env_index] = max(0, tracker.levels[env_index] - 1)
        w.clear()
    return int(tracker.levels[env_index])


@dataclass
class MetricsReport:
    r_air: float
    p_base: float
    p_mono: float
    t_vel: float
    t_reach: float
    mean_level: float
    success_rate: float
    episodes: list = field(default_factory=list)


@dataclass(frozen=True)
class EvalTask:
    kinds: tuple
    levels: tuple = (0,)
    extent: float = 20.0
    resolution: float = 0.05
    cmd_range: tuple = (0.0, 0.0)
    model: HopperModel = HopperModel()
    weights: RewardWeights = RewardWeights()


def evaluate(params: nets.PolicyParams, spec: ObsSpec, task: EvalTask,
             n_episodes: int, seed: int) -> MetricsReport:
    """Deterministic mean-action rollouts over seeded episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    levels = [int(task.levels[i % len(task.levels)])
              for i in range(n_episodes)]
    model = task.model
    flat = generate(TerrainKind.FLAT, 0, 0, extent=task.extent,
                    resolution=task.resolution)
    venv = VecHopper(model, [flat] * n_episodes, seed,
                     cmd_range=task.cmd_range)
    for i in range(n_episodes):
        rng = venv.rngs[i]
        kind = task.kinds[int(rng.integers(len(task.kinds)))]
        hf_seed = int(rng.integers(2 ** 31 - 1))
        venv.reset_env(i, generate(kind, levels[i], hf_seed,
                                   extent=task.extent,
                                   resolution=task.resolution))

    E = n_episodes
    done = np.zeros(E, dtype=bool)
    reasons = np.zeros(E, dtype=np.int64)
    first_body = np.full(E, -1, dtype=np.int64)
    steps = np.zeros(E, dtype=np.int64)
    air_steps = np.zeros(E, dtype=np.int64)
    tvel_sum = np.zeros(E)
    final_x = np.zeros(E)
    spawn_x = venv.stack.spawn_x.copy()
    goal_x = venv.stack.goal_x.copy()
    init_dist = np.maximum(np.abs(goal_x - spawn_x), REACH_DIST_FLOOR)

    q_def = np.asarray(model.q_default)
    for _ in range(venv.horizon):
        obs = venv.observe(spec)
        dist = nets.forward_actor(params, obs)
        targets = q_def + model.action_scale * dist.mean
        info = venv.step(targets)
        rb = compute_reward(info, task.weights,
                            ObjectiveMode.VELOCITY_TRACKING)
        active = ~done
        steps[active] += 1
        nonfoot_free = ~np.any(info.body_forces[:, 1:, 1] > 0.0, axis=1)
        air_steps[active & nonfoot_free] += 1
        tvel_sum[active] += rb.terms["track_lin_vel"][0][active]
        just_done = active & info.terminated
        reasons[just_done] = info.reason[just_done]
        first_body[just_done] = info.first_contact_body[just_done]
        final_x[just_done] = info.x[just_done]
        done |= info.terminated
        if np.all(done):
            break

    final_dist = np.abs(goal_x - final_x)
    t_reach = 1.0 - np.clip(final_dist / init_dist, 0.0, 1.0)
    crash = reasons == TermReason.NON_FOOT_CONTACT
    episodes = []
    for i in range(E):
        episodes.append({
            "episode": i,
            "level": levels[i],
            "reason": int(reasons[i]),
            "steps": int(steps[i]),
            "success": int(reasons[i] == TermReason.OUT_OF_BOUNDS),
            "r_air": float(air_steps[i] / max(1, steps[i])),
            "t_vel": float(tvel_sum[i] / max(1, steps[i])),
            "t_reach": float(t_reach[i]),
            "final_x": float(final_x[i]),
        })
    return MetricsReport(
        r_air=float(np.mean([e["r_air"] for e in episodes])),
        p_base=float(np.mean(crash & (first_body == TORSO))),
        p_mono=float(np.mean(crash)),
        t_vel=float(np.mean([e["t_vel"] for e in episodes])),
        t_reach=float(np.mean(t_reach)),
        mean_level=float(np.mean(levels)),
        success_rate=float(np.mean(reasons == TermReason.OUT_OF_BOUNDS)),
        episodes=episodes,
    )


EVAL_COLUMNS = ("episode", "level", "reason", "steps", "success",
                "r_air", "t_vel", "t_reach", "final_x")


def render_eval_csv(report: MetricsReport) -> str:
    def fmt(x):
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        return format(float(x), ".10g")

    lines = ["# jumper-csv v1", ",".join(EVAL_COLUMNS)]
    for ep in report.episodes:
        lines.append(",".join(fmt(ep[c]) for c in EVAL_COLUMNS))
    lines.append(
        "# summary"
        f" r_air={fmt(report.r_air)}"
        f" p_base={fmt(report.p_base)}"
        f" p_mono={fmt(report.p_mono)}"
        f" t_vel={fmt(report.t_vel)}"
        f" t_reach={fmt(report.t_reach)}"
        f" mean_level={fmt(report.mean_level)}"
        f" success_rate={fmt(report.success_rate)}")
    return "\n".join(lines) + "\n"
