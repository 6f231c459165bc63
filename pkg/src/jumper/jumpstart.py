"""Jump-started training with self-evolving priors.

Each episode begins under a frozen guide policy for the first n_t patches
(h = n_t * L steps) and hands control to the learner for the rest; n_t
anneals as max(0, n0 - floor(t/m)) over training iterations. A stage trains
one learner this way, then freezes it as the guide for the next stage. The
three stages change one thing each: stage 1 removes the assist spring the
scripted prior relies on, stage 2 widens observations from proprioception to
terrain-aware, stage 3 swaps velocity tracking for goal reaching.

Guides are frozen as checkpoint bytes; their checksums identify them and
must never change during training.
"""

from __future__ import annotations

import hashlib
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import nets
from .curriculum import EpisodeOutcome, LevelTracker, record_episode
from .hopper import HopperModel, ObsMode, ObsSpec, TermReason, VecHopper
from .ppo import PatchBuffer, PPOConfig, update
from .rewards import TERM_ORDER, ObjectiveMode, RewardWeights, compute_reward
from .terrain import TerrainKind, generate


class ActorTag(Enum):
    GUIDE = 0
    LEARNER = 1


class GuideKind(Enum):
    SCRIPTED_BALANCER = 0
    FROZEN_CHECKPOINT = 1


_SCRIPTED_CHECKSUM = hashlib.sha256(b"scripted-balancer-v1").hexdigest()


@dataclass(frozen=True)
class GuidePolicy:
    """Frozen guidance policy; construction is the only way to set fields."""

    kind: GuideKind
    stage_index: int
    spec: ObsSpec
    params: nets.PolicyParams | None = None
    checkpoint: bytes = b""
    checksum: str = ""

    @staticmethod
    def scripted(stage_index: int = 0) -> "GuidePolicy":
        return GuidePolicy(kind=GuideKind.SCRIPTED_BALANCER,
                           stage_index=stage_index, spec=ObsSpec.proprio(),
                           checksum=_SCRIPTED_CHECKSUM)

    @staticmethod
    def from_checkpoint(data: bytes) -> "GuidePolicy":
        params, stage, header, _ = nets.load_checkpoint(data)
        return GuidePolicy(kind=GuideKind.FROZEN_CHECKPOINT,
                           stage_index=stage,
                           spec=ObsSpec.from_header(header), params=params,
                           checkpoint=data,
                           checksum=nets.checkpoint_checksum(data))

    @property
    def needs_assist(self) -> bool:
        # the scripted prior balances through the torso spring; frozen
        # checkpoints were trained without it
        return self.kind is GuideKind.SCRIPTED_BALANCER

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        """Guide action in the learner's action space (policy units)."""
        if self.kind is GuideKind.SCRIPTED_BALANCER:
            return np.zeros(2)  # PD target = default crouch
        dist = nets.forward_actor(self.params, obs)
        return dist.mean + dist.std * rng.standard_normal(dist.mean.shape)


@dataclass(frozen=True)
class JumpSchedule:
    n0: int = 2
    m: int = 300
    n_patches: int = 40
    patch_len: int = 25

    def __post_init__(self):
        if not 0 <= self.n0 <= self.n_patches:
            raise ValueError("n0 must lie in [0, n_patches]")
        if self.m < 1:
            raise ValueError("m must be >= 1")


def schedule_n(t: int, sched: JumpSchedule) -> int:
    """Guide patches at iteration t: max(0, n0 - floor(t/m))."""
    if t < 0:
        raise ValueError("iteration must be >= 0")
    return max(0, sched.n0 - t // sched.m)


def mix_select(step_in_episode: int, n_t: int, L: int) -> ActorTag:
    """Guide controls the first n_t patches of each episode."""
    if step_in_episode < 0:
        raise ValueError("step_in_episode must be >= 0")
    return ActorTag.GUIDE if step_in_episode // L < n_t else ActorTag.LEARNER


def adapt_obs(full_obs: np.ndarray, guide_spec: ObsSpec) -> np.ndarray:
    """Project a learner observation onto what the guide was trained on."""
    full_obs = np.asarray(full_obs, dtype=np.float64)
    dim = full_obs.shape[-1]
    if guide_spec.mode is ObsMode.PROPRIO:
        if dim < guide_spec.proprio_dim:
            raise ValueError(
                f"obs dim {dim} lacks proprio prefix {guide_spec.proprio_dim}")
        return full_obs[..., : guide_spec.proprio_dim]
    if dim != guide_spec.total_dim:
        raise ValueError(f"obs dim {dim} != guide spec {guide_spec.total_dim}")
    return full_obs


def mixed_action(obs, guide: GuidePolicy, learner_params, tag: ActorTag,
                 rng: np.random.Generator):
    """Action for one step under the mixed policy; log-prob only for learner."""
    if tag is ActorTag.GUIDE:
        return guide.act(adapt_obs(obs, guide.spec), rng), None, tag
    dist = nets.forward_actor(learner_params, obs)
    action = dist.mean + dist.std * rng.standard_normal(dist.mean.shape)
    return action, float(nets.log_prob(dist, action)), tag


# ---------------------------------------------------------------------------
# Terrain sampling and stage configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TerrainSampler:
    kinds: tuple
    extent: float = 20.0
    resolution: float = 0.05

    def sample(self, rng: np.random.Generator, level: int):
        kind = self.kinds[int(rng.integers(len(self.kinds)))]
        seed = int(rng.integers(2 ** 31 - 1))
        return generate(kind, level, seed, extent=self.extent,
                        resolution=self.resolution)


@dataclass(frozen=True)
class ConvergenceRule:
    ma_window: int = 50
    span: int = 200
    tol: float = 0.01


@dataclass(frozen=True)
class StageConfig:
    stage_index: int
    transform: str                      # modality | observation | objective
    spec: ObsSpec
    objective: ObjectiveMode
    kinds: tuple
    schedule: JumpSchedule = JumpSchedule()
    budget: int = 1500
    convergence: ConvergenceRule | None = ConvergenceRule()
    cmd_range: tuple = (0.0, 0.0)
    extent: float = 20.0
    resolution: float = 0.05
    n_envs: int = 16
    ppo: PPOConfig = PPOConfig()
    model: HopperModel = HopperModel()
    weights: RewardWeights = RewardWeights()
    success_rule: str = "no_fall"       # no_fall | reach_goal
    dense_reach: bool = False
    reach_from_spawn: bool = False
    warm_start: bool = False
    hidden: tuple = (256, 128)
    guide_steps_in_surrogate: bool = False
    csv_every: int = 1


_STAGE_RULES = {
    1: ("modality", ObsMode.PROPRIO, ObjectiveMode.VELOCITY_TRACKING,
        {TerrainKind.FLAT}),
    2: ("observation", ObsMode.TERRAIN_AWARE, ObjectiveMode.VELOCITY_TRACKING,
        {TerrainKind.ROUGH_GROUND, TerrainKind.SLOPE_STAIRS}),
    3: ("objective", ObsMode.TERRAIN_AWARE, ObjectiveMode.GOAL_REACHING,
        {TerrainKind.WIDE_GAP, TerrainKind.STEPPING_STONE}),
}


def validate_stage(cfg: StageConfig):
    if cfg.stage_index not in _STAGE_RULES:
        raise ValueError(f"stage index {cfg.stage_index} not in 1..3")
    transform, mode, objective, kinds = _STAGE_RULES[cfg.stage_index]
    if cfg.transform != transform:
        raise ValueError(f"stage {cfg.stage_index} transform must be "
                         f"{transform!r}, got {cfg.transform!r}")
    if cfg.spec.mode is not mode:
        raise ValueError(f"stage {cfg.stage_index} requires {mode} observations")
    if cfg.objective is not objective:
        raise ValueError(f"stage {cfg.stage_index} requires {objective}")
    if not set(cfg.kinds) <= kinds:
        raise ValueError(f"stage {cfg.stage_index} terrain must be within "
                         f"{sorted(k.name for k in kinds)}")
    if cfg.success_rule not in ("no_fall", "reach_goal"):
        raise ValueError(f"unknown success rule {cfg.success_rule!r}")


def stage1_config(**over) -> StageConfig:
    base = StageConfig(stage_index=1, transform="modality",
                       spec=ObsSpec.proprio(),
                       objective=ObjectiveMode.VELOCITY_TRACKING,
                       kinds=(TerrainKind.FLAT,))
    return replace(base, **over) if over else base


def stage2_config(**over) -> StageConfig:
    base = StageConfig(stage_index=2, transform="observation",
                       spec=ObsSpec.terrain_aware(),
                       objective=ObjectiveMode.VELOCITY_TRACKING,
                       kinds=(TerrainKind.ROUGH_GROUND,
                              TerrainKind.SLOPE_STAIRS),
                       cmd_range=(0.2, 0.6), budget=600)
    return replace(base, **over) if over else base


def stage3_config(**over) -> StageConfig:
    base = StageConfig(stage_index=3, transform="objective",
                       spec=ObsSpec.terrain_aware(),
                       objective=ObjectiveMode.GOAL_REACHING,
                       kinds=(TerrainKind.WIDE_GAP,
                              TerrainKind.STEPPING_STONE),
                       success_rule="reach_goal", budget=600)
    return replace(base, **over) if over else base


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    """Rolling episode bookkeeping shared across iterations of a stage."""

    n_envs: int
    returns: deque = field(default_factory=lambda: deque(maxlen=100))
    outcomes: deque = field(default_factory=lambda: deque(maxlen=100))
    running: np.ndarray = None
    completed: int = 0

    def __post_init__(self):
        if self.running is None:
            self.running = np.zeros(self.n_envs)

    @property
    def success_rate(self) -> float:
        if not self.outcomes:
            return float("nan")
        return float(np.mean(self.outcomes))

    @property
    def mean_episode_return(self) -> float:
        if not self.returns:
            return float("nan")
        return float(np.mean(self.returns))


def _is_success(reason: int, rule: str) -> bool:
    if rule == "reach_goal":
        return reason == TermReason.OUT_OF_BOUNDS
    return reason in (TermReason.TIMEOUT, TermReason.OUT_OF_BOUNDS)


def collect_patches(venv: VecHopper, spec: ObsSpec, learner_params,
                    guide: GuidePolicy, n_t: int, L: int, *,
                    sampler: TerrainSampler, tracker: LevelTracker,
                    weights: RewardWeights, objective: ObjectiveMode,
                    dense_reach: bool = False, reach_from_spawn: bool = False,
                    success_rule: str = "no_fall",
                    episode: EpisodeLog | None = None):
    """Step all environments L times under the mixed policy.

    Episodes auto-reset inside the patch: the tracker records the outcome,
    the sampler draws a fresh terrain at the (possibly new) level, and the
    episode step counter restarts so guide patches re-apply from the start.
    Returns (buffer, per-iteration stats).
    """
    E = venv.n_envs
    model = venv.model
    buf = PatchBuffer(L, E, spec.total_dim, 2)
    episode = episode or EpisodeLog(E)
    term_sums = {name: 0.0 for name in TERM_ORDER}
    patch_return = np.zeros(E)

    for _ in range(L):
        obs = venv.observe(spec)
        guide_mask = np.array(
            [mix_select(int(t), n_t, L) is ActorTag.GUIDE for t in venv.t])
        dist = nets.forward_actor(learner_params, obs)
        actions = np.empty((E, 2))
        if np.any(guide_mask):
            g_obs = adapt_obs(obs, guide.spec)
            if guide.kind is GuideKind.FROZEN_CHECKPOINT:
                g_dist = nets.forward_actor(guide.params, g_obs)
        for i in range(E):
            if guide_mask[i]:
                if guide.kind is GuideKind.SCRIPTED_BALANCER:
                    actions[i] = 0.0
                else:
                    actions[i] = (g_dist.mean[i] + g_dist.std
                                  * venv.rngs[i].standard_normal(2))
            else:
                actions[i] = (dist.mean[i] + dist.std
                              * venv.rngs[i].standard_normal(2))
        logp = np.where(guide_mask, 0.0, nets.log_prob(dist, actions))
        values = nets.forward_critic(learner_params, obs)

        targets = np.asarray(model.q_default) + model.action_scale * actions
        assist = guide_mask & guide.needs_assist
        info = venv.step(targets, assist_mask=assist)
        rb = compute_reward(info, weights, objective, dense_reach=dense_reach,
                            reach_from_spawn=reach_from_spawn)
        buf.add(obs, actions, logp, values, rb.total, info.terminated,
                guide_mask, info.reason)

        patch_return += rb.total
        episode.running += rb.total
        for name in TERM_ORDER:
            term_sums[name] += float(np.mean(rb.terms[name][1]))

        for i in np.flatnonzero(info.terminated):
            reason = int(info.reason[i])
            success = _is_success(reason, success_rule)
            episode.returns.append(float(episode.running[i]))
            episode.outcomes.append(1.0 if success else 0.0)
            episode.running[i] = 0.0
            episode.completed += 1
            level = record_episode(tracker, i,
                                   EpisodeOutcome(success=success,
                                                  reason=reason))
            venv.reset_env(i, sampler.sample(venv.rngs[i], level))

    buf.set_bootstrap(nets.forward_critic(learner_params, venv.observe(spec)))
    stats = {
        "mean_return": float(np.mean(patch_return)),
        "mean_step_reward": float(np.mean(patch_return)) / L,
        "success_rate": episode.success_rate,
        "mean_level": float(np.mean(tracker.levels)),
        "episodes_done": episode.completed,
    }
    for name in TERM_ORDER:
        stats[f"rew_{name}"] = term_sums[name] / L
    return buf, stats


# ---------------------------------------------------------------------------
# Stage loop
# ---------------------------------------------------------------------------

CSV_HEADER_TAG = "# jumper-csv v1"

CSV_COLUMNS = (
    ["iteration", "n_t", "mean_return", "mean_step_reward", "success_rate",
     "mean_level", "episodes_done", "value_loss", "entropy", "clip_frac",
     "approx_kl"]
    + [f"rew_{name}" for name in TERM_ORDER]
)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".10g")


def render_csv(rows: list) -> str:
    lines = [CSV_HEADER_TAG, ",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


@dataclass
class StageReport:
    stage_index: int
    iterations: int
    final_n: int
    final_level: float
    success_rate: float
    wall_time: float
    rows: list
    best_checkpoint: bytes
    final_checkpoint: bytes
    guide_checksum: str

    def text(self) -> str:
        return (f"stage {self.stage_index}\n"
                f"iterations {self.iterations}\n"
                f"final_n {self.final_n}\n"
                f"final_level {self.final_level:.4f}\n"
                f"success_rate {self.success_rate:.4f}\n"
                f"wall_time_s {self.wall_time:.2f}\n"
                f"guide_checksum {self.guide_checksum}\n")


def _converged(history: list, rule: ConvergenceRule, n_t: int) -> bool:
    # never stop while the guide still controls patches: success under
    # guidance says nothing about the weaned policy
    if n_t > 0:
        return False
    need = rule.ma_window + rule.span
    if len(history) < need:
        return False
    tail = np.asarray(history[-need:])
    if np.any(np.isnan(tail)):
        return False
    ma = np.convolve(tail, np.ones(rule.ma_window) / rule.ma_window,
                     mode="valid")
    return float(ma.max() - ma.min()) < rule.tol


def run_stage(cfg: StageConfig, prior: GuidePolicy, seed: int,
              out_dir: str | None = None):
    """Train one stage under the frozen prior; returns (params, StageReport)."""
    validate_stage(cfg)
    if prior.stage_index != cfg.stage_index - 1:
        raise ValueError(
            f"prior guides stage {prior.stage_index + 1}, not "
            f"{cfg.stage_index}")
    start = time.perf_counter()

    master = np.random.default_rng(seed)
    init_seed = int(master.integers(2 ** 31 - 1))
    env_seed = int(master.integers(2 ** 31 - 1))
    shuffle_rng = np.random.default_rng(int(master.integers(2 ** 31 - 1)))

    if cfg.warm_start:
        if prior.params is None or prior.spec.total_dim != cfg.spec.total_dim:
            raise ValueError("warm start requires a checkpoint prior with a "
                             "matching observation spec")
        params = prior.params
    else:
        params = nets.init_policy(cfg.spec.total_dim, 2, init_seed,
                                  hidden=cfg.hidden)
    opt = nets.init_opt(params, cfg.ppo.lr)

    sampler = TerrainSampler(cfg.kinds, cfg.extent, cfg.resolution)
    tracker = LevelTracker(cfg.n_envs)
    flat = generate(TerrainKind.FLAT, 0, 0, extent=cfg.extent,
                    resolution=cfg.resolution)
    venv = VecHopper(cfg.model, [flat] * cfg.n_envs, env_seed,
                     cmd_range=cfg.cmd_range)
    for i in range(cfg.n_envs):
        venv.reset_env(i, sampler.sample(venv.rngs[i], tracker.levels[i]))

    ppo_cfg = replace(cfg.ppo, n_envs=cfg.n_envs)
    L = cfg.schedule.patch_len
    episode = EpisodeLog(cfg.n_envs)
    rows = []
    success_history = []
    best_key = None
    best_ckpt = None
    n_t = schedule_n(0, cfg.schedule)

    for it in range(cfg.budget):
        n_t = schedule_n(it, cfg.schedule)
        buf, cstats = collect_patches(
            venv, cfg.spec, params, prior, n_t, L,
            sampler=sampler, tracker=tracker, weights=cfg.weights,
            objective=cfg.objective, dense_reach=cfg.dense_reach,
            reach_from_spawn=cfg.reach_from_spawn,
            success_rule=cfg.success_rule, episode=episode)
        params, opt, ustats = update(params, opt, buf, ppo_cfg, shuffle_rng)

        if it % cfg.csv_every == 0 or it == cfg.budget - 1:
            row = {"iteration": it, "n_t": n_t}
            row.update(cstats)
            row["value_loss"] = ustats.get("value_loss", float("nan"))
            row["entropy"] = ustats.get("entropy", float("nan"))
            row["clip_frac"] = ustats.get("clip_frac", float("nan"))
            row["approx_kl"] = ustats.get("approx_kl", float("nan"))
            rows.append(row)
        success_history.append(cstats["success_rate"])

        sr = cstats["success_rate"]
        key = (-1.0 if np.isnan(sr) else sr, it)
        if best_key is None or key >= best_key:
            best_key = key
            best_ckpt = nets.save_checkpoint(params, cfg.stage_index,
                                             cfg.spec.header())
        if cfg.convergence and _converged(success_history, cfg.convergence,
                                          n_t):
            break

    final_ckpt = nets.save_checkpoint(params, cfg.stage_index,
                                      cfg.spec.header())
    if best_ckpt is None:
        best_ckpt = final_ckpt
    report = StageReport(
        stage_index=cfg.stage_index,
        iterations=len(success_history),
        final_n=n_t,
        final_level=float(np.mean(tracker.levels)),
        success_rate=episode.success_rate,
        wall_time=time.perf_counter() - start,
        rows=rows,
        best_checkpoint=best_ckpt,
        final_checkpoint=final_ckpt,
        guide_checksum=prior.checksum,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = f"stage{cfg.stage_index}"
        (out / f"{tag}.csv").write_text(render_csv(rows))
        (out / f"{tag}.ckpt").write_bytes(best_ckpt)
        (out / f"{tag}_final.ckpt").write_bytes(final_ckpt)
        (out / f"{tag}_report.txt").write_text(report.text())
    return params, report


def run_curriculum(configs: list, seed: int, out_dir: str | None = None):
    """Chain stages, freezing each best checkpoint as the next guide.

    Returns (final params, [StageReport], final GuidePolicy).
    """
    if [c.stage_index for c in configs] != list(
            range(1, len(configs) + 1)):
        raise ValueError("stage configs must be ordered 1..n")
    guide = GuidePolicy.scripted()
    reports = []
    params = None
    for cfg in configs:
        stage_seed = seed + 10000 * cfg.stage_index
        params, report = run_stage(cfg, guide, stage_seed, out_dir)
        reports.append(report)
        guide = GuidePolicy.from_checkpoint(report.best_checkpoint)
    return params, reports, guide
