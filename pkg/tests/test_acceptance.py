"""End-to-end checks of the shipped guarantees, one test per behavior.

Each test here states a contract the package must keep: oracle agreement
for the gradient and advantage math, exact published constants, bitwise
policy-mixing boundaries, simulator termination semantics, learning-curve
separation between jump-started and vanilla training, stage chaining, and
byte-identical CLI reruns.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from jumper import cli, nets
from jumper.config import build_stage_config, parse_config
from jumper.curriculum import EpisodeOutcome, LevelTracker, record_episode
from jumper.hopper import TORSO, HopperModel, TermReason, VecHopper
from jumper.jumpstart import (GuidePolicy, JumpSchedule, TerrainSampler,
                              adapt_obs, collect_patches, mix_select,
                              run_stage, schedule_n, stage1_config,
                              stage2_config)
from jumper.ppo import PPOConfig, clipped_objective, gae, ppo_loss
from jumper.rewards import TERM_ORDER, ObjectiveMode, RewardWeights
from jumper.terrain import TerrainKind, generate, level_params


# ---------------------------------------------------------------------------
# 1. analytic gradients against central finite differences
# ---------------------------------------------------------------------------

def test_ppo_gradients_match_finite_differences():
    """Analytic gradients of the full loss agree with central differences
    on a 4-2-2 policy over 100 random batches."""
    cfg = PPOConfig()
    rng = np.random.default_rng(42)
    eps = 5e-6
    worst = 0.0
    start = time.perf_counter()
    for draw in range(100):
        params = nets.init_policy(4, 2, 1000 + draw, hidden=(2,))
        n = 12
        batch = {
            "obs": rng.normal(size=(n, 4)),
            "actions": rng.normal(size=(n, 2)) * 0.5,
            "logp": rng.normal(size=n) * 0.3 - 2.0,
            "advantages": rng.normal(size=n),
            "returns": rng.normal(size=n),
            "guide": rng.random(n) < 0.2,
        }
        _, grads = ppo_loss(params, batch, cfg)
        arrays = nets.param_arrays(params)
        assert len(arrays) == len(grads)
        for arr, grad in zip(arrays, grads):
            flat = arr.reshape(-1)
            gflat = np.asarray(grad).reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                up = ppo_loss(params, batch, cfg)[0]["loss"]
                flat[k] = orig - eps
                down = ppo_loss(params, batch, cfg)[0]["loss"]
                flat[k] = orig
                fd = (up - down) / (2.0 * eps)
                rel = abs(gflat[k] - fd) / max(abs(gflat[k]), abs(fd), 1e-6)
                worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    assert worst < 1e-4, f"max relative gradient error {worst:.3e}"
    assert elapsed < 10.0, f"gradient oracle took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. recursive advantage estimates against the brute-force sum
# ---------------------------------------------------------------------------

def test_gae_matches_discounted_delta_sums():
    """The backward recursion equals the explicit (gamma*lam)^k delta sum
    on 1000 random streams with episode cuts."""
    rng = np.random.default_rng(7)
    gamma, lam = 0.99, 0.95
    worst = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        T = 10
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        dones = rng.random(T) < 0.15
        last_value = float(rng.normal())
        adv, ret = gae(rewards, values, dones, last_value,
                       gamma=gamma, lam=lam)
        next_values = np.append(values[1:], last_value)
        delta = rewards + gamma * next_values * (1.0 - dones) - values
        for t in range(T):
            acc, w = 0.0, 1.0
            for k in range(t, T):
                acc += w * delta[k]
                if dones[k]:
                    break
                w *= gamma * lam
            worst = max(worst, abs(adv[t] - acc))
            worst = max(worst, abs(ret[t] - (acc + values[t])))
    elapsed = time.perf_counter() - start
    assert worst < 1e-10, f"max advantage mismatch {worst:.3e}"
    assert elapsed < 5.0, f"advantage oracle took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 3. clipped surrogate boundary cases
# ---------------------------------------------------------------------------

def test_clipped_surrogate_boundary_cases():
    assert clipped_objective(1.5, 1.0, 0.2) == 1.2
    assert clipped_objective(0.5, -1.0, 0.2) == -0.8
    for adv in (-3.75, -1.0, 0.0, 0.2, 5.0):
        for eps in (0.1, 0.2, 0.3):
            assert clipped_objective(1.0, adv, eps) == adv


# ---------------------------------------------------------------------------
# 4. guide-patch schedule
# ---------------------------------------------------------------------------

def test_guide_schedule_decrements_on_plan():
    sched = JumpSchedule(n0=2, m=300)
    for t, want in ((0, 2), (299, 2), (300, 1), (600, 0), (10 ** 6, 0)):
        assert schedule_n(t, sched) == want


# ---------------------------------------------------------------------------
# 5. mixing boundaries and guide freshness
# ---------------------------------------------------------------------------

N_PATCHES = 40   # horizon 1000 / patch length 25
PATCH_LEN = 25
MIX_ENVS = 4


def _mix_setup(seed):
    """Fresh vectorized env + sampler + tracker, seeded identically."""
    model = HopperModel()
    spec = stage1_config().spec
    flat = generate(TerrainKind.FLAT, 0, 0, extent=8.0, resolution=0.05)
    venv = VecHopper(model, [flat] * MIX_ENVS, seed, cmd_range=(0.0, 0.0))
    sampler = TerrainSampler((TerrainKind.FLAT,), 8.0, 0.05)
    tracker = LevelTracker(MIX_ENVS)
    for i in range(MIX_ENVS):
        venv.reset_env(i, sampler.sample(venv.rngs[i], tracker.levels[i]))
    return venv, sampler, tracker, spec


def _micro_stage1_guide():
    cfg = replace(stage1_config(), budget=2, n_envs=2, hidden=(8, 8),
                  extent=8.0, convergence=None,
                  schedule=JumpSchedule(n0=1, m=2, patch_len=5))
    _, rep = run_stage(cfg, GuidePolicy.scripted(stage_index=0), 3)
    return GuidePolicy.from_checkpoint(rep.best_checkpoint)


def _roll_mixed(learner, guide, n_t, seed, iters=4):
    venv, sampler, tracker, spec = _mix_setup(seed)
    for _ in range(iters):
        collect_patches(venv, spec, learner, guide, n_t, PATCH_LEN,
                        sampler=sampler, tracker=tracker,
                        weights=RewardWeights(),
                        objective=ObjectiveMode.VELOCITY_TRACKING)
    return venv


def _roll_pure(actor_params, seed, steps=100, scripted=False, spec_of=None):
    """Hand-rolled single-policy rollout mirroring the collection loop."""
    venv, sampler, tracker, spec = _mix_setup(seed)
    model = venv.model
    q_def = np.asarray(model.q_default)
    for _ in range(steps):
        obs = venv.observe(spec)
        actions = np.empty((MIX_ENVS, 2))
        if scripted:
            actions[:] = 0.0
            assist = np.ones(MIX_ENVS, dtype=bool)
        else:
            feed = obs if spec_of is None else adapt_obs(obs, spec_of)
            dist = nets.forward_actor(actor_params, feed)
            for i in range(MIX_ENVS):
                actions[i] = (dist.mean[i] + dist.std
                              * venv.rngs[i].standard_normal(2))
            assist = np.zeros(MIX_ENVS, dtype=bool)
        targets = q_def + model.action_scale * actions
        info = venv.step(targets, assist_mask=assist)
        for i in np.flatnonzero(info.terminated):
            reason = int(info.reason[i])
            success = reason in (TermReason.TIMEOUT,
                                 TermReason.OUT_OF_BOUNDS)
            level = record_episode(
                tracker, i, EpisodeOutcome(success=success, reason=reason))
            venv.reset_env(i, sampler.sample(venv.rngs[i], level))
    return venv


def _same_state(a, b):
    return (np.array_equal(a.q, b.q) and np.array_equal(a.u, b.u)
            and np.array_equal(a.t, b.t))


def test_mixing_boundaries_and_guide_freeze():
    """n_t at either end reduces the mixed rollout to a pure policy,
    bitwise, and training never touches the frozen guide."""
    guide = _micro_stage1_guide()
    spec = stage1_config().spec
    learner = nets.init_policy(spec.total_dim, 2, 5, hidden=(8, 8))

    # every patch guided == pure guide rollout (checkpoint guide)
    mixed = _roll_mixed(learner, guide, N_PATCHES, seed=77)
    pure = _roll_pure(guide.params, seed=77, spec_of=guide.spec)
    assert _same_state(mixed, pure)

    # every patch guided == pure guide rollout (scripted guide)
    scripted = GuidePolicy.scripted(stage_index=0)
    mixed_s = _roll_mixed(learner, scripted, N_PATCHES, seed=79)
    pure_s = _roll_pure(None, seed=79, scripted=True)
    assert _same_state(mixed_s, pure_s)

    # no patch guided == pure learner rollout
    mixed_l = _roll_mixed(learner, guide, 0, seed=78)
    pure_l = _roll_pure(learner, seed=78)
    assert _same_state(mixed_l, pure_l)

    # 100 training iterations leave the guide bitwise unchanged
    snap = [a.copy() for a in nets.param_arrays(guide.params)]
    cfg2 = replace(stage2_config(), budget=100, n_envs=2, hidden=(8, 8),
                   kinds=(TerrainKind.ROUGH_GROUND,), extent=8.0,
                   convergence=None,
                   schedule=JumpSchedule(n0=2, m=30, patch_len=5))
    _, rep = run_stage(cfg2, guide, 11)
    assert rep.iterations == 100
    after = nets.param_arrays(guide.params)
    assert all(np.array_equal(s, a) for s, a in zip(snap, after))
    assert rep.guide_checksum == guide.checksum


# ---------------------------------------------------------------------------
# 6. published constants: reward weights and terrain level tables
# ---------------------------------------------------------------------------

def test_reward_and_terrain_tables_match_defaults():
    expected = {
        "track_lin_vel": 1.5,
        "track_ang_vel": 0.5,
        "termination": -200.0,
        "out_bound": 200.0,
        "out_platform": 10.0,
        "reach_far": -0.5,
        "lin_vel_z": -0.5,
        "ang_vel_xy": -0.05,
        "orientation": -1.0,
        "joint_torques": -1.0e-5,
        "action_rate": -0.01,
        "action_smoothness": -0.01,
        "joint_power": -2.0e-5,
        "joint_acc": -2.5e-7,
        "joint_deviation": -0.01,
        "collision": -10.0,
        "stumble": -1.0,
        "feet_edge": -1.0,
    }
    got = RewardWeights().as_dict()
    assert got == expected
    assert tuple(got) == TERM_ORDER == tuple(expected)

    anchors = {
        0: (0.10, 0.50, 0.05),
        5: (0.35, 0.25, 0.15),
        9: (0.60, 0.125, 0.25),
    }
    for level, (gap, stone, stone_gap) in anchors.items():
        p = level_params(TerrainKind.STEPPING_STONE, level)
        assert (p.gap_width, p.stone_size, p.stone_gap) == \
            (gap, stone, stone_gap)

    rough = [level_params(TerrainKind.ROUGH_GROUND, lv) for lv in range(10)]
    assert rough[0].noise_amplitude == 0.02
    assert rough[9].noise_amplitude == 0.10
    amps = [p.noise_amplitude for p in rough]
    assert amps == sorted(amps)

    stairs = [level_params(TerrainKind.SLOPE_STAIRS, lv) for lv in range(10)]
    assert stairs[0].slope_grade == 0.0 and stairs[9].slope_grade == 0.2
    assert stairs[0].stair_height == 0.05 and stairs[9].stair_height == 0.2
    assert all(p.stair_width == 0.3 for p in stairs)

    gaps = [level_params(TerrainKind.WIDE_GAP, lv) for lv in range(10)]
    assert gaps[0].gap_width == 0.10 and gaps[9].gap_width == 0.60
    widths = [p.gap_width for p in gaps]
    assert widths == sorted(widths)


# ---------------------------------------------------------------------------
# 7. termination on the exact contact substep
# ---------------------------------------------------------------------------

def _torso_drop(model, flat):
    venv = VecHopper(model, [flat], 5, cmd_range=(0.0, 0.0))
    venv.q[0] = np.array([2.0, 0.25, -1.4, 0.0, -0.1])
    venv.u[0] = np.array([0.0, -2.0, 0.0, 0.0, 0.0])
    targets = np.array([[0.0, -0.1]])
    for k in range(1, 101):
        info = venv.step(targets)
        if info.terminated[0]:
            return k, info, venv
    raise AssertionError("torso drop never terminated")


def test_nonfoot_contact_terminates_on_contact_substep():
    model = HopperModel()
    flat = generate(TerrainKind.FLAT, 0, 0, extent=8.0, resolution=0.05)

    # a decimated step and a substep-resolution twin must freeze the same
    # crash state: termination happened inside the decimated step, on the
    # exact substep where contact arose
    k4, info4, venv4 = _torso_drop(model, flat)
    assert info4.reason[0] == TermReason.NON_FOOT_CONTACT
    assert info4.first_contact_body[0] == TORSO
    twin = replace(model, control_decimation=1)
    k1, info1, venv1 = _torso_drop(twin, flat)
    assert info1.reason[0] == TermReason.NON_FOOT_CONTACT
    dec = model.control_decimation
    assert (k4 - 1) * dec < k1 <= k4 * dec
    assert np.array_equal(venv4.q[0], venv1.q[0])
    assert np.array_equal(venv4.u[0], venv1.u[0])

    # sweep: no step anywhere shows non-foot contact without termination
    E, T = 20, 5000
    venv = VecHopper(model, [flat] * E, 99, cmd_range=(0.0, 0.0))
    for i in range(E):
        venv.reset_env(i)
    rng = np.random.default_rng(99)
    q_def = np.asarray(model.q_default)
    crashes = 0
    for _ in range(T):
        actions = rng.uniform(-3.0, 3.0, size=(E, 2))
        info = venv.step(q_def + model.action_scale * actions)
        nonfoot = np.any(info.body_forces[:, 1:, 1] > 0.0, axis=1)
        assert not np.any(nonfoot & ~info.terminated)
        ended = np.flatnonzero(info.terminated)
        crashes += int(np.sum(
            info.reason[ended] == TermReason.NON_FOOT_CONTACT))
        for i in ended:
            venv.reset_env(i)
    assert crashes > 100   # the invariant was exercised, not vacuous


# ---------------------------------------------------------------------------
# 8. jump-started learning beats vanilla on the balancing stage
# ---------------------------------------------------------------------------

BENCH_TOML = """\
[run]
method = "JumpER"
stages = [1]
seeds = [0, 1, 2, 3, 4]

[schedule]
n0 = 2
m = 300

[ppo]
entropy_coef = 0.01

[env]
n_envs = 32
extent = 8.0
cmd_min = 0.2
cmd_max = 0.6
hidden = [64, 64]
convergence = false

[stage1]
budget = 1500
"""


def test_jumpstart_outperforms_vanilla_on_balancing():
    """Five seeds of balancing: jump-started training ends at least 20
    points above vanilla, and the success average regains its
    pre-decrement level within 2m iterations of every guide handoff."""
    run = parse_config(BENCH_TOML)
    cfg_j = build_stage_config(run, 1)
    cfg_v = build_stage_config(run, 1, n0_zero=True)
    start = time.perf_counter()
    finals = {"jump": [], "vanilla": []}
    jump_rows = []
    for seed in run.seeds:
        _, rep = run_stage(cfg_j, GuidePolicy.scripted(stage_index=0), seed)
        finals["jump"].append(rep.success_rate)
        jump_rows.append(rep.rows)
        _, rep = run_stage(cfg_v, GuidePolicy.scripted(stage_index=0), seed)
        finals["vanilla"].append(rep.success_rate)
    elapsed = time.perf_counter() - start

    mean_j = float(np.mean(finals["jump"]))
    mean_v = float(np.mean(finals["vanilla"]))
    assert mean_j >= mean_v + 0.20, (
        f"jump-started {mean_j:.3f} vs vanilla {mean_v:.3f}")

    window, m = 50, run.schedule.m
    for rows in jump_rows:
        sr = np.array([0.0 if np.isnan(r["success_rate"])
                       else r["success_rate"] for r in rows])
        for dec in (m, 2 * m):
            pre = sr[dec - window:dec].mean()
            post = [sr[e - window:e].mean()
                    for e in range(dec, min(dec + 2 * m, len(sr)) + 1)]
            assert max(post) >= pre - 1e-12, (
                f"no recovery within {2 * m} iterations of handoff at {dec}")
    assert elapsed < 1800.0, f"balancing benchmark took {elapsed:.0f}s"


# ---------------------------------------------------------------------------
# 10. CLI reruns are byte-identical
# ---------------------------------------------------------------------------

CLI_TOML = """\
[run]
seeds = [0]
eval_episodes = 2
bench_methods = ["JumpER", "VanillaPPO"]

[schedule]
n0 = 1
m = 2
patch_len = 5

[env]
n_envs = 2
extent = 8
hidden = [8, 8]
convergence = false

[model]
horizon = 40

[stage1]
budget = 2
"""


def _artifact_bytes(root):
    """CSV and checkpoint contents keyed by path relative to root."""
    root = Path(root)
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix in (".csv", ".ckpt")
    }


def test_cli_reruns_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv("JUMPER_THREADS", raising=False)
    cfg = tmp_path / "run.toml"
    cfg.write_text(CLI_TOML)

    t1, t2 = tmp_path / "t1", tmp_path / "t2"
    for out in (t1, t2):
        assert cli.main(["train", "--config", str(cfg),
                         "--out-dir", str(out)]) == 0
    first, second = _artifact_bytes(t1), _artifact_bytes(t2)
    assert first and first == second

    ckpt = t1 / "seed0" / "stage1_final.ckpt"
    e1, e2 = tmp_path / "e1.csv", tmp_path / "e2.csv"
    for out in (e1, e2):
        assert cli.main(["eval", "--checkpoint", str(ckpt),
                         "--task", "balance", "--episodes", "2",
                         "--seed", "0", "--out", str(out)]) == 0
    assert e1.read_bytes() == e2.read_bytes()

    b1, b2 = tmp_path / "b1", tmp_path / "b2"
    for out in (b1, b2):
        assert cli.main(["bench", "--config", str(cfg),
                         "--out-dir", str(out)]) == 0
    first, second = _artifact_bytes(b1), _artifact_bytes(b2)
    assert first and first == second

    r1, r2 = tmp_path / "r1.txt", tmp_path / "r2.txt"
    for out in (r1, r2):
        assert cli.main(["terrain", "render", "--kind", "stepping_stone",
                         "--level", "4", "--seed", "9", "--extent", "8",
                         "--out", str(out)]) == 0
    assert r1.read_bytes() == r2.read_bytes()
