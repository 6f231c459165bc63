import dataclasses
import hashlib
from pathlib import Path

import numpy as np
import pytest

from jumper import nets
from jumper.hopper import HopperModel, ObsSpec, VecHopper
from jumper.jumpstart import (
    CSV_COLUMNS,
    ActorTag,
    ConvergenceRule,
    GuideKind,
    GuidePolicy,
    JumpSchedule,
    _converged,
    adapt_obs,
    mix_select,
    mixed_action,
    render_csv,
    run_curriculum,
    run_stage,
    schedule_n,
    stage1_config,
    stage2_config,
    stage3_config,
    validate_stage,
)
from jumper.terrain import TerrainKind, generate


def test_schedule_decrements_every_m_iterations():
    sched = JumpSchedule(n0=2, m=300)
    assert schedule_n(0, sched) == 2
    assert schedule_n(299, sched) == 2
    assert schedule_n(300, sched) == 1
    assert schedule_n(599, sched) == 1
    assert schedule_n(600, sched) == 0
    assert schedule_n(10 ** 6, sched) == 0
    prev = sched.n0
    for t in range(0, 2000, 37):
        n = schedule_n(t, sched)
        assert 0 <= n <= prev
        prev = n
    with pytest.raises(ValueError):
        schedule_n(-1, sched)


def test_schedule_validation():
    with pytest.raises(ValueError):
        JumpSchedule(n0=-1)
    with pytest.raises(ValueError):
        JumpSchedule(n0=41, n_patches=40)
    with pytest.raises(ValueError):
        JumpSchedule(m=0)
    JumpSchedule(n0=40, n_patches=40)  # boundary is allowed


def test_mix_boundary_is_patch_aligned():
    L = 25
    for n_t, flips_at in ((2, 50), (1, 25)):
        for s in range(flips_at):
            assert mix_select(s, n_t, L) is ActorTag.GUIDE
        assert mix_select(flips_at, n_t, L) is ActorTag.LEARNER
    # n_t = 0 hands the whole episode to the learner
    assert mix_select(0, 0, L) is ActorTag.LEARNER
    # n_t = n_patches keeps the guide in charge to the last step
    assert mix_select(40 * L - 1, 40, L) is ActorTag.GUIDE
    with pytest.raises(ValueError):
        mix_select(-1, 1, L)


def test_adapt_obs_takes_proprio_prefix():
    full = np.arange(43, dtype=np.float64)
    out = adapt_obs(full, ObsSpec.proprio())
    assert out.shape == (11,)
    assert np.array_equal(out, full[:11])
    batch = np.arange(86, dtype=np.float64).reshape(2, 43)
    out2 = adapt_obs(batch, ObsSpec.proprio())
    assert out2.shape == (2, 11)
    assert np.array_equal(out2, batch[:, :11])
    with pytest.raises(ValueError):
        adapt_obs(np.zeros(7), ObsSpec.proprio())
    spec = ObsSpec.terrain_aware()
    assert np.array_equal(adapt_obs(np.ones(spec.total_dim), spec),
                          np.ones(spec.total_dim))
    with pytest.raises(ValueError):
        adapt_obs(np.zeros(spec.total_dim + 1), spec)


def test_scripted_guide_consumes_no_randomness():
    guide = GuidePolicy.scripted()
    rng = np.random.default_rng(5)
    before = rng.bit_generator.state
    act = guide.act(np.zeros(11), rng)
    assert np.array_equal(act, np.zeros(2))
    assert rng.bit_generator.state == before


def test_mixed_action_tags_and_logp():
    guide = GuidePolicy.scripted()
    params = nets.init_policy(11, 2, seed=0, hidden=(8, 8))
    obs = np.random.default_rng(1).normal(size=11)

    a, logp, tag = mixed_action(obs, guide, params, ActorTag.GUIDE,
                                np.random.default_rng(2))
    assert tag is ActorTag.GUIDE
    assert logp is None
    assert np.array_equal(a, np.zeros(2))

    a1, lp1, tag1 = mixed_action(obs, guide, params, ActorTag.LEARNER,
                                 np.random.default_rng(3))
    a2, lp2, _ = mixed_action(obs, guide, params, ActorTag.LEARNER,
                              np.random.default_rng(3))
    assert tag1 is ActorTag.LEARNER
    assert np.array_equal(a1, a2) and lp1 == lp2
    dist = nets.forward_actor(params, obs)
    assert lp1 == pytest.approx(float(nets.log_prob(dist, a1)))


def test_guide_policy_frozen_and_checksummed():
    guide = GuidePolicy.scripted()
    assert guide.kind is GuideKind.SCRIPTED_BALANCER
    assert guide.checksum == hashlib.sha256(
        b"scripted-balancer-v1").hexdigest()
    with pytest.raises(dataclasses.FrozenInstanceError):
        guide.stage_index = 3

    params = nets.init_policy(11, 2, seed=4, hidden=(8, 8))
    data = nets.save_checkpoint(params, 1, ObsSpec.proprio().header())
    loaded = GuidePolicy.from_checkpoint(data)
    assert loaded.kind is GuideKind.FROZEN_CHECKPOINT
    assert loaded.stage_index == 1
    assert not loaded.needs_assist
    assert loaded.checksum == nets.checkpoint_checksum(data)
    obs = np.random.default_rng(6).normal(size=(3, 11))
    assert np.allclose(nets.forward_actor(loaded.params, obs).mean,
                       nets.forward_actor(params, obs).mean)


def test_scripted_balancer_survives_fifty_assisted_steps():
    model = HopperModel()
    guide = GuidePolicy.scripted()
    assert guide.needs_assist
    hfs = [generate(TerrainKind.FLAT, 0, s, extent=8.0) for s in range(4)]
    venv = VecHopper(model, hfs, seed=0)
    rng = np.random.default_rng(0)
    assist = np.ones(4, dtype=bool)
    for _ in range(50):
        act = np.stack([guide.act(np.zeros(11), rng) for _ in range(4)])
        targets = np.asarray(model.q_default) + model.action_scale * act
        info = venv.step(targets, assist_mask=assist)
        assert not np.any(info.terminated)


def test_stage_validation_catches_mismatches():
    validate_stage(stage1_config())
    validate_stage(stage2_config())
    validate_stage(stage3_config())
    with pytest.raises(ValueError):
        validate_stage(stage1_config(spec=ObsSpec.terrain_aware()))
    with pytest.raises(ValueError):
        validate_stage(stage3_config(kinds=(TerrainKind.FLAT,)))
    with pytest.raises(ValueError):
        validate_stage(stage2_config(transform="modality"))
    with pytest.raises(ValueError):
        validate_stage(stage1_config(success_rule="score"))
    with pytest.raises(ValueError):
        validate_stage(dataclasses.replace(stage1_config(), stage_index=4))


def micro_stage1(**over):
    base = stage1_config(
        budget=3,
        n_envs=2,
        hidden=(8, 8),
        convergence=None,
        schedule=JumpSchedule(n0=1, m=2, patch_len=5),
        extent=8.0,
        csv_every=1,
    )
    return dataclasses.replace(base, **over) if over else base


def test_run_stage_writes_artifacts(tmp_path):
    cfg = micro_stage1()
    prior = GuidePolicy.scripted(stage_index=0)
    params, report = run_stage(cfg, prior, seed=0, out_dir=tmp_path)
    assert report.stage_index == 1
    assert report.iterations == 3
    assert report.guide_checksum == prior.checksum

    csv_text = (tmp_path / "stage1.csv").read_text()
    lines = csv_text.strip().split("\n")
    assert lines[0] == "# jumper-csv v1"
    header = lines[1].split(",")
    assert header[:5] == ["iteration", "n_t", "mean_return",
                          "mean_step_reward", "success_rate"]
    assert len(lines) == 2 + 3
    first = lines[2].split(",")
    assert first[0] == "0"
    assert first[1] == "1"  # n0=1 guide patch at iteration 0

    for name in ("stage1.ckpt", "stage1_final.ckpt", "stage1_report.txt"):
        assert (tmp_path / name).exists()
    text = (tmp_path / "stage1_report.txt").read_text()
    assert text.startswith("stage 1\niterations 3\n")
    loaded = GuidePolicy.from_checkpoint(
        (tmp_path / "stage1.ckpt").read_bytes())
    assert loaded.stage_index == 1


def test_run_stage_rejects_wrong_prior():
    cfg = dataclasses.replace(
        stage2_config(), budget=1, n_envs=2, hidden=(8, 8),
        convergence=None, schedule=JumpSchedule(n0=1, m=2, patch_len=4),
        extent=8.0)
    with pytest.raises(ValueError):
        run_stage(cfg, GuidePolicy.scripted(stage_index=0), seed=0)


def test_run_stage_reproducible(tmp_path):
    cfg = micro_stage1()
    prior = GuidePolicy.scripted(stage_index=0)
    p1, r1 = run_stage(cfg, prior, seed=7)
    p2, r2 = run_stage(cfg, prior, seed=7)
    a1 = np.concatenate([a.ravel() for a in nets.param_arrays(p1)])
    a2 = np.concatenate([a.ravel() for a in nets.param_arrays(p2)])
    assert np.array_equal(a1, a2)
    assert r1.final_checkpoint == r2.final_checkpoint
    p3, _ = run_stage(cfg, prior, seed=8)
    a3 = np.concatenate([a.ravel() for a in nets.param_arrays(p3)])
    assert not np.array_equal(a1, a3)


def test_curriculum_chains_checkpoints(tmp_path):
    # stair terrain needs room for its slope and platform sections
    shared = dict(budget=2, n_envs=2, hidden=(8, 8), convergence=None,
                  schedule=JumpSchedule(n0=1, m=1, patch_len=4), extent=14.0)
    configs = [
        stage1_config(**shared),
        stage2_config(**shared),
        stage3_config(**shared),
    ]
    params, reports, guide = run_curriculum(configs, seed=0,
                                            out_dir=tmp_path)
    assert [r.stage_index for r in reports] == [1, 2, 3]
    # each stage's guide is the previous stage's best checkpoint
    assert reports[0].guide_checksum == GuidePolicy.scripted().checksum
    assert reports[1].guide_checksum == nets.checkpoint_checksum(
        reports[0].best_checkpoint)
    assert reports[2].guide_checksum == nets.checkpoint_checksum(
        reports[1].best_checkpoint)
    assert guide.stage_index == 3
    for i in (1, 2, 3):
        assert (Path(tmp_path) / f"stage{i}.csv").exists()

    with pytest.raises(ValueError):
        run_curriculum([configs[1], configs[0]], seed=0)


def test_convergence_rule_behavior():
    rule = ConvergenceRule(ma_window=50, span=200, tol=0.01)
    flat = [0.0] * 250
    assert _converged(flat, rule, n_t=0)
    # an active guide blocks early stopping no matter how flat the curve
    assert not _converged(flat, rule, n_t=1)
    assert not _converged([0.0] * 249, rule, n_t=0)
    assert not _converged(flat[:-1] + [float("nan")], rule, n_t=0)
    rising = list(np.linspace(0.0, 1.0, 250))
    assert not _converged(rising, rule, n_t=0)
    # a plateau after a climb does stop
    assert _converged([0.0] * 100 + [0.8] * 250, rule, n_t=0)


def test_render_csv_formats_numbers():
    rows = [{c: 0 for c in CSV_COLUMNS}]
    rows[0]["iteration"] = 3
    rows[0]["mean_return"] = 1.5
    text = render_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == "# jumper-csv v1"
    cells = lines[2].split(",")
    assert cells[0] == "3"
    idx = lines[1].split(",").index("mean_return")
    assert cells[idx] == "1.5"
