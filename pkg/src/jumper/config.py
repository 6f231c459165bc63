"""Run configuration: TOML files with spec-mirroring defaults.

Every key has a default, so an empty file is a runnable stage-1 training
run. Validation errors always name the offending `[section].key`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 fallback
    import tomli as tomllib

from .hopper import HopperModel
from .jumpstart import (ConvergenceRule, JumpSchedule, StageConfig,
                        stage1_config, stage2_config, stage3_config)
from .ppo import PPOConfig

METHODS = ("JumpER", "VanillaPPO", "PPOPretrained", "PPODense",
           "PPODensePretrained")
PRETRAINED_METHODS = ("PPOPretrained", "PPODensePretrained")
DENSE_METHODS = ("PPODense", "PPODensePretrained")

TASK_STAGE = {"balance": 1, "rough": 2, "gaps": 3}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    method: str = "JumpER"
    stages: tuple = (1,)
    seeds: tuple = (0,)
    out_dir: str = "runs/out"
    csv_every: int = 1
    checkpoint: str | None = None
    eval_episodes: int = 20
    bench_methods: tuple = ("JumpER", "VanillaPPO")
    schedule: JumpSchedule = JumpSchedule()
    ppo: PPOConfig = PPOConfig()
    model: HopperModel = HopperModel()
    n_envs: int = 16
    extent: float = 20.0
    resolution: float = 0.05
    cmd_range: tuple = (0.0, 0.0)
    hidden: tuple = (256, 128)
    convergence: bool = True
    stage_overrides: dict = field(default_factory=dict)


def _take(section: dict, key: str, kind, where: str, default):
    if key not in section:
        return default
    val = section.pop(key)
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    bad_bool = kind in (int, float) and isinstance(val, bool)
    if kind is not None and (bad_bool or not isinstance(val, kind)):
        raise ConfigError(f"[{where}].{key}: expected {kind.__name__}, "
                          f"got {type(val).__name__}")
    return val


def _reject_leftovers(section: dict, where: str):
    if section:
        key = sorted(section)[0]
        raise ConfigError(f"[{where}].{key}: unknown key")


def _dataclass_section(section: dict, proto, where: str,
                       int_fields=(), skip=()):
    """Overlay TOML keys onto a frozen dataclass, type-checked per field."""
    kwargs = {}
    for f in dataclasses.fields(proto):
        if f.name in skip or f.name not in section:
            continue
        val = section.pop(f.name)
        want = int if f.name in int_fields else float
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, want) or isinstance(val, bool):
            raise ConfigError(f"[{where}].{f.name}: expected "
                              f"{want.__name__}, got {type(val).__name__}")
        kwargs[f.name] = val
    _reject_leftovers(section, where)
    return dataclasses.replace(proto, **kwargs) if kwargs else proto


def _parse_stage_override(section: dict, where: str) -> dict:
    out = {}
    if "budget" in section:
        out["budget"] = _take(section, "budget", int, where, None)
    if "n_envs" in section:
        out["n_envs"] = _take(section, "n_envs", int, where, None)
    if "cmd_min" in section or "cmd_max" in section:
        lo = _take(section, "cmd_min", float, where, 0.0)
        hi = _take(section, "cmd_max", float, where, lo)
        out["cmd_range"] = (lo, hi)
    if "extent" in section:
        out["extent"] = _take(section, "extent", float, where, None)
    if "hidden" in section:
        hidden = section.pop("hidden")
        if (not isinstance(hidden, list) or not hidden
                or not all(isinstance(h, int) for h in hidden)):
            raise ConfigError(f"[{where}].hidden: expected list of ints")
        out["hidden"] = tuple(hidden)
    if "convergence" in section:
        flag = section.pop("convergence")
        if not isinstance(flag, bool):
            raise ConfigError(f"[{where}].convergence: expected bool")
        out["convergence"] = ConvergenceRule() if flag else None
    if "csv_every" in section:
        out["csv_every"] = _take(section, "csv_every", int, where, 1)
    _reject_leftovers(section, where)
    return out


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"TOML parse error: {e}") from e
    cfg = RunConfig()

    run = data.pop("run", {})
    method = _take(run, "method", str, "run", cfg.method)
    if method not in METHODS:
        raise ConfigError(f"[run].method: {method!r} not one of {METHODS}")
    stages = run.pop("stages", list(cfg.stages))
    if (not isinstance(stages, list) or not stages
            or not all(isinstance(s, int) for s in stages)):
        raise ConfigError("[run].stages: expected nonempty list of ints")
    if any(s not in (1, 2, 3) for s in stages):
        raise ConfigError("[run].stages: stages must be in 1..3")
    if list(stages) != list(range(stages[0], stages[0] + len(stages))):
        raise ConfigError("[run].stages: stages must be consecutive")
    seeds = run.pop("seeds", list(cfg.seeds))
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) for s in seeds)):
        raise ConfigError("[run].seeds: expected nonempty list of ints")
    out_dir = _take(run, "out_dir", str, "run", cfg.out_dir)
    csv_every = _take(run, "csv_every", int, "run", cfg.csv_every)
    if csv_every < 1:
        raise ConfigError("[run].csv_every: must be >= 1")
    checkpoint = _take(run, "checkpoint", str, "run", None)
    eval_episodes = _take(run, "eval_episodes", int, "run", cfg.eval_episodes)
    methods = run.pop("bench_methods", list(cfg.bench_methods))
    if not isinstance(methods, list) or not all(
            isinstance(m, str) for m in methods):
        raise ConfigError("[run].bench_methods: expected list of strings")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(
                f"[run].bench_methods: {m!r} not one of {METHODS}")
    _reject_leftovers(run, "run")

    if method in PRETRAINED_METHODS and checkpoint is None:
        raise ConfigError(f"[run].checkpoint: required for method {method}")
    if method in DENSE_METHODS and stages[-1] != 3:
        raise ConfigError(
            f"[run].stages: method {method} needs the goal task (stage 3)")
    if method == "JumpER" and stages[0] > 1 and checkpoint is None:
        raise ConfigError(
            "[run].checkpoint: required to start JumpER past stage 1")

    schedule = data.pop("schedule", {})
    sched = _dataclass_section(schedule, cfg.schedule, "schedule",
                               int_fields=("n0", "m", "n_patches",
                                           "patch_len"))

    ppo = _dataclass_section(data.pop("ppo", {}), cfg.ppo, "ppo",
                             int_fields=("epochs", "minibatches", "n_envs"))

    env = data.pop("env", {})
    n_envs = _take(env, "n_envs", int, "env", cfg.n_envs)
    extent = _take(env, "extent", float, "env", cfg.extent)
    resolution = _take(env, "resolution", float, "env", cfg.resolution)
    cmd_lo = _take(env, "cmd_min", float, "env", cfg.cmd_range[0])
    cmd_hi = _take(env, "cmd_max", float, "env", cfg.cmd_range[1])
    hidden = env.pop("hidden", list(cfg.hidden))
    if (not isinstance(hidden, list) or not hidden
            or not all(isinstance(h, int) for h in hidden)):
        raise ConfigError("[env].hidden: expected list of ints")
    convergence = env.pop("convergence", cfg.convergence)
    if not isinstance(convergence, bool):
        raise ConfigError("[env].convergence: expected bool")
    _reject_leftovers(env, "env")

    model = _dataclass_section(
        data.pop("model", {}), cfg.model, "model",
        int_fields=("control_decimation", "horizon"),
        skip=("joint_limits", "q_default", "g_target", "assist_spring"))

    overrides = {}
    for s in (1, 2, 3):
        name = f"stage{s}"
        if name in data:
            overrides[s] = _parse_stage_override(data.pop(name), name)
    _reject_leftovers(data, "config")

    return RunConfig(method=method, stages=tuple(stages), seeds=tuple(seeds),
                     out_dir=out_dir, csv_every=csv_every,
                     checkpoint=checkpoint, eval_episodes=eval_episodes,
                     bench_methods=tuple(methods), schedule=sched, ppo=ppo,
                     model=model, n_envs=n_envs, extent=extent,
                     resolution=resolution, cmd_range=(cmd_lo, cmd_hi),
                     hidden=tuple(hidden), convergence=convergence,
                     stage_overrides=overrides)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def build_stage_config(run: RunConfig, stage: int, *,
                       n0_zero: bool = False, warm_start: bool = False,
                       dense: bool = False) -> StageConfig:
    """StageConfig for one stage of a run, with method-specific switches."""
    preset = {1: stage1_config, 2: stage2_config, 3: stage3_config}[stage]
    sched = dataclasses.replace(run.schedule, n0=0) if n0_zero \
        else run.schedule
    over = {
        "schedule": sched,
        "ppo": run.ppo,
        "model": model_without_assist(run.model),
        "n_envs": run.n_envs,
        "extent": run.extent,
        "resolution": run.resolution,
        "hidden": run.hidden,
        "convergence": ConvergenceRule() if run.convergence else None,
        "csv_every": run.csv_every,
        "warm_start": warm_start,
        "dense_reach": dense,
    }
    if stage == 1:
        over["cmd_range"] = run.cmd_range
    over.update(run.stage_overrides.get(stage, {}))
    return preset(**over)


def model_without_assist(model: HopperModel) -> HopperModel:
    # the learner always trains bare; assistance enters via per-step masks
    if not model.assist_spring:
        return model
    return dataclasses.replace(model, assist_spring=False)
