"""Command line entry points: train, eval, bench, terrain render.

Exit codes: 0 success, 2 configuration error (bad config key, missing
checkpoint, malformed arguments), 3 runtime failure. `JUMPER_THREADS` caps
the bench worker pool; training itself is single-process.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import nets
from .config import (DENSE_METHODS, PRETRAINED_METHODS, ConfigError,
                     RunConfig, build_stage_config, load_config)
from .curriculum import EvalTask, evaluate, render_eval_csv
from .hopper import HopperModel, ObsSpec, TermReason
from .jumpstart import GuidePolicy, run_stage
from .terrain import TerrainKind, generate, render_profile

TASK_KINDS = {
    "balance": (TerrainKind.FLAT,),
    "rough": (TerrainKind.ROUGH_GROUND, TerrainKind.SLOPE_STAIRS),
    "gaps": (TerrainKind.WIDE_GAP, TerrainKind.STEPPING_STONE),
}
STAGE_TASK = {1: "balance", 2: "rough", 3: "gaps"}
TASK_CMD = {"balance": (0.0, 0.0), "rough": (0.4, 0.4), "gaps": (0.0, 0.0)}


def _read_checkpoint(path: str) -> bytes:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"checkpoint not found: {p}")
    return p.read_bytes()


def _initial_guide(run: RunConfig, first_stage: int) -> GuidePolicy:
    if first_stage == 1:
        return GuidePolicy.scripted()
    guide = GuidePolicy.from_checkpoint(_read_checkpoint(run.checkpoint))
    if guide.stage_index != first_stage - 1:
        raise ConfigError(
            f"[run].checkpoint: trained at stage {guide.stage_index}, "
            f"cannot guide stage {first_stage}")
    return guide


def run_method(run: RunConfig, method: str, seed: int, out_dir: Path):
    """Train one method for one seed; returns (params, spec, reports)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    if method == "JumpER":
        guide = _initial_guide(run, run.stages[0])
        params = None
        cfg = None
        for stage in run.stages:
            cfg = build_stage_config(run, stage)
            params, report = run_stage(cfg, guide, seed + 10000 * stage,
                                       str(out_dir))
            reports.append(report)
            guide = GuidePolicy.from_checkpoint(report.best_checkpoint)
        return params, cfg.spec, reports

    stage = run.stages[-1]
    warm = method in PRETRAINED_METHODS
    dense = method in DENSE_METHODS
    cfg = build_stage_config(run, stage, n0_zero=True, warm_start=warm,
                             dense=dense)
    if warm:
        prior = GuidePolicy.from_checkpoint(_read_checkpoint(run.checkpoint))
        if prior.spec.total_dim != cfg.spec.total_dim:
            raise ConfigError(
                f"[run].checkpoint: observation size {prior.spec.total_dim} "
                f"does not match the stage-{stage} policy "
                f"({cfg.spec.total_dim})")
        prior = dataclasses.replace(prior, stage_index=stage - 1)
    else:
        prior = GuidePolicy.scripted(stage_index=stage - 1)
    params, report = run_stage(cfg, prior, seed + 10000 * stage,
                               str(out_dir))
    reports.append(report)
    return params, cfg.spec, reports


def _eval_task(run: RunConfig, stage: int) -> EvalTask:
    task = STAGE_TASK[stage]
    levels = (0,) if task == "balance" else tuple(range(10))
    return EvalTask(kinds=TASK_KINDS[task], levels=levels, extent=run.extent,
                    resolution=run.resolution, cmd_range=TASK_CMD[task],
                    model=run.model)


def _task_success(report_episodes: list, stage: int) -> float:
    ok = (TermReason.OUT_OF_BOUNDS,) if stage == 3 \
        else (TermReason.TIMEOUT, TermReason.OUT_OF_BOUNDS)
    flags = [1.0 if ep["reason"] in ok else 0.0 for ep in report_episodes]
    return float(np.mean(flags))


def cmd_train(args) -> int:
    run = load_config(args.config)
    if args.out_dir:
        run.out_dir = args.out_dir
    for seed in run.seeds:
        out = Path(run.out_dir) / f"seed{seed}"
        _, _, reports = run_method(run, run.method, seed, out)
        for rep in reports:
            print(f"{run.method} seed {seed} stage {rep.stage_index}: "
                  f"{rep.iterations} iterations, success "
                  f"{rep.success_rate:.3f}, level {rep.final_level:.2f}")
    return 0


def cmd_eval(args) -> int:
    data = _read_checkpoint(args.checkpoint)
    params, _, header, _ = nets.load_checkpoint(data)
    spec = ObsSpec.from_header(header)
    if args.task not in TASK_KINDS:
        raise ConfigError(f"--task must be one of {sorted(TASK_KINDS)}")
    levels = (args.level,) if args.level is not None else (0,)
    if args.level is not None and not 0 <= args.level <= 9:
        raise ConfigError("--level must be in 0..9")
    task = EvalTask(kinds=TASK_KINDS[args.task], levels=levels,
                    cmd_range=TASK_CMD[args.task], model=HopperModel())
    report = evaluate(params, spec, task, args.episodes, args.seed)
    csv = render_eval_csv(report)
    out = Path(args.out) if args.out else \
        Path(args.checkpoint).with_suffix(".eval.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv)
    print(f"wrote {out}")
    print(f"r_air {report.r_air:.3f}  p_base {report.p_base:.3f}  "
          f"p_mono {report.p_mono:.3f}  t_vel {report.t_vel:.3f}  "
          f"t_reach {report.t_reach:.3f}  level {report.mean_level:.2f}  "
          f"success {report.success_rate:.3f}")
    return 0


def _bench_workers() -> int:
    raw = os.environ.get("JUMPER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"JUMPER_THREADS: expected integer, got {raw!r}")
    if n < 1:
        raise ConfigError("JUMPER_THREADS: must be >= 1")
    return n


def cmd_bench(args) -> int:
    run = load_config(args.config)
    if args.out_dir:
        run.out_dir = args.out_dir
    stage = run.stages[-1]
    task_name = STAGE_TASK[stage]
    jobs = [(m, s) for m in run.bench_methods for s in run.seeds]

    def one(job):
        method, seed = job
        out = Path(run.out_dir) / method / f"seed{seed}"
        job_run = dataclasses.replace(run, method=method)
        if method in PRETRAINED_METHODS and job_run.checkpoint is None:
            raise ConfigError(
                f"[run].checkpoint: required for method {method}")
        params, spec, reports = run_method(job_run, method, seed, out)
        rep = evaluate(params, spec, _eval_task(run, stage),
                       run.eval_episodes, seed)
        (out / "eval.csv").write_text(render_eval_csv(rep))
        return {
            "method": method, "seed": seed,
            "task_success": _task_success(rep.episodes, stage),
            "goal_success": rep.success_rate,
            "r_air": rep.r_air, "p_base": rep.p_base, "p_mono": rep.p_mono,
            "t_vel": rep.t_vel, "t_reach": rep.t_reach,
            "train_level": reports[-1].final_level,
            "train_success": reports[-1].success_rate,
        }

    workers = _bench_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    metrics = ("task_success", "goal_success", "r_air", "p_base", "p_mono",
               "t_vel", "t_reach", "train_level", "train_success")
    header = ["method", "task", "n_seeds"]
    for m in metrics:
        header += [f"{m}_mean", f"{m}_std"]
    lines = ["# jumper-csv v1", ",".join(header)]
    table = []
    for method in run.bench_methods:
        rows = [r for r in results if r["method"] == method]
        entry = [method, task_name, str(len(rows))]
        shown = [method, task_name]
        for m in metrics:
            vals = np.array([r[m] for r in rows], dtype=np.float64)
            entry += [format(vals.mean(), ".10g"), format(vals.std(), ".10g")]
            shown.append(f"{vals.mean():.3f}±{vals.std():.3f}")
        lines.append(",".join(entry))
        table.append(shown)
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text("\n".join(lines) + "\n")

    cols = ["method", "task"] + list(metrics)
    widths = [max(len(c), max((len(row[i]) for row in table), default=0))
              for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for row in table:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    print(f"wrote {out / 'bench.csv'}")
    return 0


def cmd_terrain_render(args) -> int:
    names = {k.name.lower(): k for k in TerrainKind}
    if args.kind not in names:
        raise ConfigError(f"--kind must be one of {sorted(names)}")
    if not 0 <= args.level <= 9:
        raise ConfigError("--level must be in 0..9")
    hf = generate(names[args.kind], args.level, args.seed,
                  extent=args.extent, resolution=args.resolution)
    text = render_profile(hf)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumper",
                                description="Jump-started hopper training")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train per the config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--task", default="balance")
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--level", type=int, default=None)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="method comparison table")
    b.add_argument("--config", required=True)
    b.add_argument("--out-dir", default=None)
    b.set_defaults(fn=cmd_bench)

    tr = sub.add_parser("terrain", help="terrain tools")
    trs = tr.add_subparsers(dest="terrain_command", required=True)
    r = trs.add_parser("render", help="print a heightfield profile")
    r.add_argument("--kind", required=True)
    r.add_argument("--level", type=int, default=0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--extent", type=float, default=20.0)
    r.add_argument("--resolution", type=float, default=0.05)
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_terrain_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
