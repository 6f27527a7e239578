"""Command-line entry point: ``anchorbridge <subcommand> --config run.json ...``.

Default artifact paths live under the config's output directory::

    dataset_<kind>.txt              generate-data
    anchors_<kind>.txt              fit-anchors
    <variant>_s<seed>.ckpt          train (binary checkpoint)
    <variant>_s<seed>_log.csv       train (per-epoch log)
    report_<variant>_s<seed>.csv    eval (plus figures/ and optional traces/)

Exit codes: 0 success, 2 bad input or mismatched artifacts, 3 an invariant
violation while planning or evaluating (non-finite state, planner error).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import VARIANTS, ConfigError, RunConfig
from .io import (
    ArtifactError,
    read_anchors,
    read_checkpoint,
    read_dataset,
    read_episode_trace,
    read_trace,
    report_text,
    write_anchors,
    write_checkpoint,
    write_dataset,
    write_episode_trace,
    write_trace,
    write_train_log,
)

log = logging.getLogger("anchorbridge")

EXIT_INPUT = 2
EXIT_INVARIANT = 3


class InvariantViolation(RuntimeError):
    pass


def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _default(cfg: RunConfig, arg, name: str) -> Path:
    return Path(arg) if arg else _out_dir(cfg) / name


def _existing(path: Path, what: str) -> Path:
    if not path.exists():
        raise ArtifactError(f"{what} not found: {path}")
    return path


def _check_hash(meta: dict, cfg: RunConfig, what: str):
    if meta.get("config_hash") != cfg.hash:
        log.warning("%s was produced under config %s, current config is %s", what, meta.get("config_hash"), cfg.hash)


def _load_anchors(cfg: RunConfig, arg):
    anchors, meta = read_anchors(_existing(_default(cfg, arg, f"anchors_{cfg.kind}.txt"), "anchor file"))
    if anchors.kind != cfg.kind:
        raise ArtifactError(f"anchor file holds {anchors.kind} anchors but the config asks for {cfg.kind}")
    _check_hash(meta, cfg, "anchor file")
    return anchors


def _load_checkpoint(cfg: RunConfig, path, anchors):
    ckpt = read_checkpoint(_existing(Path(path), "checkpoint"))
    kind = ckpt.meta["kind"]
    if kind != cfg.kind or (anchors is not None and anchors.kind != kind):
        raise ArtifactError(
            f"representation mismatch: checkpoint {kind}, config {cfg.kind}"
            + (f", anchors {anchors.kind}" if anchors is not None else "")
        )
    if ckpt.phi is not None and anchors is not None and ckpt.phi.n_anchor != len(anchors):
        raise ArtifactError(f"classifier has {ckpt.phi.n_anchor} outputs but the anchor file has {len(anchors)} anchors")
    _check_hash(ckpt.meta, cfg, "checkpoint")
    return ckpt


def _planner(cfg: RunConfig, ckpt, anchors, seed: int):
    from .planners import LearnedPlanner

    variant = ckpt.meta["variant"]
    return LearnedPlanner(variant, ckpt.theta, ckpt.phi, anchors, cfg.sampler_config(variant), cfg.schedule, seed=seed)


# -- subcommands ------------------------------------------------------------------


def cmd_generate_data(cfg: RunConfig, out=None) -> Path:
    from .data import generate

    def progress(kind, seed, n_frames, n_kept):
        log.info("%s seed %d: %d frames, %d kept", kind, seed, n_frames, n_kept)

    ds = generate(cfg.kind, cfg.data.seeds, cfg.data.scenario_kinds, cfg.data.noise, cfg.data.filter_seed, cfg.points, progress)
    path = _default(cfg, out, f"dataset_{cfg.kind}.txt")
    write_dataset(path, ds, cfg.hash, cfg.data.filter_seed)
    log.info("wrote %d samples %s to %s", len(ds), ds.counts(), path)
    return path


def cmd_fit_anchors(cfg: RunConfig, dataset=None, out=None) -> Path:
    from .geom import Trajectory, fit_anchors

    ds, meta = read_dataset(_existing(_default(cfg, dataset, f"dataset_{cfg.kind}.txt"), "dataset"))
    if ds.kind != cfg.kind:
        raise ArtifactError(f"dataset holds {ds.kind} trajectories but the config asks for {cfg.kind}")
    _check_hash(meta, cfg, "dataset")
    anchors = fit_anchors([Trajectory.from_vector(ds.kind, v) for v in ds.x0], cfg.n_anchor, cfg.anchor_seed)
    if not anchors.inertia >= 0.0:
        raise InvariantViolation(f"k-means inertia {anchors.inertia} is not a non-negative number")
    path = _default(cfg, out, f"anchors_{cfg.kind}.txt")
    write_anchors(path, anchors, cfg.hash, cfg.anchor_seed)
    log.info("fitted %d anchors, inertia %.6g, wrote %s", len(anchors), anchors.inertia, path)
    return path


def cmd_train(cfg: RunConfig, variant: str, dataset=None, anchors=None, out=None) -> Path:
    from .training import TrainingSet, TrainingDiverged, train

    ds, meta = read_dataset(_existing(_default(cfg, dataset, f"dataset_{cfg.kind}.txt"), "dataset"))
    if ds.kind != cfg.kind:
        raise ArtifactError(f"dataset holds {ds.kind} trajectories but the config asks for {cfg.kind}")
    _check_hash(meta, cfg, "dataset")
    anchor_set = _load_anchors(cfg, anchors)
    data = TrainingSet.label(ds.kind, ds.x0, ds.z, anchor_set)
    tc = cfg.train_config(variant)
    try:
        res = train(data, anchor_set if variant != "full" else None, tc, cfg.schedule)
    except TrainingDiverged as exc:
        raise InvariantViolation(str(exc)) from exc
    path = _default(cfg, out, f"{variant}_s{cfg.seed}.ckpt")
    write_checkpoint(path, res.theta, res.phi, cfg.hash, cfg.seed, extra={"epochs": tc.epochs})
    write_train_log(path.with_name(path.stem + "_log.csv"), res.log, cfg.hash, cfg.seed, variant)
    log.info("trained %s for %d epochs, final diffusion loss %.5f, wrote %s", variant, tc.epochs, res.log[-1].diffusion_loss, path)
    return path


def cmd_plan(cfg: RunConfig, checkpoint, anchors=None, scenario="lane-fork", scenario_seed=0, ticks=0, trace_out=None):
    """Plan once at the scenario state reached after ``ticks`` expert-driven ticks."""
    from .model import as_context_matrix
    from .sampling import SamplingError, Trace, full_diffusion_batch, plan_batch, truncated_batch
    from .world import ActivePlan, World, expert_policy, make_scenario, track
    from .world.sim import DT

    anchor_set = _load_anchors(cfg, anchors)
    ckpt = _load_checkpoint(cfg, checkpoint, anchor_set)
    variant = ckpt.meta["variant"]
    world = World.reset(make_scenario(scenario, scenario_seed))
    active = None
    for _ in range(int(ticks)):
        if world.done:
            break
        if world.tick % 10 == 0:
            active = ActivePlan.make(expert_policy(world, cfg.kind)[0], world.ego, world.tick)
        world.step(*track(active.current(world.ego, world.tick, DT), world.ego))
    Z = as_context_matrix([world.context()])
    trace = Trace()
    sampler = cfg.sampler_config(variant)
    rng = np.random.default_rng([cfg.seed, scenario_seed, int(ticks)])
    try:
        if variant == "bridge":
            trajs, idx = plan_batch(ckpt.theta, ckpt.phi, Z, anchor_set, sampler, cfg.schedule, trace)
        elif variant == "truncated":
            trajs, idx = truncated_batch(ckpt.theta, ckpt.phi, Z, anchor_set, sampler, rng, cfg.schedule, trace)
        else:
            trajs, idx = full_diffusion_batch(ckpt.theta, Z, sampler, rng, cfg.schedule, trace), None
    except SamplingError as exc:
        raise InvariantViolation(str(exc)) from exc
    traj = trajs[0]
    if not np.all(np.isfinite(traj.to_vector())):
        raise InvariantViolation("non-finite plan")
    dec = ckpt.theta.traj_scale.decode
    anchor = None if idx is None else anchor_set.vector(int(idx[0]))
    if trace_out:
        write_trace(trace_out, cfg.kind, variant, anchor, np.array(trace.times),
                    dec(np.vstack([s[0] for s in trace.states])), cfg.hash, cfg.seed,
                    extra={"scenario": scenario, "scenario_seed": scenario_seed, "tick": world.tick,
                           "anchor_index": "" if idx is None else int(idx[0])})
        log.info("wrote denoising trace to %s", trace_out)
    return traj, (None if idx is None else int(idx[0]))


def cmd_eval(cfg: RunConfig, checkpoint, anchors=None, out=None, figures=True, traces_dir=None):
    from .plotting import report_figures
    from .world import aggregate, rollout_many

    anchor_set = _load_anchors(cfg, anchors)
    ckpt = _load_checkpoint(cfg, checkpoint, anchor_set)
    variant = ckpt.meta["variant"]
    scenarios = cfg.suite.scenarios()
    planner = _planner(cfg, ckpt, anchor_set, cfg.seed)
    if traces_dir:
        results, traces = rollout_many(scenarios, planner, traces=True)
    else:
        results, traces = rollout_many(scenarios, planner), None
    report = aggregate(results)
    expected = len(cfg.suite.kinds) * len(cfg.suite.seeds)
    if len(report.episodes) != expected:
        raise InvariantViolation(f"report has {len(report.episodes)} episodes, suite defines {expected}")
    path = _default(cfg, out, f"report_{variant}_s{cfg.seed}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_text(report, cfg.hash, cfg.seed, extra={"variant": variant, "kind": cfg.kind}))
    log.info("%s: SR %.2f%%  DS %.2f  -> %s", variant, report.sr, report.mean_ds, path)
    if figures:
        report_figures(report, path.parent / "figures" / path.stem, title=f"{variant} ({cfg.kind})")
    if traces_dir:
        tdir = Path(traces_dir)
        tdir.mkdir(parents=True, exist_ok=True)
        for sc, tr in zip(scenarios, traces):
            write_episode_trace(tdir / f"{sc.kind}_{sc.seed}.csv", sc.kind, sc.seed, tr, cfg.hash, cfg.seed)
    errors = [r for r in report.episodes if r.reason == "planner-error"]
    if errors:
        raise InvariantViolation(f"{len(errors)} episode(s) ended in planner errors, first: {errors[0].diagnostic}")
    return path, report


def cmd_render(trace, out, every: int = 10) -> list[Path]:
    from .plotting import denoise_frames, episode_frames, write_frames
    from .world import make_scenario

    trace = _existing(Path(trace), "trace")
    first = trace.read_text().split("\n", 1)[0]
    if first.startswith("# anchorbridge-episode"):
        rows, meta = read_episode_trace(trace)
        frames = episode_frames(make_scenario(meta["scenario_kind"], int(meta["scenario_seed"])), rows, every=every)
    else:
        frames = denoise_frames(read_trace(trace))
    paths = write_frames(frames, out)
    log.info("wrote %d frames to %s", len(paths), out)
    return paths


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anchorbridge", description="Anchor-guided diffusion-bridge trajectory planning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="run config (JSON)")
        sp.add_argument("--seed", type=int, default=None, help="override the config's training/sampling seed")
        sp.add_argument("--kind", choices=("geometric", "temporal"), default=None, help="override the representation kind")
        return sp

    sp = with_config(sub.add_parser("generate-data", help="noisy expert rollouts -> filtered dataset file"))
    sp.add_argument("--out", help="dataset path")

    sp = with_config(sub.add_parser("fit-anchors", help="k-means anchors from a dataset"))
    sp.add_argument("--dataset")
    sp.add_argument("--out", help="anchor file path")

    sp = with_config(sub.add_parser("train", help="train one variant and write a checkpoint"))
    sp.add_argument("--variant", choices=VARIANTS, required=True)
    sp.add_argument("--dataset")
    sp.add_argument("--anchors")
    sp.add_argument("--out", help="checkpoint path")

    sp = with_config(sub.add_parser("plan", help="plan once in a scenario and optionally dump the denoising trace"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--anchors")
    sp.add_argument("--scenario", default="lane-fork")
    sp.add_argument("--scenario-seed", type=int, default=0)
    sp.add_argument("--ticks", type=int, default=0, help="expert-driven ticks before planning")
    sp.add_argument("--trace", help="write the denoising trace CSV here")

    sp = with_config(sub.add_parser("eval", help="closed-loop evaluation on the config's suite"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--anchors")
    sp.add_argument("--out", help="report CSV path")
    sp.add_argument("--no-figures", action="store_true")
    sp.add_argument("--traces", help="directory for per-episode trace CSVs")

    sp = sub.add_parser("render", help="SVG frames from a denoising or episode trace")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--every", type=int, default=10, help="tick stride for episode traces")
    return p


def _config(args) -> RunConfig:
    from dataclasses import replace

    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.kind is not None:
        cfg = replace(cfg, kind=args.kind)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "render":
            cmd_render(args.trace, args.out, args.every)
            return 0
        cfg = _config(args)
        if args.command == "generate-data":
            cmd_generate_data(cfg, args.out)
        elif args.command == "fit-anchors":
            cmd_fit_anchors(cfg, args.dataset, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.variant, args.dataset, args.anchors, args.out)
        elif args.command == "plan":
            traj, idx = cmd_plan(cfg, args.checkpoint, args.anchors, args.scenario, args.scenario_seed, args.ticks, args.trace)
            if idx is not None:
                print(f"anchor {idx}")
            if traj.speed is not None:
                print(f"speed {traj.speed:.4f}")
            for x, y in traj.points:
                print(f"{x:.4f} {y:.4f}")
        elif args.command == "eval":
            _, report = cmd_eval(cfg, args.checkpoint, args.anchors, args.out, not args.no_figures, args.traces)
            print(f"SR {report.sr:.2f}  DS {report.mean_ds:.2f}  efficiency {report.efficiency:.2f}  comfort {report.comfort:.2f}")
    except InvariantViolation as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except (ConfigError, ArtifactError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
