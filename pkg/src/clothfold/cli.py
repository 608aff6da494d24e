"""Command-line front end: identify, train, eval, replay, compare.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run is
reproducible: the configuration file plus the seed fully determine the
outputs (pool files, checkpoints, metrics, reports).
"""

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .cloth import NumericError, ParameterError
from .config import RunConfig, load_run_config
from .env import EpisodeError, FoldEnv, rollout_actions
from .randomize import (REFERENCE_CLOTH, ExpertError, IdentificationError,
                        identify_top_m, load_demonstration, load_pool,
                        save_pool)
from .render import (ConfigurationError, ProjectionError, VisualConfig,
                     default_camera, render, write_pgm)
from .sac import (CheckpointError, SACAgent, TrainingError, build_demo_store,
                  load_checkpoint, read_checkpoint, save_checkpoint,
                  train_loop)
from .stats import EvalReport, EvalRow, load_report, mann_whitney_u, save_report
from .trajlog import TrajectoryError, load_trajectory, log_episode, save_trajectory

METRIC_COLUMNS = ("epoch", "success_rate", "mean_d_sum", "updates",
                  "critic1_loss", "critic2_loss", "actor_loss", "aux_loss",
                  "alpha_loss", "entropy")
RUNTIME_ERRORS = (ParameterError, NumericError, TrainingError, CheckpointError,
                  TrajectoryError, ExpertError, IdentificationError,
                  ConfigurationError, ProjectionError, EpisodeError, OSError)


class UsageError(Exception):
    """Bad command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="clothfold",
                     description="Dynamic cloth folding: simulation, "
                                 "training, and evaluation tools.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("identify", help="score fabric candidates against "
                                        "demonstrations and write a pool file")
    common(p)
    p.add_argument("--out", help="pool file to write (default: paths.pool)")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("train", help="train a policy and write checkpoints "
                                     "and a metrics CSV")
    common(p)
    p.add_argument("--mode", choices=("ours", "ours-minus", "fixed"),
                   help="override the configured training mode")
    p.add_argument("--checkpoint", help="resume from this checkpoint file")
    p.add_argument("--out", help="output directory (default: paths.out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or replay a "
                                    "fixed trajectory; write an eval report")
    common(p)
    p.add_argument("--checkpoint", help="policy checkpoint to evaluate")
    p.add_argument("--trajectory", help="demonstration file to replay "
                                        "open-loop instead of a policy")
    p.add_argument("--episodes", type=int, default=None,
                   help="episodes per fabric (default: schedule.eval_episodes)")
    p.add_argument("--out", help="report file to write")
    p.add_argument("--log-dir", help="also write per-episode trajectory logs "
                                     "here (policy mode only)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-render a trajectory log to PGM "
                                      "frames and print its d_sum trace")
    p.add_argument("log", help="trajectory log file")
    p.add_argument("--out", default="frames", help="frame output directory")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compare", help="Mann-Whitney U test between the "
                                       "same column of two eval reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--metric", default="d_sum",
                   choices=("d_sum", "d0", "d1", "success", "steps"))
    p.set_defaults(func=cmd_compare)
    return parser


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if getattr(args, "mode", None):
        config = dataclasses.replace(config, mode=args.mode)
    return config


def _load_demos(config: RunConfig) -> list:
    if not config.demo_paths:
        raise ParameterError("no demonstration files configured (paths.demos)")
    return [load_demonstration(path) for path in config.demo_paths]


def cmd_identify(args) -> int:
    config = _load_config(args)
    demos = _load_demos(config)
    out = args.out or config.pool_path
    if out is None:
        raise ParameterError("no pool output path (give --out or paths.pool)")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    include = (REFERENCE_CLOTH,) if config.include_reference else ()
    pool = identify_top_m(rng, config.ranges, demos,
                          n_candidates=config.identify_candidates,
                          m=config.identify_m, include=include,
                          config=config.env, seed_note=config.seed)
    save_pool(pool, out)
    print(f"pool: {len(pool)} fabrics, scores "
          f"[{pool.scores[-1]:.4f}, {pool.scores[0]:.4f}] -> {out}")
    return 0


def _training_fabrics(config: RunConfig) -> list:
    """The fabric set for the configured mode.

    `ours` trains on the whole identified pool and requires it; the
    single-cloth baselines take the pool's best entry when the file
    exists and fall back to the reference cloth otherwise.
    """
    have_pool = config.pool_path is not None and Path(config.pool_path).exists()
    if have_pool:
        entries = list(load_pool(config.pool_path).entries)
        return entries if config.mode == "ours" else entries[:1]
    if config.mode == "ours":
        raise ParameterError("mode 'ours' needs an existing fabric pool "
                             "(paths.pool)")
    return [REFERENCE_CLOTH]


def _append_metrics(path: Path, row: dict, write_header: bool) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        if write_header:
            fh.write(",".join(METRIC_COLUMNS) + "\n")
        fh.write(",".join(
            str(row[c]) if c in ("epoch", "updates") else repr(row[c])
            for c in METRIC_COLUMNS) + "\n")


def cmd_train(args) -> int:
    config = _load_config(args)
    visual = config.mode in ("ours", "ours-minus")
    fabrics = _training_fabrics(config)
    env = FoldEnv(fabrics, config=config.env, render_images=visual,
                  seed=config.seed)
    agent = SACAgent(config.mode, config.learner,
                     image_size=config.env.image_size, seed=config.seed)
    if config.mode == "fixed":
        assert not agent.visual and not env.render_images

    demo_store = None
    if config.demo_paths:
        demo_env = FoldEnv([REFERENCE_CLOTH], config=config.env,
                           render_images=visual, seed=config.seed + 7919)
        demo_store = build_demo_store(demo_env, _load_demos(config),
                                      config.learner.demo_noise)

    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(args.checkpoint) if args.checkpoint \
        else out_dir / "checkpoint.ckpt"
    start_epoch = 0
    if args.checkpoint or ckpt_path.exists():
        start_epoch = load_checkpoint(ckpt_path, agent) + 1
        print(f"resuming from {ckpt_path} at epoch {start_epoch}")
    if start_epoch >= config.schedule.epochs:
        print("nothing to do: checkpoint already covers the schedule")
        return 0

    metrics_path = out_dir / "metrics.csv"
    save_path = out_dir / "checkpoint.ckpt"
    need_header = start_epoch == 0 or not metrics_path.exists()
    if start_epoch == 0 and metrics_path.exists():
        metrics_path.unlink()

    def on_epoch(epoch: int, row: dict) -> None:
        nonlocal need_header
        _append_metrics(metrics_path, row, need_header)
        need_header = False
        save_checkpoint(agent, save_path, epoch=epoch)
        print(f"epoch {epoch}: success_rate={row['success_rate']:.3f} "
              f"mean_d_sum={row['mean_d_sum']:.4f} updates={row['updates']}")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    train_loop(env, agent, config.schedule, rng, demo_store=demo_store,
               start_epoch=start_epoch, on_epoch=on_epoch)
    print(f"checkpoint -> {save_path}")
    print(f"metrics -> {metrics_path}")
    return 0


def _eval_fabrics(config: RunConfig) -> list:
    if config.pool_path is not None and Path(config.pool_path).exists():
        return list(load_pool(config.pool_path).entries)
    return [REFERENCE_CLOTH]


def cmd_eval(args) -> int:
    config = _load_config(args)
    if (args.checkpoint is None) == (args.trajectory is None):
        raise UsageError("give exactly one of --checkpoint or --trajectory")
    episodes = args.episodes if args.episodes is not None \
        else config.schedule.eval_episodes
    if episodes < 0:
        raise ParameterError(f"episodes must be >= 0, got {episodes}")
    fabrics = _eval_fabrics(config)

    rows = []
    if args.trajectory is not None:
        if args.log_dir is not None:
            raise UsageError("--log-dir applies to policy evaluation only")
        demo = load_demonstration(args.trajectory)
        for index, fabric in enumerate(fabrics):
            env = FoldEnv([fabric], config=config.env, render_images=False,
                          seed=config.seed + index)
            for _ in range(episodes):
                info = rollout_actions(env, demo.actions, goal=demo.goal)[-1].info
                rows.append(EvalRow(fabric=index, d0=info["d0"], d1=info["d1"],
                                    d_sum=info["d_sum"],
                                    success=bool(info["success"]),
                                    steps=int(info["step"])))
    else:
        mode, _, _ = read_checkpoint(args.checkpoint)
        agent = SACAgent(mode, config.learner,
                         image_size=config.env.image_size, seed=config.seed)
        load_checkpoint(args.checkpoint, agent)
        log_dir = None
        if args.log_dir is not None:
            log_dir = Path(args.log_dir)
            log_dir.mkdir(parents=True, exist_ok=True)

        def act(obs):
            return agent.act(obs, deterministic=True)[0]

        for index, fabric in enumerate(fabrics):
            env = FoldEnv([fabric], config=config.env,
                          render_images=agent.visual, seed=config.seed + index)
            for episode in range(episodes):
                log = log_episode(env, act, seed=config.seed + index)
                final = log.records[-1]
                success = final.d0 <= log.delta and final.d1 <= log.delta
                rows.append(EvalRow(fabric=index, d0=final.d0, d1=final.d1,
                                    d_sum=final.d0 + final.d1, success=success,
                                    steps=final.step))
                if log_dir is not None:
                    save_trajectory(
                        log,
                        log_dir / f"fabric{index:02d}_ep{episode:03d}.traj")

    report = EvalReport(tuple(rows))
    aggregates = report.aggregates()
    rate = aggregates["success_rate"]
    mean = aggregates["mean_d_sum"]
    print(f"episodes: {len(rows)}")
    print(f"success_rate: {'undefined' if rate is None else f'{rate:.3f}'}")
    print(f"mean_d_sum: {'undefined' if mean is None else f'{mean:.4f}'}")
    if args.out is not None:
        save_report(report, args.out)
        print(f"report -> {args.out}")
    return 0


def _marker_triangles(points: np.ndarray, size: float) -> tuple:
    """One small triangle per point, for rendering logged states."""
    verts, tris = [], []
    for point in np.asarray(points, dtype=float):
        base = len(verts)
        verts.extend([point + np.array([-size, -size, 0.0]),
                      point + np.array([size, -size, 0.0]),
                      point + np.array([0.0, size, 0.0])])
        tris.append((base, base + 1, base + 2))
    return np.array(verts), np.array(tris, dtype=int)


def cmd_replay(args) -> int:
    log = load_trajectory(args.log)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    center = log.records[0].tracked.mean(axis=0) if log.records \
        else log.goal[:3]
    cam = default_camera(center)
    vis = VisualConfig(pixel_noise_sigma=0.0)
    goals = log.goal.reshape(2, 3)
    trace = log.d_sum_trace()
    for frame, record in enumerate(log.records):
        points = np.concatenate([record.tracked,
                                 record.effector.reshape(1, 3), goals])
        verts, tris = _marker_triangles(points, size=0.008)
        image = render(verts, cam, vis, noise_seed=0, triangles=tris)
        write_pgm(image, out_dir / f"frame_{frame:03d}.pgm")
        print(f"step {record.step}: d_sum={trace[frame]:.6f}"
              f"{' done' if record.done else ''}")
    print(f"wrote {len(log.records)} frames to {out_dir}")
    if trace:
        print(f"final d_sum: {trace[-1]!r}")
    return 0


def cmd_compare(args) -> int:
    report_a = load_report(args.report_a)
    report_b = load_report(args.report_b)
    sample_a = [float(v) for v in report_a.column(args.metric)]
    sample_b = [float(v) for v in report_b.column(args.metric)]
    u, p = mann_whitney_u(sample_a, sample_b)
    print(f"metric: {args.metric}")
    print(f"n_a: {len(sample_a)}  n_b: {len(sample_b)}")
    print(f"U: {u!r}")
    print(f"p: {p!r}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
