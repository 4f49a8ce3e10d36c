"""Command-line entry point: serve, train, evaluate, compare, init-config, rerun."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shlex
import signal
import subprocess
import sys
import threading
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from atfg import __version__, config, evaluation, link, ppo
from atfg.dynamics import AircraftConfig
from atfg.env import AttitudeEnv, TaskConfig
from atfg.pidctl import PidAgent

log = logging.getLogger("atfg")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_BIND = 3
EXIT_MISSING = 4

EVAL_SEED_OFFSET = 1000


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.code = code


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"atfg-{__version__}"


def write_manifest(out: Path, args: argparse.Namespace, argv: list[str], started: float) -> None:
    """Append one line per invocation; the file is never rewritten."""
    out.mkdir(parents=True, exist_ok=True)
    entry = {
        "command": args.command,
        "argv": argv,
        "configs": {k: getattr(args, k, None) for k in ("aircraft", "task", "train", "controller")},
        "seed": args.seed,
        "build": build_id(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "wall_clock_s": round(time.time() - started, 3),
        "out": str(out),
    }
    with open(out / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(entry) + "\n")


# ----------------------------------------------------------------- loaders


def _load(loader, path, default_name=None):
    target = path if path else (config.data_path(default_name) if default_name else None)
    if target is None:
        return None
    try:
        return loader(target)
    except config.ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc


def load_aircraft(args) -> AircraftConfig:
    return _load(config.load_aircraft, args.aircraft, "iris.cfg")


def load_task(args) -> TaskConfig:
    task = _load(config.load_task, args.task, "episodic.cfg")
    if getattr(args, "memory", None):
        task = replace(task, memory=args.memory)
    if getattr(args, "dt", None):
        task = replace(task, dt=args.dt)
    return task


def resolve_data_file(ref: str) -> Path:
    path = Path(ref)
    if path.exists():
        return path
    bundled = config.data_path(ref if ref.endswith(".cfg") else ref + ".cfg")
    if bundled.exists():
        return bundled
    raise CliError(f"file not found: {ref}", EXIT_MISSING)


def make_agent(spec: str, seed: int):
    """``pid[:cfg]``, ``ppo:<checkpoint>`` or ``random``."""
    kind, _, arg = spec.partition(":")
    if kind == "pid":
        path = resolve_data_file(arg or "betaflight_port.cfg")
        pid, mixer = _load(config.load_controller, path)
        return PidAgent(pid, mixer)
    if kind == "ppo":
        if not arg or not Path(arg).exists():
            raise CliError(f"checkpoint not found: {arg or '<none>'}", EXIT_MISSING)
        try:
            return ppo.PPOAgent(ppo.load_checkpoint(arg))
        except ValueError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from exc
    if kind == "random":
        return ppo.RandomAgent(seed)
    raise CliError(f"unknown agent spec {spec!r} (use pid[:cfg], ppo:<ckpt>, random)", EXIT_CONFIG)


def parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return (host or "127.0.0.1", int(port))
    except ValueError as exc:
        raise CliError(f"bad bind address {text!r}; expected host:port", EXIT_CONFIG) from exc


# ---------------------------------------------------------------- commands


def cmd_serve(args) -> int:
    aircraft = load_aircraft(args)
    try:
        server = link.LockstepServer(aircraft, parse_bind(args.bind), args.dt or 1e-3)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return EXIT_BIND
    host, port = server.address
    print(f"serving lock-step link on {host}:{port} (dt={server.dt})", flush=True)

    def stop(signum, frame):
        server.shutdown()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGINT, stop)
        signal.signal(signal.SIGTERM, stop)
    try:
        counters = server.serve_forever()
    finally:
        server.close()
    print(json.dumps({"counters": counters.as_dict()}), flush=True)
    return EXIT_OK


def _rolling(curve, window=100):
    rows = []
    for i in range(len(curve)):
        chunk = np.asarray(curve[max(0, i - window + 1):i + 1])
        hw = 1.96 * chunk.std(ddof=1) / math.sqrt(len(chunk)) if len(chunk) > 1 else 0.0
        rows.append((i, float(chunk.mean()), float(hw)))
    return rows


def _write_curve(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean_reward", "ci_half_width"])
        for episode, mean, hw in rows:
            w.writerow([episode, repr(mean), repr(hw)])


def cmd_train(args) -> int:
    aircraft = load_aircraft(args)
    task = load_task(args)
    cfg = _load(config.load_train, args.train, "ppo.cfg")
    if args.steps:
        cfg = replace(cfg, total_steps=args.steps)
    if args.seeds:
        cfg = replace(cfg, seeds=args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def factory(t):
        return AttitudeEnv(t, aircraft)

    curves = []
    summary = {"seeds": []}
    for k in range(cfg.seeds):
        seed = args.seed + k
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        t0 = time.time()
        try:
            result = ppo.train(factory, task, cfg, aircraft.rotor_omega_max, seed=seed)
        except Exception as exc:
            raise CliError(f"training seed {seed} failed: {exc}") from exc
        ppo.save_checkpoint(result.agent.net, seed_dir / "best.ckpt")
        ppo.save_checkpoint(result.final_net, seed_dir / "final.ckpt")
        _write_curve(seed_dir / "curve.csv", _rolling(result.curve))
        curves.append(result.curve)
        summary["seeds"].append({"seed": seed, "episodes": len(result.curve), "best_validation": result.best_score})
        log.info("seed %d done in %.1f s, best validation %.4f", seed, time.time() - t0, result.best_score)
        print(f"seed {seed}: {len(result.curve)} episodes, best validation reward {result.best_score:.4f}",
              flush=True)
    n = min(len(c) for c in curves)
    stacked = np.array([c[:n] for c in curves])
    rows = []
    for i in range(n):
        col = stacked[:, i]
        hw = 1.96 * col.std(ddof=1) / math.sqrt(len(col)) if len(col) > 1 else 0.0
        rows.append((i, float(col.mean()), float(hw)))
    _write_curve(out / "curve.csv", rows)
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _eval_task(args) -> TaskConfig:
    task = load_task(args)
    # Evaluation setpoints come from a stream disjoint from training's.
    return replace(task, seed=args.seed + EVAL_SEED_OFFSET)


def _emit(reports, args, out: Path, extra=None) -> None:
    payload = {name: r.to_dict() for name, r in reports.items()}
    if extra:
        payload.update(extra)
    text = evaluation.format_table(reports)
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(text + "\n")
    if args.metrics == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def cmd_evaluate(args) -> int:
    aircraft = load_aircraft(args)
    task = _eval_task(args)
    agent = make_agent(args.agent, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report, traces = evaluation.evaluate(agent, task, args.episodes, aircraft, low_frac=args.rise_low,
                                         high_frac=args.rise_high)
    if args.traces:
        evaluation.write_traces(traces[:args.traces], report.per_episode[:args.traces], out / "traces")
    _emit({args.agent: report}, args, out)
    return EXIT_OK


def cmd_compare(args) -> int:
    aircraft = load_aircraft(args)
    task = _eval_task(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for i, spec in enumerate(args.agent):
        agent = make_agent(spec, args.seed)
        report, traces = evaluation.evaluate(agent, task, args.episodes, aircraft, low_frac=args.rise_low,
                                             high_frac=args.rise_high)
        n = min(args.traces, len(traces))
        evaluation.write_traces(traces[:n], report.per_episode[:n], out / "traces" / f"agent_{i}")
        reports[spec] = report
    best = evaluation.winners(reports)
    _emit(reports, args, out, {"winners": best})
    if args.metrics != "json":
        for metric, names in best.items():
            print(f"best {metric:9s}: " + ", ".join(f"{ax}={n}" for ax, n in zip(evaluation.AXES, names)))
    return EXIT_OK


def cmd_init_config(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = ["iris.cfg", "betaflight_port.cfg", "iris_tuned.cfg", "episodic.cfg", "continuous.cfg", "ppo.cfg"]
    for name in names:
        target = out / name
        if target.exists() and not args.force:
            print(f"skip {target} (exists)")
            continue
        target.write_text(config.data_path(name).read_text())
        print(f"wrote {target}")
    return EXIT_OK


def cmd_rerun(args) -> int:
    lines = Path(args.manifest).read_text().splitlines()
    if not lines:
        raise CliError(f"empty manifest {args.manifest}", EXIT_CONFIG)
    entry = json.loads(lines[args.index])
    argv = list(entry["argv"])
    if args.out:
        argv = _replace_out(argv, args.out)
    print("rerun: atfg " + " ".join(shlex.quote(a) for a in argv), flush=True)
    return main(argv)


def _replace_out(argv, out):
    result = []
    skip = False
    for i, token in enumerate(argv):
        if skip:
            skip = False
            continue
        if token == "--out":
            skip = True
            continue
        if token.startswith("--out="):
            continue
        result.append(token)
    return result + ["--out", out]


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out", default="runs/latest", help="run directory")
    common.add_argument("--aircraft", help="aircraft config (default: bundled iris.cfg)")

    task_opts = argparse.ArgumentParser(add_help=False)
    task_opts.add_argument("--task", help="task config (default: bundled episodic.cfg)")
    task_opts.add_argument("--memory", type=int, help="override the stacked-state memory size")
    task_opts.add_argument("--dt", type=float, help="physics step in seconds")

    eval_opts = argparse.ArgumentParser(add_help=False)
    eval_opts.add_argument("--episodes", type=int, default=1000)
    eval_opts.add_argument("--metrics", choices=("table", "json"), default="table")
    eval_opts.add_argument("--rise-low", type=float, default=0.1)
    eval_opts.add_argument("--rise-high", type=float, default=0.9)

    parser = argparse.ArgumentParser(prog="atfg", description="Quadrotor attitude-control lab")
    parser.add_argument("--version", action="version", version=f"atfg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", parents=[common], help="run the lock-step UDP plant server")
    p.add_argument("--bind", default=f"127.0.0.1:{link.DEFAULT_PORT}", help="host:port")
    p.add_argument("--dt", type=float, default=None, help="physics step in seconds")
    p.set_defaults(func=cmd_serve, manifest=False)

    p = sub.add_parser("train", parents=[common, task_opts], help="train PPO agents")
    p.add_argument("--train", help="trainer config (default: bundled ppo.cfg)")
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--seeds", type=int, help="override the number of seeds")
    p.set_defaults(func=cmd_train, manifest=True)

    p = sub.add_parser("evaluate", parents=[common, task_opts, eval_opts], help="evaluate one agent")
    p.add_argument("--agent", default="pid", help="pid[:cfg] | ppo:<checkpoint> | random")
    p.add_argument("--traces", type=int, default=0, help="write CSV traces for the first N episodes")
    p.set_defaults(func=cmd_evaluate, manifest=True)

    p = sub.add_parser("compare", parents=[common, task_opts, eval_opts], help="compare agents on shared setpoints")
    p.add_argument("--agent", action="append", required=True, help="repeat for each agent")
    p.add_argument("--traces", type=int, default=5, help="step-response traces written per agent")
    p.set_defaults(func=cmd_compare, manifest=True)

    p = sub.add_parser("init-config", parents=[common], help="copy the bundled config files")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init_config, manifest=False)

    p = sub.add_parser("rerun", help="replay a manifest entry")
    p.add_argument("manifest")
    p.add_argument("--index", type=int, default=-1, help="entry to replay (default: last)")
    p.add_argument("--out", help="write into a different run directory")
    p.set_defaults(func=cmd_rerun, manifest=False, seed=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("ATFG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        code = args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (evaluation.EvaluationError, link.LinkError, ppo.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.manifest and code == EXIT_OK:
        write_manifest(Path(args.out), args, argv, started)
    return code


if __name__ == "__main__":
    sys.exit(main())
