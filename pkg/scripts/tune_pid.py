"""Coordinate search over PID gains on the bundled plant.

Starts from the ported Betaflight gains and tries doubling or halving one
gain at a time, keeping any change that raises the score. The score is
mean per-axis success on a tuning setpoint stream (seed 123, disjoint
from the evaluation stream at seed+1000), with total error as tie-break.

    python scripts/tune_pid.py --episodes 300 --rounds 3 --out tuned.cfg
"""
import argparse
import itertools
import logging

import numpy as np

from atfg.config import data_path, dump_controller, load_aircraft, load_controller
from atfg.env import TaskConfig
from atfg.evaluation import evaluate
from atfg.pidctl import PidAgent, PidConfig

log = logging.getLogger("tune_pid")


def score(gains, mixer, base, aircraft, task, episodes):
    pid = PidConfig(gains=tuple(map(tuple, gains)), integrator_limit=base.integrator_limit,
                    output_limit=base.output_limit, dt=base.dt)
    report, _ = evaluate(PidAgent(pid, mixer), task, episodes, aircraft)
    return float(np.mean(report["success"].mean)) - 1e-5 * float(np.mean(report["error"].mean))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--start", default=str(data_path("betaflight_port.cfg")))
    ap.add_argument("--aircraft", default=str(data_path("iris.cfg")))
    ap.add_argument("--episodes", type=int, default=300)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=123)
    ap.add_argument("--out", default="tuned.cfg")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base, mixer = load_controller(args.start)
    aircraft = load_aircraft(args.aircraft)
    task = TaskConfig(seed=args.seed)
    gains = np.array(base.gains, dtype=float)
    best = score(gains, mixer, base, aircraft, task, args.episodes)
    log.info("start %.4f %s", best, gains.tolist())
    for rnd in range(args.rounds):
        improved = False
        for axis, term in itertools.product(range(3), range(3)):
            for factor in (2.0, 0.5):
                trial = gains.copy()
                # A zero gain can only grow; seed it with a small value instead.
                trial[axis, term] = trial[axis, term] * factor if trial[axis, term] > 0 else (0.01 if term == 2 else 1.0)
                value = score(trial, mixer, base, aircraft, task, args.episodes)
                if value > best:
                    best, gains, improved = value, trial, True
                    log.info("round %d: %.4f %s", rnd, best, gains.tolist())
        if not improved:
            break
    pid = PidConfig(gains=tuple(map(tuple, gains)), integrator_limit=base.integrator_limit,
                    output_limit=base.output_limit, dt=base.dt)
    with open(args.out, "w") as fh:
        fh.write(f"# coordinate search from {args.start}, score {best:.4f}\n")
        fh.write(dump_controller(pid, mixer))
    log.info("wrote %s", args.out)


if __name__ == "__main__":
    main()
