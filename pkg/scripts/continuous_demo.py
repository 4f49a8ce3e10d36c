"""Track a stream of random rate pulses with PID (and optionally PPO).

Writes one trace CSV per agent plus a small JSON summary.

    python scripts/continuous_demo.py --seconds 20 --ppo runs/latest/seed_0/best.ckpt
"""
import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from atfg.config import data_path, load_controller, load_task
from atfg.env import AttitudeEnv
from atfg.evaluation import run_episode, write_trace_csv
from atfg.pidctl import PidAgent
from atfg.ppo import PPOAgent, load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=1000)
    ap.add_argument("--controller", default=str(data_path("iris_tuned.cfg")))
    ap.add_argument("--ppo", help="optional checkpoint to run alongside PID")
    ap.add_argument("--out", default="runs/continuous")
    args = ap.parse_args()

    task = replace(load_task(data_path("continuous.cfg")), episode_max=args.seconds, seed=args.seed)
    agents = {"pid": PidAgent(*load_controller(args.controller))}
    if args.ppo:
        agents["ppo"] = PPOAgent(load_checkpoint(args.ppo))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, agent in agents.items():
        trace = run_episode(agent, AttitudeEnv(task))
        write_trace_csv(trace, out / f"{name}.csv")
        err = np.abs(trace.setpoint - trace.omega)
        summary[name] = {
            "mean_reward": float(trace.reward.mean()),
            "mean_abs_error": err.mean(axis=0).tolist(),
            "pulses": int(np.count_nonzero(np.any(np.diff(trace.setpoint, axis=0) != 0, axis=1))),
        }
        print(f"{name}: mean reward {summary[name]['mean_reward']:.4f}, "
              f"mean |e| " + " ".join(f"{v:.3f}" for v in summary[name]["mean_abs_error"]))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
