"""Full-length training recipe: 1e7 steps, 3 seeds, memory m in {1, 2, 3}.

Hours of CPU time; not part of the test suite. Prints the commands by
default, runs them with --execute.

    python scripts/long_run.py --out runs/long --execute
"""
import argparse
import shlex

from atfg import cli


def commands(out, steps, seeds, episodes):
    runs = []
    for m in (1, 2, 3):
        runs.append(["train", "--memory", str(m), "--steps", str(steps), "--seeds", str(seeds),
                     "--out", f"{out}/ppo_m{m}"])
    # A checkpoint only accepts states of its own memory size, so compare per m.
    for m in (1, 2, 3):
        argv = ["compare", "--memory", str(m), "--episodes", str(episodes), "--out", f"{out}/compare_m{m}",
                "--agent", "pid:iris_tuned"]
        for s in range(seeds):
            argv += ["--agent", f"ppo:{out}/ppo_m{m}/seed_{s}/best.ckpt"]
        runs.append(argv)
    return runs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/long")
    ap.add_argument("--steps", type=int, default=10_000_000)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--execute", action="store_true")
    args = ap.parse_args()
    for argv in commands(args.out, args.steps, args.seeds, args.episodes):
        print("atfg " + " ".join(shlex.quote(a) for a in argv), flush=True)
        if args.execute:
            code = cli.main(argv)
            if code != cli.EXIT_OK:
                raise SystemExit(code)


if __name__ == "__main__":
    main()
