#!/usr/bin/env python3
"""Train the landing agent end to end and drop all artifacts in one place.

Produces, under --out (default runs/landing_agent):
  dqn.ckpt          trained network + config snapshot
  reward_trace.csv  per-episode return, moving average, epsilon
  reward_curve.svg  the convergence plot
  trajectories_*.svg and episode_*.csv   greedy evaluation rollouts
"""

import argparse
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from gridlander import dqn, plots
from gridlander.env import EnvConfig
from gridlander.persistence import (
    save_dqn_checkpoint,
    write_episode_trace,
    write_reward_trace,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--episodes", type=int, default=None, help="override the 5000 cap")
    ap.add_argument("--eval-episodes", type=int, default=100)
    ap.add_argument("--out", default="runs/landing_agent")
    args = ap.parse_args()

    env_cfg = EnvConfig()
    train_cfg = dqn.TrainConfig()
    if args.episodes is not None:
        train_cfg = replace(train_cfg, episodes=args.episodes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    result = dqn.train(env_cfg, train_cfg, args.seed)
    train_time = time.time() - t0
    ma = result.trace.moving_average()
    print(
        f"trained {result.episodes_run} episodes in {train_time:.0f}s "
        f"({'stop criterion met' if result.stopped_early else 'episode cap reached'}), "
        f"final moving average {ma[-1]:.1f}"
    )

    save_dqn_checkpoint(out / "dqn.ckpt", result.network,
                        {"env": asdict(env_cfg), "train": asdict(train_cfg), "seed": args.seed})
    write_reward_trace(out / "reward_trace.csv", result.trace)
    plots.write_reward_curve(out / "reward_curve.svg", result.trace)

    evaluation = dqn.evaluate(result.network, env_cfg, args.eval_episodes, seed=args.seed + 1)
    print(
        f"greedy evaluation over {args.eval_episodes} episodes: "
        f"success {evaluation.success_rate:.2f}, mean return {evaluation.mean_return:.1f}, "
        f"mean touchdown deviation {evaluation.mean_final_deviation_m:.2f} m"
    )
    for i, log in enumerate(evaluation.traces[:6]):
        write_episode_trace(out / f"episode_{i:03d}.csv", log)
    plots.write_trajectory_projections(
        out / "trajectories_xy.svg", out / "trajectories_xz.svg",
        evaluation.traces[:6], env_cfg,
    )
    print(f"artifacts in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
