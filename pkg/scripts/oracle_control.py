"""Train one algorithm directly on the analytic oracle and print the greedy episode.

Useful for separating RL behaviour from surrogate error.

    python3 scripts/oracle_control.py ppo --timesteps 300000 --seed 0
"""

import argparse
import logging

from drumrl import env
from drumrl.rl import AlgoConfig, evaluate_policy, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("algo", choices=["ppo", "a2c"])
    ap.add_argument("--timesteps", type=int, default=1_200_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--shared-trunk", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = AlgoConfig.defaults(args.algo, total_timesteps=args.timesteps,
                              shared_trunk=args.shared_trunk)
    backing = env.OracleBacking()
    res = train(cfg, lambda i: env.DrumControlEnv(backing), seed=args.seed)
    print(f"wall time {res.wall_time:.0f}s")
    for row in evaluate_policy(res.actor_critic, env.DrumControlEnv(backing), args.algo):
        angles = " ".join(f"{row[f'theta{i}']:3d}" for i in range(1, 7))
        print(f"YR{row['year']}  {angles}  k={row['keff']:.5f}  hptr={row['hptr']:.5f}")


if __name__ == "__main__":
    main()
