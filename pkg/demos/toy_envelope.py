"""Envelope Q-learning on the five-state toy MDP, checked against value iteration.

One network is trained for all preferences; the greedy policy for each
``(w, 1-w)`` is then compared with the exact optimum.
"""

import argparse

import numpy as np

from genla.morl import toy


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    net = toy.train_toy(steps=args.steps, seed=args.seed)
    grid = np.linspace(0, 1, 11)
    frac, hits = toy.policy_agreement(net, grid)
    for w, ok in zip(grid, hits):
        learned = toy.greedy_policy(net, (w, 1 - w))
        print(f"w={w:.1f} learned={learned} oracle={toy.oracle_policy((w, 1 - w))} "
              f"{'ok' if ok else 'MISMATCH'}")
    print(f"agreement {frac:.0%}")


if __name__ == "__main__":
    main()
