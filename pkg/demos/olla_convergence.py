"""OLLA offset and first-transmission BLER over time on one MIMO-FB benchmark drop.

    python3 demos/olla_convergence.py --ttis 5000
"""

import argparse

import numpy as np

from genla.linkadapt import olla_actions
from genla.scenario import benchmark_scenario
from genla.simcore import Simulator


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--ttis", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=500, help="report interval in TTIs")
    args = ap.parse_args()

    sim = Simulator(benchmark_scenario("MIMO-FB", args.seed, args.ttis))
    seen = 0
    print(f"{'tti':>6} {'window BLER':>12} {'mean offset dB':>15}")
    while not sim.done:
        need = [g.ue_id for g in sim.grants() if g.needs_action]
        sim.step(dict(zip(need, olla_actions(sim, need))))
        if sim.tti % args.every == 0:
            acks = [a for _, _, a in sim.kpi.first_tx[seen:]]
            seen = len(sim.kpi.first_tx)
            bler = 1.0 - np.mean(acks) if acks else float("nan")
            print(f"{sim.tti:>6} {bler:>12.3f} {sim.olla_offset.mean():>15.2f}")


if __name__ == "__main__":
    main()
