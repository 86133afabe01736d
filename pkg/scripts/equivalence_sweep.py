"""Optimal H2 costs of the three programs on seeded random stable plants."""

import argparse

import numpy as np

from parametrix.config import SweepConfig, SynthesisConfig
from parametrix.coprime import doubly_coprime_stable
from parametrix.plants import random_plant
from parametrix.synthesis import synthesize


def run_route(P, route: str, T: int, cfg: SynthesisConfig):
    if route == "youla":
        return synthesize(P, "youla", T, f=doubly_coprime_stable(P))
    if route == "slp":
        return synthesize(P, "slp", T, tail=cfg.tail)
    return synthesize(P, route, T)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=SweepConfig.seed)
    ap.add_argument("--plants", type=int, default=SweepConfig.n_plants)
    ap.add_argument("--tail", choices=("open", "closed"), default="open")
    args = ap.parse_args()
    cfg = SweepConfig(seed=args.seed, n_plants=args.plants, synthesis=SynthesisConfig(route="slp", tail=args.tail))
    rng = np.random.default_rng(cfg.seed)

    print(f"{'#':>3} {'n':>2} {'nu':>2} {'ny':>2} " + " ".join(f"{r:>12}" for r in cfg.routes) + f" {'spread':>9}")
    worst = 0.0
    for i in range(cfg.n_plants):
        P = random_plant(rng, rho=cfg.rho, max_n=cfg.max_n, max_io=cfg.max_io)
        T = 4 * P.n
        costs = [run_route(P, r, T, cfg.synthesis).cost_squared for r in cfg.routes]
        spread = max(costs) - min(costs)
        worst = max(worst, spread)
        print(f"{i:>3} {P.n:>2} {P.nu:>2} {P.ny:>2} " + " ".join(f"{c:>12.8f}" for c in costs) + f" {spread:>9.1e}")
    print(f"largest pairwise cost gap: {worst:.2e}")


if __name__ == "__main__":
    main()
