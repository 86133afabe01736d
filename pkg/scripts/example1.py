"""Chain-graph Example 1: every route should recover K = -A with cost n."""

import argparse
import time

from parametrix.config import Example1Config
from parametrix.synthesis import solve_example1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=list(Example1Config.sizes))
    ap.add_argument("--horizon", type=int, default=Example1Config.horizon)
    args = ap.parse_args()
    cfg = Example1Config(sizes=tuple(args.sizes), horizon=args.horizon)

    print(f"{'n':>3} {'route':>6} {'|K+A|max':>10} {'cost^2 - n':>11} {'time [s]':>9}")
    ok = True
    for n in cfg.sizes:
        t0 = time.perf_counter()
        rep = solve_example1(n, T=cfg.horizon)
        dt = time.perf_counter() - t0
        for route in rep.results:
            print(f"{n:>3} {route:>6} {rep.k_error[route]:>10.2e} {rep.cost_squared[route] - n:>11.2e} {dt:>9.3f}")
        ok &= rep.passed(cfg.k_tol, cfg.cost_tol)
    print("all routes recover K = -A" if ok else "recovery FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
