"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from parametrix.coprime import (
    deadbeat_gains, doubly_coprime_general, doubly_coprime_stable, doubly_coprime_state_feedback,
    riccati_gains, verify_bezout,
)
from parametrix.lti import FIR, four_block_stability, internal_stability
from parametrix.maps import (
    YoulaParam, controller_agreement, iop_controller, iop_to_youla, slp_controller, slp_to_youla,
    verify_iop_subspace, verify_slp_subspace, youla_controller, youla_to_iop, youla_to_slp,
)
from parametrix.plants import observer_controller, random_controller, random_plant
from parametrix.qi import SparsityPattern, plant_pattern, qi_brute_force, qi_test
from parametrix.synthesis import (
    SlsConstraint, direct_sls_program, example1_plant, sls_transfer, solve, solve_example1, synthesize,
)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
        assert ok, detail
    return emit


def fir_diff(a: FIR, b: FIR) -> float:
    T = max(a.horizon, b.horizon)
    return (a.pad(T) - b.pad(T)).max_abs()


def test_1_example1_recovery(report):
    worst_k = worst_c = slowest = 0.0
    for n in (1, 3, 5):
        t0 = time.perf_counter()
        rep = solve_example1(n, T=8)
        slowest = max(slowest, time.perf_counter() - t0)
        assert rep.A.shape == (n, n)
        assert np.isclose(np.max(np.abs(np.linalg.eigvals(rep.A))), 0.5)
        assert set(rep.results) == {"slp", "youla", "iop"}
        worst_k = max(worst_k, *rep.k_error.values())
        worst_c = max(worst_c, *(abs(c - n) for c in rep.cost_squared.values()))
    ok = worst_k <= 1e-6 and worst_c <= 1e-8
    report(1, ok, f"max|K+A| = {worst_k:.2e}, max|cost^2 - n| = {worst_c:.2e}, "
                  f"slowest instance {slowest:.2f} s")
    # runtime target: 1 s per instance
    assert slowest < 1.0


def test_2_mapping_equivalence(report):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    rt = sub = agree = 0.0
    for _ in range(20):
        P = random_plant(rng, max_n=4)
        f = doubly_coprime_general(P, deadbeat_gains(P))
        assert f.kind == "general-deadbeat"
        for _ in range(5):
            q = YoulaParam(FIR(rng.standard_normal((4, P.nu, P.ny))))  # horizon 3
            x = youla_to_iop(f, q)
            s = youla_to_slp(P, f, q)
            rt = max(rt, fir_diff(iop_to_youla(f, x).Q, q.Q), fir_diff(slp_to_youla(P, f, s).Q, q.Q))
            sub = max(sub, verify_iop_subspace(P, x).max_residual, verify_slp_subspace(P, s).max_residual)
            agree = max(agree, controller_agreement(
                [youla_controller(f, q), iop_controller(x), slp_controller(s, P.C2)], 16))
    wall = time.perf_counter() - t0
    ok = rt <= 1e-9 and sub <= 1e-10 and agree <= 1e-8
    report(2, ok, f"round trip {rt:.2e}, subspace residual {sub:.2e}, "
                  f"controller agreement {agree:.2e}, {wall:.2f} s")
    assert wall < 10.0


def test_3_bezout(report):
    rng = np.random.default_rng(3)
    worst = {}
    for _ in range(20):
        P = random_plant(rng)
        worst["deadbeat"] = max(worst.get("deadbeat", 0.0),
                                verify_bezout(doubly_coprime_general(P, deadbeat_gains(P)), P, 64).max_residual)
        P = random_plant(rng, max_deadbeat_gain=None)
        worst["riccati"] = max(worst.get("riccati", 0.0),
                               verify_bezout(doubly_coprime_general(P, riccati_gains(P)), P, 64).max_residual)
        P = random_plant(rng, rho=(0.1, 0.95), max_deadbeat_gain=None)
        worst["stable"] = max(worst.get("stable", 0.0),
                              verify_bezout(doubly_coprime_stable(P), P, 64).max_residual)
        n = int(rng.integers(1, 5))
        P = example1_plant(A=rng.standard_normal((n, n)) * rng.uniform(0.1, 2.0))
        worst["statefb"] = max(worst.get("statefb", 0.0),
                               verify_bezout(doubly_coprime_state_feedback(P), P, 64).max_residual)
    ok = all(v <= 1e-8 for v in worst.values()) and worst["deadbeat"] <= 1e-10
    report(3, ok, ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))


def test_4_cross_route_h2(report):
    rng = np.random.default_rng(2024)
    gap = 0.0
    radius = 0.0
    for _ in range(10):
        P = random_plant(rng, rho=0.5, max_n=3, max_deadbeat_gain=None)
        T = 4 * P.n
        rs = [synthesize(P, "youla", T, doubly_coprime_stable(P)),
              synthesize(P, "iop", T),
              synthesize(P, "slp", T, tail="open")]
        c = [r.cost for r in rs]
        gap = max(gap, max(c) - min(c))
        radius = max(radius, *(r.closed_loop_radius(P) for r in rs))
    ok = gap <= 1e-6 and radius < 1 - 1e-6
    report(4, ok, f"max pairwise cost gap {gap:.2e}, max closed-loop radius {radius:.4f}")


def test_5_qi_oracle(report):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(200):
        nu, ny = (int(v) for v in rng.integers(1, 4, size=2))
        L = SparsityPattern((rng.random((nu, ny)) < rng.uniform(0.2, 0.9)).astype(int))
        Pp = SparsityPattern((rng.random((ny, nu)) < rng.uniform(0.2, 0.9)).astype(int))
        mismatches += qi_test(L, Pp) != qi_brute_force(L, Pp)
    P = example1_plant(3)
    Ppat = plant_pattern(P)
    dense = bool(Ppat.mask.all())
    instance = qi_test(SparsityPattern.support(P.A), Ppat)
    ok = mismatches == 0 and dense and instance is False
    report(5, ok, f"{mismatches} mismatches in 200 pairs, chain instance qi = {instance}")


def test_6_sls_transfer(report):
    rng = np.random.default_rng(7)
    gap = 0.0
    for _ in range(5):
        P = random_plant(rng, rho=0.5, max_n=3, max_deadbeat_gain=None)
        T = 4 * P.n
        S = SlsConstraint(patterns={
            "L": SparsityPattern((rng.random((P.nu, P.ny)) < 0.6).astype(int)),
            "M": SparsityPattern((rng.random((P.nu, P.n)) < 0.7).astype(int)),
        })
        d = solve(direct_sls_program(P, S, T)).cost_squared
        y = solve(sls_transfer(P, doubly_coprime_stable(P), S, "youla", T)).cost_squared
        x = solve(sls_transfer(P, None, S, "iop", T)).cost_squared
        gap = max(gap, abs(y - d), abs(x - d))
    report(6, gap <= 1e-6, f"max objective gap to the direct SLP program {gap:.2e}")


def test_7_internal_stability(report):
    rng = np.random.default_rng(7)
    agree = stable = 0
    for i in range(50):
        P = random_plant(rng, max_deadbeat_gain=None)
        if i % 2:
            g = riccati_gains(P)
            K = observer_controller(P, g.F, g.L)
        else:
            K = random_controller(rng, P, scale=0.3)
        a = bool(internal_stability(P, K))
        agree += a == four_block_stability(P, K)
        stable += a
    ok = agree == 50 and 0 < stable < 50
    report(7, ok, f"{agree}/50 agree ({stable} stable, {50 - stable} unstable)")
