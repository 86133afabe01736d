"""H2 synthesis as equality-constrained least squares in each parameterization."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .coprime import (DoublyCoprimeFactors, PreconditionError, doubly_coprime_stable,
                      doubly_coprime_state_feedback)
from .lsq import Affine, InfeasibleError, LeastSquaresProgram, LsqSolution, VarSpace, solve_equality_ls
from .lti import (FIR, StateSpacePlant, h2_norm, internal_stability, is_stable, lft_closed_loop,
                  markov_expand, resolvent_left, resolvent_right, spectral_radius)
from .maps import (FractionController, IopQuadruple, SlpQuadruple, YoulaParam, _require_identity,
                   youla_controller)
from .qi import SparsityPattern, plant_pattern, qi_test

TAIL_TOL = 1e-16


class QIViolation(ValueError):
    """The structural constraint is not quadratically invariant under P22."""


@dataclass
class SynthesisResult:
    route: str
    controller: FractionController
    params: object
    cost: float  # H2 norm of the closed loop
    solution: LsqSolution
    residuals: dict = field(default_factory=dict)
    wall_time: float = 0.0
    inner_approx: bool = False

    @property
    def cost_squared(self) -> float:
        return self.cost ** 2

    def controller_fir(self, horizon: int) -> FIR:
        return self.controller.fir(horizon)

    def closed_loop_radius(self, P: StateSpacePlant) -> float:
        return spectral_radius(lft_closed_loop(P, self.controller.realize()).A)

    def internally_stable(self, P: StateSpacePlant) -> bool:
        return bool(internal_stability(P, self.controller.realize()))


# ---------------------------------------------------------------------------
# Horizons
# ---------------------------------------------------------------------------


def default_horizon(P: StateSpacePlant) -> int:
    return 4 * max(P.n, 1)


def _stable_decay_steps(A) -> int:
    """Steps for the Schur-stable modes of A to decay below TAIL_TOL."""
    if A.shape[0] == 0:
        return 0
    lam = np.abs(np.linalg.eigvals(A))
    lam = lam[lam < 1.0]
    rho = float(lam.max()) if lam.size else 0.0
    if rho < 1e-8:
        return A.shape[0]
    return int(np.ceil(np.log(TAIL_TOL) / np.log(rho))) + A.shape[0]


def eval_horizon(P: StateSpacePlant, T: int, extra: int = 0) -> int:
    """Horizon for expanding stable but infinite responses next to a T-horizon parameter."""
    return T + extra + P.n + 1 + min(_stable_decay_steps(P.A), 4000)


# ---------------------------------------------------------------------------
# Youla
# ---------------------------------------------------------------------------


def youla_t_matrices(P: StateSpacePlant, f: DoublyCoprimeFactors, horizon: int):
    """T11 = P11 + P12 Vr Ml P21, T12 = -P12 Mr, T21 = Ml P21.

    Each is assembled from closed-loop responses of the central controller so
    that only stable quantities are ever expanded.
    """
    A = P.A
    T21 = resolvent_right(f.Ml @ P.C2, A, horizon) @ P.B1 + f.Ml @ P.D21
    T12 = -(P.C1 @ resolvent_left(A, P.B2 @ f.Mr, horizon) + P.D12 @ f.Mr)
    VT = f.Vr @ T21
    X = resolvent_left(A, P.B1 + P.B2 @ VT, horizon + VT.horizon)
    T11 = P.C1 @ X + P.D11 + P.D12 @ VT
    return T11, T12, T21


def assemble_youla_program(P: StateSpacePlant, f: DoublyCoprimeFactors, T: Optional[int] = None,
                           eval_h: Optional[int] = None) -> LeastSquaresProgram:
    """minimize ||T11 + T12 Q T21|| over FIR Q of horizon T."""
    T = default_horizon(P) if T is None else T
    eval_h = eval_horizon(P, T, f.horizon) if eval_h is None else eval_h
    T11, T12, T21 = youla_t_matrices(P, f, eval_h)
    sp = VarSpace()
    Q = sp.add("Q", (P.nu, P.ny), T)
    prog = LeastSquaresProgram(sp)
    prog.minimize(Q.lmul(T12).rmul(T21) + T11)
    num = f.Vr - f.Mr @ Q
    den = f.Ur - f.Nr @ Q
    prog.meta.update(route="youla", P=P, f=f, T=T, tmat_residual=max(T11.residual, T12.residual, T21.residual),
                     exprs={"Q": Q, "num": num, "den": den, "U": num.rmul(f.Ml)})

    def build(x):
        q = YoulaParam(sp.unpack(x, "Q"))
        return q, youla_controller(f, q)

    prog.meta["build"] = build
    return prog


# ---------------------------------------------------------------------------
# SLP
# ---------------------------------------------------------------------------


def _slp_objective(P, R, M, N, L):
    return (R.lmul(P.C1).rmul(P.B1) + M.lmul(P.D12).rmul(P.B1)
            + N.lmul(P.C1).rmul(P.D21) + L.lmul(P.D12).rmul(P.D21) + P.D11)


def assemble_slp_program(P: StateSpacePlant, T: Optional[int] = None, tail: str = "closed",
                         eval_h: Optional[int] = None) -> LeastSquaresProgram:
    """minimize ||[C1 D12][R N; M L][B1; D21] + D11|| over the SLP subspace.

    ``tail="closed"``: R, M, N, L all of horizon T and the recursions hold
    through the last index, so the responses are exactly FIR.
    ``tail="open"`` (stable A only): L has horizon T while R, M, N are
    expanded to a long evaluation horizon with no closure row; T then bounds
    the same free parameter as in the Youla and IOP programs (L = U = -Q).
    """
    T = default_horizon(P) if T is None else T
    if T < 1:
        raise ValueError("SLP horizon must be at least 1")
    A, B2, C2 = P.A, P.B2, P.C2
    n, nu, ny = P.n, P.nu, P.ny
    if tail == "closed":
        hR = T
    elif tail == "open":
        chk = is_stable(A)
        if not chk:
            raise PreconditionError("open-tail SLP needs a Schur-stable A")
        hR = eval_horizon(P, T) if eval_h is None else eval_h
    else:
        raise ValueError(f"unknown tail mode {tail!r}")
    sp = VarSpace()
    R = sp.add("R", (n, n), hR, strictly_proper=True)
    M = sp.add("M", (nu, n), hR, strictly_proper=True)
    N = sp.add("N", (n, ny), hR, strictly_proper=True)
    L = sp.add("L", (nu, ny), T)
    I = FIR.identity(n)
    eqs = {
        "6a_R": R.shift(-1) - R.lmul(A) - M.lmul(B2) - I,
        "6a_N": N.shift(-1) - N.lmul(A) - L.lmul(B2),
        "6b_R": R.shift(-1) - R.rmul(A) - N.rmul(C2) - I,
        "6b_M": M.shift(-1) - M.rmul(A) - L.rmul(C2),
    }
    prog = LeastSquaresProgram(sp)
    for name, e in eqs.items():
        prog.require_zero(e if tail == "closed" else e.window(0, hR - 1), name)
    prog.minimize(_slp_objective(P, R, M, N, L))
    prog.tiebreak = ["L"]
    prog.meta.update(route="slp", P=P, T=T, tail=tail, exprs={"R": R, "M": M, "N": N, "L": L})

    def build(x):
        s = SlpQuadruple(*(sp.unpack(x, k) for k in "RMNL"))
        return s, FractionController(s.L, np.eye(ny) + C2 @ s.N, "slp")

    prog.meta["build"] = build
    return prog


def assemble_state_feedback_slp_program(P: StateSpacePlant, T: Optional[int] = None) -> LeastSquaresProgram:
    """Reduced SLP for C2 = I: (zI - A) R - B2 M = I, K = M R^-1, with the
    objective written through N = R (zI - A) - I and L = M (zI - A)."""
    _require_identity(P.C2, "C2")
    T = default_horizon(P) if T is None else T
    A, B2 = P.A, P.B2
    n, nu = P.n, P.nu
    sp = VarSpace()
    R = sp.add("R", (n, n), T, strictly_proper=True)
    M = sp.add("M", (nu, n), T, strictly_proper=True)
    prog = LeastSquaresProgram(sp)
    prog.require_zero(R.shift(-1) - R.lmul(A) - M.lmul(B2) - FIR.identity(n), "27")
    N = R.shift(-1) - R.rmul(A) - FIR.identity(n)
    L = M.shift(-1) - M.rmul(A)
    prog.minimize(_slp_objective(P, R, M, N, L))
    prog.meta.update(route="slp-state-feedback", P=P, T=T, exprs={"R": R, "M": M})

    def build(x):
        Rv, Mv = sp.unpack(x, "R"), sp.unpack(x, "M")
        return {"R": Rv, "M": Mv}, FractionController(Mv.shift(-1), Rv.shift(-1), "slp-state-feedback")

    prog.meta["build"] = build
    return prog


# ---------------------------------------------------------------------------
# IOP
# ---------------------------------------------------------------------------


def assemble_iop_program(P: StateSpacePlant, T: Optional[int] = None,
                         eval_h: Optional[int] = None) -> LeastSquaresProgram:
    """minimize ||P11 + P12 U P21|| over the IOP subspace (stable A).

    U has horizon T; Y, W, Z are expanded to the evaluation horizon and the
    four affine constraints are imposed on every coefficient through it.
    """
    chk = is_stable(P.A)
    if not chk:
        raise PreconditionError(f"IOP synthesis needs a Schur-stable A (spectral radius {chk.spectral_radius:.4g})")
    T = default_horizon(P) if T is None else T
    Te = eval_horizon(P, T) if eval_h is None else eval_h
    ny, nu = P.ny, P.nu
    P22 = markov_expand(P.P22, Te)
    P11, P12, P21 = (markov_expand(s, Te) for s in (P.P11, P.P12, P.P21))
    sp = VarSpace()
    Y = sp.add("Y", (ny, ny), Te)
    U = sp.add("U", (nu, ny), T)
    W = sp.add("W", (ny, nu), Te)
    Z = sp.add("Z", (nu, nu), Te)
    Iy, Iu = FIR.identity(ny), FIR.identity(nu)
    prog = LeastSquaresProgram(sp)
    prog.require_zero((Y - U.lmul(P22) - Iy).window(0, Te), "9a_left")
    prog.require_zero((W - Z.lmul(P22)).window(0, Te), "9a_right")
    prog.require_zero((W - Y.rmul(P22)).window(0, Te), "9b_top")
    prog.require_zero((Z - U.rmul(P22) - Iu).window(0, Te), "9b_bottom")
    prog.minimize(U.lmul(P12).rmul(P21) + P11)
    prog.tiebreak = ["U"]
    prog.meta.update(route="iop", P=P, T=T, exprs={"Y": Y, "U": U, "W": W, "Z": Z})

    def build(x):
        q = IopQuadruple(*(sp.unpack(x, k) for k in "YUWZ"))
        return q, FractionController(q.U, q.Y, "iop")

    prog.meta["build"] = build
    return prog


def assemble_state_feedback_iop_program(P: StateSpacePlant, T: Optional[int] = None) -> LeastSquaresProgram:
    """Reduced IOP for C2 = I and invertible B2: W = P22 Z, K = (Z - I) W^-1.

    Z_0 = I is imposed so that the completion U = (Z - I) B2^-1 (zI - A) is proper.
    """
    _require_identity(P.C2, "C2")
    B2 = P.B2
    if B2.shape[0] != B2.shape[1] or np.linalg.matrix_rank(B2) < B2.shape[0]:
        raise PreconditionError("B2 must be square and invertible for the reduced IOP")
    T = default_horizon(P) if T is None else T
    A = P.A
    n, nu = P.n, P.nu
    B2inv = np.linalg.inv(B2)
    sp = VarSpace()
    W = sp.add("W", (n, nu), T, strictly_proper=True)
    Z = sp.add("Z", (nu, nu), T)
    prog = LeastSquaresProgram(sp)
    prog.require_zero(W.shift(-1) - W.lmul(A) - Z.lmul(B2), "29")
    prog.require_zero(Z.coefficient(0) - np.eye(nu), "Z0")
    Wb = W.rmul(B2inv)
    Zb = (Z - FIR.identity(nu)).rmul(B2inv)
    # objective through R = W B2^-1, M = (Z - I) B2^-1 and their completions
    N = Wb.shift(-1) - Wb.rmul(A) - FIR.identity(n)
    L = Zb.shift(-1) - Zb.rmul(A)
    prog.minimize(_slp_objective(P, Wb, Zb, N, L))
    prog.meta.update(route="iop-state-feedback", P=P, T=T, exprs={"W": W, "Z": Z, "Zm": Z - FIR.identity(nu)})

    def build(x):
        Wv, Zv = sp.unpack(x, "W"), sp.unpack(x, "Z")
        Zm = Zv - np.eye(nu)
        return {"W": Wv, "Z": Zv}, FractionController(Zm.shift(-1), Wv.shift(-1), "iop-state-feedback")

    prog.meta["build"] = build
    return prog


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------


def solve(prog: LeastSquaresProgram) -> SynthesisResult:
    t0 = time.perf_counter()
    sol = solve_equality_ls(prog)
    params, K = prog.meta["build"](sol.x)
    res = {"constraint": sol.constraint_residual, "rank": sol.rank, "redundant_rows": sol.redundant_rows}
    if "tmat_residual" in prog.meta:
        res["truncation"] = prog.meta["tmat_residual"]
    return SynthesisResult(prog.meta["route"], K, params, sol.cost(), sol, res,
                           time.perf_counter() - t0, bool(prog.meta.get("inner_approx", False)))


def synthesize(P: StateSpacePlant, route: str, T: Optional[int] = None,
               f: Optional[DoublyCoprimeFactors] = None, **kw) -> SynthesisResult:
    """Unstructured H2 synthesis through one parameterization."""
    return solve(_assemble(P, route, T, f, **kw))


def _assemble(P, route, T, f=None, **kw) -> LeastSquaresProgram:
    if route == "youla":
        if f is None:
            from .coprime import doubly_coprime_general
            f = doubly_coprime_stable(P) if is_stable(P.A) else doubly_coprime_general(P)
        return assemble_youla_program(P, f, T, **kw)
    if route == "slp":
        return assemble_slp_program(P, T, **kw)
    if route == "iop":
        return assemble_iop_program(P, T, **kw)
    raise ValueError(f"unknown route {route!r}")


# ---------------------------------------------------------------------------
# Structured synthesis
# ---------------------------------------------------------------------------

_QI_TARGET = {"youla": "U", "iop": "U", "slp": "L"}


def synthesize_structured(P: StateSpacePlant, T: Optional[int], Lpat: SparsityPattern, route: str,
                          f: Optional[DoublyCoprimeFactors] = None, **kw) -> SynthesisResult:
    """K in Lpat under quadratic invariance, imposed as (Vr - Mr Q) Ml, U or L in Lpat."""
    if Lpat.shape != (P.nu, P.ny):
        raise ValueError(f"pattern must be {P.nu}x{P.ny}")
    if not qi_test(Lpat, plant_pattern(P)):
        raise QIViolation("constraint is not quadratically invariant under P22; "
                          "use the sparsity-invariance route instead")
    prog = _assemble(P, route, T, f, **kw)
    prog.require_pattern(prog.meta["exprs"][_QI_TARGET[route]], Lpat.mask, "structure")
    return solve(prog)


def synthesize_si(P: StateSpacePlant, T: Optional[int], Lpat: SparsityPattern, route: str,
                  f: Optional[DoublyCoprimeFactors] = None) -> SynthesisResult:
    """Sparsity-invariance inner approximation K = S T^-1 with S in Lpat and T diagonal.

    slp:   M in Lpat, R diagonal         (K = M R^-1, C2 = I)
    youla: Vr - Mr Q in Lpat, Ur - Nr Q diagonal  (B2 = C2 = I by default)
    iop:   Z - I in Lpat, W diagonal     (K = (Z - I) W^-1, C2 = I, B2 invertible)
    """
    if Lpat.shape != (P.nu, P.ny):
        raise ValueError(f"pattern must be {P.nu}x{P.ny}")
    if route == "slp":
        prog = assemble_state_feedback_slp_program(P, T)
        S, D = prog.meta["exprs"]["M"], prog.meta["exprs"]["R"]
    elif route == "youla":
        f = doubly_coprime_state_feedback(P) if f is None else f
        prog = assemble_youla_program(P, f, T)
        S, D = prog.meta["exprs"]["num"], prog.meta["exprs"]["den"]
    elif route == "iop":
        prog = assemble_state_feedback_iop_program(P, T)
        S, D = prog.meta["exprs"]["Zm"], prog.meta["exprs"]["W"]
    else:
        raise ValueError(f"unknown route {route!r}")
    diag = np.eye(D.shape[0], dtype=bool)
    if D.shape[0] != D.shape[1]:
        raise PreconditionError("diagonal factor must be square")
    prog.require_pattern(S, Lpat.mask, "S in L")
    prog.require_pattern(D, diag, "T diagonal")
    prog.meta["inner_approx"] = True
    return solve(prog)


# ---------------------------------------------------------------------------
# Constraint transfer
# ---------------------------------------------------------------------------


@dataclass
class SlsConstraint:
    """Block sparsity patterns and coefficient bounds on (R, M, N, L)."""

    patterns: dict = field(default_factory=dict)  # name -> SparsityPattern
    bounds: dict = field(default_factory=dict)  # name -> (lo, hi) applied to every coefficient

    def __post_init__(self):
        for k in list(self.patterns) + list(self.bounds):
            if k not in ("R", "M", "N", "L"):
                raise ValueError(f"unknown SLS block {k!r}")
        for k, b in self.bounds.items():
            lo, hi = b
            if lo > hi:
                raise ValueError(f"empty bound interval for {k}")


def _slp_exprs_of_u(P: StateSpacePlant, U: Affine, horizon: int):
    """(R, M, N, L) as affine functions of U through the closed-loop resolvents."""
    A = P.A
    M = U.rmul(P.C2).apply(lambda g: resolvent_right(g, A, horizon))
    N = U.lmul(P.B2).apply(lambda g: resolvent_left(A, g, horizon))
    R = (M.lmul(P.B2) + FIR.identity(P.n)).apply(lambda g: resolvent_left(A, g, horizon))
    return {"R": R, "M": M, "N": N, "L": U}


def _apply_bounds_as_equalities(prog, exprs, S: SlsConstraint, horizon=None):
    for k, (lo, hi) in S.bounds.items():
        e = exprs[k] if horizon is None else exprs[k].window(0, horizon)
        prog.require_zero(e - FIR(np.full((e.horizon + 1,) + e.shape, lo)), f"S:{k}=")


def sls_transfer(P: StateSpacePlant, f: Optional[DoublyCoprimeFactors], S: SlsConstraint, target: str,
                 T: Optional[int] = None, eval_h: Optional[int] = None) -> LeastSquaresProgram:
    """Pose the SLS problem with constraint S over the Youla parameter or the IOP quadruple.

    The SLP responses are substituted as affine functions of Q (through
    U = (Vr - Mr Q) Ml) or of U, and the same objective and constraint S are
    imposed on them. For a stable plant the direct counterpart is
    ``assemble_slp_program(P, T, tail="open")`` with S on its variables.
    """
    T = default_horizon(P) if T is None else T
    for k, (lo, hi) in S.bounds.items():
        if lo != hi:
            raise ValueError("only degenerate bounds (lo == hi) are expressible as equalities")
    if target == "youla":
        if f is None:
            raise ValueError("the Youla target needs a factorization")
        prog = assemble_youla_program(P, f, T, eval_h)
        U = prog.meta["exprs"]["U"]
    elif target == "iop":
        prog = assemble_iop_program(P, T, eval_h)
        U = prog.meta["exprs"]["U"]
    else:
        raise ValueError(f"unknown target {target!r}")
    stable = bool(is_stable(P.A))
    Te = (eval_horizon(P, T) if eval_h is None else eval_h) if stable else None
    rh = Te if Te is not None else U.horizon + 2 * P.n + 2
    exprs = _slp_exprs_of_u(P, U, rh)
    if Te is not None:
        exprs = {k: (v.window(0, Te) if k != "L" else v) for k, v in exprs.items()}
    # replace the objective by the SLP objective of the substituted responses
    prog.objective = [_slp_objective(P, exprs["R"], exprs["M"], exprs["N"], exprs["L"])]
    for k, pat in S.patterns.items():
        prog.require_pattern(exprs[k], pat.mask, f"S:{k}")
    _apply_bounds_as_equalities(prog, exprs, S)
    prog.meta["sls_exprs"] = exprs
    prog.meta["route"] = f"sls-{target}"
    return prog


def direct_sls_program(P: StateSpacePlant, S: SlsConstraint, T: Optional[int] = None,
                       tail: Optional[str] = None, eval_h: Optional[int] = None) -> LeastSquaresProgram:
    """The SLS problem posed directly over (R, M, N, L)."""
    tail = ("open" if is_stable(P.A) else "closed") if tail is None else tail
    prog = assemble_slp_program(P, T, tail=tail, eval_h=eval_h)
    for k, (lo, hi) in S.bounds.items():
        if lo != hi:
            raise ValueError("only degenerate bounds (lo == hi) are expressible as equalities")
    exprs = prog.meta["exprs"]
    for k, pat in S.patterns.items():
        prog.require_pattern(exprs[k], pat.mask, f"S:{k}")
    _apply_bounds_as_equalities(prog, exprs, S)
    return prog


# ---------------------------------------------------------------------------
# Example 1
# ---------------------------------------------------------------------------


def chain_adjacency(n: int) -> np.ndarray:
    """Path graph on n nodes with self loops (tridiagonal ones)."""
    return (np.abs(np.subtract.outer(np.arange(n), np.arange(n))) <= 1).astype(float)


def example1_plant(n: Optional[int] = None, graph_adjacency=None, A=None, rho: float = 0.5) -> StateSpacePlant:
    """x[t+1] = A x[t] + u[t] + w[t], cost on x only, full state measurement."""
    if A is None:
        G = chain_adjacency(n) if graph_adjacency is None else np.asarray(graph_adjacency, dtype=float)
        r = spectral_radius(G)
        if r == 0:
            raise ValueError("graph adjacency has zero spectral radius")
        A = G * (rho / r)
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    I = np.eye(n)
    return StateSpacePlant(A=A, B1=I, B2=I, C1=I, C2=I, name=f"example1-n{n}")


@dataclass
class Example1Report:
    A: np.ndarray
    results: dict  # route -> SynthesisResult
    k_error: dict  # route -> max |K + A| over the controller FIR
    cost_squared: dict

    def passed(self, k_tol: float = 1e-6, cost_tol: float = 1e-8) -> bool:
        n = self.A.shape[0]
        return all(self.k_error[r] <= k_tol and abs(self.cost_squared[r] - n) <= cost_tol for r in self.results)


def solve_example1(n: Optional[int] = None, graph_adjacency=None, T: int = 8, A=None) -> Example1Report:
    """Run the SLP, Youla and IOP sparsity-invariance routes with L = support(A)."""
    if T < 2:
        raise ValueError("Example 1 needs T >= 2")
    P = example1_plant(n, graph_adjacency, A)
    A = P.A
    Lpat = SparsityPattern.support(A)
    results, kerr, c2 = {}, {}, {}
    for route in ("slp", "youla", "iop"):
        r = synthesize_si(P, T, Lpat, route)
        results[route] = r
        Kf = r.controller_fir(T)
        kerr[route] = float(np.max(np.abs(Kf.coeffs - FIR.const(-A).pad(T).coeffs)))
        c2[route] = r.cost_squared
    return Example1Report(A, results, kerr, c2)
