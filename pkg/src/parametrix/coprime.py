"""Doubly-coprime factorizations of P22 and the Bezout identity check."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .lti import (FIR, SS, PreconditionError, StateSpacePlant, as_matrix, is_stable, markov_expand,
                  unit_circle_points)

BEZOUT_TOL = 1e-8
RICCATI_TOL = 1e-12
RICCATI_MAXITER = 10_000


@dataclass(frozen=True, eq=False)
class StabilizingGains:
    """State feedback F (A + B2 F Schur) and output injection L (A + L C2 Schur)."""

    F: np.ndarray
    L: np.ndarray
    mode: str = "deadbeat"  # "deadbeat", "riccati" or "mixed"

    def closed_loop(self, P: StateSpacePlant):
        return P.A + P.B2 @ self.F, P.A + self.L @ P.C2


@dataclass(frozen=True, eq=False)
class DoublyCoprimeFactors:
    """The eight stable factors with

        [[Ul, -Vl], [-Nl, Ml]] @ [[Mr, Vr], [Nr, Ur]] = I,
        P22 = Nr Mr^-1 = Ml^-1 Nl.
    """

    Ul: FIR
    Vl: FIR
    Nl: FIR
    Ml: FIR
    Ur: FIR
    Vr: FIR
    Nr: FIR
    Mr: FIR
    kind: str = "general"

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "kind"]

    @property
    def residual(self) -> float:
        return max(g.residual for _, g in self.items())

    @property
    def horizon(self) -> int:
        return max(g.horizon for _, g in self.items())

    def replace(self, **kw) -> "DoublyCoprimeFactors":
        d = dict(self.items(), kind=self.kind)
        d.update(kw)
        return DoublyCoprimeFactors(**d)


# ---------------------------------------------------------------------------
# Gains
# ---------------------------------------------------------------------------


def _ctrb(A, b):
    n = A.shape[0]
    cols = [b]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return np.hstack(cols)


def _is_nilpotent(M, tol=1e-9) -> bool:
    n = M.shape[0]
    if n == 0:
        return True
    scale = max(1.0, np.linalg.norm(M, 2)) ** n
    return bool(np.max(np.abs(np.linalg.matrix_power(M, n))) <= tol * scale)


def _deadbeat_feedback(A, B, seed: int = 0) -> Optional[np.ndarray]:
    """F with A + B F nilpotent, or None when (A, B) is not controllable.

    Full-row-rank B is handled directly (F = -B^+ A). Otherwise a rank-one
    pre-feedback makes the pair cyclic from a single input combination and an
    Ackermann step places every eigenvalue at the origin.
    """
    n, m = B.shape
    if n == 0:
        return np.zeros((m, 0))
    scale = max(1.0, np.linalg.norm(A), np.linalg.norm(B))
    if np.linalg.matrix_rank(_ctrb_full(A, B), tol=1e-9 * scale**n) < n:
        return None
    if np.linalg.matrix_rank(B, tol=1e-9 * scale) == n:
        return -np.linalg.pinv(B) @ A
    rng = np.random.default_rng(seed)
    # among candidates that are numerically nilpotent keep the smallest gain
    best, best_key = None, (True, np.inf)
    for attempt in range(40):
        g = rng.standard_normal((m, 1))
        F0 = np.zeros((m, n)) if attempt < 8 else rng.standard_normal((m, n))
        A0 = A + B @ F0
        b = B @ g
        C = _ctrb(A0, b)
        if np.linalg.cond(C) > 1e10:
            continue
        en = np.zeros(n)
        en[-1] = 1.0
        row = np.linalg.solve(C.T, en)
        k = -(row @ np.linalg.matrix_power(A0, n))[None, :]
        F = F0 + g @ k
        key = (not _is_nilpotent(A + B @ F, 1e-12), float(np.linalg.norm(F)))
        if key < best_key:
            best, best_key = F, key
    if best is not None and _is_nilpotent(A + B @ best):
        return best
    return None


def _ctrb_full(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def riccati_feedback(A, B, tol: float = RICCATI_TOL, maxiter: int = RICCATI_MAXITER) -> np.ndarray:
    """LQR gain with identity weights by fixed-point iteration of the Riccati map."""
    n, m = B.shape
    X = np.eye(n)
    for _ in range(maxiter):
        BtX = B.T @ X
        G = np.linalg.solve(np.eye(m) + BtX @ B, BtX @ A)
        Xn = A.T @ X @ A - A.T @ X @ B @ G + np.eye(n)
        if not np.all(np.isfinite(Xn)):
            break
        if np.max(np.abs(Xn - X)) <= tol * max(1.0, np.max(np.abs(Xn))):
            X = Xn
            F = -np.linalg.solve(np.eye(m) + B.T @ X @ B, B.T @ X @ A)
            if is_stable(A + B @ F):
                return F
            break
        X = Xn
    raise PreconditionError("Riccati iteration failed: the pair is not stabilizable")


def deadbeat_gains(P: StateSpacePlant) -> StabilizingGains:
    """Place every eigenvalue of A + B2 F and A + L C2 at the origin.

    Falls back to the identity-weighted Riccati gain for whichever pair is
    stabilizable (detectable) but not controllable (observable).
    """
    A, B2, C2 = P.A, P.B2, P.C2
    F = _deadbeat_feedback(A, B2)
    Lt = _deadbeat_feedback(A.T, C2.T)
    modes = []
    if F is None:
        F = riccati_feedback(A, B2)
        modes.append("riccati")
    else:
        modes.append("deadbeat")
    if Lt is None:
        L = riccati_feedback(A.T, C2.T).T
        modes.append("riccati")
    else:
        L = Lt.T
        modes.append("deadbeat")
    mode = modes[0] if modes[0] == modes[1] else "mixed"
    return StabilizingGains(F, L, mode)


def riccati_gains(P: StateSpacePlant) -> StabilizingGains:
    F = riccati_feedback(P.A, P.B2)
    L = riccati_feedback(P.A.T, P.C2.T).T
    return StabilizingGains(F, L, "riccati")


# ---------------------------------------------------------------------------
# Factorizations
# ---------------------------------------------------------------------------


def _settle_horizon(mats, tol: float = 1e-14, cap: int = 5000) -> int:
    """Smallest T with ||M^T|| <= tol for every (Schur stable) M."""
    T = 0
    for M in mats:
        n = M.shape[0]
        if n == 0:
            continue
        # no shortcut for nilpotent M: a computed deadbeat loop only reaches
        # M^n ~ 1e-12, and the next power or two bring it below tol
        Mk = np.eye(n)
        k = 0
        while np.max(np.abs(Mk)) > tol and k < cap:
            Mk = Mk @ M
            k += 1
        T = max(T, k)
    return T


def observer_factor_realizations(P: StateSpacePlant, gains: StabilizingGains):
    """State-space realizations of the eight observer-based factors."""
    A, B2, C2 = P.A, P.B2, P.C2
    F, L = as_matrix(gains.F), as_matrix(gains.L)
    nu, ny = P.nu, P.ny
    AF, AL = A + B2 @ F, A + L @ C2
    return dict(
        Mr=SS(AF, B2, F, np.eye(nu)),
        Nr=SS(AF, B2, C2, np.zeros((ny, nu))),
        Vr=SS(AF, -L, F, np.zeros((nu, ny))),
        Ur=SS(AF, -L, C2, np.eye(ny)),
        Ul=SS(AL, -B2, F, np.eye(nu)),
        Vl=SS(AL, -L, F, np.zeros((nu, ny))),
        Nl=SS(AL, B2, C2, np.zeros((ny, nu))),
        Ml=SS(AL, L, C2, np.eye(ny)),
    )


def doubly_coprime_general(P: StateSpacePlant, gains: Optional[StabilizingGains] = None,
                           horizon: Optional[int] = None, offset=None,
                           npoints: int = 16) -> DoublyCoprimeFactors:
    """Observer-based doubly-coprime factorization from gains (F, L).

    ``offset`` (a constant nu x ny matrix Q0) shifts the central controller:
    Vr -> Vr - Mr Q0, Ur -> Ur - Nr Q0, Vl -> Vl - Q0 Ml, Ul -> Ul - Q0 Nl,
    which preserves the Bezout identity.
    """
    if gains is None:
        try:
            return doubly_coprime_general(P, deadbeat_gains(P), horizon, offset, npoints)
        except (ArithmeticError, PreconditionError):
            # deadbeat gains can be too large to factor accurately
            gains = riccati_gains(P)
    AF, AL = gains.closed_loop(P)
    if not (is_stable(AF) and is_stable(AL)):
        raise PreconditionError("gains do not stabilize A + B2 F and A + L C2")
    auto = horizon is None
    if auto:
        horizon = max(P.n, _settle_horizon([AF, AL]))
    real = observer_factor_realizations(P, gains)
    while True:
        f = _expand_factors(P, real, horizon, offset, gains.mode)
        rep = verify_bezout(f, P, npoints)
        if rep.passed:
            break
        # a numerically nilpotent closed loop can leave a slowly decaying tail
        if not auto or horizon >= 4096:
            raise ArithmeticError(f"Bezout residual {rep.max_residual:.3e} exceeds tolerance; "
                                  f"horizon {horizon} too short")
        horizon *= 2
    return f


def _expand_factors(P, real, horizon, offset, mode):
    facs = {k: markov_expand(v, horizon) for k, v in real.items()}
    if offset is not None:
        Q0 = as_matrix(offset)
        if Q0.shape != (P.nu, P.ny):
            raise ValueError(f"offset must be {P.nu}x{P.ny}")
        facs["Vr"] = facs["Vr"] - facs["Mr"] @ Q0
        facs["Ur"] = facs["Ur"] - facs["Nr"] @ Q0
        facs["Vl"] = facs["Vl"] - Q0 @ facs["Ml"]
        facs["Ul"] = facs["Ul"] - Q0 @ facs["Nl"]
    return DoublyCoprimeFactors(kind=f"general-{mode}", **facs)


def doubly_coprime_stable(P: StateSpacePlant, horizon: Optional[int] = None) -> DoublyCoprimeFactors:
    """Trivial factorization of a stable plant: Ul = Ur = Ml = Mr = I, Vl = Vr = 0, Nl = Nr = P22."""
    chk = is_stable(P.A)
    if not chk:
        raise PreconditionError(f"A is not Schur stable (spectral radius {chk.spectral_radius:.4g})")
    if horizon is None:
        horizon = max(1, _settle_horizon([P.A]) + 1)
    nu, ny = P.nu, P.ny
    p22 = markov_expand(P.P22, horizon)
    tail = markov_expand(P.P22, horizon + P.n + 1).coeffs[horizon + 1 :]
    p22 = FIR(p22.coeffs, float(np.max(np.abs(tail), initial=0.0)))
    I_u, I_y = FIR.identity(nu), FIR.identity(ny)
    Z = FIR.zeros(nu, ny)
    return DoublyCoprimeFactors(Ul=I_u, Vl=Z, Nl=p22, Ml=I_y, Ur=I_y, Vr=Z, Nr=p22, Mr=I_u, kind="stable")


def _require_identity(M, name):
    M = np.asarray(M)
    if M.shape[0] != M.shape[1] or not np.allclose(M, np.eye(M.shape[0]), atol=1e-12, rtol=0):
        raise PreconditionError(f"{name} must be the identity for the state-feedback factorization")


def doubly_coprime_state_feedback(P: StateSpacePlant) -> DoublyCoprimeFactors:
    """Exact horizon-1 factors for B2 = C2 = I:
    Ul = Ur = I, Vl = Vr = -A, Nl = Nr = z^-1 I, Ml = Mr = I - z^-1 A."""
    _require_identity(P.B2, "B2")
    _require_identity(P.C2, "C2")
    A = P.A
    n = P.n
    I = FIR.identity(n)
    shift = FIR.delay(np.eye(n))
    M = FIR.from_list([np.eye(n), -A])
    V = FIR.const(-A)
    return DoublyCoprimeFactors(Ul=I, Vl=V, Nl=shift, Ml=M, Ur=I, Vr=V, Nr=shift, Mr=M, kind="state-feedback")


@dataclass(frozen=True)
class BezoutReport:
    max_residual: float
    bezout_residual: float
    factor_residual: float
    skipped: int
    npoints: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tol


def verify_bezout(f: DoublyCoprimeFactors, P: StateSpacePlant, npoints: int = 16,
                  tol: float = BEZOUT_TOL) -> BezoutReport:
    """Check the Bezout identity and P22 = Nr Mr^-1 = Ml^-1 Nl on the unit circle.

    Sample points where Mr, Ml or (zI - A) are singular are skipped and counted.
    """
    ny, nu = P.ny, P.nu
    I = np.eye(nu + ny)
    bez = fac = 0.0
    skipped = 0
    for z in unit_circle_points(npoints):
        E = {k: g.eval(z) for k, g in f.items()}
        left = np.block([[E["Ul"], -E["Vl"]], [-E["Nl"], E["Ml"]]])
        right = np.block([[E["Mr"], E["Vr"]], [E["Nr"], E["Ur"]]])
        bez = max(bez, float(np.max(np.abs(left @ right - I))))
        zA = z * np.eye(P.n) - P.A
        if min(np.linalg.cond(E["Mr"]), np.linalg.cond(E["Ml"]), np.linalg.cond(zA) if P.n else 1.0) > 1e12:
            skipped += 1
            continue
        p22 = P.P22.eval(z)
        # multiplied through by Mr and Ml: no inverse of a nearly singular factor
        r1 = E["Nr"] - p22 @ E["Mr"]
        r2 = E["Nl"] - E["Ml"] @ p22
        fac = max(fac, float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))
    return BezoutReport(max(bez, fac), bez, fac, skipped, npoints, tol)
