"""Youla, system-level and input-output parameterizations and the affine maps between them."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .coprime import DoublyCoprimeFactors, PreconditionError, doubly_coprime_state_feedback
from .lti import (FIR, Controller, StateSpacePlant, as_matrix, fir_inverse, fir_mul, is_stable,
                  markov_expand, polynomial_shift_mul, resolvent_left, resolvent_right,
                  right_fraction_realization, unit_circle_points)

DEFAULT_TOL = 1e-8
NPOINTS = 16


def verification_tol() -> float:
    """Frequency-domain verification tolerance (PARAMETRIX_TOL overrides)."""
    raw = os.environ.get("PARAMETRIX_TOL")
    return float(raw) if raw else DEFAULT_TOL


def _maybe_truncate(g: FIR, horizon: Optional[int]) -> FIR:
    return g if horizon is None else g.truncate(horizon)


class _Tuple:
    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def residual(self) -> float:
        return max(g.residual for _, g in self.items())

    def truncate(self, horizon: int):
        return type(self)(**{k: g.truncate(horizon) for k, g in self.items()})

    def __add__(self, other):
        return type(self)(**{k: g + getattr(other, k) for k, g in self.items()})

    def __sub__(self, other):
        return type(self)(**{k: g - getattr(other, k) for k, g in self.items()})

    def __mul__(self, a):
        return type(self)(**{k: g * a for k, g in self.items()})

    __rmul__ = __mul__

    def max_diff(self, other) -> float:
        out = 0.0
        for k, g in self.items():
            h = getattr(other, k)
            T = max(g.horizon, h.horizon)
            out = max(out, float(np.max(np.abs(g.pad(T).coeffs - h.pad(T).coeffs))))
        return out


@dataclass(frozen=True, eq=False)
class YoulaParam(_Tuple):
    Q: FIR


@dataclass(frozen=True, eq=False)
class IopQuadruple(_Tuple):
    Y: FIR
    U: FIR
    W: FIR
    Z: FIR


@dataclass(frozen=True, eq=False)
class SlpQuadruple(_Tuple):
    R: FIR
    M: FIR
    N: FIR
    L: FIR


# ---------------------------------------------------------------------------
# Controllers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FractionController:
    """K = num @ den^-1 with FIR numerator and denominator (den_0 invertible)."""

    num: FIR
    den: FIR
    label: str = ""

    def eval(self, z: complex) -> np.ndarray:
        return np.linalg.solve(self.den.eval(z).T, self.num.eval(z).T).T

    def fir(self, horizon: int) -> FIR:
        return fir_mul(self.num, fir_inverse(self.den, horizon), horizon)

    def realize(self) -> Controller:
        return right_fraction_realization(self.num, self.den)

    @property
    def shape(self):
        return self.num.shape


def controller_agreement(ctrls, npoints: int = NPOINTS) -> float:
    """Largest pairwise difference of controller frequency responses."""
    worst = 0.0
    for z in unit_circle_points(npoints):
        vals = [c.eval(z) for c in ctrls]
        for v in vals[1:]:
            worst = max(worst, float(np.max(np.abs(v - vals[0]))))
    return worst


def youla_controller(f: DoublyCoprimeFactors, q: YoulaParam) -> FractionController:
    Q = q.Q
    return FractionController(f.Vr - f.Mr @ Q, f.Ur - f.Nr @ Q, "youla")


def iop_controller(x: IopQuadruple) -> FractionController:
    return FractionController(x.U, x.Y, "iop")


def slp_controller(s: SlpQuadruple, C2) -> FractionController:
    """K = L (I + C2 N)^-1, which equals L - M R^-1 N on the SLP subspace."""
    C2 = as_matrix(C2)
    return FractionController(s.L, FIR.identity(C2.shape[0]) + C2 @ s.N, "slp")


def k_from_youla(f: DoublyCoprimeFactors, q: YoulaParam, horizon: int) -> FIR:
    """FIR of (Vr - Mr Q)(Ur - Nr Q)^-1 through ``horizon``."""
    return youla_controller(f, q).fir(horizon)


def k_from_iop(x: IopQuadruple, horizon: int) -> FIR:
    """FIR of U Y^-1 through ``horizon``."""
    return fir_mul(x.U, fir_inverse(x.Y, horizon), horizon)


def k_from_slp(s: SlpQuadruple, horizon: int, C2=None) -> FIR:
    """FIR of L - M R^-1 N through ``horizon``.

    With C2 the identity L (I + C2 N)^-1 is used, which needs only a proper
    inverse. Otherwise R^-1 N = (zR)^-1 (zN), where zR has leading coefficient R_1.
    """
    if C2 is not None:
        return slp_controller(s, C2).fir(horizon)
    zR, zN = s.R.shift(-1), s.N.shift(-1)
    RinvN = fir_mul(fir_inverse(zR, horizon), zN, horizon)
    return (s.L - fir_mul(s.M, RinvN, horizon)).truncate(horizon)


# ---------------------------------------------------------------------------
# Affine maps between the parameterizations
# ---------------------------------------------------------------------------


def youla_to_iop(f: DoublyCoprimeFactors, q: YoulaParam, horizon: Optional[int] = None) -> IopQuadruple:
    """Y = (Ur - Nr Q) Ml, U = (Vr - Mr Q) Ml, W = (Ur - Nr Q) Nl, Z = I + (Vr - Mr Q) Nl."""
    Q = q.Q
    den = f.Ur - f.Nr @ Q
    num = f.Vr - f.Mr @ Q
    nu = num.shape[0]
    out = IopQuadruple(Y=den @ f.Ml, U=num @ f.Ml, W=den @ f.Nl, Z=FIR.identity(nu) + num @ f.Nl)
    return out if horizon is None else out.truncate(horizon)


def iop_to_youla(f: DoublyCoprimeFactors, x: IopQuadruple, horizon: Optional[int] = None) -> YoulaParam:
    """Q = Vl Y Ur - Ul U Ur - Vl W Vr + Ul Z Vr - Vl Ur."""
    Q = (f.Vl @ x.Y @ f.Ur - f.Ul @ x.U @ f.Ur - f.Vl @ x.W @ f.Vr
         + f.Ul @ x.Z @ f.Vr - f.Vl @ f.Ur)
    return YoulaParam(_maybe_truncate(Q, horizon))


def slp_to_iop(P: StateSpacePlant, s: SlpQuadruple) -> IopQuadruple:
    """Y = C2 N + I, U = L, W = C2 R B2, Z = M B2 + I."""
    return IopQuadruple(
        Y=P.C2 @ s.N + np.eye(P.ny),
        U=s.L,
        W=P.C2 @ s.R @ P.B2,
        Z=s.M @ P.B2 + np.eye(P.nu),
    )


def iop_to_slp(P: StateSpacePlant, x: IopQuadruple, horizon: Optional[int] = None) -> SlpQuadruple:
    """R = (zI-A)^-1 + (zI-A)^-1 B2 U C2 (zI-A)^-1, M = U C2 (zI-A)^-1,
    N = (zI-A)^-1 B2 U, L = U.

    Every product is a closed-loop response and hence stable even when A is
    not; the resolvent splits A spectrally so that no unstable open-loop
    expansion is ever formed. ``horizon`` bounds the stable-mode expansion.
    """
    A = P.A
    U = x.U
    T = horizon if horizon is not None else U.horizon + 2 * P.n + 2
    M = resolvent_right(U @ P.C2, A, T)
    N = resolvent_left(A, P.B2 @ U, T)
    R = resolvent_left(A, np.eye(P.n) + P.B2 @ M, T)
    s = SlpQuadruple(R=R, M=M, N=N, L=U)
    return s.truncate(horizon) if horizon is not None else _trim_exact(s)


def _trim_exact(s: SlpQuadruple) -> SlpQuadruple:
    T = max(max(g.degree(1e-300), 0) for _, g in s.items())
    return SlpQuadruple(**{k: g.pad(T).truncate(T) for k, g in s.items()})


def youla_to_slp(P: StateSpacePlant, f: DoublyCoprimeFactors, q: YoulaParam,
                 horizon: Optional[int] = None) -> SlpQuadruple:
    return iop_to_slp(P, youla_to_iop(f, q), horizon)


def slp_to_youla(P: StateSpacePlant, f: DoublyCoprimeFactors, s: SlpQuadruple,
                 horizon: Optional[int] = None) -> YoulaParam:
    """Q = Vl C2 N Ur - Ul L Ur - Vl C2 R B2 Vr + Ul M B2 Vr + Ul Vr."""
    C2, B2 = P.C2, P.B2
    Q = (f.Vl @ (C2 @ s.N) @ f.Ur - f.Ul @ s.L @ f.Ur - f.Vl @ (C2 @ s.R @ B2) @ f.Vr
         + f.Ul @ (s.M @ B2) @ f.Vr + f.Ul @ f.Vr)
    return YoulaParam(_maybe_truncate(Q, horizon))


# ---------------------------------------------------------------------------
# Subspace verification
# ---------------------------------------------------------------------------


@dataclass
class SubspaceReport:
    max_residual: float
    residuals: dict
    flags: dict = field(default_factory=dict)
    tol: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return self.max_residual < self.tol and all(self.flags.values())

    def as_dict(self) -> dict:
        return {"max_residual": self.max_residual, "pass": self.passed, "tol": self.tol,
                "residuals": dict(self.residuals), "flags": dict(self.flags)}


def verify_iop_subspace(P: StateSpacePlant, x: IopQuadruple, npoints: int = NPOINTS,
                        tol: Optional[float] = None) -> SubspaceReport:
    """[I, -P22][Y; U] = I, [I, -P22][W; Z] = 0, [Y W; U Z][-P22; I] = [0; I] on the unit circle."""
    tol = verification_tol() if tol is None else tol
    Iy, Iu = np.eye(P.ny), np.eye(P.nu)
    res = {"9a_left": 0.0, "9a_right": 0.0, "9b_top": 0.0, "9b_bottom": 0.0}
    for z in unit_circle_points(npoints):
        p22 = P.P22.eval(z)
        Y, U, W, Zm = (g.eval(z) for g in (x.Y, x.U, x.W, x.Z))
        res["9a_left"] = max(res["9a_left"], float(np.max(np.abs(Y - p22 @ U - Iy))))
        res["9a_right"] = max(res["9a_right"], float(np.max(np.abs(W - p22 @ Zm))))
        res["9b_top"] = max(res["9b_top"], float(np.max(np.abs(-Y @ p22 + W))))
        res["9b_bottom"] = max(res["9b_bottom"], float(np.max(np.abs(-U @ p22 + Zm - Iu))))
    return SubspaceReport(max(res.values()), res, {}, tol)


def slp_recursion_residuals(P: StateSpacePlant, s: SlpQuadruple) -> dict:
    """Coefficient residuals of (zI-A)[R N] - B2[M L] = [I 0] and
    [R N; M L](zI-A; -C2) = [I; 0], including the closure at the last index."""
    A, B2, C2 = P.A, P.B2, P.C2
    n = P.n
    T = max(g.horizon for _, g in s.items()) + 1
    R, M, N, L = (g.pad(T) for g in (s.R, s.M, s.N, s.L))
    E = FIR.from_list([np.eye(n)])

    def advance(g):  # z g for strictly proper g
        return FIR(g.coeffs[1:])

    out = {
        "6a_R": (advance(R) - A @ R.truncate(T - 1) - B2 @ M.truncate(T - 1) - E).max_abs(),
        "6a_N": (advance(N) - A @ N.truncate(T - 1) - B2 @ L.truncate(T - 1)).max_abs(),
        "6b_R": (advance(R) - R.truncate(T - 1) @ A - N.truncate(T - 1) @ C2 - E).max_abs(),
        "6b_M": (advance(M) - M.truncate(T - 1) @ A - L.truncate(T - 1) @ C2).max_abs(),
    }
    return out


def verify_slp_subspace(P: StateSpacePlant, s: SlpQuadruple, tol: Optional[float] = None) -> SubspaceReport:
    tol = verification_tol() if tol is None else tol
    res = slp_recursion_residuals(P, s)
    flags = {f"{k}_strictly_proper": bool(np.max(np.abs(getattr(s, k).coeffs[0])) == 0.0)
             for k in ("R", "M", "N")}
    return SubspaceReport(max(res.values()), res, flags, tol)


# ---------------------------------------------------------------------------
# Reduced parameterizations
# ---------------------------------------------------------------------------


def _require_identity(M, name: str):
    M = np.asarray(M)
    if M.shape[0] != M.shape[1] or not np.allclose(M, np.eye(M.shape[0]), atol=1e-12, rtol=0):
        raise PreconditionError(f"{name} must be the identity for this reduction")


class StateFeedbackSLP:
    """K = M R^-1 with (zI - A) R - B2 M = I and R, M strictly proper (C2 = I)."""

    def __init__(self, P: StateSpacePlant):
        _require_identity(P.C2, "C2")
        self.P = P

    def residual(self, R: FIR, M: FIR) -> float:
        P = self.P
        T = max(R.horizon, M.horizon) + 1
        R, M = R.pad(T), M.pad(T)
        E = FIR.identity(P.n)
        lhs = FIR(R.coeffs[1:]) - P.A @ R.truncate(T - 1) - P.B2 @ M.truncate(T - 1) - E
        return max(lhs.max_abs(), float(np.max(np.abs(R.coeffs[0]))), float(np.max(np.abs(M.coeffs[0]))))

    def controller(self, R: FIR, M: FIR) -> FractionController:
        return FractionController(M.shift(-1), R.shift(-1), "slp-state-feedback")

    def complete(self, R: FIR, M: FIR) -> SlpQuadruple:
        """N = R (zI - A) - I, L = M (zI - A)."""
        A = self.P.A
        N = polynomial_shift_mul(R, A) - np.eye(self.P.n)
        return SlpQuadruple(R=R, M=M, N=N, L=polynomial_shift_mul(M, A)).truncate(max(R.horizon, M.horizon))


class StateFeedbackIOP:
    """K = (Z - I) W^-1 with W = P22 Z, Z proper and W strictly proper (C2 = I, B2 invertible)."""

    def __init__(self, P: StateSpacePlant):
        _require_identity(P.C2, "C2")
        if np.linalg.matrix_rank(P.B2) < P.n or P.B2.shape[0] != P.B2.shape[1]:
            raise PreconditionError("B2 must be square and invertible for this reduction")
        self.P = P
        self.B2inv = np.linalg.inv(P.B2)

    def residual(self, W: FIR, Z: FIR) -> float:
        """Coefficient residual of (zI - A) W = B2 Z."""
        P = self.P
        T = max(W.horizon, Z.horizon) + 1
        W, Z = W.pad(T), Z.pad(T)
        lhs = FIR(W.coeffs[1:]) - P.A @ W.truncate(T - 1) - P.B2 @ Z.truncate(T - 1)
        return max(lhs.max_abs(), float(np.max(np.abs(W.coeffs[0]))))

    def controller(self, W: FIR, Z: FIR) -> FractionController:
        Zm = Z - np.eye(self.P.nu)
        return FractionController(Zm.shift(-1), W.shift(-1), "iop-state-feedback")

    def complete(self, W: FIR, Z: FIR) -> IopQuadruple:
        """U = (Z - I) B2^-1 (zI - A), Y = W B2^-1 (zI - A)."""
        A = self.P.A
        Zm = Z - np.eye(self.P.nu)
        U = polynomial_shift_mul(Zm @ self.B2inv, A)
        Y = polynomial_shift_mul(W @ self.B2inv, A)
        return IopQuadruple(Y=Y, U=U, W=W, Z=Z)


class StateFeedbackYoula:
    """K = (-A - (I - A/z) Q)(I - Q/z)^-1 for B2 = C2 = I."""

    def __init__(self, P: StateSpacePlant):
        self.P = P
        self.factors = doubly_coprime_state_feedback(P)

    def controller(self, Q: FIR) -> FractionController:
        return youla_controller(self.factors, YoulaParam(Q))


def state_feedback_slp(P: StateSpacePlant) -> StateFeedbackSLP:
    return StateFeedbackSLP(P)


def state_feedback_iop(P: StateSpacePlant) -> StateFeedbackIOP:
    return StateFeedbackIOP(P)


def state_feedback_youla(P: StateSpacePlant) -> StateFeedbackYoula:
    return StateFeedbackYoula(P)


class StablePlantReductions:
    """One-parameter forms for stable plants; the same controller has L = U = -Q."""

    def __init__(self, P: StateSpacePlant, horizon: Optional[int] = None):
        chk = is_stable(P.A)
        if not chk:
            raise PreconditionError(f"A is not Schur stable (spectral radius {chk.spectral_radius:.4g})")
        self.P = P
        if horizon is None:
            from .coprime import _settle_horizon
            horizon = _settle_horizon([P.A]) + 1
        self.horizon = horizon
        self.P22 = markov_expand(P.P22, horizon)

    def youla_controller(self, Q: FIR) -> FractionController:
        """K = -Q (I - P22 Q)^-1."""
        return FractionController(-Q, np.eye(self.P.ny) - self.P22 @ Q, "youla-stable")

    def iop_controller(self, U: FIR) -> FractionController:
        """K = U Y^-1 with Y = I + P22 U."""
        return FractionController(U, np.eye(self.P.ny) + self.P22 @ U, "iop-stable")

    def slp_controller(self, L: FIR) -> FractionController:
        """K = L (C2 N + I)^-1 with N = (zI - A)^-1 B2 L."""
        N = resolvent_left(self.P.A, self.P.B2 @ L, self.horizon + L.horizon)
        return FractionController(L, self.P.C2 @ N + np.eye(self.P.ny), "slp-stable")

    def from_youla(self, Q: FIR) -> dict:
        """The three parameters describing the controller of Q."""
        return {"Q": Q, "U": -Q, "L": -Q}


def stable_plant_reductions(P: StateSpacePlant, horizon: Optional[int] = None) -> StablePlantReductions:
    return StablePlantReductions(P, horizon)
