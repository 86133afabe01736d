"""Discrete-time LTI substrate: state-space plants, FIR transfer matrices,
stability tests, closed-loop interconnection and the H2 norm.

FIR transfer matrices are stored as a stacked coefficient array of shape
``(T + 1, p, m)`` representing ``sum_k G[k] z^-k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as la

EPS_STAB = 1e-9
UNIT_CIRCLE_TOL = 1e-12


class PreconditionError(ValueError):
    """A hypothesis required by a construction does not hold."""


def as_matrix(x, rows: Optional[int] = None, cols: Optional[int] = None) -> np.ndarray:
    """Coerce scalars, vectors and nested lists to a 2-D float array."""
    m = np.array(x, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1) if rows != m.size else m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got array with ndim={m.ndim}")
    if m.size == 0 and rows is not None and cols is not None:
        m = np.zeros((rows, cols))
    return m


class SS(NamedTuple):
    """A state-space quadruple (A, B, C, D)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    @classmethod
    def make(cls, A, B, C, D) -> "SS":
        A = as_matrix(A)
        B = as_matrix(B, rows=A.shape[0])
        C = as_matrix(C)
        D = as_matrix(D)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ValueError(f"inconsistent realization: A{A.shape} B{B.shape} C{C.shape}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D has shape {D.shape}, expected {(C.shape[0], B.shape[1])}")
        return cls(A, B, C, D)

    def eval(self, z: complex) -> np.ndarray:
        """Evaluate C (zI - A)^-1 B + D at a complex point."""
        n = self.A.shape[0]
        if n == 0:
            return self.D.astype(complex)
        return self.C @ np.linalg.solve(z * np.eye(n) - self.A, self.B.astype(complex)) + self.D


# ---------------------------------------------------------------------------
# FIR transfer matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FIR:
    """Finite impulse response transfer matrix ``sum_k coeffs[k] z^-k``.

    ``residual`` accumulates the max-norm of coefficients that were discarded
    by truncating operations along the way to producing this value.
    """

    coeffs: np.ndarray
    residual: float = 0.0
    # make ``ndarray @ FIR`` and ``ndarray + FIR`` defer to the reflected ops
    __array_ufunc__ = None

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[0] == 0:
            raise ValueError(f"FIR coefficients must have shape (T+1, p, m), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "residual", float(self.residual))

    # -- constructors --------------------------------------------------------
    @classmethod
    def const(cls, matrix) -> "FIR":
        return cls(as_matrix(matrix)[None])

    @classmethod
    def zeros(cls, p: int, m: int, horizon: int = 0) -> "FIR":
        return cls(np.zeros((horizon + 1, p, m)))

    @classmethod
    def identity(cls, p: int, horizon: int = 0) -> "FIR":
        c = np.zeros((horizon + 1, p, p))
        c[0] = np.eye(p)
        return cls(c)

    @classmethod
    def delay(cls, matrix, k: int = 1) -> "FIR":
        """``matrix * z^-k``."""
        m = as_matrix(matrix)
        c = np.zeros((k + 1,) + m.shape)
        c[k] = m
        return cls(c)

    @classmethod
    def from_list(cls, mats: Sequence) -> "FIR":
        return cls(np.stack([as_matrix(m) for m in mats]))

    # -- shape ---------------------------------------------------------------
    @property
    def horizon(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[1:]

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def __getitem__(self, k: int) -> np.ndarray:
        if 0 <= k <= self.horizon:
            return self.coeffs[k]
        if k > self.horizon:
            return np.zeros(self.shape)
        raise IndexError(k)

    @property
    def T(self) -> "FIR":
        return FIR(self.coeffs.transpose(0, 2, 1), self.residual)

    def is_strictly_proper(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.coeffs[0]), initial=0.0) <= tol)

    def degree(self, tol: float = 0.0) -> int:
        """Index of the last coefficient with max-abs above ``tol`` (0 if none)."""
        mags = np.abs(self.coeffs).reshape(len(self), -1).max(axis=1, initial=0.0)
        nz = np.nonzero(mags > tol)[0]
        return int(nz[-1]) if nz.size else 0

    def pad(self, horizon: int) -> "FIR":
        if horizon <= self.horizon:
            return self
        c = np.zeros((horizon + 1,) + self.shape)
        c[: len(self)] = self.coeffs
        return FIR(c, self.residual)

    def truncate(self, horizon: int) -> "FIR":
        if horizon >= self.horizon:
            return self.pad(horizon)
        dropped = float(np.max(np.abs(self.coeffs[horizon + 1 :]), initial=0.0))
        return FIR(self.coeffs[: horizon + 1], max(self.residual, dropped))

    def trim(self, tol: float = 0.0) -> "FIR":
        return FIR(self.coeffs[: self.degree(tol) + 1], self.residual)

    def shift(self, k: int = 1) -> "FIR":
        """Multiply by ``z^-k`` (k >= 0) or advance by ``z^|k|`` (k < 0).

        Advancing discards the leading coefficients; their max-norm is
        folded into ``residual`` so that a non-causal result is never silent.
        """
        if k >= 0:
            c = np.concatenate([np.zeros((k,) + self.shape), self.coeffs])
            return FIR(c, self.residual)
        k = -k
        dropped = float(np.max(np.abs(self.coeffs[:k]), initial=0.0))
        c = self.coeffs[k:] if k <= self.horizon else np.zeros((1,) + self.shape)
        return FIR(c, max(self.residual, dropped))

    def blocks(self, rows: Sequence[int], cols: Sequence[int]) -> "FIR":
        return FIR(self.coeffs[:, rows][:, :, cols], self.residual)

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other) -> "FIR":
        if _foreign(other):
            return NotImplemented
        return fir_add(self, _lift(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other) -> "FIR":
        if _foreign(other):
            return NotImplemented
        return fir_add(self, -_lift(other, self.shape))

    def __rsub__(self, other) -> "FIR":
        return fir_add(_lift(other, self.shape), -self)

    def __neg__(self) -> "FIR":
        return FIR(-self.coeffs, self.residual)

    def __mul__(self, scalar) -> "FIR":
        return FIR(self.coeffs * float(scalar), self.residual * abs(float(scalar)))

    __rmul__ = __mul__

    def __matmul__(self, other) -> "FIR":
        if _foreign(other):
            return NotImplemented
        if not isinstance(other, FIR):
            return FIR(self.coeffs @ as_matrix(other), self.residual)
        return fir_mul(self, other)

    def __rmatmul__(self, other) -> "FIR":
        return FIR(as_matrix(other) @ self.coeffs, self.residual)

    def eval(self, z: complex) -> np.ndarray:
        return fir_eval(self, z, check=False)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def __repr__(self) -> str:
        return f"FIR(shape={self.shape}, horizon={self.horizon}, residual={self.residual:.2e})"


def _foreign(other) -> bool:
    # affine expressions of decision variables implement the reflected ops
    return hasattr(other, "lmul")


def _lift(other, shape) -> FIR:
    if isinstance(other, FIR):
        return other
    m = np.array(other, dtype=float)
    if m.ndim == 0:
        if shape[0] != shape[1]:
            raise ValueError("scalar lift needs a square FIR")
        m = m * np.eye(shape[0])
    return FIR.const(m)


def fir_add(a: FIR, b: FIR) -> FIR:
    """Coefficient-wise sum, zero-padding the shorter operand."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch in fir_add: {a.shape} vs {b.shape}")
    T = max(a.horizon, b.horizon)
    c = a.pad(T).coeffs + b.pad(T).coeffs
    return FIR(c, a.residual + b.residual)


def fir_mul(a: FIR, b: FIR, horizon: Optional[int] = None) -> FIR:
    """Truncated Cauchy product ``C_k = sum_j A_j B_{k-j}``.

    With ``horizon=None`` the full product (degree Ta + Tb) is returned.
    Otherwise coefficients beyond ``horizon`` are discarded and their max-norm
    is added to the residual.
    """
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch in fir_mul: {a.shape} @ {b.shape}")
    Ta, Tb = a.horizon, b.horizon
    full = np.zeros((Ta + Tb + 1, a.shape[0], b.shape[1]))
    for j in range(Ta + 1):
        full[j : j + Tb + 1] += a.coeffs[j] @ b.coeffs
    res = a.residual * max(1.0, b.max_abs()) + b.residual * max(1.0, a.max_abs())
    out = FIR(full, res)
    if horizon is None:
        return out
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    return out.truncate(horizon)


def fir_inverse(a: FIR, horizon: int) -> FIR:
    """Causal inverse through index ``horizon`` by the recursion
    ``X_0 = G_0^-1``, ``X_k = -G_0^-1 sum_{j=1}^k G_j X_{k-j}``."""
    p, m = a.shape
    if p != m:
        raise ValueError(f"fir_inverse needs a square FIR, got {a.shape}")
    g0 = a.coeffs[0]
    if np.linalg.matrix_rank(g0) < p:
        raise np.linalg.LinAlgError("singular leading coefficient G_0; no causal inverse")
    g0inv = np.linalg.inv(g0)
    X = np.zeros((horizon + 1, p, p))
    X[0] = g0inv
    for k in range(1, horizon + 1):
        acc = np.zeros((p, p))
        for j in range(1, min(k, a.horizon) + 1):
            acc += a.coeffs[j] @ X[k - j]
        X[k] = -g0inv @ acc
    return FIR(X, a.residual * np.linalg.cond(g0))


def fir_eval(a: FIR, zpoint: complex, check: bool = True) -> np.ndarray:
    """Evaluate ``sum_k G_k zpoint^-k`` on the unit circle."""
    if check and abs(abs(zpoint) - 1.0) > UNIT_CIRCLE_TOL:
        raise ValueError(f"evaluation point must lie on the unit circle, |z|={abs(zpoint)}")
    powers = zpoint ** (-np.arange(len(a), dtype=float))
    return np.tensordot(powers, a.coeffs, axes=(0, 0))


def unit_circle_points(npoints: int) -> np.ndarray:
    if npoints < 1:
        raise ValueError("npoints must be >= 1")
    return np.exp(2j * np.pi * np.arange(npoints) / npoints)


def h2_norm(g: FIR) -> float:
    """Discrete-time H2 norm of an FIR system, sqrt(sum_k ||G_k||_F^2)."""
    return float(np.sqrt(np.sum(g.coeffs**2)))


def markov_expand(sys, horizon: int) -> FIR:
    """FIR truncation of C (zI - A)^-1 B + D: ``[D, CB, CAB, ..., CA^(T-1)B]``."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    A, B, C, D = SS.make(*sys)
    coeffs = np.zeros((horizon + 1,) + D.shape)
    coeffs[0] = D
    AkB = B
    for k in range(1, horizon + 1):
        coeffs[k] = C @ AkB
        AkB = A @ AkB
    return FIR(coeffs)


# ---------------------------------------------------------------------------
# Resolvent products (zI - A)^-1 G and G (zI - A)^-1 for FIR G
# ---------------------------------------------------------------------------


def _spectral_split(A: np.ndarray):
    """Block-diagonalize A into a Schur-stable part and the rest.

    Returns ``(V, Vinv, s)`` with ``Vinv @ A @ V = diag(As, Au)`` where ``As``
    is ``s x s`` with all eigenvalues strictly inside the unit circle.
    """
    n = A.shape[0]
    T, Z, s = la.schur(A, output="real", sort="iuc")
    if s in (0, n):
        return Z, Z.T, s
    T11, T12, T22 = T[:s, :s], T[:s, s:], T[s:, s:]
    X = la.solve_sylvester(T11, -T22, -T12)
    S = np.eye(n)
    S[:s, s:] = X
    Sinv = np.eye(n)
    Sinv[:s, s:] = -X
    return Z @ S, Sinv @ Z.T, s


def resolvent_left(A, G: FIR, horizon: Optional[int] = None) -> FIR:
    """Compute X = (zI - A)^-1 G as a strictly proper FIR.

    The Schur-stable part of A is handled by the forward recursion
    ``X_{k+1} = A X_k + G_k`` (truncated at ``horizon``). The remaining part
    must yield a polynomial in z^-1 (true whenever the product is stable) and
    is solved by the backward recursion, which is contracting there. The
    residual collects the truncated tail and the consistency defect of the
    backward solve.
    """
    A = as_matrix(A)
    n = A.shape[0]
    if G.shape[0] != n:
        raise ValueError(f"resolvent_left: A is {A.shape}, G is {G.shape}")
    if horizon is None:
        horizon = G.horizon + n + 1
    V, Vinv, s = _spectral_split(A)
    D = Vinv @ A @ V
    Gt = Vinv @ G.coeffs
    m = G.shape[1]
    X = np.zeros((horizon + 1, n, m))
    residual = G.residual
    if s > 0:
        As, Gs = D[:s, :s], Gt[:, :s]
        extra = horizon + s + 1
        xs = np.zeros((s, m))
        tail = 0.0
        for k in range(extra + 1):
            # xs holds X_k; X_{k+1} = As X_k + G_k
            if k <= horizon:
                X[k, :s] = xs
            elif k > horizon:
                tail = max(tail, float(np.max(np.abs(V[:, :s] @ xs), initial=0.0)))
            gk = Gs[k] if k < len(Gs) else 0.0
            xs = As @ xs + gk
        residual = max(residual, tail)
    if s < n:
        Au, Gu = D[s:, s:], Gt[:, s:]
        d = G.horizon
        Xu = np.zeros((d + 2, n - s, m))
        Auinv = np.linalg.inv(Au)
        for k in range(d, 0, -1):
            Xu[k] = Auinv @ (Xu[k + 1] - Gu[k])
        defect = float(np.max(np.abs(Xu[1] - Gu[0]), initial=0.0)) if d >= 0 else 0.0
        keep = min(d, horizon)
        X[1 : keep + 1, s:] = Xu[1 : keep + 1]
        dropped = float(np.max(np.abs(Xu[keep + 1 :]), initial=0.0))
        residual = max(residual, defect, dropped)
    out = V @ X
    return FIR(out, residual)


def resolvent_right(G: FIR, A, horizon: Optional[int] = None) -> FIR:
    """Compute G (zI - A)^-1 (see :func:`resolvent_left`)."""
    return resolvent_left(as_matrix(A).T, G.T, horizon).T


def polynomial_shift_mul(G: FIR, A) -> FIR:
    """Exact product G (zI - A) for strictly proper G, returned as a proper FIR."""
    A = as_matrix(A)
    return G.shift(-1) - G @ A


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------


class StabilityCheck(NamedTuple):
    stable: bool
    spectral_radius: float

    def __bool__(self) -> bool:
        return self.stable


def spectral_radius(A) -> float:
    A = as_matrix(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def is_stable(A, margin: float = EPS_STAB) -> StabilityCheck:
    """Schur stability: rho(A) < 1 - margin."""
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("is_stable needs a square matrix")
    rho = spectral_radius(A)
    return StabilityCheck(rho < 1.0 - margin, rho)


def _pbh_ok(A, M, transpose: bool) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - EPS_STAB:
            continue
        blk = np.hstack([lam * np.eye(n) - A, M]) if not transpose else np.vstack([lam * np.eye(n) - A, M])
        if np.linalg.matrix_rank(blk, tol=1e-9 * max(1.0, np.linalg.norm(blk))) < n:
            return False
    return True


def is_stabilizable(A, B) -> bool:
    return _pbh_ok(as_matrix(A), as_matrix(B), transpose=False)


def is_detectable(A, C) -> bool:
    return _pbh_ok(as_matrix(A), as_matrix(C), transpose=True)


# ---------------------------------------------------------------------------
# Plant and controller
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateSpacePlant:
    """Generalized plant P with strictly proper P22 (D22 = 0).

        x+ = A x + B1 w + B2 u
        z  = C1 x + D11 w + D12 u
        y  = C2 x + D21 w
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: Optional[np.ndarray] = None
    D12: Optional[np.ndarray] = None
    D21: Optional[np.ndarray] = None
    name: str = ""
    check_assumptions: bool = field(default=True, repr=False)

    def __post_init__(self):
        A = as_matrix(self.A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B1 = as_matrix(self.B1, rows=n)
        B2 = as_matrix(self.B2, rows=n)
        C1 = as_matrix(self.C1)
        C2 = as_matrix(self.C2)
        nw, nu, nz, ny = B1.shape[1], B2.shape[1], C1.shape[0], C2.shape[0]
        for name, M, rows in (("B1", B1, n), ("B2", B2, n)):
            if M.shape[0] != rows:
                raise ValueError(f"{name} has {M.shape[0]} rows, expected {rows}")
        for name, M in (("C1", C1), ("C2", C2)):
            if M.shape[1] != n:
                raise ValueError(f"{name} has {M.shape[1]} columns, expected {n}")
        D11 = np.zeros((nz, nw)) if self.D11 is None else as_matrix(self.D11)
        D12 = np.zeros((nz, nu)) if self.D12 is None else as_matrix(self.D12)
        D21 = np.zeros((ny, nw)) if self.D21 is None else as_matrix(self.D21)
        for name, M, shp in (("D11", D11, (nz, nw)), ("D12", D12, (nz, nu)), ("D21", D21, (ny, nw))):
            if M.shape != shp:
                raise ValueError(f"{name} has shape {M.shape}, expected {shp}")
        for name, M in (("A", A), ("B1", B1), ("B2", B2), ("C1", C1), ("C2", C2), ("D11", D11), ("D12", D12), ("D21", D21)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        if self.check_assumptions:
            if not is_stabilizable(A, B2):
                raise PreconditionError("(A, B2) is not stabilizable")
            if not is_detectable(A, C2):
                raise PreconditionError("(A, C2) is not detectable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def nw(self) -> int:
        return self.B1.shape[1]

    @property
    def nu(self) -> int:
        return self.B2.shape[1]

    @property
    def nz(self) -> int:
        return self.C1.shape[0]

    @property
    def ny(self) -> int:
        return self.C2.shape[0]

    @property
    def P11(self) -> SS:
        return SS(self.A, self.B1, self.C1, self.D11)

    @property
    def P12(self) -> SS:
        return SS(self.A, self.B2, self.C1, self.D12)

    @property
    def P21(self) -> SS:
        return SS(self.A, self.B1, self.C2, self.D21)

    @property
    def P22(self) -> SS:
        return SS(self.A, self.B2, self.C2, np.zeros((self.ny, self.nu)))

    def replace(self, **kw) -> "StateSpacePlant":
        fields = dict(A=self.A, B1=self.B1, B2=self.B2, C1=self.C1, C2=self.C2,
                      D11=self.D11, D12=self.D12, D21=self.D21, name=self.name)
        fields.update(kw)
        return StateSpacePlant(**fields)


@dataclass(frozen=True, eq=False)
class Controller:
    """u = K y with K = Ck (zI - Ak)^-1 Bk + Dk."""

    Ak: np.ndarray
    Bk: np.ndarray
    Ck: np.ndarray
    Dk: np.ndarray

    def __post_init__(self):
        Dk = as_matrix(self.Dk)
        nu, ny = Dk.shape
        Ak = np.asarray(self.Ak, dtype=float)
        nk = Ak.shape[0] if Ak.ndim == 2 else int(round(np.sqrt(Ak.size)))
        Ak = Ak.reshape(nk, nk)
        Bk = np.asarray(self.Bk, dtype=float)
        Ck = np.asarray(self.Ck, dtype=float)
        if Bk.size != nk * ny or Ck.size != nu * nk:
            raise ValueError(f"controller blocks inconsistent with nk={nk}, nu={nu}, ny={ny}")
        if nk and (Bk.shape != (nk, ny) or Ck.shape != (nu, nk)):
            raise ValueError(f"Bk{Bk.shape} / Ck{Ck.shape} do not match nk={nk}, nu={nu}, ny={ny}")
        Bk, Ck = Bk.reshape(nk, ny), Ck.reshape(nu, nk)
        for name, M in (("Ak", Ak), ("Bk", Bk), ("Ck", Ck), ("Dk", Dk)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @classmethod
    def static(cls, Dk) -> "Controller":
        Dk = as_matrix(Dk)
        return cls(np.zeros((0, 0)), np.zeros((0, Dk.shape[1])), np.zeros((Dk.shape[0], 0)), Dk)

    @property
    def nk(self) -> int:
        return self.Ak.shape[0]

    @property
    def nu(self) -> int:
        return self.Dk.shape[0]

    @property
    def ny(self) -> int:
        return self.Dk.shape[1]

    @property
    def ss(self) -> SS:
        return SS(self.Ak, self.Bk, self.Ck, self.Dk)

    def eval(self, z: complex) -> np.ndarray:
        return self.ss.eval(z)

    def fir(self, horizon: int) -> FIR:
        return markov_expand(self.ss, horizon)


def _check_pair(P: StateSpacePlant, K: Controller):
    if (K.nu, K.ny) != (P.nu, P.ny):
        raise ValueError(f"controller is {K.nu}x{K.ny}, plant needs {P.nu}x{P.ny}")


def lft_closed_loop(P: StateSpacePlant, K: Controller) -> SS:
    """Realization of f(P, K) = P11 + P12 K (I - P22 K)^-1 P21 on state (x, xi)."""
    _check_pair(P, K)
    A, B1, B2, C1, C2 = P.A, P.B1, P.B2, P.C1, P.C2
    Ak, Bk, Ck, Dk = K.ss
    Acl = np.block([[A + B2 @ Dk @ C2, B2 @ Ck], [Bk @ C2, Ak]])
    Bcl = np.vstack([B1 + B2 @ Dk @ P.D21, Bk @ P.D21])
    Ccl = np.hstack([C1 + P.D12 @ Dk @ C2, P.D12 @ Ck])
    Dcl = P.D11 + P.D12 @ Dk @ P.D21
    return SS(Acl, Bcl, Ccl, Dcl)


def internal_stability(P: StateSpacePlant, K: Controller) -> StabilityCheck:
    return is_stable(lft_closed_loop(P, K).A)


def four_block_system(P: StateSpacePlant, K: Controller) -> SS:
    """Realization of [[Y, W], [U, Z]] from (dy, du) to (y, u)."""
    _check_pair(P, K)
    A, B2, C2 = P.A, P.B2, P.C2
    Ak, Bk, Ck, Dk = K.ss
    ny, nu = P.ny, P.nu
    Acl = np.block([[A + B2 @ Dk @ C2, B2 @ Ck], [Bk @ C2, Ak]])
    Bcl = np.block([[B2 @ Dk, B2], [Bk, np.zeros((K.nk, nu))]])
    Ccl = np.block([[C2, np.zeros((ny, K.nk))], [Dk @ C2, Ck]])
    Dcl = np.block([[np.eye(ny), np.zeros((ny, nu))], [Dk, np.eye(nu)]])
    return SS(Acl, Bcl, Ccl, Dcl)


def _reachable_basis(A, B, tol):
    n = A.shape[0]
    if n == 0 or B.size == 0:
        return np.zeros((n, 0))
    scale = max(1.0, np.linalg.norm(A), np.linalg.norm(B))
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    V = U[:, s > tol * scale]
    new = V
    while new.shape[1] and V.shape[1] < n:
        W = A @ new
        W = W - V @ (V.T @ W)
        W = W - V @ (V.T @ W)
        U, s, _ = np.linalg.svd(W, full_matrices=False)
        new = U[:, s > tol * scale]
        V = np.hstack([V, new])
    return V


def minimal_realization(sys, tol: float = 1e-9) -> SS:
    """Kalman reduction to the controllable and observable part."""
    A, B, C, D = SS.make(*sys)
    V = _reachable_basis(A, B, tol)
    A1, B1, C1 = V.T @ A @ V, V.T @ B, C @ V
    W = _reachable_basis(A1.T, C1.T, tol)
    return SS(W.T @ A1 @ W, W.T @ B1, C1 @ W, D)


def transfer_poles(sys, tol: float = 1e-9) -> np.ndarray:
    Am = minimal_realization(sys, tol).A
    return np.linalg.eigvals(Am) if Am.size else np.zeros(0, dtype=complex)


def four_block_stability(P: StateSpacePlant, K: Controller, margin: float = EPS_STAB) -> bool:
    """Internal stability via the poles of the four closed-loop maps (Y, U, W, Z)."""
    poles = transfer_poles(four_block_system(P, K))
    return bool(np.all(np.abs(poles) < 1.0 - margin))


# ---------------------------------------------------------------------------
# Realizing FIR-based controllers
# ---------------------------------------------------------------------------


def fir_realization(g: FIR) -> Controller:
    """Shift-register realization of an FIR with ``horizon * m`` states."""
    return right_fraction_realization(g, FIR.identity(g.shape[1]))


def right_fraction_realization(num: FIR, den: FIR) -> Controller:
    """State-space realization of ``num @ den^-1`` (den_0 invertible).

    The state is the shift register of ``v = den^-1 y`` over the last T
    samples, giving ``T * ny`` controller states.
    """
    nu, ny = num.shape
    if den.shape != (ny, ny):
        raise ValueError(f"denominator must be {ny}x{ny}, got {den.shape}")
    d0 = den.coeffs[0]
    if np.linalg.matrix_rank(d0) < ny:
        raise np.linalg.LinAlgError("denominator has a singular leading coefficient")
    d0inv = np.linalg.inv(d0)
    den = den @ d0inv
    num = num @ d0inv
    T = max(num.horizon, den.horizon)
    num, den = num.pad(T), den.pad(T)
    if T == 0:
        return Controller.static(num.coeffs[0])
    nk = T * ny
    Ak = np.zeros((nk, nk))
    Ak[ny:, :-ny] = np.eye(nk - ny)
    Ak[:ny, :] = -np.hstack(list(den.coeffs[1:]))
    Bk = np.zeros((nk, ny))
    Bk[:ny] = np.eye(ny)
    n0 = num.coeffs[0]
    Ck = np.hstack([num.coeffs[k] - n0 @ den.coeffs[k] for k in range(1, T + 1)])
    return Controller(Ak, Bk, Ck, n0)

