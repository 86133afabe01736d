"""Equality-constrained least squares over FIR coefficients.

Decision variables are FIR transfer matrices whose coefficients are stacked
into one flat vector. Affine FIR-valued expressions of those variables are
tracked as dense coefficient maps, so every synthesis program reduces to

    minimize ||H x - h||^2  subject to  Aeq x = beq.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg as la

from .lti import FIR, as_matrix

RANK_TOL = 1e-10


class InfeasibleError(RuntimeError):
    """Raised when the equality constraints admit no solution.

    ``certificate`` is the least-squares residual ||Aeq x - beq|| at the best
    approximate solution.
    """

    def __init__(self, message: str, certificate: float):
        super().__init__(message)
        self.certificate = certificate


@dataclass(frozen=True)
class Var:
    name: str
    shape: tuple
    first: int  # index of the first free coefficient (1 for strictly proper)
    horizon: int
    offset: int

    @property
    def block(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def size(self) -> int:
        return (self.horizon - self.first + 1) * self.block


class VarSpace:
    """Index map from FIR coefficients to positions in the flat vector x."""

    def __init__(self):
        self.vars: Dict[str, Var] = {}
        self.size = 0

    def add(self, name: str, shape, horizon: int, strictly_proper: bool = False) -> "Affine":
        if name in self.vars:
            raise ValueError(f"duplicate variable {name}")
        first = 1 if strictly_proper else 0
        if horizon < first:
            raise ValueError(f"{name}: horizon {horizon} leaves no free coefficients")
        v = Var(name, tuple(shape), first, horizon, self.size)
        self.vars[name] = v
        self.size += v.size
        return Affine.variable(self, v)

    def unpack(self, x: np.ndarray, name: str) -> FIR:
        v = self.vars[name]
        p, m = v.shape
        c = np.zeros((v.horizon + 1, p, m))
        for k in range(v.first, v.horizon + 1):
            lo = v.offset + (k - v.first) * v.block
            c[k] = x[lo : lo + v.block].reshape((p, m), order="F")
        return FIR(c)


class Affine:
    """An FIR-valued affine function of the decision vector.

    ``lin[k]`` is the ``(p*m, nvar)`` map to vec(coefficient k) (column-major)
    and ``const[k]`` the matching constant.
    """

    __array_ufunc__ = None

    def __init__(self, space: VarSpace, shape, lin: np.ndarray, const: np.ndarray):
        self.space = space
        self.shape = tuple(shape)
        self.lin = lin
        self.const = const

    @classmethod
    def variable(cls, space: VarSpace, v: Var) -> "Affine":
        p, m = v.shape
        lin = np.zeros((v.horizon + 1, p * m, space.size))
        for k in range(v.first, v.horizon + 1):
            lo = v.offset + (k - v.first) * v.block
            lin[k, :, lo : lo + v.block] = np.eye(v.block)
        return cls(space, v.shape, lin, np.zeros((v.horizon + 1, p * m)))

    @classmethod
    def constant(cls, space: VarSpace, g) -> "Affine":
        g = g if isinstance(g, FIR) else FIR.const(g)
        p, m = g.shape
        const = g.coeffs.transpose(0, 2, 1).reshape(len(g), p * m)
        return cls(space, g.shape, np.zeros((len(g), p * m, space.size)), const.copy())

    @property
    def horizon(self) -> int:
        return self.lin.shape[0] - 1

    def _sync(self) -> "Affine":
        n = self.space.size
        if self.lin.shape[2] < n:
            pad = np.zeros(self.lin.shape[:2] + (n - self.lin.shape[2],))
            self.lin = np.concatenate([self.lin, pad], axis=2)
        return self

    def _pad(self, horizon: int):
        self._sync()
        lin, const = self.lin, self.const
        if horizon > self.horizon:
            extra = horizon - self.horizon
            lin = np.concatenate([lin, np.zeros((extra,) + lin.shape[1:])])
            const = np.concatenate([const, np.zeros((extra, const.shape[1]))])
        return lin, const

    def _coerce(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        g = other if isinstance(other, FIR) else FIR.const(other)
        return Affine.constant(self.space, g)

    def __add__(self, other) -> "Affine":
        other = self._coerce(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        T = max(self.horizon, other.horizon)
        l1, c1 = self._pad(T)
        l2, c2 = other._pad(T)
        return Affine(self.space, self.shape, l1 + l2, c1 + c2)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        self._sync()
        return Affine(self.space, self.shape, -self.lin, -self.const)

    def __sub__(self, other) -> "Affine":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Affine":
        return self._coerce(other) + (-self)

    def __mul__(self, scalar) -> "Affine":
        self._sync()
        return Affine(self.space, self.shape, self.lin * scalar, self.const * scalar)

    __rmul__ = __mul__

    def lmul(self, g) -> "Affine":
        """G @ self for a constant FIR (or matrix) G."""
        g = g if isinstance(g, FIR) else FIR.const(g)
        p, m = self.shape
        if g.shape[1] != p:
            raise ValueError(f"lmul shape mismatch {g.shape} @ {self.shape}")
        q = g.shape[0]
        self._sync()
        T = self.horizon + g.horizon
        lin = np.zeros((T + 1, q * m, self.lin.shape[2]))
        const = np.zeros((T + 1, q * m))
        I = np.eye(m)
        for a in range(len(g)):
            if not np.any(g.coeffs[a]):
                continue
            K = np.kron(I, g.coeffs[a])
            lin[a : a + self.horizon + 1] += K @ self.lin
            const[a : a + self.horizon + 1] += self.const @ K.T
        return Affine(self.space, (q, m), lin, const)

    def rmul(self, g) -> "Affine":
        """self @ G for a constant FIR (or matrix) G."""
        g = g if isinstance(g, FIR) else FIR.const(g)
        p, m = self.shape
        if g.shape[0] != m:
            raise ValueError(f"rmul shape mismatch {self.shape} @ {g.shape}")
        r = g.shape[1]
        self._sync()
        T = self.horizon + g.horizon
        lin = np.zeros((T + 1, p * r, self.lin.shape[2]))
        const = np.zeros((T + 1, p * r))
        I = np.eye(p)
        for a in range(len(g)):
            if not np.any(g.coeffs[a]):
                continue
            K = np.kron(g.coeffs[a].T, I)
            lin[a : a + self.horizon + 1] += K @ self.lin
            const[a : a + self.horizon + 1] += self.const @ K.T
        return Affine(self.space, (p, r), lin, const)

    def __matmul__(self, g) -> "Affine":
        return self.rmul(g)

    def __rmatmul__(self, g) -> "Affine":
        return self.lmul(g)

    def shift(self, k: int = 1) -> "Affine":
        """Multiply by z^-k; negative k advances and requires the dropped
        leading coefficients to be handled by the caller (they are discarded)."""
        self._sync()
        if k >= 0:
            z = np.zeros((k,) + self.lin.shape[1:])
            zc = np.zeros((k, self.const.shape[1]))
            return Affine(self.space, self.shape, np.concatenate([z, self.lin]), np.concatenate([zc, self.const]))
        k = -k
        return Affine(self.space, self.shape, self.lin[k:], self.const[k:])

    def apply(self, fn) -> "Affine":
        """Push a linear FIR -> FIR map through the expression.

        ``fn`` is applied to the constant part and to every decision column
        that the expression depends on. The largest residual reported by
        ``fn`` is stored on the result as ``residual``.
        """
        self._sync()
        p, m = self.shape

        def unvec(block):
            return FIR(block.reshape(len(block), m, p).transpose(0, 2, 1))

        outs = {-1: fn(unvec(self.const))}
        for j in np.nonzero(np.any(self.lin != 0, axis=(0, 1)))[0]:
            outs[int(j)] = fn(unvec(self.lin[:, :, j]))
        q, r = outs[-1].shape
        T = max(g.horizon for g in outs.values())
        lin = np.zeros((T + 1, q * r, self.lin.shape[2]))
        const = outs[-1].pad(T).coeffs.transpose(0, 2, 1).reshape(T + 1, q * r)
        for j, g in outs.items():
            if j >= 0:
                lin[:, :, j] = g.pad(T).coeffs.transpose(0, 2, 1).reshape(T + 1, q * r)
        out = Affine(self.space, (q, r), lin, const)
        out.residual = max(g.residual for g in outs.values())
        return out

    def coefficient(self, k: int) -> "Affine":
        self._sync()
        return Affine(self.space, self.shape, self.lin[k : k + 1], self.const[k : k + 1])

    def window(self, lo: int, hi: int) -> "Affine":
        """Coefficients lo..hi (inclusive), re-indexed from 0."""
        lin, const = self._pad(hi)
        return Affine(self.space, self.shape, lin[lo : hi + 1], const[lo : hi + 1])

    def select(self, mask: np.ndarray) -> "Affine":
        """Entries where ``mask`` is True, returned as a (k, 1) column FIR."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.shape:
            raise ValueError(f"mask {mask.shape} vs expression {self.shape}")
        idx = np.nonzero(mask.reshape(-1, order="F"))[0]
        self._sync()
        return Affine(self.space, (idx.size, 1), self.lin[:, idx], self.const[:, idx])

    def rows(self):
        """Flattened ``(M, c)`` with value = M x + c."""
        self._sync()
        return self.lin.reshape(-1, self.lin.shape[2]), self.const.reshape(-1)

    def value(self, x: np.ndarray) -> FIR:
        self._sync()
        p, m = self.shape
        v = self.lin @ x + self.const
        return FIR(v.reshape(len(v), m, p).transpose(0, 2, 1))


@dataclass
class LeastSquaresProgram:
    """minimize ||H x - h||^2 subject to Aeq x = beq."""

    space: VarSpace
    objective: List[Affine] = field(default_factory=list)
    constraints: List[Affine] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    # variables whose norm breaks ties first on a flat optimum (all of x when empty)
    tiebreak: List[str] = field(default_factory=list)

    def minimize(self, expr: Affine) -> None:
        self.objective.append(expr)

    def require_zero(self, expr: Affine, label: str = "") -> None:
        if expr.lin.shape[0] == 0:
            return
        self.constraints.append(expr)
        self.labels.append(label)

    def require_pattern(self, expr: Affine, mask, label: str = "pattern") -> None:
        """Every coefficient of ``expr`` vanishes outside ``mask``."""
        off = ~np.asarray(mask, dtype=bool)
        if off.any():
            self.require_zero(expr.select(off), label)

    def matrices(self):
        n = self.space.size
        H = [np.zeros((0, n))]
        h = [np.zeros(0)]
        for e in self.objective:
            M, c = e.rows()
            H.append(M)
            h.append(-c)
        A = [np.zeros((0, n))]
        b = [np.zeros(0)]
        for e in self.constraints:
            M, c = e.rows()
            A.append(M)
            b.append(-c)
        return np.vstack(H), np.concatenate(h), np.vstack(A), np.concatenate(b)


@dataclass
class LsqSolution:
    x: np.ndarray
    objective: float  # ||H x - h||^2
    constraint_residual: float
    rank: int
    redundant_rows: int
    wall_time: float

    def cost(self) -> float:
        return float(np.sqrt(max(self.objective, 0.0)))


def _flat_directions(M: np.ndarray, rank_tol: float) -> np.ndarray:
    _, sv, Vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(sv > rank_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    return Vt[r:].T


def _prefer_small(prog: LeastSquaresProgram, x: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Move x along the optimal flat directions D to minimize the norm of the
    tie-break variables, then the norm of x over what freedom is left."""
    if D.shape[1] == 0:
        return x
    idx = np.concatenate([np.arange(v.offset, v.offset + v.size)
                          for k, v in prog.space.vars.items() if k in prog.tiebreak])
    S = D[idx]
    t, *_ = np.linalg.lstsq(S, -x[idx], rcond=None)
    x = x + D @ t
    rest = D @ _flat_directions(S, RANK_TOL)
    if rest.shape[1]:
        t, *_ = np.linalg.lstsq(rest, -x, rcond=None)
        x = x + rest @ t
    return x


def solve_equality_ls(prog: LeastSquaresProgram, rank_tol: float = RANK_TOL,
                      feas_tol: float = 1e-8) -> LsqSolution:
    """Minimum-norm minimizer of an equality-constrained least-squares program.

    Redundant constraint rows are removed with a column-pivoted QR of Aeq^T;
    the objective is then minimized over the null space of the surviving rows.
    Of all optimal points the one of least Euclidean norm is returned; when
    ``prog.tiebreak`` names variables, their norm is minimized first.
    """
    t0 = time.perf_counter()
    H, h, A, b = prog.matrices()
    n = prog.space.size
    if A.shape[0]:
        _, R, piv = la.qr(A.T, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        scale = d[0] if d.size and d[0] > 0 else 1.0
        r = int(np.sum(d > rank_tol * scale))
        rows = np.sort(piv[:r])
        Ar, br = A[rows], b[rows]
        Qf, Rf = la.qr(Ar.T, mode="full")
        Q1, Z = Qf[:, :r], Qf[:, r:]
        xp = Q1 @ la.solve_triangular(Rf[:r, :r], br, trans="T")
        defect = float(np.max(np.abs(A @ xp - b), initial=0.0))
        bscale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
        if defect > feas_tol * bscale:
            raise InfeasibleError(f"equality constraints are inconsistent (residual {defect:.3e})", defect)
    else:
        r, xp, Z = 0, np.zeros(n), np.eye(n)
    if Z.shape[1] and H.shape[0]:
        HZ = H @ Z
        y, *_ = np.linalg.lstsq(HZ, h - H @ xp, rcond=rank_tol)
        x = xp + Z @ y
        if prog.tiebreak:
            x = _prefer_small(prog, x, Z @ _flat_directions(HZ, rank_tol))
    else:
        x = xp
        if prog.tiebreak:
            x = _prefer_small(prog, x, Z)
    obj = float(np.sum((H @ x - h) ** 2))
    cres = float(np.max(np.abs(A @ x - b), initial=0.0))
    return LsqSolution(x, obj, cres, r, A.shape[0] - r, time.perf_counter() - t0)
