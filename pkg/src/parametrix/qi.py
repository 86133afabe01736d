"""Sparsity patterns and the quadratic invariance test."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .lti import FIR, StateSpacePlant


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    """Binary support mask applied to every FIR coefficient."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ValueError("a sparsity pattern must be a 2-D mask")
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask entries must be 0 or 1")
        m = m.astype(bool)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, p: int, m: int) -> "SparsityPattern":
        return cls(np.ones((p, m), dtype=int))

    @classmethod
    def diagonal(cls, n: int) -> "SparsityPattern":
        return cls(np.eye(n, dtype=int))

    @classmethod
    def support(cls, M, tol: float = 0.0) -> "SparsityPattern":
        return cls((np.abs(np.asarray(M, dtype=float)) > tol).astype(int))

    @property
    def shape(self):
        return self.mask.shape

    def allows(self, g, tol: float = 0.0) -> bool:
        """True iff every coefficient of g vanishes outside the mask."""
        c = g.coeffs if isinstance(g, FIR) else np.asarray(g, dtype=float)[None]
        return bool(np.all(np.abs(c[:, ~self.mask]) <= tol))

    def __or__(self, other: "SparsityPattern") -> "SparsityPattern":
        return SparsityPattern((self.mask | other.mask).astype(int))

    def __and__(self, other: "SparsityPattern") -> "SparsityPattern":
        return SparsityPattern((self.mask & other.mask).astype(int))

    def tolist(self):
        return self.mask.astype(int).tolist()


def _bool_mm(a, b):
    return (a.astype(np.int64) @ b.astype(np.int64)) > 0


def qi_test(Lpat: SparsityPattern, Ppat: SparsityPattern) -> bool:
    """Structural quadratic invariance: Lpat(i,j) Ppat(j,k) Lpat(k,l) = 1 implies Lpat(i,l) = 1."""
    L, Pm = Lpat.mask, Ppat.mask
    if L.shape[1] != Pm.shape[0] or Pm.shape[1] != L.shape[0]:
        raise ValueError(f"pattern dimensions: Lpat {L.shape} needs Ppat {L.shape[::-1]}, got {Pm.shape}")
    return not bool(np.any(_bool_mm(_bool_mm(L, Pm), L) & ~L))


def qi_brute_force(Lpat: SparsityPattern, Ppat: SparsityPattern) -> bool:
    """Enumerate every pair of binary K1, K2 supported on Lpat and check
    support(K1 Ppat K2) lies in Lpat. Exponential; meant for masks up to 3x3."""
    L, Pm = Lpat.mask, Ppat.mask
    idx = np.argwhere(L)
    if len(idx) > 12:
        raise ValueError("brute force limited to 12 free entries")
    Ks = np.zeros((2 ** len(idx),) + L.shape, dtype=np.int64)
    for s, bits in enumerate(product((0, 1), repeat=len(idx))):
        for b, (i, j) in zip(bits, idx):
            Ks[s, i, j] = b
    KP = (Ks @ Pm.astype(np.int64)) > 0  # (S, nu, nu)
    prod_ = np.einsum("aij,bjk->abik", KP.astype(np.int64), Ks) > 0
    return not bool(np.any(prod_ & ~L))


def plant_pattern(P: StateSpacePlant) -> SparsityPattern:
    """Structural support of C2 (zI - A)^-1 B2: union of supports of C2 A^k B2, k < n."""
    A = P.A != 0
    Ak = np.eye(P.n, dtype=bool)
    B2 = P.B2 != 0
    C2 = P.C2 != 0
    acc = np.zeros((P.ny, P.nu), dtype=bool)
    for _ in range(max(P.n, 1)):
        acc |= _bool_mm(_bool_mm(C2, Ak), B2)
        Ak = _bool_mm(Ak, A)
    return SparsityPattern(acc.astype(int))
