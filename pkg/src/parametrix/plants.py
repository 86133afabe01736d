"""Seeded random plant families used by the experiments and the test suite."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .lti import Controller, StateSpacePlant, spectral_radius


def _krylov(A, B):
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _sv_ratio(M) -> float:
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def h2_weighted_plant(A, B2, C2, name: str = "") -> StateSpacePlant:
    """Full H2 weights: w = (process, sensor) noise, z = (x, u)."""
    A, B2, C2 = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B2, C2))
    n, nu = B2.shape
    ny = C2.shape[0]
    B1 = np.hstack([np.eye(n), np.zeros((n, ny))])
    D21 = np.hstack([np.zeros((ny, n)), np.eye(ny)])
    C1 = np.vstack([np.eye(n), np.zeros((nu, n))])
    D12 = np.vstack([np.zeros((n, nu)), np.eye(nu)])
    return StateSpacePlant(A=A, B1=B1, B2=B2, C1=C1, C2=C2, D12=D12, D21=D21, name=name)


def random_plant(rng: np.random.Generator, n: Optional[int] = None, nu: Optional[int] = None,
                 ny: Optional[int] = None, rho=(0.5, 1.5), max_n: int = 4, max_io: int = 2,
                 min_krylov_ratio: float = 1e-2, circle_margin: float = 0.05,
                 max_deadbeat_gain: Optional[float] = 10.0, max_tries: int = 200) -> StateSpacePlant:
    """Random H2-weighted plant with spectral radius drawn from ``rho``.

    Draws are rejected until the controllability and observability matrices
    have singular value ratio above ``min_krylov_ratio`` and no eigenvalue of A
    lies within ``circle_margin`` of the unit circle. With ``max_deadbeat_gain``
    set, the deadbeat gains F and L must also have Frobenius norm at most that
    bound; larger gains lose several digits in the polynomial factors.
    ``rho`` is a scalar or a (lo, hi) range.
    """
    from .coprime import deadbeat_gains

    for _ in range(max_tries):
        nn = int(rng.integers(1, max_n + 1)) if n is None else n
        m = int(rng.integers(1, max_io + 1)) if nu is None else nu
        p = int(rng.integers(1, max_io + 1)) if ny is None else ny
        A = rng.standard_normal((nn, nn))
        r = float(rng.uniform(*rho)) if np.ndim(rho) else float(rho)
        A *= r / max(spectral_radius(A), 1e-12)
        B2 = rng.standard_normal((nn, m))
        C2 = rng.standard_normal((p, nn))
        gap = np.min(np.abs(np.abs(np.linalg.eigvals(A)) - 1.0))
        if gap < circle_margin:
            continue
        if _sv_ratio(_krylov(A, B2)) < min_krylov_ratio or _sv_ratio(_krylov(A.T, C2.T)) < min_krylov_ratio:
            continue
        P = h2_weighted_plant(A, B2, C2)
        if max_deadbeat_gain is not None:
            g = deadbeat_gains(P)
            if g.mode != "deadbeat" or max(np.linalg.norm(g.F), np.linalg.norm(g.L)) > max_deadbeat_gain:
                continue
        return P
    raise RuntimeError("no admissible plant drawn; relax the family constraints")


def random_controller(rng: np.random.Generator, P: StateSpacePlant, nk: Optional[int] = None,
                      scale: float = 1.0) -> Controller:
    """Random dynamic output-feedback controller of order ``nk`` (0 gives a static gain)."""
    nk = int(rng.integers(0, 3)) if nk is None else nk
    Ak = rng.standard_normal((nk, nk))
    if nk:
        Ak *= float(rng.uniform(0.2, 1.3)) / max(spectral_radius(Ak), 1e-12)
    return Controller(Ak, scale * rng.standard_normal((nk, P.ny)), scale * rng.standard_normal((P.nu, nk)),
                      scale * rng.standard_normal((P.nu, P.ny)))


def observer_controller(P: StateSpacePlant, F, L) -> Controller:
    """Observer-based controller u = F xhat, which stabilizes when A + B2 F and A + L C2 do."""
    F, L = np.asarray(F, dtype=float), np.asarray(L, dtype=float)
    return Controller(P.A + P.B2 @ F + L @ P.C2, -L, F, np.zeros((P.nu, P.ny)))
