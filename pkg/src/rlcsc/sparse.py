"""Dense sparse coding: l1 objective, shrinkage operators, ISTA and a LISTA cell.

All routines start from the zero code.  ``ista_solve`` with step ``1/L`` is
guaranteed to descend only when ``L`` is at least the largest eigenvalue of
``D^T D``; :func:`largest_eigenvalue` estimates it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError

__all__ = [
    "SparseProblem",
    "ListaCell",
    "soft_threshold",
    "nonneg_soft_threshold",
    "sc_objective",
    "largest_eigenvalue",
    "ista_step",
    "ista_solve",
    "ista_weights",
    "lista_forward",
    "reference_minimum",
]


@dataclass(frozen=True)
class SparseProblem:
    D: np.ndarray
    y: np.ndarray
    lam: float
    L: float

    def __post_init__(self):
        D = np.asarray(self.D, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if D.ndim != 2:
            raise ShapeError(f"dictionary must be 2-D, got shape {D.shape}")
        if y.shape[0] != D.shape[0]:
            raise ShapeError(f"signal length {y.shape[0]} != dictionary rows {D.shape[0]}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "y", y)

    @property
    def n_atoms(self) -> int:
        return self.D.shape[1]


@dataclass(frozen=True)
class ListaCell:
    W_e: np.ndarray
    G: np.ndarray
    theta: np.ndarray
    K: int = field(default=1)

    def __post_init__(self):
        W_e = np.asarray(self.W_e, dtype=np.float64)
        G = np.asarray(self.G, dtype=np.float64)
        m = W_e.shape[0]
        theta = np.broadcast_to(np.asarray(self.theta, dtype=np.float64), (m,)).copy()
        if G.shape != (m, m):
            raise ShapeError(f"G must be {m}x{m}, got {G.shape}")
        if np.any(theta < 0):
            raise ValueError("thresholds must be nonnegative")
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        object.__setattr__(self, "W_e", W_e)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "theta", theta)


def _check_theta(theta) -> None:
    if np.any(np.asarray(theta) < 0):
        raise ValueError("threshold must be nonnegative")


def soft_threshold(alpha, theta):
    """sign(alpha) * max(|alpha| - theta, 0), elementwise."""
    _check_theta(theta)
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.sign(alpha) * np.maximum(np.abs(alpha) - theta, 0.0)


def nonneg_soft_threshold(alpha, theta):
    """max(alpha - theta, 0); the same value as relu(alpha - theta)."""
    _check_theta(theta)
    alpha = np.asarray(alpha)
    return np.maximum(alpha - theta, 0)


def sc_objective(p: SparseProblem, z) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (p.n_atoms,):
        raise ShapeError(f"code length {z.shape} != ({p.n_atoms},)")
    r = p.y - p.D @ z
    return 0.5 * float(r @ r) + p.lam * float(np.abs(z).sum())


def largest_eigenvalue(D, iters: int = 50, tol: float = 1e-6, seed: int = 0) -> float:
    """Power iteration estimate of the top eigenvalue of D^T D."""
    D = np.asarray(D, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(D.shape[1])
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        w = D.T @ (D @ v)
        mu_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(mu_new - mu) <= tol * max(abs(mu_new), 1.0):
            mu = mu_new
            break
        mu = mu_new
    return mu


def ista_step(p: SparseProblem, z: np.ndarray) -> np.ndarray:
    return soft_threshold(z + (p.D.T @ (p.y - p.D @ z)) / p.L, p.lam / p.L)


def ista_solve(p: SparseProblem, iters: int):
    """Run ``iters`` ISTA iterations from z = 0.

    Returns the final code and the objective trace (length ``iters + 1``,
    starting with the objective at zero).
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    z = np.zeros(p.n_atoms)
    trace = [sc_objective(p, z)]
    for k in range(iters):
        with np.errstate(over="ignore", invalid="ignore"):
            z = ista_step(p, z)
        if not np.all(np.isfinite(z)):
            raise DivergenceError(f"non-finite code at ISTA iteration {k + 1}")
        trace.append(sc_objective(p, z))
    return z, np.array(trace)


def ista_weights(p: SparseProblem, K: int) -> ListaCell:
    """LISTA cell whose K-step output reproduces K ISTA iterations."""
    m = p.n_atoms
    W_e = p.D.T / p.L
    G = np.eye(m) - (p.D.T @ p.D) / p.L
    return ListaCell(W_e=W_e, G=G, theta=np.full(m, p.lam / p.L), K=K)


def lista_forward(cell: ListaCell, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != cell.W_e.shape[1]:
        raise ShapeError(f"signal length {y.shape[0]} != W_e columns {cell.W_e.shape[1]}")
    b = cell.W_e @ y
    z = np.zeros(cell.W_e.shape[0])
    for _ in range(cell.K):
        z = soft_threshold(b + cell.G @ z, cell.theta)
    return z


def reference_minimum(p: SparseProblem, iters: int = 10_000, L0: float = 1.0):
    """Proximal gradient with backtracking line search; a check on ISTA.

    Uses no prior knowledge of the Lipschitz constant.  Returns (z, objective).
    """
    D, y, lam = p.D, p.y, p.lam
    z = np.zeros(p.n_atoms)
    Lk = L0

    def smooth(v):
        r = D @ v - y
        return 0.5 * float(r @ r)

    for _ in range(iters):
        grad = D.T @ (D @ z - y)
        fz = smooth(z)
        while True:
            cand = soft_threshold(z - grad / Lk, lam / Lk)
            d = cand - z
            if smooth(cand) <= fz + float(grad @ d) + 0.5 * Lk * float(d @ d) + 1e-15:
                break
            Lk *= 2.0
        z = cand
    return z, sc_objective(p, z)
