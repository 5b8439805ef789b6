"""Directed weighted communication topology and its spectral quantities."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotStronglyConnected, SpectralGapViolation
from .numerics import max_abs, solve_linear, symmetric_eigenvalues


@dataclass(frozen=True)
class DirectedGraph:
    """Weighted digraph on n >= 2 nodes.

    ``weights[i, j]`` is the weight of edge j -> i (information flowing
    from j into i), nonnegative with a zero diagonal.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weight table must be square, got {w.shape}")
        if w.shape[0] < 2:
            raise ValueError("need at least 2 agents")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        if np.any(np.diagonal(w) != 0.0):
            raise ValueError("self-loop weights must be zero")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def in_neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.n) if self.weights[i, j] > 0.0]

    def out_neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.n) if self.weights[j, i] > 0.0]


def laplacian(g: DirectedGraph) -> np.ndarray:
    """L with diagonal = row sums of the weights and off-diagonal = -a_ij.

    Each row sums to zero exactly: the diagonal entry is computed as the
    negated sum of that row's off-diagonal entries.
    """
    w = g.weights
    L = -w.copy()
    np.fill_diagonal(L, 0.0)
    diag = -L.sum(axis=1)
    np.fill_diagonal(L, diag)
    return L


def is_strongly_connected(g: DirectedGraph) -> bool:
    """Double reachability sweep (forward and transposed adjacency)."""
    return _reaches_all(g.weights, 0) and _reaches_all(g.weights.T, 0)


def _reaches_all(w: np.ndarray, root: int) -> bool:
    n = w.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[root] = True
    stack = [root]
    while stack:
        i = stack.pop()
        # edge j -> i has weight w[i, j]; from node i we can reach k when
        # w[k, i] > 0 in the forward sweep
        for k in range(n):
            if not seen[k] and w[k, i] > 0.0:
                seen[k] = True
                stack.append(k)
    return bool(seen.all())


def left_eigenvector(L: np.ndarray) -> np.ndarray:
    """Positive r with ``L^T r = 0`` and ``r^T 1 = 1``.

    Solved deterministically through the bordered system
    ``[[L^T, 1], [1^T, 0]] [r; alpha] = [0; 1]``, which is nonsingular
    exactly when 0 is a simple eigenvalue of L.
    """
    L = np.asarray(L, dtype=float)
    n = L.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = L.T
    M[:n, n] = 1.0
    M[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    sol = solve_linear(M, rhs)
    sol = sol + solve_linear(M, rhs - M @ sol)   # one refinement pass
    r = sol[:n]
    if np.any(r <= 1e-12):
        raise NotStronglyConnected(
            f"left null vector has a nonpositive entry (min {r.min():.3e}); "
            "the graph is not strongly connected")
    r = r / r.sum()
    resid = max_abs(L.T @ r)
    if resid > 1e-9:
        raise NotStronglyConnected(f"residual ||L^T r|| = {resid:.3e} > 1e-9")
    return r


def lambda2_hat(L: np.ndarray, r: np.ndarray) -> float:
    """Second-smallest eigenvalue of the symmetrized Laplacian
    ``RL + L^T R`` with ``R = diag(r)``.

    The smallest eigenvalue must sit at zero (within 1e-8); a nonpositive
    spectral gap is raised as :class:`SpectralGapViolation`.
    """
    L = np.asarray(L, dtype=float)
    r = np.asarray(r, dtype=float)
    if max_abs(L.T @ r) > 1e-8 * max(1.0, max_abs(L)):
        raise ValueError("r is not a left null vector of L")
    R = np.diag(r)
    l_hat = R @ L + L.T @ R
    eigs = symmetric_eigenvalues(l_hat)
    if abs(eigs[0]) > 1e-8:
        raise SpectralGapViolation(
            f"smallest eigenvalue of the symmetrized Laplacian is "
            f"{eigs[0]:.3e}, expected 0")
    if eigs[1] <= 1e-10:
        raise SpectralGapViolation(f"spectral gap {eigs[1]:.3e} is not positive")
    return float(eigs[1])


@dataclass(frozen=True)
class GraphSpectra:
    """Laplacian-derived quantities consumed by the gain design."""

    laplacian: np.ndarray
    r: np.ndarray
    R: np.ndarray = field(repr=False)
    l_hat: np.ndarray = field(repr=False)
    lambda2_hat: float

    @classmethod
    def from_graph(cls, g: DirectedGraph) -> "GraphSpectra":
        if not is_strongly_connected(g):
            raise NotStronglyConnected(
                "graph is not strongly connected; no directed path exists "
                "between some ordered pair of nodes")
        L = laplacian(g)
        r = left_eigenvector(L)
        R = np.diag(r)
        lam2 = lambda2_hat(L, r)
        return cls(laplacian=L, r=r, R=R, l_hat=R @ L + L.T @ R,
                   lambda2_hat=lam2)
