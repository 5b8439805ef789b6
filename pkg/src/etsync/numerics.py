"""Dense linear-algebra kernels for the gain-design stage.

All routines target small (n <= ~20) float64 matrices and favour
determinism over speed: fixed pivot rule, fixed sweep order, fixed
starting vectors, fixed iteration caps.  The exact thresholds live in
:data:`TOL` so library code and tests agree on them.

Methods:

* ``solve_linear``      -- Gaussian elimination with partial pivoting,
  one iterative-refinement pass if the first residual is too large.
* ``symmetric_eigenvalues`` -- cyclic Jacobi rotations.
* ``spectral_norm``     -- power iteration on ``M^T M``.
* ``solve_sylvester``   -- Kronecker vectorization + ``solve_linear``.
* ``solve_are``         -- matrix-sign-function Newton iteration on the
  Hamiltonian, stable-subspace extraction by least squares.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NotStabilizable, NotSymmetric, SingularMatrix


@dataclass(frozen=True)
class Tolerances:
    pivot_rel: float = 1e-12           # pivot magnitude vs max|A| below which A counts as singular
    linear_residual_rel: float = 1e-10  # ||Ax-b||_max <= rel*(1+||b||_max)
    symmetry_rel: float = 1e-10
    jacobi_off_rel: float = 1e-12      # off-diagonal Frobenius norm vs ||S||_F
    jacobi_max_sweeps: int = 60
    eig_rel: float = 1e-9
    power_rel: float = 1e-10
    power_max_iter: int = 10000
    sylvester_residual: float = 1e-9
    are_residual: float = 1e-8
    sign_rel: float = 1e-14
    sign_max_iter: int = 100
    rank_rel: float = 1e-10


TOL = Tolerances()


def max_abs(a) -> float:
    """Largest entry magnitude (the entrywise infinity norm used throughout)."""
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


def _square(a, name: str = "A") -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def solve_linear(a, b):
    """Solve ``A x = b`` by Gaussian elimination with partial pivoting.

    ``b`` may be a vector or a matrix of stacked right-hand sides; the
    result matches its shape.  Raises :class:`SingularMatrix` when a pivot
    falls below ``TOL.pivot_rel * max|A|`` or when the computed solution
    fails the residual contract even after one refinement pass.
    """
    A = _square(a)
    n = A.shape[0]
    rhs = np.array(b, dtype=float)
    vector = rhs.ndim == 1
    B = rhs.reshape(n, -1).copy()
    if rhs.shape[0] != n:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, expected {n}")

    scale = max_abs(A)
    if scale == 0.0:
        raise SingularMatrix("coefficient matrix is zero")

    X = _eliminate(A, B, scale)

    # Contract check: one refinement pass, then give up honestly.
    resid = max_abs(A @ X - B)
    bound = TOL.linear_residual_rel * (1.0 + max_abs(B))
    if resid > bound:
        X = X + _eliminate(A, B - A @ X, scale)
        resid = max_abs(A @ X - B)
        if resid > bound:
            raise SingularMatrix(
                f"system too ill-conditioned: residual {resid:.3e} > {bound:.3e}")
    return X[:, 0] if vector else X


def _eliminate(A, B, scale) -> np.ndarray:
    n = A.shape[0]
    U = A.copy()
    Y = B.copy()
    for col in range(n):
        piv = col + int(np.argmax(np.abs(U[col:, col])))
        if abs(U[piv, col]) < TOL.pivot_rel * scale:
            raise SingularMatrix(f"pivot {U[piv, col]:.3e} at column {col} "
                                 f"below {TOL.pivot_rel:.1e} * {scale:.3e}")
        if piv != col:
            U[[col, piv]] = U[[piv, col]]
            Y[[col, piv]] = Y[[piv, col]]
        factors = U[col + 1:, col] / U[col, col]
        U[col + 1:, col + 1:] -= np.outer(factors, U[col, col + 1:])
        U[col + 1:, col] = 0.0
        Y[col + 1:] -= np.outer(factors, Y[col])
    X = np.empty_like(Y)
    for row in range(n - 1, -1, -1):
        X[row] = (Y[row] - U[row, row + 1:] @ X[row + 1:]) / U[row, row]
    return X


def inverse(a) -> np.ndarray:
    A = _square(a)
    return solve_linear(A, np.eye(A.shape[0]))


def symmetric_eigenvalues(s) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi.

    The input may deviate from symmetry by at most
    ``TOL.symmetry_rel * max|S|``; it is symmetrized before sweeping.
    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``TOL.jacobi_off_rel * ||S||_F``.
    """
    A = _square(s, "S")
    n = A.shape[0]
    if max_abs(A - A.T) > TOL.symmetry_rel * max_abs(A):
        raise NotSymmetric(f"asymmetry {max_abs(A - A.T):.3e} exceeds "
                           f"{TOL.symmetry_rel:.1e} * {max_abs(A):.3e}")
    A = 0.5 * (A + A.T)
    if n == 1:
        return A.diagonal().copy()

    fro = math.sqrt(float((A * A).sum()))
    if fro == 0.0:
        return np.zeros(n)
    off_tol = TOL.jacobi_off_rel * fro
    for _ in range(TOL.jacobi_max_sweeps):
        off = math.sqrt(2.0 * float((np.triu(A, 1) ** 2).sum()))
        if off <= off_tol:
            return np.sort(A.diagonal())
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta       # tan ~ 1/(2 theta), avoids theta^2 overflow
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - sn * rq
                A[q, :] = sn * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - sn * cq
                A[:, q] = sn * cp + c * cq
                A[p, q] = A[q, p] = 0.0
    raise NoConvergence("Jacobi sweeps did not reduce the off-diagonal norm")


def spectral_norm(m) -> float:
    """Largest singular value via power iteration on ``M^T M``."""
    M = np.array(m, dtype=float)
    if M.ndim == 1:
        M = M.reshape(1, -1)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = max_abs(M)
    if scale == 0.0:
        return 0.0
    Ms = M / scale
    G = Ms.T @ Ms
    n = G.shape[0]
    # Deterministic start with generic (irrational-ratio) components so that
    # structured symmetries do not leave it orthogonal to the top eigenvector.
    v = np.cos(np.arange(1, n + 1, dtype=float))
    v /= math.sqrt(float(v @ v))
    lam_prev = -1.0
    for it in range(TOL.power_max_iter):
        w = G @ v
        lam = float(v @ w)
        nw = math.sqrt(float(w @ w))
        if nw == 0.0:
            # Start vector landed in the kernel; restart along a basis vector.
            v = np.zeros(n)
            v[it % n] = 1.0
            continue
        v = w / nw
        if abs(lam - lam_prev) <= TOL.power_rel * max(lam, 1e-300):
            return scale * math.sqrt(max(lam, 0.0))
        lam_prev = lam
    raise NoConvergence("power iteration hit the iteration cap")


def solve_sylvester(a, b, c) -> np.ndarray:
    """Solve ``A X + X B = C`` by Kronecker vectorization.

    With row-major flattening of X (m x n), the stacked operator is
    ``kron(A, I_n) + kron(I_m, B^T)``.  A singular stacked system means
    the spectra of A and -B intersect and is raised as
    :class:`SingularMatrix`.
    """
    A = _square(a, "A")
    B = _square(b, "B")
    C = np.array(c, dtype=float)
    m, n = A.shape[0], B.shape[0]
    if C.shape != (m, n):
        raise ValueError(f"C must be {m}x{n}, got {C.shape}")
    K = np.kron(A, np.eye(n)) + np.kron(np.eye(m), B.T)
    x = solve_linear(K, C.reshape(-1))
    X = x.reshape(m, n)
    resid = max_abs(A @ X + X @ B - C)
    bound = TOL.sylvester_residual * (1.0 + max_abs(C))
    if resid > bound:
        raise SingularMatrix(f"Sylvester residual {resid:.3e} > {bound:.3e}")
    return X


def matrix_sign(m) -> np.ndarray:
    """Matrix sign function by the Newton iteration ``Z <- (Z + Z^-1)/2``.

    Diverges (or hits a singular iterate) exactly when the argument has an
    eigenvalue on the imaginary axis, which is reported as
    :class:`NoConvergence`.
    """
    Z = _square(m, "Z")
    for _ in range(TOL.sign_max_iter):
        try:
            Zinv = solve_linear(Z, np.eye(Z.shape[0]))
        except SingularMatrix as exc:
            raise NoConvergence(
                "sign iteration hit a singular iterate "
                "(eigenvalue on or near the imaginary axis)") from exc
        Znew = 0.5 * (Z + Zinv)
        delta = max_abs(Znew - Z)
        Z = Znew
        if delta <= TOL.sign_rel * max(1.0, max_abs(Z)):
            return Z
    raise NoConvergence("sign iteration stalled")


def is_hurwitz(m, tol: float = 1e-6) -> bool:
    """True iff all eigenvalues of ``m`` have negative real part.

    Uses ``sign(M) == -I``; an imaginary-axis eigenvalue (no convergence)
    also counts as not Hurwitz.
    """
    M = _square(m, "M")
    try:
        S = matrix_sign(M)
    except NoConvergence:
        return False
    return max_abs(S + np.eye(M.shape[0])) <= tol


def solve_are(a, b, lam: float, beta: float) -> np.ndarray:
    """Stabilizing solution ``P = P^T > 0`` of
    ``P A + A^T P - lam * P B B^T P + beta * I = 0``.

    Builds the Hamiltonian ``[[A, -lam*B*B^T], [-beta*I, -A^T]]`` (which has
    no imaginary-axis eigenvalues for beta > 0 and stabilizable (A, B)),
    takes its matrix sign, and extracts P from the stable invariant
    subspace by least squares.  The result is symmetrized and certified:
    positive definiteness via :func:`symmetric_eigenvalues` and residual
    below ``TOL.are_residual``, otherwise :class:`NotStabilizable`.
    """
    A = _square(a, "A")
    q = A.shape[0]
    Bv = np.array(b, dtype=float).reshape(q, -1)
    if not lam > 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta}")

    BBt = Bv @ Bv.T
    H = np.block([[A, -lam * BBt], [-beta * np.eye(q), -A.T]])
    S = matrix_sign(H)

    S11, S12 = S[:q, :q], S[:q, q:]
    S21, S22 = S[q:, :q], S[q:, q:]
    # sign(H) [I; P] = -[I; P]  =>  stack the two block equations and solve
    # the (2q x q) least-squares system via its normal equations.
    Mstack = np.vstack([S12, S22 + np.eye(q)])
    Rstack = -np.vstack([S11 + np.eye(q), S21])
    try:
        P = solve_linear(Mstack.T @ Mstack, Mstack.T @ Rstack)
    except SingularMatrix as exc:
        raise NotStabilizable("stable subspace is not a graph over the state "
                              "coordinates") from exc
    P = 0.5 * (P + P.T)

    eigs = symmetric_eigenvalues(P)
    if eigs[0] <= 0.0:
        raise NotStabilizable(f"extracted P is not positive definite "
                              f"(min eigenvalue {eigs[0]:.3e})")
    resid = max_abs(P @ A + A.T @ P - lam * P @ BBt @ P + beta * np.eye(q))
    if resid > TOL.are_residual:
        raise NotStabilizable(f"Riccati residual {resid:.3e} exceeds "
                              f"{TOL.are_residual:.1e}")
    return P


def matrix_rank(a, rel_tol: float = TOL.rank_rel) -> int:
    """Numerical rank by elimination with full column selection."""
    A = np.array(a, dtype=float)
    if A.ndim != 2:
        raise ValueError("rank needs a 2-D array")
    U = A.copy()
    scale = max_abs(U)
    if scale == 0.0:
        return 0
    rows, cols = U.shape
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        piv = rank + int(np.argmax(np.abs(U[rank:, col])))
        if abs(U[piv, col]) <= rel_tol * scale:
            continue
        if piv != rank:
            U[[rank, piv]] = U[[piv, rank]]
        factors = U[rank + 1:, col] / U[rank, col]
        U[rank + 1:, col:] -= np.outer(factors, U[rank, col:])
        rank += 1
    return rank
