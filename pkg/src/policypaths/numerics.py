"""Shared dense linear-algebra and optimization kernels.

Everything here is desk scale: dense matrices with at most a few hundred
rows.  The LP and NNLS kernels wrap SciPy; the polyhedral projection,
extragradient, and Dykstra routines are self-contained so they can serve
as independent cross-checks of each other.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import Infeasible, IterationCap, LpFailure, Unbounded


def svd(M):
    """Thin SVD (U, s, Vt) with singular values in descending order."""
    return np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)


def rank_with_tol(M, tol=1e-10):
    """Numerical rank: count of singular values above tol * sigma_max."""
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def pinv(M, tol=1e-10):
    """Moore-Penrose pseudo-inverse, zeroing singular values below tol * sigma_max."""
    return np.linalg.pinv(np.asarray(M, dtype=float), rcond=tol)


def nnls(A, b):
    """Nonnegative least squares: lam >= 0 minimizing ||A lam - b||_2."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(b))
    try:
        lam, rnorm = scipy.optimize.nnls(A, b)
    except RuntimeError as exc:
        raise IterationCap(str(exc)) from exc
    return lam, float(rnorm)


@dataclass
class LpProblem:
    """min c @ x  s.t.  A_ub x <= b_ub, A_eq x = b_eq, bounds per variable."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None          # list of (lo, hi), None entries = free

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        for name in ("A_ub", "A_eq"):
            M = getattr(self, name)
            if M is not None:
                M = np.asarray(M, dtype=float)
                if M.shape[1] != n:
                    raise ValueError(f"{name} has {M.shape[1]} columns, expected {n}")
                setattr(self, name, M)
        if self.bounds is None:
            self.bounds = [(None, None)] * n


@dataclass
class LpSolution:
    optimum: float
    x: np.ndarray
    dual_ub: np.ndarray
    dual_eq: np.ndarray


def lp_solve(problem):
    """Solve an LpProblem; raises Infeasible/Unbounded/LpFailure."""
    res = scipy.optimize.linprog(
        problem.c, A_ub=problem.A_ub, b_ub=problem.b_ub,
        A_eq=problem.A_eq, b_eq=problem.b_eq,
        bounds=problem.bounds, method="highs")
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status == 3:
        raise Unbounded(res.message)
    if res.status != 0:
        raise LpFailure(res.message)
    dual_ub = np.asarray(res.ineqlin.marginals) if problem.A_ub is not None else np.zeros(0)
    dual_eq = np.asarray(res.eqlin.marginals) if problem.A_eq is not None else np.zeros(0)
    return LpSolution(optimum=float(res.fun), x=np.asarray(res.x),
                      dual_ub=dual_ub, dual_eq=dual_eq)


def project_polyhedron(z, A=None, b=None, A_eq=None, b_eq=None,
                       tol=1e-11, max_iter=None):
    """Euclidean projection of z onto {x : A x >= b, A_eq x = b_eq}.

    Returns (x, lam, nu) with nonnegative inequality multipliers lam
    satisfying x = z + A.T lam + A_eq.T nu.  Inequality-only problems go
    through the least-distance reduction to nonnegative least squares,
    which is robust to degenerate constraint sets; with equalities a
    primal active-set method with exact linear solves is used.  Raises
    Infeasible when the polyhedron is empty and IterationCap when the
    (generous) active-set iteration cap is hit.
    """
    z = np.asarray(z, dtype=float)
    if (A_eq is None or np.size(A_eq) == 0) and A is not None:
        x, lam = _project_ldp(z, np.asarray(A, dtype=float),
                              np.asarray(b, dtype=float))
        return x, lam, np.zeros(0)
    n = z.size
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m, m_eq = A.shape[0], A_eq.shape[0]
    if max_iter is None:
        max_iter = 100 * (m + m_eq + 5)

    scale = max(1.0, float(np.linalg.norm(z)))
    working = []
    for _ in range(max_iter):
        M = np.vstack([A_eq, A[working]])
        rhs = np.concatenate([b_eq, b[working]])
        if M.shape[0]:
            w, *_ = np.linalg.lstsq(M @ M.T, rhs - M @ z, rcond=None)
            x = z + M.T @ w
            lam_w = w[m_eq:]
        else:
            x = z.copy()
            lam_w = np.zeros(0)
        # Drop an active constraint with a negative multiplier.
        if lam_w.size and lam_w.min() < -tol:
            working.pop(int(np.argmin(lam_w)))
            continue
        # Add the most violated inactive constraint.
        if m:
            viol = b - A @ x
            viol[working] = -np.inf
            worst = int(np.argmax(viol))
            if viol[worst] > tol * scale:
                working.append(worst)
                continue
        lam = np.zeros(m)
        lam[working] = np.maximum(lam_w, 0.0)
        nu = w[:m_eq] if M.shape[0] else np.zeros(0)
        return x, lam, nu
    raise IterationCap("polyhedral projection active-set did not terminate")


def _project_ldp(z, A, b):
    """Projection onto {x : A x >= b} via the least-distance-programming
    reduction: solve one NNLS on the stacked system and read the point
    and multipliers off its residual."""
    m, n = A.shape
    h = b - A @ z
    if m == 0 or np.max(h) <= 0.0:
        return z.copy(), np.zeros(m)
    E = np.vstack([A.T, h[None, :]])
    f = np.zeros(n + 1)
    f[n] = 1.0
    u, _ = nnls(E, f)
    r = E @ u - f
    denom = -r[n]
    if denom <= 1e-13:
        raise Infeasible("polyhedron is empty (least-distance residual "
                         "vanished)")
    y = r[:n] / denom
    lam = u / denom
    return z + y, lam


def project_box(z, lo, hi):
    return np.clip(z, lo, hi)


def project_simplex(z):
    """Euclidean projection onto the probability simplex."""
    z = np.asarray(z, dtype=float)
    u = np.sort(z)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, z.size + 1)
    cond = u - (css - 1.0) / ks > 0
    k = ks[cond][-1]
    tau = (css[k - 1] - 1.0) / k
    return np.maximum(z - tau, 0.0)


def project_affine(z, E, e):
    """Euclidean projection onto {x : E x = e} (E may be rank deficient)."""
    E = np.asarray(E, dtype=float)
    e = np.asarray(e, dtype=float)
    correction, *_ = np.linalg.lstsq(E, E @ z - e, rcond=None)
    # lstsq returns the min-norm solution, which lies in the row space of E.
    return z - correction


def dykstra(z, projections, tol=1e-12, max_iter=5000):
    """Dykstra's alternating projection onto an intersection of convex sets."""
    x = np.asarray(z, dtype=float).copy()
    increments = [np.zeros_like(x) for _ in projections]
    for _ in range(max_iter):
        x_prev = x.copy()
        for i, proj in enumerate(projections):
            y = proj(x + increments[i])
            increments[i] = x + increments[i] - y
            x = y
        if np.max(np.abs(x - x_prev)) <= tol:
            return x
    return x


@dataclass
class SaddleResult:
    x: np.ndarray
    y: np.ndarray
    value: float
    residual: float
    gap: float | None
    iterations: int


def extragradient_saddle(K, project_x, project_y, x0, y0, iters=10 ** 5,
                         step=None, gap_oracle=None, gap_tol=0.0,
                         check_every=200):
    """Extragradient iteration for the bilinear saddle max_x min_y x.T K y.

    ``project_x`` / ``project_y`` are Euclidean projection oracles onto the
    compact feasible sets.  The last iterate is returned (for bilinear
    problems over polyhedra it converges linearly, unlike plain
    gradient-descent-ascent); ``residual`` is its movement under one more
    extragradient step, ``gap`` is filled from ``gap_oracle`` when
    supplied, and iteration stops early once gap <= gap_tol.
    """
    K = np.asarray(K, dtype=float)
    if step is None:
        L = np.linalg.norm(K, 2)
        step = 0.9 / max(L, 1e-12)
    x = project_x(np.asarray(x0, dtype=float))
    y = project_y(np.asarray(y0, dtype=float))
    it = 0
    gap = None
    for it in range(1, iters + 1):
        x_half = project_x(x + step * (K @ y))
        y_half = project_y(y - step * (K.T @ x))
        x = project_x(x + step * (K @ y_half))
        y = project_y(y - step * (K.T @ x_half))
        if gap_oracle is not None and it % check_every == 0:
            gap = float(gap_oracle(x, y))
            if gap <= gap_tol:
                break
    x_next = project_x(x + step * (K @ y))
    y_next = project_y(y - step * (K.T @ x))
    residual = float(np.hypot(np.linalg.norm(x_next - x),
                              np.linalg.norm(y_next - y)) / step)
    if gap_oracle is not None and gap is None:
        gap = float(gap_oracle(x, y))
    return SaddleResult(x=x, y=y, value=float(x @ K @ y),
                        residual=residual, gap=gap, iterations=it)
