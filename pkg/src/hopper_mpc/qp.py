"""Sparse convex QP data model and operator-splitting solver.

Problems take the two-sided form

    minimize    1/2 x' P x + q' x
    subject to  l <= A x <= u        (equalities encoded as l = u)

solved by the standard ADMM splitting (x-update through a quasi-definite
KKT system, z-projection onto [l, u], scaled dual update).  Two KKT
back-ends: a dense Schur-complement Cholesky when P is diagonal (the MPC
transcriptions are), sparse LU otherwise.  Equality rows get a fixed
1e3-times-larger penalty parameter; nothing adapts during a solve unless
``adaptive_rho`` is switched on, so iterates are bitwise reproducible.

Real-time mode runs exactly ``rt_iter`` iterations and reports the final
residuals; converged mode iterates to tolerance with periodic checks.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

QP_INF = 1e30


class QpDimensionError(ValueError):
    pass


@dataclass
class SolverSettings:
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    max_iter: int = 4000
    rt_iter: int = 50            # fixed iteration budget in real-time mode
    rho: float = 0.1
    sigma: float = 1e-6
    alpha_relax: float = 1.6
    eq_rho_scale: float = 1e3    # extra penalty on equality rows
    check_interval: int = 25
    adaptive_rho: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha_relax < 2.0):
            raise ValueError("alpha_relax must be in (0, 2)")
        for name in ("eps_abs", "eps_rel", "rho", "sigma", "eq_rho_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter <= 0 or self.rt_iter <= 0 or self.check_interval <= 0:
            raise ValueError("iteration counts must be positive")


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str                  # solved | max_iter | primal_infeasible | dual_infeasible
    iterations: int
    primal_residual: float
    dual_residual: float
    solve_time: float = 0.0


class QpProblem:
    """Sparse QP with cached KKT factorization (invalidated on matrix change)."""

    def __init__(self, P, q, A, lower, upper, validate: bool = True):
        self.P = sp.csc_matrix(P)
        self.q = np.asarray(q, dtype=float).copy()
        self.A = sp.csc_matrix(A)
        self.lower = np.asarray(lower, dtype=float).copy()
        self.upper = np.asarray(upper, dtype=float).copy()
        n = self.q.shape[0]
        m = self.lower.shape[0]
        if self.P.shape != (n, n):
            raise QpDimensionError(f"P is {self.P.shape}, expected {(n, n)}")
        if self.A.shape != (m, n):
            raise QpDimensionError(f"A is {self.A.shape}, expected {(m, n)}")
        if self.upper.shape != (m,):
            raise QpDimensionError("lower/upper length mismatch")
        if np.any(self.lower > self.upper + 1e-12):
            raise ValueError("lower bound exceeds upper bound")
        self._p_diag = None
        diag = self.P.diagonal()
        if self.P.nnz == np.count_nonzero(diag):
            self._p_diag = diag.copy()
        if validate:
            self._validate_psd()
        self._cache: dict | None = None

    def _validate_psd(self):
        if self._p_diag is not None:
            if np.any(self._p_diag < -1e-9):
                raise ValueError("P has a negative diagonal entry")
            return
        dense = self.P.toarray()
        if not np.allclose(dense, dense.T, atol=1e-8):
            raise ValueError("P must be symmetric")
        try:
            np.linalg.cholesky(dense + 1e-9 * np.eye(dense.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise ValueError("P is not positive semidefinite") from exc

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.lower.shape[0]

    def equality_mask(self) -> np.ndarray:
        return (np.abs(self.upper - self.lower) < 1e-12) & (np.abs(self.upper) < QP_INF)

    def update_vectors(self, q=None, lower=None, upper=None) -> "QpProblem":
        """Replace q / l / u in place; the KKT factorization is reused."""
        if q is not None:
            q = np.asarray(q, dtype=float)
            if q.shape != (self.n,):
                raise QpDimensionError(f"q has shape {q.shape}, expected {(self.n,)}")
            self.q = q.copy()
        new_l = self.lower if lower is None else np.asarray(lower, dtype=float)
        new_u = self.upper if upper is None else np.asarray(upper, dtype=float)
        if new_l.shape != (self.m,) or new_u.shape != (self.m,):
            raise QpDimensionError("bound vector length mismatch")
        if np.any(new_l > new_u + 1e-12):
            raise ValueError("lower bound exceeds upper bound")
        eq_before = self.equality_mask()
        self.lower = new_l.copy()
        self.upper = new_u.copy()
        # rho splits by equality pattern; a changed pattern needs refactorization
        if self._cache is not None and np.any(self.equality_mask() != eq_before):
            self._cache = None
        return self

    # -- KKT back-ends -------------------------------------------------------

    def _factorize(self, settings: SolverSettings):
        rho_vec = np.full(self.m, settings.rho)
        rho_vec[self.equality_mask()] *= settings.eq_rho_scale
        if self._cache is not None and np.array_equal(self._cache["rho_vec"], rho_vec) \
                and self._cache["sigma"] == settings.sigma:
            return self._cache
        sigma = settings.sigma
        if self._p_diag is not None:
            d = self._p_diag + sigma
            if self.m == 0:
                def solve(b1, b2, d=d):
                    return b1 / d, b2
            else:
                Ad = self.A.multiply(1.0 / d).tocsc()
                M = (self.A @ Ad.T).toarray()
                M[np.arange(self.m), np.arange(self.m)] += 1.0 / rho_vec
                chol = sla.cho_factor(M, check_finite=False)

                def solve(b1, b2, d=d, chol=chol):
                    t = b1 / d
                    nu = sla.cho_solve(chol, self.A @ t - b2, check_finite=False)
                    return t - (self.A.T @ nu) / d, nu
        else:
            K = sp.bmat([
                [self.P + sigma * sp.eye(self.n), self.A.T],
                [self.A, -sp.diags(1.0 / rho_vec)],
            ]).tocsc()
            lu = spla.splu(K)

            def solve(b1, b2, lu=lu):
                sol = lu.solve(np.concatenate([b1, b2]))
                return sol[:self.n], sol[self.n:]
        self._cache = {"rho_vec": rho_vec, "sigma": sigma, "solve": solve}
        return self._cache

    # -- I/O -----------------------------------------------------------------

    def dump(self, path) -> None:
        """Debug dump with exact decimal values for offline reproduction."""
        def csc(mat):
            return {"data": mat.data.tolist(), "indices": mat.indices.tolist(),
                    "indptr": mat.indptr.tolist(), "shape": list(mat.shape)}
        doc = {"format": "hopper-qp", "version": 1,
               "P": csc(self.P), "q": self.q.tolist(), "A": csc(self.A),
               "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def from_dump(cls, path) -> "QpProblem":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != "hopper-qp" or doc.get("version") != 1:
            raise ValueError(f"{path}: not a QP dump file")

        def csc(d):
            return sp.csc_matrix((d["data"], d["indices"], d["indptr"]),
                                 shape=tuple(d["shape"]))
        return cls(csc(doc["P"]), np.array(doc["q"]), csc(doc["A"]),
                   np.array(doc["lower"]), np.array(doc["upper"]))


def _residuals(problem: QpProblem, x, z, y):
    ax = problem.A @ x
    r_prim = float(np.max(np.abs(ax - z))) if problem.m else 0.0
    r_dual = float(np.max(np.abs(problem.P @ x + problem.q + problem.A.T @ y)))
    scale_p = max(_norm_inf(ax), _norm_inf(z), 1e-30)
    scale_d = max(_norm_inf(problem.A.T @ y), _norm_inf(problem.P @ x),
                  _norm_inf(problem.q), 1e-30)
    return r_prim, r_dual, scale_p, scale_d


def _norm_inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _primal_infeasible(problem: QpProblem, dy, eps) -> bool:
    nd = _norm_inf(dy)
    if nd <= eps:
        return False
    v = dy / nd
    lo, up = problem.lower, problem.upper
    sup = np.where(up < QP_INF, up, 0.0) @ np.maximum(v, 0.0) \
        + np.where(lo > -QP_INF, lo, 0.0) @ np.minimum(v, 0.0)
    if np.any((up >= QP_INF) & (v > eps)) or np.any((lo <= -QP_INF) & (v < -eps)):
        return False
    return sup < -eps and _norm_inf(problem.A.T @ v) < eps


def _dual_infeasible(problem: QpProblem, dx, eps) -> bool:
    nd = _norm_inf(dx)
    if nd <= eps:
        return False
    v = dx / nd
    if problem.q @ v >= -eps or _norm_inf(problem.P @ v) >= eps:
        return False
    av = problem.A @ v
    bad = ((problem.upper < QP_INF) & (av > eps)) | \
          ((problem.lower > -QP_INF) & (av < -eps))
    return not np.any(bad)


def solve(problem: QpProblem, settings: SolverSettings | None = None,
          warm_start: tuple[np.ndarray, np.ndarray] | None = None,
          real_time: bool = False) -> QpSolution:
    """Run the ADMM iteration; see the module docstring for the two modes."""
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    cache = problem._factorize(settings)
    rho_vec = cache["rho_vec"]
    n, m = problem.n, problem.m
    if warm_start is not None:
        x = np.asarray(warm_start[0], dtype=float).copy()
        y = np.asarray(warm_start[1], dtype=float).copy()
        if x.shape != (n,) or y.shape != (m,):
            raise QpDimensionError("warm start dimension mismatch")
        z = problem.A @ x
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        z = np.zeros(m)
    alpha = settings.alpha_relax
    lo, up = problem.lower, problem.upper
    status = "max_iter"
    iterations = 0
    r_prim = r_dual = np.inf

    if warm_start is not None and not real_time:
        r_prim, r_dual, sp_, sd_ = _residuals(problem, x, z, y)
        if r_prim <= settings.eps_abs + settings.eps_rel * sp_ and \
                r_dual <= settings.eps_abs + settings.eps_rel * sd_:
            return QpSolution(x, y, "solved", 0, r_prim, r_dual,
                              time.perf_counter() - t0)

    max_iter = settings.rt_iter if real_time else settings.max_iter
    y_check = y.copy()
    x_check = x.copy()
    for k in range(1, max_iter + 1):
        iterations = k
        rhs1 = settings.sigma * x - problem.q
        rhs2 = z - y / rho_vec
        x_t, nu = cache["solve"](rhs1, rhs2)
        z_t = z + (nu - y) / rho_vec if m else z
        x = alpha * x_t + (1.0 - alpha) * x
        z_r = alpha * z_t + (1.0 - alpha) * z
        z_new = np.clip(z_r + y / rho_vec, lo, up) if m else z
        y = y + rho_vec * (z_r - z_new) if m else y
        z = z_new
        if not real_time and (k % settings.check_interval == 0 or k == max_iter):
            r_prim, r_dual, sp_, sd_ = _residuals(problem, x, z, y)
            if r_prim <= settings.eps_abs + settings.eps_rel * sp_ and \
                    r_dual <= settings.eps_abs + settings.eps_rel * sd_:
                status = "solved"
                break
            if _primal_infeasible(problem, y - y_check, settings.eps_abs):
                status = "primal_infeasible"
                break
            if _dual_infeasible(problem, x - x_check, settings.eps_abs):
                status = "dual_infeasible"
                break
            if settings.adaptive_rho and m > 0:
                ratio = (r_prim / max(sp_, 1e-30)) / max(r_dual / max(sd_, 1e-30), 1e-30)
                scale = float(np.sqrt(ratio))
                if scale > 5.0 or scale < 0.2:
                    new_rho = min(max(settings.rho * scale, 1e-6), 1e6)
                    settings = SolverSettings(**{**settings.__dict__, "rho": new_rho})
                    problem._cache = None
                    cache = problem._factorize(settings)
                    rho_vec = cache["rho_vec"]
            y_check = y.copy()
            x_check = x.copy()
    if real_time:
        r_prim, r_dual, sp_, sd_ = _residuals(problem, x, z, y)
        if r_prim <= settings.eps_abs + settings.eps_rel * sp_ and \
                r_dual <= settings.eps_abs + settings.eps_rel * sd_:
            status = "solved"
    return QpSolution(x, y, status, iterations, r_prim, r_dual,
                      time.perf_counter() - t0)
