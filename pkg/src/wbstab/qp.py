"""Dense convex QP solver: min 1/2 x'Px + g'x  s.t.  Ax = b, Cx <= d, l <= x <= u.

Primal active-set method with equality constraints eliminated through an
orthonormal nullspace basis.  Sized for the stabilizer's problems (n around
30..50) where determinism and exact complementarity at convergence matter
more than large-scale performance.  A feasible interior start is produced,
when needed, by a slack phase-1 QP solved with the same core.

Tie-breaking is always lowest-index, so identical inputs give identical
iterates on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
#: Tikhonov term applied by weighted_lsq_to_qp, because task stacks can be
#: rank deficient.
TASK_REGULARIZATION = 1e-8


class QpError(ValueError):
    pass


@dataclass(eq=False)
class QpProblem:
    P: np.ndarray
    g: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    C: np.ndarray | None = None
    d: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.shape[0]
        if self.P.shape != (n, n):
            raise QpError(f"P must be {n}x{n}")
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        else:
            self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
            self.b = np.asarray(self.b, dtype=float).reshape(-1)
            if self.b.shape[0] != self.A.shape[0]:
                raise QpError("A and b row counts differ")
        if self.C is None:
            self.C = np.zeros((0, n))
            self.d = np.zeros(0)
        else:
            self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
            self.d = np.asarray(self.d, dtype=float).reshape(-1)
            if self.d.shape[0] != self.C.shape[0]:
                raise QpError("C and d row counts differ")
        if self.lower is None:
            self.lower = np.full(n, -np.inf)
        else:
            self.lower = np.asarray(self.lower, dtype=float).reshape(n)
        if self.upper is None:
            self.upper = np.full(n, np.inf)
        else:
            self.upper = np.asarray(self.upper, dtype=float).reshape(n)
        if np.any(self.lower > self.upper):
            raise QpError("lower bound exceeds upper bound")
        sym = np.abs(self.P - self.P.T).max() if n else 0.0
        if sym > 1e-10 * max(1.0, np.abs(self.P).max()):
            raise QpError("P not symmetric")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.g @ x)

    def ineq_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """All inequalities as rows (given C first, then lower, then upper)."""
        n = self.n
        rows, rhs = [self.C], [self.d]
        lo_idx = np.where(np.isfinite(self.lower))[0]
        if lo_idx.size:
            E = np.zeros((lo_idx.size, n))
            E[np.arange(lo_idx.size), lo_idx] = -1.0
            rows.append(E)
            rhs.append(-self.lower[lo_idx])
        up_idx = np.where(np.isfinite(self.upper))[0]
        if up_idx.size:
            E = np.zeros((up_idx.size, n))
            E[np.arange(up_idx.size), up_idx] = 1.0
            rows.append(E)
            rhs.append(self.upper[up_idx])
        return np.vstack(rows), np.concatenate(rhs)


@dataclass(eq=False)
class QpSolution:
    x: np.ndarray
    status: str                    # optimal | infeasible | max_iter
    kkt_residual: float
    iterations: int
    active_set: tuple[int, ...] = ()
    objective: float = np.nan


def weighted_lsq_to_qp(tasks) -> QpProblem:
    """Stack weighted least-squares tasks sum ||J x - r||_W into a QP.

    ``tasks`` is an iterable of (J, r, W) with W a symmetric PSD weight
    matrix (a scalar or 1-D array is promoted to a diagonal).  The fixed
    regularizer keeps P positive definite for rank-deficient stacks.
    """
    tasks = list(tasks)
    if not tasks:
        raise QpError("no tasks")
    n = np.asarray(tasks[0][0]).shape[1]
    P = np.eye(n) * TASK_REGULARIZATION
    g = np.zeros(n)
    for J, r, W in tasks:
        J = np.asarray(J, dtype=float)
        r = np.asarray(r, dtype=float).reshape(-1)
        if J.shape[1] != n or J.shape[0] != r.shape[0]:
            raise QpError("task dimension mismatch")
        W = np.asarray(W, dtype=float)
        if W.ndim == 0:
            WJ, Wr = float(W) * J, float(W) * r
        elif W.ndim == 1:
            if W.shape[0] != J.shape[0]:
                raise QpError("task weight dimension mismatch")
            WJ, Wr = W[:, None] * J, W * r
        else:
            if W.shape != (J.shape[0], J.shape[0]):
                raise QpError("task weight dimension mismatch")
            WJ, Wr = W @ J, W @ r
        P += J.T @ WJ
        g -= J.T @ Wr
    P = 0.5 * (P + P.T)
    return QpProblem(P, g)


# --------------------------------------------------------------------------
# core

def _equality_basis(A: np.ndarray, b: np.ndarray, tol: float):
    """Particular solution and orthonormal nullspace basis of Ax = b."""
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.zeros(n), np.eye(n), 0.0
    # A^T[:, piv] = Q R  =>  A[piv] = R^T Q^T; triangular solve for x0
    Q, R, piv = scipy.linalg.qr(A.T, pivoting=True)
    diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
    rank = int(np.sum(diag > max(A.shape) * 1e-14 * (diag[0] if diag.size else 1.0)))
    if rank == 0:
        x0 = np.zeros(n)
    else:
        w1 = scipy.linalg.solve_triangular(R[:rank, :rank], b[piv][:rank],
                                           trans="T", check_finite=False)
        x0 = Q[:, :rank] @ w1
    feas_err = float(np.abs(A @ x0 - b).max()) if A.size else 0.0
    Z = Q[:, rank:]
    return x0, Z, feas_err


def _solve_eqp(P, g, Cw, rhs):
    """Equality-constrained QP step: returns (dz, lambdas)."""
    nz, mw = P.shape[0], Cw.shape[0]
    K = np.zeros((nz + mw, nz + mw))
    K[:nz, :nz] = P
    K[:nz, nz:] = Cw.T
    K[nz:, :nz] = Cw
    r = np.concatenate([-g, rhs])
    try:
        sol = np.linalg.solve(K, r)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, r, rcond=None)
    return sol[:nz], sol[nz:]


def _active_set_core(P, g, C, d, z0, W0, tol, max_iter):
    """Primal active set on a feasible z0.

    Returns (z, active list, multipliers, iters, ok); the multipliers match
    the returned working set at the final point.
    """
    nz = P.shape[0]
    z = z0.copy()
    W = list(W0)
    it = 0
    lam = np.zeros(0)
    while it < max_iter:
        it += 1
        Cw = C[W] if W else np.zeros((0, nz))
        grad = P @ z + g
        rhs = (d[W] - C[W] @ z) if W else np.zeros(0)
        dz, lam = _solve_eqp(P, grad, Cw, rhs)
        step = float(np.abs(dz).max()) if dz.size else 0.0
        if step > tol * (1.0 + float(np.abs(z).max())):
            # ratio test against rows not in the working set
            alpha = 1.0
            blocker = -1
            Cd = C @ dz
            slack = d - C @ z
            in_w = np.zeros(C.shape[0], dtype=bool)
            in_w[W] = True
            for i in range(C.shape[0]):
                if in_w[i] or Cd[i] <= tol:
                    continue
                a_i = slack[i] / Cd[i]
                if a_i < alpha - 1e-14:
                    alpha, blocker = a_i, i
            z = z + max(alpha, 0.0) * dz
            if blocker >= 0:
                W.append(blocker)
            continue
        # stationary on the working set: check multipliers
        if lam.size == 0 or lam.min() >= -tol:
            return z, W, lam, it, True
        worst = lam.min()
        # lowest original index among equally negative multipliers
        drop = min((k for k in range(lam.size) if lam[k] <= worst + 1e-14),
                   key=lambda k: W[k])
        W.pop(drop)
    return z, W, lam, it, False


def solve(p: QpProblem, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER,
          warm_start: QpSolution | None = None) -> QpSolution:
    """Solve the QP.  P must be PSD (callers regularize if needed).

    Deterministic: identical inputs produce identical outputs.  A warm start
    reuses the previous solution's point and active set when still valid.
    """
    n = p.n
    Call, dall = p.ineq_rows()
    mi = Call.shape[0]

    x0, Z, eq_err = _equality_basis(p.A, p.b, tol)
    if eq_err > 1e-8 * (1.0 + float(np.abs(p.b).max() if p.b.size else 0.0)):
        return QpSolution(x0, "infeasible", eq_err, 0)

    nz = Z.shape[1]
    Pr = Z.T @ p.P @ Z
    Pr = 0.5 * (Pr + Pr.T)
    # guard against a PSD-singular reduced Hessian
    jitter = 0.0
    for _ in range(3):
        try:
            np.linalg.cholesky(Pr + jitter * np.eye(nz))
            break
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-12 * max(1.0, np.trace(Pr) / max(nz, 1)))
    if jitter:
        Pr = Pr + jitter * np.eye(nz)
    gr = Z.T @ (p.P @ x0 + p.g)
    Cr = Call @ Z
    dr = dall - Call @ x0

    scale = 1.0 + float(np.abs(dr).max()) if dr.size else 1.0
    feas_tol = 1e-9 * scale

    z_start = None
    W0: list[int] = []
    if warm_start is not None and warm_start.x is not None and warm_start.x.shape == (n,):
        z = Z.T @ (warm_start.x - x0)
        if mi == 0 or (Cr @ z - dr).max() <= feas_tol:
            z_start = z
            W0 = [i for i in warm_start.active_set
                  if i < mi and abs(float(Cr[i] @ z - dr[i])) <= 1e-7 * scale]
    if z_start is None:
        z = np.zeros(nz)
        if mi == 0 or (Cr @ z - dr).max() <= feas_tol:
            z_start = z
    total_it = 0
    if z_start is None:
        # phase 1: min 1/2||s||^2 + eps/2||z||^2  s.t.  Cr z - s <= dr, s >= 0
        viol = np.maximum(Cr @ np.zeros(nz) - dr, 0.0)
        ns = mi
        P1 = np.zeros((nz + ns, nz + ns))
        P1[:nz, :nz] = 1e-9 * np.eye(nz)
        P1[nz:, nz:] = np.eye(ns)
        g1 = np.zeros(nz + ns)
        C1 = np.zeros((2 * mi, nz + ns))
        C1[:mi, :nz] = Cr
        C1[:mi, nz:] = -np.eye(ns)
        C1[mi:, nz:] = -np.eye(ns)
        d1 = np.concatenate([dr, np.zeros(ns)])
        zs0 = np.concatenate([np.zeros(nz), viol + 1e-12])
        zs, _, _, it1, ok = _active_set_core(P1, g1, C1, d1, zs0, [], tol,
                                             max_iter * 2)
        total_it += it1
        if not ok:
            return QpSolution(x0, "max_iter", np.inf, total_it)
        s_opt = zs[nz:]
        if s_opt.max() > 1e-7 * scale:
            return QpSolution(x0 + Z @ zs[:nz], "infeasible",
                              float(s_opt.max()), total_it)
        z_start = zs[:nz]
        W0 = []

    z, W, lam, it, ok = _active_set_core(Pr, gr, Cr, dr, z_start, W0, tol,
                                         max_iter)
    total_it += it
    x = x0 + Z @ z
    status = "optimal" if ok else "max_iter"

    # KKT residuals; stationarity measured in the equality nullspace, which
    # equals the best residual over any equality multipliers
    mu = np.zeros(mi)
    for k, i in enumerate(W):
        if k < lam.size:
            mu[i] = max(lam[k], 0.0)
    grad_x = p.P @ x + p.g + Call.T @ mu
    stat = float(np.abs(Z.T @ grad_x).max()) if Z.shape[1] else 0.0
    gscale = 1.0 + float(np.abs(p.g).max()) + float(np.abs(p.P @ x).max())
    primal_eq = float(np.abs(p.A @ x - p.b).max()) if p.A.shape[0] else 0.0
    primal_in = float(np.maximum(Call @ x - dall, 0.0).max()) if mi else 0.0
    comp = float(np.abs(mu * (Call @ x - dall)).max()) if mi else 0.0
    kkt = max(stat / gscale, primal_eq / (1.0 + scale), primal_in / scale,
              comp / (gscale * scale))
    if status == "optimal" and kkt > tol:
        status = "max_iter"
    return QpSolution(x, status, float(kkt), total_it, tuple(sorted(W)),
                      p.objective(x))


# --------------------------------------------------------------------------
# problem dump/load for reproducing solver failures

def dump_problem(p: QpProblem) -> str:
    out = [f"qp n={p.n} me={p.A.shape[0]} mi={p.C.shape[0]}"]

    def emit(tag, M):
        M = np.atleast_2d(M)
        for row in M:
            out.append(tag + " " + ",".join(repr(float(v)) for v in row))

    emit("P", p.P)
    emit("g", p.g)
    if p.A.shape[0]:
        emit("A", p.A)
        emit("b", p.b)
    if p.C.shape[0]:
        emit("C", p.C)
        emit("d", p.d)
    emit("lower", p.lower)
    emit("upper", p.upper)
    return "\n".join(out) + "\n"


def load_problem(text: str) -> QpProblem:
    rows: dict[str, list[list[float]]] = {}
    header = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("qp "):
            header = dict(kv.split("=") for kv in line.split()[1:])
            continue
        tag, _, payload = line.partition(" ")
        rows.setdefault(tag, []).append([float(v) for v in payload.split(",")])
    if header is None:
        raise QpError("missing qp header line")

    def take(tag):
        if tag not in rows:
            return None
        M = np.array(rows[tag])
        return M if M.shape[0] > 1 else M[0]

    P = np.array(rows["P"])
    return QpProblem(P, take("g"), take("A"), take("b"), take("C"), take("d"),
                     take("lower"), take("upper"))
