"""Dense primal-dual interior-point solver for small semidefinite programs.

Solves

    maximize    tr(C X)
    subject to  tr(F_i X) (<= | >= | ==) b_i,   i = 1..k
                X >= 0 (positive semidefinite)

for a dense symmetric matrix variable. The implementation is an
infeasible-start path-following method with Nesterov-Todd scaling and a
Mehrotra predictor-corrector step:

  * inequality rows get nonnegative slack variables, giving one semidefinite
    cone block plus a nonnegative orthant block;
  * each iteration forms the dense Schur complement of the Newton system and
    factors it by Cholesky (with a small diagonal regularization retry if the
    factorization breaks down);
  * primal and dual step lengths back off from the cone boundary by a fixed
    fraction.

The cost matrix is normalized by its largest absolute entry internally;
reported objective values, multipliers and gaps are rescaled back. Aimed at
matrix sizes up to ~100 and a few thousand constraint rows; everything is
dense and single threaded, so identical inputs produce identical iterates.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

_SENSES = ("<=", ">=", "==")


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERS = "MaxIters"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"  # primal objective unbounded above
    NUMERICAL_FAILURE = "NumericalFailure"


def _check_symmetric(F, m, name):
    F = np.asarray(F, dtype=float)
    if F.shape != (m, m):
        raise ValueError(f"{name} must have shape ({m}, {m}), got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.abs(F).max()))
    if np.abs(F - F.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (F + F.T)


@dataclass(frozen=True)
class ConstraintRow:
    """One linear trace constraint tr(F X) sense rhs."""

    F: np.ndarray
    sense: str
    rhs: float


@dataclass(frozen=True)
class ConicProblem:
    """maximize tr(cost X) over X >= 0 subject to linear trace rows."""

    dim: int
    cost: np.ndarray
    rows: tuple[ConstraintRow, ...]

    def __init__(self, dim, cost, rows):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        cost = _check_symmetric(cost, dim, "cost")
        checked = []
        for i, row in enumerate(rows):
            if isinstance(row, ConstraintRow):
                F, sense, rhs = row.F, row.sense, row.rhs
            else:
                F, sense, rhs = row
            if sense not in _SENSES:
                raise ValueError(f"row {i}: sense must be one of {_SENSES}, got {sense!r}")
            rhs = float(rhs)
            if not np.isfinite(rhs):
                raise ValueError(f"row {i}: rhs is not finite")
            checked.append(ConstraintRow(_check_symmetric(F, dim, f"row {i} matrix"), sense, rhs))
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "rows", tuple(checked))

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "cost": self.cost.tolist(),
            "constraints": [
                {"F": r.F.tolist(), "sense": r.sense, "rhs": r.rhs} for r in self.rows
            ],
        }

    @classmethod
    def from_json(cls, doc) -> "ConicProblem":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        rows = [(c["F"], c["sense"], c["rhs"]) for c in doc["constraints"]]
        return cls(doc["dim"], doc["cost"], rows)


@dataclass(frozen=True)
class SolverOptions:
    rel_gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 100
    step_fraction: float = 0.98
    scaling: str = "nt"
    predictor_corrector: bool = True
    verbose: bool = False

    def __post_init__(self):
        for name in ("rel_gap_tol", "feas_tol", "step_fraction"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.scaling != "nt":
            raise ValueError(f"only 'nt' scaling is implemented, got {self.scaling!r}")


@dataclass(frozen=True)
class ConicSolution:
    """Converged (or last) iterate of :func:`solve` plus certificates."""

    X: np.ndarray
    y: np.ndarray
    slacks: np.ndarray
    primal_obj: float
    dual_obj: float
    rel_gap: float
    primal_resid: float
    dual_resid: float
    status: Status
    iterations: int
    wall_time: float
    gap_history: tuple[float, ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "X": self.X.tolist(),
            "value": self.primal_obj,
            "gap": self.rel_gap,
            "status": self.status.value,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class ResidualReport:
    primal_resid: float
    dual_resid: float
    rel_gap: float


def _min_eig(M) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def _report(problem: ConicProblem, X, y, c_scale):
    """Objective values, duality gap and feasibility residuals, recomputed
    from the problem data alone (no solver bookkeeping).

    Primal residual is the largest absolute constraint/cone violation; dual
    residual is the violation of the dual cone conditions measured on the
    cost-normalized problem.
    """
    pobj = float(np.sum(problem.cost * X))
    viol = 0.0 if problem.rows else 0.0
    Zr = -problem.cost.copy()
    sign_viol = 0.0
    dobj = 0.0
    for row, yi in zip(problem.rows, y):
        v = float(np.sum(row.F * X))
        if row.sense == "<=":
            viol = max(viol, v - row.rhs)
            sign_viol = max(sign_viol, -yi)
        elif row.sense == ">=":
            viol = max(viol, row.rhs - v)
            sign_viol = max(sign_viol, yi)
        else:
            viol = max(viol, abs(v - row.rhs))
        Zr += yi * row.F
        dobj += yi * row.rhs
    presid = max(0.0, viol, -_min_eig(X))
    dresid = max(0.0, -_min_eig(Zr), sign_viol) / c_scale
    rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return pobj, dobj, rel_gap, presid, dresid


def residuals(problem: ConicProblem, sol: ConicSolution) -> ResidualReport:
    """Recompute feasibility residuals and duality gap for a solution.

    Independent of any state the solver kept, so a stale or hand-built
    solution is measured honestly.
    """
    X = np.asarray(sol.X, dtype=float)
    y = np.asarray(sol.y, dtype=float).reshape(-1)
    if X.shape != (problem.dim, problem.dim):
        raise ValueError(f"X must have shape ({problem.dim}, {problem.dim}), got {X.shape}")
    if y.shape[0] != len(problem.rows):
        raise ValueError(f"y must have length {len(problem.rows)}, got {y.shape[0]}")
    c_scale = max(float(np.abs(problem.cost).max()), 1e-300)
    _, _, rel_gap, presid, dresid = _report(problem, X, y, c_scale)
    return ResidualReport(primal_resid=presid, dual_resid=dresid, rel_gap=rel_gap)


def _max_step_psd(L, dM) -> float:
    """Largest alpha with M + alpha*dM >= 0, given M = L L^T (positive definite)."""
    S = solve_triangular(L, dM, lower=True)
    S = solve_triangular(L, S.T, lower=True)
    lam = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])
    if lam >= 0.0:
        return np.inf
    return 1.0 / (-lam)


def _max_step_nonneg(v, dv) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def solve(problem: ConicProblem, options: SolverOptions | None = None) -> ConicSolution:
    """Run the interior-point method on a conic problem.

    Returns a :class:`ConicSolution`; a non-optimal outcome is reported via
    ``status``, never raised. ``status == Status.OPTIMAL`` guarantees
    ``rel_gap <= rel_gap_tol`` and both residuals ``<= feas_tol`` at the
    returned iterate.
    """
    opts = options if options is not None else SolverOptions()
    t_start = time.perf_counter()

    m = problem.dim
    k = len(problem.rows)
    c_scale = max(float(np.abs(problem.cost).max()), 1e-300)

    # Internal minimization form: min <Cmin, X> with all inequalities
    # normalized to tr(Ft X) + slack = bt.
    Cmin = -problem.cost / c_scale
    Ft = np.zeros((k, m, m))
    bt = np.zeros(k)
    ineq = np.zeros(k, dtype=bool)
    sign_map = np.ones(k)  # y_reported = c_scale * sign_map * y_internal
    for i, row in enumerate(problem.rows):
        if row.sense == ">=":
            Ft[i] = -row.F
            bt[i] = -row.rhs
            ineq[i] = True
            sign_map[i] = 1.0
        else:
            Ft[i] = row.F
            bt[i] = row.rhs
            ineq[i] = row.sense == "<="
            sign_map[i] = -1.0
    n_ineq = int(np.count_nonzero(ineq))
    cone_degree = m + n_ineq

    b_max = float(np.abs(bt).max()) if k else 0.0
    tau = 1.0 + b_max
    X = tau * np.eye(m)
    Z = tau * np.eye(m)
    y = np.zeros(k)
    s = np.full(n_ineq, tau)
    w = np.full(n_ineq, tau)

    unbounded_mark = 1e12 * (1.0 + b_max)

    def reported_y(y_int):
        return c_scale * sign_map * y_int

    gap_history: list[float] = []
    status = Status.MAX_ITERS
    iterations = 0
    stall_count = 0

    def finish(st, it):
        pobj, dobj, rel_gap, presid, dresid = _report(problem, X, reported_y(y), c_scale)
        return ConicSolution(
            X=X.copy(),
            y=reported_y(y),
            slacks=s.copy(),
            primal_obj=pobj,
            dual_obj=dobj,
            rel_gap=rel_gap,
            primal_resid=presid,
            dual_resid=dresid,
            status=st,
            iterations=it,
            wall_time=time.perf_counter() - t_start,
            gap_history=tuple(gap_history),
        )

    for it in range(opts.max_iters + 1):
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
            return finish(Status.NUMERICAL_FAILURE, iterations)

        pobj, dobj, rel_gap, presid, dresid = _report(problem, X, reported_y(y), c_scale)
        gap_history.append(rel_gap)
        if opts.verbose:
            print(
                f"iter {iterations:3d}  gap {rel_gap:9.3e}  presid {presid:9.3e}  "
                f"dresid {dresid:9.3e}  pobj {pobj:+.9e}"
            )

        monotone_tail = len(gap_history) < 3 or (
            gap_history[-1] <= gap_history[-2] <= gap_history[-3]
        )
        weak_duality = dobj >= pobj - 1e-9 * (1.0 + abs(pobj))
        if (
            rel_gap <= opts.rel_gap_tol
            and presid <= opts.feas_tol
            and dresid <= opts.feas_tol
            and weak_duality
            and monotone_tail
        ):
            return finish(Status.OPTIMAL, iterations)

        # Divergence heuristics (no formal certificates, classification only).
        if presid <= np.sqrt(opts.feas_tol) and pobj / c_scale > unbounded_mark:
            return finish(Status.DUAL_INFEASIBLE, iterations)
        if dresid <= np.sqrt(opts.feas_tol) and dobj / c_scale < -unbounded_mark:
            return finish(Status.PRIMAL_INFEASIBLE, iterations)

        if it == opts.max_iters:
            break

        # --- Newton system residuals (internal form) ---
        AX = np.einsum("kab,ab->k", Ft, X)
        r_p = bt - AX
        r_p[ineq] -= s
        Rd = Cmin - Z - np.einsum("k,kab->ab", y, Ft)
        r_w = -(y[ineq] + w)

        nu = (float(np.sum(X * Z)) + float(s @ w)) / cone_degree

        # --- Nesterov-Todd scaling ---
        try:
            Lx = np.linalg.cholesky(X)
            Lz = np.linalg.cholesky(Z)
        except np.linalg.LinAlgError:
            return finish(Status.NUMERICAL_FAILURE, iterations)
        U_sv, lam, Vt_sv = np.linalg.svd(Lz.T @ Lx)
        lam = np.maximum(lam, 1e-300)
        R = Lx @ Vt_sv.T / np.sqrt(lam)
        Rt = R.T
        Rinv = (np.sqrt(lam)[:, None] * Vt_sv) @ solve_triangular(
            Lx, np.eye(m), lower=True
        )
        W = R @ Rt
        lam_sum = lam[:, None] + lam[None, :]

        d_lp = np.sqrt(s / w) if n_ineq else np.zeros(0)
        lam_lp = np.sqrt(s * w) if n_ineq else np.zeros(0)

        # --- Schur complement ---
        WFW = np.einsum("ab,kbc,cd->kad", W, Ft, W)
        Mschur = np.einsum("kab,lab->kl", Ft, WFW)
        if n_ineq:
            Mschur[ineq, ineq] += d_lp**2
        chol = None
        reg = 0.0
        trace_m = max(float(np.trace(Mschur)), 1.0)
        for attempt in range(4):
            try:
                chol = cho_factor(
                    Mschur + reg * np.eye(k) if reg else Mschur, lower=True
                )
                break
            except np.linalg.LinAlgError:
                reg += 1e-12 * trace_m
        if chol is None and k > 0:
            return finish(Status.NUMERICAL_FAILURE, iterations)

        WRdW = W @ Rd @ W

        def newton_step(Rc_hat, rc_lp):
            G = 2.0 * Rc_hat / lam_sum
            H = R @ G @ Rt
            rhs = r_p - np.einsum("kab,ab->k", Ft, H - WRdW)
            if n_ineq:
                g = rc_lp / lam_lp
                h = d_lp * g
                rhs[ineq] -= h - d_lp**2 * r_w
            else:
                h = np.zeros(0)
            dy = cho_solve(chol, rhs) if k else np.zeros(0)
            dZ = Rd - np.einsum("k,kab->ab", dy, Ft)
            dX = H - W @ dZ @ W
            dX = 0.5 * (dX + dX.T)
            dw = r_w - dy[ineq] if n_ineq else np.zeros(0)
            ds = h - d_lp**2 * dw if n_ineq else np.zeros(0)
            return dX, dy, dZ, ds, dw

        # Predictor: aim at complementarity zero.
        Rc_aff = -np.diag(lam**2)
        rc_aff = -(s * w) if n_ineq else np.zeros(0)
        dX_a, dy_a, dZ_a, ds_a, dw_a = newton_step(Rc_aff, rc_aff)

        if opts.predictor_corrector:
            ap_aff = min(
                1.0, _max_step_psd(Lx, dX_a), _max_step_nonneg(s, ds_a)
            )
            ad_aff = min(
                1.0, _max_step_psd(Lz, dZ_a), _max_step_nonneg(w, dw_a)
            )
            nu_aff = (
                float(np.sum((X + ap_aff * dX_a) * (Z + ad_aff * dZ_a)))
                + float((s + ap_aff * ds_a) @ (w + ad_aff * dw_a))
            ) / cone_degree
            sigma = min(max(nu_aff / nu, 0.0) ** 3, 1.0)

            dXh = Rinv @ dX_a @ Rinv.T
            dZh = Rt @ dZ_a @ R
            cross = dXh @ dZh
            Rc = sigma * nu * np.eye(m) - np.diag(lam**2) - 0.5 * (cross + cross.T)
            rc = sigma * nu - s * w - ds_a * dw_a if n_ineq else np.zeros(0)
            dX, dy, dZ, ds, dw = newton_step(Rc, rc)
        else:
            dX, dy, dZ, ds, dw = dX_a, dy_a, dZ_a, ds_a, dw_a

        eta = opts.step_fraction
        alpha_p = min(1.0, eta * _max_step_psd(Lx, dX), eta * _max_step_nonneg(s, ds))
        alpha_d = min(1.0, eta * _max_step_psd(Lz, dZ), eta * _max_step_nonneg(w, dw))

        if max(alpha_p, alpha_d) < 1e-10:
            stall_count += 1
            if stall_count >= 3:
                return finish(Status.NUMERICAL_FAILURE, iterations)
        else:
            stall_count = 0

        X = X + alpha_p * dX
        s = s + alpha_p * ds
        y = y + alpha_d * dy
        Z = Z + alpha_d * dZ
        w = w + alpha_d * dw
        X = 0.5 * (X + X.T)
        Z = 0.5 * (Z + Z.T)
        iterations += 1

    return finish(status, iterations)
