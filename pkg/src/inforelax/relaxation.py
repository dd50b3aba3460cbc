"""Constrained quadratic programs over inputs and their semidefinite liftings.

A :class:`QuadraticProgram` maximizes u^T Q u + 2 q^T u + q0 over a feasible
set described by constraint records. :func:`relax` lifts it to a linear
program over a positive semidefinite matrix by substituting U for u u^T:

  * quadratic constraints become trace constraints on the bordered matrix;
  * amplitude bounds |u_t| <= c_t become U_tt <= c_t^2;
  * box constraints 0 <= u_t <= c_t become the tightened diagonal bound
    U_tt <= c_t u_t together with entrywise nonnegativity of U (one row per
    unordered index pair; the plain bound U_tt <= c_t^2 is implied by these
    and the semidefinite border, so it is not emitted);
  * an l2 budget ||u||_2 <= c becomes tr(U) <= c^2;
  * an l1 budget over nonnegative u becomes tr(E U) <= b^2 with E all ones,
    and a general nonnegative linear row a^T u <= b becomes tr(a a^T U) <= b^2.

When the objective has no linear part and every constraint depends on u only
through the squared entries, the lifting stays d x d (no border row);
otherwise the (d+1, d+1) border entry is pinned to 1 by an equality row.

The relaxed optimum always upper-bounds the program. If additionally all
off-diagonal entries of Q and all entries of q are nonnegative and every
constraint is diagonal-representable, the bound is tight and the square root
of the diagonal of the solved U is a global maximizer
(:func:`check_exactness`, :func:`extract`). Otherwise :func:`certify` turns
any feasible candidate into a guaranteed optimality ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objective import QuadraticObjective, evaluate
from .sdp import ConicProblem, ConstraintRow, Status


class InfeasibleCandidateError(ValueError):
    """Candidate point violates the program constraints.

    Carries ``violations``: a list of (description, magnitude) pairs.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ", ".join(f"{desc}: {amt:.3e}" for desc, amt in self.violations)
        super().__init__(f"candidate is infeasible: {lines}")


class ExtractionError(RuntimeError):
    """Solution extraction produced an infeasible point (solver inconsistency)."""


def _vec(x, d, name, positive=False):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape[0] == 1:
        a = np.full(d, a[0])
    if a.shape[0] != d:
        raise ValueError(f"{name} must have length {d} (or be scalar), got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    if positive and not np.all(a > 0):
        raise ValueError(f"{name} entries must be positive")
    return a


@dataclass(frozen=True)
class Quadratic:
    """u^T R u + 2 r^T u + r0 <= 0."""

    R: np.ndarray
    r: np.ndarray
    r0: float


@dataclass(frozen=True)
class Amplitude:
    """|u_t| <= c_t with c_t > 0 (scalar c applies to every coordinate)."""

    c: np.ndarray | float


@dataclass(frozen=True)
class Box:
    """0 <= u_t <= c_t with c_t > 0."""

    c: np.ndarray | float


@dataclass(frozen=True)
class L2Budget:
    """||u||_2 <= c with c > 0."""

    c: float


@dataclass(frozen=True)
class L1Budget:
    """||u||_1 <= b over nonnegative u; valid only next to a Box constraint."""

    b: float


@dataclass(frozen=True)
class LinearNonneg:
    """a^T u <= b with a >= 0, b >= 0, over nonnegative u (needs a Box)."""

    a: np.ndarray
    b: float


_CONSTRAINT_TYPES = (Quadratic, Amplitude, Box, L2Budget, L1Budget, LinearNonneg)


def _normalize_constraint(con, d):
    """Validate one constraint against dimension d, returning a cleaned copy."""
    if isinstance(con, Quadratic):
        R = np.asarray(con.R, dtype=float)
        if R.shape != (d, d):
            raise ValueError(f"Quadratic R must be {d} x {d}, got {R.shape}")
        if np.abs(R - R.T).max() > 1e-12 * max(1.0, np.abs(R).max()):
            raise ValueError("Quadratic R must be symmetric")
        r = _vec(con.r, d, "Quadratic r")
        return Quadratic(0.5 * (R + R.T), r, float(con.r0))
    if isinstance(con, Amplitude):
        return Amplitude(_vec(con.c, d, "Amplitude c", positive=True))
    if isinstance(con, Box):
        return Box(_vec(con.c, d, "Box c", positive=True))
    if isinstance(con, L2Budget):
        c = float(con.c)
        if not c > 0:
            raise ValueError(f"L2Budget c must be positive, got {c}")
        return L2Budget(c)
    if isinstance(con, L1Budget):
        b = float(con.b)
        if not b > 0:
            raise ValueError(f"L1Budget b must be positive, got {b}")
        return L1Budget(b)
    if isinstance(con, LinearNonneg):
        a = _vec(con.a, d, "LinearNonneg a")
        if np.any(a < 0):
            raise ValueError("LinearNonneg a must be entrywise nonnegative")
        b = float(con.b)
        if b < 0:
            raise ValueError(f"LinearNonneg b must be nonnegative, got {b}")
        return LinearNonneg(a, b)
    raise TypeError(f"unknown constraint type {type(con).__name__}")


@dataclass(frozen=True)
class QuadraticProgram:
    """maximize a quadratic objective subject to constraint records."""

    objective: QuadraticObjective
    constraints: tuple

    def __init__(self, objective: QuadraticObjective, constraints):
        constraints = tuple(constraints)
        if not constraints:
            raise ValueError(
                "at least one constraint is required (the unconstrained problem is unbounded)"
            )
        d = objective.d
        constraints = tuple(_normalize_constraint(c, d) for c in constraints)
        needs_nonneg = any(isinstance(c, (L1Budget, LinearNonneg)) for c in constraints)
        has_nonneg = any(isinstance(c, Box) for c in constraints)
        if needs_nonneg and not has_nonneg:
            raise ValueError(
                "L1Budget/LinearNonneg constraints are only valid together with a "
                "nonnegativity-implying Box constraint"
            )
        object.__setattr__(self, "objective", objective)
        object.__setattr__(self, "constraints", constraints)

    @property
    def d(self) -> int:
        return self.objective.d


def constraint_violations(qp: QuadraticProgram, u) -> list[tuple[str, float]]:
    """Per-constraint violation magnitudes at u (positive means violated)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != qp.d:
        raise ValueError(f"u must have length {qp.d}, got {u.shape[0]}")
    out = []
    for idx, con in enumerate(qp.constraints):
        if isinstance(con, Quadratic):
            v = float(u @ con.R @ u + 2.0 * con.r @ u + con.r0)
            out.append((f"constraint {idx} (quadratic)", v))
        elif isinstance(con, Amplitude):
            t = int(np.argmax(np.abs(u) - con.c))
            out.append((f"constraint {idx} (amplitude, index {t})", float(np.abs(u[t]) - con.c[t])))
        elif isinstance(con, Box):
            lo = int(np.argmin(u))
            hi = int(np.argmax(u - con.c))
            out.append((f"constraint {idx} (box lower, index {lo})", float(-u[lo])))
            out.append((f"constraint {idx} (box upper, index {hi})", float(u[hi] - con.c[hi])))
        elif isinstance(con, L2Budget):
            out.append((f"constraint {idx} (l2 budget)", float(np.linalg.norm(u) - con.c)))
        elif isinstance(con, L1Budget):
            out.append((f"constraint {idx} (l1 budget)", float(np.abs(u).sum() - con.b)))
        elif isinstance(con, LinearNonneg):
            out.append((f"constraint {idx} (linear)", float(con.a @ u - con.b)))
    return out


def max_violation(qp: QuadraticProgram, u) -> float:
    return max(amt for _, amt in constraint_violations(qp, u))


def _diagonal_representable(con) -> bool:
    """True when the constraint depends on u only through its squared entries."""
    if isinstance(con, (Amplitude, L2Budget)):
        return True
    if isinstance(con, Quadratic):
        return bool(
            np.all(con.r == 0.0) and np.all(con.R == np.diag(np.diag(con.R)))
        )
    return False


@dataclass(frozen=True)
class LiftedProblem:
    """Semidefinite lifting of a quadratic program.

    ``homogeneous`` liftings use a d x d variable standing for u u^T;
    bordered ones use (d+1) x (d+1) with the original u along the last
    column and the corner entry pinned to 1.
    """

    d: int
    homogeneous: bool
    cost: np.ndarray
    rows: tuple[ConstraintRow, ...]

    @property
    def dim(self) -> int:
        return self.d if self.homogeneous else self.d + 1

    def to_conic(self) -> ConicProblem:
        return ConicProblem(self.dim, self.cost, self.rows)

    def to_json(self) -> dict:
        return self.to_conic().to_json()

    def lift_point(self, u) -> np.ndarray:
        """The lifted matrix of a concrete input (rank one by construction)."""
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape[0] != self.d:
            raise ValueError(f"u must have length {self.d}, got {u.shape[0]}")
        if self.homogeneous:
            return np.outer(u, u)
        v = np.concatenate([u, [1.0]])
        return np.outer(v, v)


def relax(qp: QuadraticProgram) -> LiftedProblem:
    """Build the semidefinite relaxation of a quadratic program.

    See the module docstring for the translation of each constraint kind.
    """
    d = qp.d
    obj = qp.objective
    homogeneous = (
        np.all(obj.q == 0.0)
        and obj.q0 == 0.0
        and all(_diagonal_representable(c) for c in qp.constraints)
    )
    dim = d if homogeneous else d + 1

    def pad(block_u, border_col=None, corner=0.0):
        """Embed a U-block (and optional border column) into the lifted frame."""
        if homogeneous:
            return block_u
        F = np.zeros((dim, dim))
        F[:d, :d] = block_u
        if border_col is not None:
            F[:d, d] = border_col
            F[d, :d] = border_col
        F[d, d] = corner
        return F

    if homogeneous:
        cost = obj.Q
    else:
        cost = np.zeros((dim, dim))
        cost[:d, :d] = obj.Q
        cost[:d, d] = obj.q
        cost[d, :d] = obj.q
        cost[d, d] = obj.q0

    rows: list[ConstraintRow] = []
    for con in qp.constraints:
        if isinstance(con, Quadratic):
            if homogeneous:
                rows.append(ConstraintRow(con.R, "<=", -con.r0))
            else:
                rows.append(ConstraintRow(pad(con.R, con.r, con.r0), "<=", 0.0))
        elif isinstance(con, Amplitude):
            for t in range(d):
                F = np.zeros((d, d))
                F[t, t] = 1.0
                rows.append(ConstraintRow(pad(F), "<=", float(con.c[t] ** 2)))
        elif isinstance(con, Box):
            # Tightened diagonal bound U_tt <= c_t u_t (subsumes U_tt <= c_t^2
            # through the semidefinite border, so that bound is not added).
            for t in range(d):
                F = np.zeros((d, d))
                F[t, t] = 1.0
                col = np.zeros(d)
                col[t] = -con.c[t] / 2.0
                rows.append(ConstraintRow(pad(F, col), "<=", 0.0))
            for s_i in range(d):
                for t_i in range(s_i, d):
                    F = np.zeros((d, d))
                    F[s_i, t_i] += 0.5
                    F[t_i, s_i] += 0.5
                    rows.append(ConstraintRow(pad(F), ">=", 0.0))
        elif isinstance(con, L2Budget):
            rows.append(ConstraintRow(pad(np.eye(d)), "<=", float(con.c**2)))
        elif isinstance(con, L1Budget):
            rows.append(ConstraintRow(pad(np.ones((d, d))), "<=", float(con.b**2)))
        elif isinstance(con, LinearNonneg):
            rows.append(ConstraintRow(pad(np.outer(con.a, con.a)), "<=", float(con.b**2)))

    if not homogeneous:
        F = np.zeros((dim, dim))
        F[d, d] = 1.0
        rows.append(ConstraintRow(F, "==", 1.0))

    return LiftedProblem(d=d, homogeneous=homogeneous, cost=cost, rows=tuple(rows))


def check_exactness(qp: QuadraticProgram) -> bool:
    """Sufficient condition for the relaxation to recover a global solution.

    Requires nonnegative off-diagonal Q, nonnegative q (both within a
    roundoff allowance) and every constraint expressible through the squared
    input alone.
    """
    Q, q = qp.objective.Q, qp.objective.q
    q_scale = max(float(np.abs(Q).max()), 0.0)
    off = Q - np.diag(np.diag(Q))
    if off.min(initial=0.0) < -1e-12 * q_scale:
        return False
    if q.min(initial=0.0) < -1e-12 * max(float(np.abs(q).max()), 1.0):
        return False
    return all(_diagonal_representable(c) for c in qp.constraints)


def extract(qp: QuadraticProgram, X_star, rank_tol: float = 1e-6):
    """Recover an input vector from a solved lifting, when possible.

    Under :func:`check_exactness` the elementwise square root of the
    diagonal of the U-block is returned regardless of rank. Otherwise the
    solution must be numerically rank one (second-to-first eigenvalue ratio
    at most ``rank_tol``); the u-block of the border column (bordered case)
    or the scaled top eigenvector (homogeneous case) is returned. Returns
    None when neither route applies. An extracted point that violates a
    constraint by more than 1e-6 raises :class:`ExtractionError`.
    """
    X_star = np.asarray(X_star, dtype=float)
    d = qp.d
    if X_star.shape == (d, d):
        bordered = False
    elif X_star.shape == (d + 1, d + 1):
        bordered = True
    else:
        raise ValueError(
            f"X_star must be {d} x {d} or {d + 1} x {d + 1}, got {X_star.shape}"
        )

    eigvals = np.linalg.eigvalsh(0.5 * (X_star + X_star.T))
    lam1 = float(eigvals[-1])
    lam2 = float(eigvals[-2]) if eigvals.shape[0] > 1 else 0.0
    ratio = lam2 / lam1 if lam1 > 0 else np.inf

    if check_exactness(qp):
        U = X_star[:d, :d] if bordered else X_star
        u = np.sqrt(np.clip(np.diag(U), 0.0, None))
    elif ratio <= rank_tol:
        if bordered:
            corner = X_star[d, d]
            if corner <= 0:
                return None
            u = X_star[:d, d] / corner
        else:
            w, V = np.linalg.eigh(0.5 * (X_star + X_star.T))
            u = np.sqrt(max(w[-1], 0.0)) * V[:, -1]
            if u.sum() < 0:
                u = -u
    else:
        return None

    worst = max_violation(qp, u)
    if worst > 1e-6:
        raise ExtractionError(
            f"extracted point violates a constraint by {worst:.3e} "
            f"(eigenvalue ratio {ratio:.3e}); the relaxation solution is inconsistent"
        )
    return u


@dataclass(frozen=True)
class DesignResult:
    """Outcome of one relaxation-based design run.

    ``relaxation_value`` upper-bounds the program; when ``exact`` is set the
    ``extracted_u`` attains it (so the global optimum is recovered), and
    otherwise ``ratio = candidate_value / relaxation_value`` certifies the
    candidate's fraction of the unknown optimum.
    """

    relaxation_value: float
    X_star: np.ndarray | None = None
    extracted_u: np.ndarray | None = None
    exact: bool = False
    candidate: np.ndarray | None = None
    candidate_value: float | None = None
    ratio: float | None = None
    status: Status | None = None

    @property
    def u(self):
        """The input this result recommends or certifies."""
        return self.extracted_u if self.extracted_u is not None else self.candidate

    def to_json(self) -> dict:
        return {
            "relaxation_value": self.relaxation_value,
            "candidate_value": self.candidate_value,
            "ratio": self.ratio,
            "exact": self.exact,
            "u": None if self.u is None else np.asarray(self.u).tolist(),
            "status": None if self.status is None else self.status.value,
        }


def certify(qp: QuadraticProgram, candidate, relaxation_value: float) -> DesignResult:
    """Bound a candidate's suboptimality against the relaxation value.

    The candidate must be feasible (no violation above 1e-7); the true
    optimum then lies in [candidate value, relaxation value] and ``ratio``
    is the certified fraction of the optimum the candidate achieves.
    """
    candidate = np.asarray(candidate, dtype=float).reshape(-1)
    bad = [(desc, amt) for desc, amt in constraint_violations(qp, candidate) if amt > 1e-7]
    if bad:
        raise InfeasibleCandidateError(bad)
    value = evaluate(qp.objective, candidate)
    return DesignResult(
        relaxation_value=float(relaxation_value),
        candidate=candidate,
        candidate_value=value,
        ratio=value / float(relaxation_value),
    )
