"""Parameterized discrete-time linear systems.

A model

    x[t+1] = A x[t] + B u[t],    y[t] = C[t] x[t],    t = 0 .. N

carries, next to the nominal matrices, the partial derivatives of A, B and
the initial state with respect to each uncertain parameter. From those the
module simulates trajectories, propagates parameter sensitivities and
accumulates the Fisher information matrix of the measured outputs under
Gaussian noise with covariance Sigma. A zero-order-hold discretization with
exact parameter derivatives (block matrix-exponential augmentation) converts
continuous-time models into this form.

A and B must be time invariant; C may vary with t (it only enters through
the per-sample output weighting).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


def _as_matrix(x, rows, cols, name):
    a = np.asarray(x, dtype=float)
    if a.shape != (rows, cols):
        raise ValueError(f"{name} must have shape ({rows}, {cols}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _as_vector(x, size, name):
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.shape != (size,):
        raise ValueError(f"{name} must have length {size}, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParameterVector:
    """Named values of the uncertain parameters."""

    names: tuple[str, ...]
    values: np.ndarray

    def __init__(self, names, values):
        names = tuple(str(n) for n in names)
        if len(names) == 0:
            raise ValueError("parameter vector must contain at least one entry")
        if len(set(names)) != len(names):
            raise ValueError(f"parameter names must be unique, got {names}")
        values = _as_vector(values, len(names), "parameter values")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class Trajectory:
    """States (N+1, n) and outputs (N+1, n_y) of one simulation."""

    states: np.ndarray
    outputs: np.ndarray


@dataclass(frozen=True)
class SensitivityTrajectory:
    """Array (N+1, n, p); entry (t, h, i) is the derivative of state h at
    time t with respect to parameter i."""

    sens: np.ndarray


@dataclass(frozen=True)
class ParameterizedModel:
    """Discrete-time linear system with parameter partial derivatives.

    Parameters
    ----------
    A : (n, n) array
        State matrix, time invariant.
    B : (n, n_u) array
        Input matrix, time invariant.
    C : (n_y, n) or (N+1, n_y, n) array
        Output matrix; a 3-d array gives one output matrix per sample.
    Sigma : (n_y, n_y) array
        Measurement noise covariance, symmetric positive definite.
    x0 : (n,) array
        Initial state.
    dA, dB, dx0 : sequences of length p
        Partial derivatives of A, B and x0 with respect to each parameter.
    N : int
        Horizon: u has samples 0..N-1, states and outputs run 0..N.
    param_names : sequence of str, optional
        Labels for the p parameters.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Sigma: np.ndarray
    x0: np.ndarray
    dA: tuple[np.ndarray, ...]
    dB: tuple[np.ndarray, ...]
    dx0: tuple[np.ndarray, ...]
    N: int
    param_names: tuple[str, ...] = field(default=())

    def __init__(self, A, B, C, Sigma, x0, dA, dB, dx0, N, param_names=None):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = np.asarray(B, dtype=float)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"B must have {n} rows to match A, got shape {B.shape}")
        n_u = B.shape[1]
        N = int(N)
        if N < 1:
            raise ValueError(f"horizon N must be >= 1, got {N}")

        C = np.asarray(C, dtype=float)
        if C.ndim == 2:
            n_y = C.shape[0]
            C = _as_matrix(C, n_y, n, "C")
        elif C.ndim == 3:
            if C.shape[0] != N + 1:
                raise ValueError(
                    f"time-varying C needs N+1 = {N + 1} matrices, got {C.shape[0]}"
                )
            n_y = C.shape[1]
            if C.shape[2] != n:
                raise ValueError(f"C must have {n} columns, got {C.shape[2]}")
            if not np.all(np.isfinite(C)):
                raise ValueError("C contains non-finite entries")
            C = np.ascontiguousarray(C)
            C.setflags(write=False)
        else:
            raise ValueError(f"C must be 2-d or 3-d, got ndim {C.ndim}")

        Sigma = _as_matrix(Sigma, n_y, n_y, "Sigma")
        if not np.allclose(Sigma, Sigma.T, rtol=0, atol=1e-12 * max(1.0, abs(Sigma).max())):
            raise ValueError("Sigma must be symmetric")
        try:
            np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError:
            raise ValueError("Sigma must be positive definite (Cholesky failed)") from None

        x0 = _as_vector(x0, n, "x0")

        dA = tuple(dA)
        dB = tuple(dB)
        dx0 = tuple(dx0)
        p = len(dA)
        if p < 1:
            raise ValueError("at least one parameter derivative (dA) is required")
        if len(dB) != p or len(dx0) != p:
            raise ValueError(
                f"dA, dB, dx0 must all have length p = {p}, got {len(dB)} and {len(dx0)}"
            )
        dA = tuple(_as_matrix(m, n, n, f"dA[{i}]") for i, m in enumerate(dA))
        dB = tuple(_as_matrix(m, n, n_u, f"dB[{i}]") for i, m in enumerate(dB))
        dx0 = tuple(_as_vector(v, n, f"dx0[{i}]") for i, v in enumerate(dx0))

        if param_names is None:
            param_names = tuple(f"theta_{i}" for i in range(p))
        else:
            param_names = tuple(str(s) for s in param_names)
            if len(param_names) != p:
                raise ValueError(f"param_names must have length p = {p}")

        A = _as_matrix(A, n, n, "A")
        B = _as_matrix(B, n, n_u, "B")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "dA", dA)
        object.__setattr__(self, "dB", dB)
        object.__setattr__(self, "dx0", dx0)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "param_names", param_names)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[-2]

    @property
    def p(self) -> int:
        return len(self.dA)

    @property
    def d(self) -> int:
        """Length of the stacked input vector, N * n_u."""
        return self.N * self.n_u

    def output_matrix(self, t: int) -> np.ndarray:
        """C at sample t (constant C is returned for every t)."""
        return self.C if self.C.ndim == 2 else self.C[t]

    def output_weights(self) -> np.ndarray:
        """Per-sample weighting S[t] = C[t]^T Sigma^{-1} C[t], shape (N+1, n, n)."""
        Sinv = np.linalg.inv(self.Sigma)
        if self.C.ndim == 2:
            S = self.C.T @ Sinv @ self.C
            return np.broadcast_to(S, (self.N + 1, self.n, self.n))
        return np.einsum("tan,ab,tbm->tnm", self.C, Sinv, self.C)


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time dynamics dx/dt = Ac x + Bc u with parameter partials
    and a sampling interval dt used for zero-order-hold discretization."""

    Ac: np.ndarray
    Bc: np.ndarray
    dAc: tuple[np.ndarray, ...]
    dBc: tuple[np.ndarray, ...]
    dt: float

    def __init__(self, Ac, Bc, dAc, dBc, dt):
        Ac = np.asarray(Ac, dtype=float)
        if Ac.ndim != 2 or Ac.shape[0] != Ac.shape[1]:
            raise ValueError(f"Ac must be square, got shape {Ac.shape}")
        n = Ac.shape[0]
        Bc = np.asarray(Bc, dtype=float)
        if Bc.ndim != 2 or Bc.shape[0] != n:
            raise ValueError(f"Bc must have {n} rows, got shape {Bc.shape}")
        n_u = Bc.shape[1]
        dt = float(dt)
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        dAc = tuple(dAc)
        dBc = tuple(dBc)
        if len(dAc) != len(dBc) or len(dAc) == 0:
            raise ValueError("dAc and dBc must be non-empty and of equal length")
        Ac = _as_matrix(Ac, n, n, "Ac")
        Bc = _as_matrix(Bc, n, n_u, "Bc")
        dAc = tuple(_as_matrix(m, n, n, f"dAc[{i}]") for i, m in enumerate(dAc))
        dBc = tuple(_as_matrix(m, n, n_u, f"dBc[{i}]") for i, m in enumerate(dBc))
        object.__setattr__(self, "Ac", Ac)
        object.__setattr__(self, "Bc", Bc)
        object.__setattr__(self, "dAc", dAc)
        object.__setattr__(self, "dBc", dBc)
        object.__setattr__(self, "dt", dt)


def _check_input(model: ParameterizedModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != model.d:
        raise ValueError(
            f"input vector must have length N*n_u = {model.d}, got {u.shape[0]}"
        )
    return u.reshape(model.N, model.n_u)


def simulate(model: ParameterizedModel, u) -> Trajectory:
    """Run the state recursion for a stacked input vector.

    The stacked input orders entries as index = k*n_u + j, i.e. all input
    channels of sample k = 0 come first.

    Parameters
    ----------
    model : ParameterizedModel
    u : (N*n_u,) array_like

    Returns
    -------
    Trajectory
        states[t] for t = 0..N and outputs[t] = C[t] @ states[t].
    """
    uk = _check_input(model, u)
    n = model.n
    states = np.zeros((model.N + 1, n))
    states[0] = model.x0
    for t in range(model.N):
        states[t + 1] = model.A @ states[t] + model.B @ uk[t]
    if model.C.ndim == 2:
        outputs = states @ model.C.T
    else:
        outputs = np.einsum("tyn,tn->ty", model.C, states)
    return Trajectory(states=states, outputs=outputs)


def simulate_sensitivities(model: ParameterizedModel, u) -> SensitivityTrajectory:
    """Propagate the state sensitivities dx[t]/dtheta_i alongside the state.

    The sensitivities obey the chain-rule recursion

        dx[t+1]/dtheta_i = A dx[t]/dtheta_i + dA_i x[t] + dB_i u[t]

    started from dx0.
    """
    uk = _check_input(model, u)
    n, p = model.n, model.p
    x = model.x0.copy()
    sens = np.zeros((model.N + 1, n, p))
    sens[0] = np.column_stack(model.dx0)
    dA = np.stack(model.dA)  # (p, n, n)
    dB = np.stack(model.dB)  # (p, n, n_u)
    for t in range(model.N):
        sens[t + 1] = (
            model.A @ sens[t]
            + np.einsum("pnm,m->np", dA, x)
            + np.einsum("pnj,j->np", dB, uk[t])
        )
        x = model.A @ x + model.B @ uk[t]
    return SensitivityTrajectory(sens=sens)


def fisher_information(model: ParameterizedModel, u) -> np.ndarray:
    """Fisher information matrix of the outputs about the parameters.

    Sums (dx[t]/dtheta)^T C[t]^T Sigma^{-1} C[t] (dx[t]/dtheta) over
    t = 0..N (the t = 0 term is included even though it vanishes whenever
    x0 does not depend on the parameters).

    Returns
    -------
    (p, p) ndarray, symmetric positive semidefinite.
    """
    sens = simulate_sensitivities(model, u).sens
    S = model.output_weights()
    info = np.einsum("tap,tab,tbq->pq", sens, S, sens)
    return 0.5 * (info + info.T)


def zoh_discretize(cm: ContinuousModel):
    """Zero-order-hold discretization with exact parameter derivatives.

    Returns the tuple (A, B, dA, dB) where A = exp(Ac*dt) and
    B = int_0^dt exp(Ac*s) ds @ Bc. The derivative of the exponential with
    respect to each parameter comes out of the upper off-diagonal block of
    the exponential of the augmented matrix

        [[Ac, dAc_i, 0 ],
         [0,  Ac,    Bc],
         [0,  0,     0 ]] * dt

    whose (1, 3) block simultaneously yields the Ac-induced part of dB.
    The contribution of dBc is int_0^dt exp(Ac*s) ds @ dBc_i.
    """
    n = cm.Ac.shape[0]
    n_u = cm.Bc.shape[1]
    dt = cm.dt

    base = np.zeros((n + n_u, n + n_u))
    base[:n, :n] = cm.Ac
    base[:n, n:] = cm.Bc
    E = expm(base * dt)
    A = E[:n, :n]
    B = E[:n, n:]

    need_psi = any(np.any(m != 0) for m in cm.dBc)
    psi = None
    if need_psi:
        aug = np.zeros((2 * n, 2 * n))
        aug[:n, :n] = cm.Ac
        aug[:n, n:] = np.eye(n)
        psi = expm(aug * dt)[:n, n:]

    dA = []
    dB = []
    for i, (dAc_i, dBc_i) in enumerate(zip(cm.dAc, cm.dBc)):
        blk = np.zeros((2 * n + n_u, 2 * n + n_u))
        blk[:n, :n] = cm.Ac
        blk[:n, n : 2 * n] = dAc_i
        blk[n : 2 * n, n : 2 * n] = cm.Ac
        blk[n : 2 * n, 2 * n :] = cm.Bc
        Eb = expm(blk * dt)
        dA_i = Eb[:n, n : 2 * n]
        dB_i = Eb[:n, 2 * n :].copy()
        if np.any(dBc_i != 0):
            dB_i += psi @ dBc_i
        dA.append(dA_i)
        dB.append(dB_i)

    pieces = [A, B, *dA, *dB]
    if not all(np.all(np.isfinite(m)) for m in pieces):
        bound = float(np.abs(np.linalg.eigvals(cm.Ac)).max())
        raise ArithmeticError(
            f"matrix exponential overflowed for dt = {dt} "
            f"(spectral bound {bound:.3e}); reduce dt or rescale the dynamics"
        )
    return A, B, dA, dB


def model_from_json(doc) -> ParameterizedModel:
    """Build a model from its JSON document (parsed dict or JSON string).

    Expected fields: n, n_u, n_y, N, A, B, C, Sigma, x0 and
    params = [{name, dA, dB, dx0}, ...], matrices as row-major nested lists.
    """
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    try:
        n = int(doc["n"])
        n_u = int(doc["n_u"])
        n_y = int(doc["n_y"])
        N = int(doc["N"])
        params = doc["params"]
    except KeyError as e:
        raise ValueError(f"model document is missing field {e.args[0]!r}") from None
    if not params:
        raise ValueError("model document must list at least one entry in 'params'")
    names = [p.get("name", f"theta_{i}") for i, p in enumerate(params)]
    model = ParameterizedModel(
        A=_as_matrix(doc["A"], n, n, "A"),
        B=_as_matrix(doc["B"], n, n_u, "B"),
        C=doc["C"],
        Sigma=_as_matrix(doc["Sigma"], n_y, n_y, "Sigma"),
        x0=doc["x0"],
        dA=[p["dA"] for p in params],
        dB=[p["dB"] for p in params],
        dx0=[p["dx0"] for p in params],
        N=N,
        param_names=names,
    )
    if model.n_y != n_y:
        raise ValueError(f"C implies n_y = {model.n_y} but document says {n_y}")
    return model


def model_to_json(model: ParameterizedModel) -> dict:
    """Inverse of :func:`model_from_json` (constant-C models only)."""
    if model.C.ndim != 2:
        raise ValueError("JSON model documents support constant C only")
    return {
        "n": model.n,
        "n_u": model.n_u,
        "n_y": model.n_y,
        "N": model.N,
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "Sigma": model.Sigma.tolist(),
        "x0": model.x0.tolist(),
        "params": [
            {
                "name": model.param_names[i],
                "dA": model.dA[i].tolist(),
                "dB": model.dB[i].tolist(),
                "dx0": model.dx0[i].tolist(),
            }
            for i in range(model.p)
        ],
    }


def write_trajectory_csv(path, model: ParameterizedModel, u, traj: Trajectory):
    """Write a simulated trajectory as CSV.

    Header is t,u_1..u_nu,x_1..x_n,y_1..y_ny; rows run t = 0..N. The input
    columns of the final row (t = N, where no input sample exists) are 0.
    """
    uk = _check_input(model, u)
    header = (
        ["t"]
        + [f"u_{j + 1}" for j in range(model.n_u)]
        + [f"x_{h + 1}" for h in range(model.n)]
        + [f"y_{r + 1}" for r in range(model.n_y)]
    )
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for t in range(model.N + 1):
            urow = uk[t] if t < model.N else np.zeros(model.n_u)
            row = [t] + [f"{v:.17g}" for v in (*urow, *traj.states[t], *traj.outputs[t])]
            w.writerow(row)
