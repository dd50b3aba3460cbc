"""Quadratic representation of trace-weighted Fisher information.

For a weight matrix K >= 0 the scalar information measure tr(K * I(theta))
of a :class:`~inforelax.ssmodel.ParameterizedModel` is a quadratic function

    u^T Q u + 2 q^T u + q0

of the stacked input u. This module assembles (Q, q, q0) from two tensors:
the free-response sensitivity m (what the sensitivities do with zero input)
and the input-to-sensitivity impulse response M (how input sample k moves
the sensitivity at time t). Because A and B are time invariant, M depends
on (t, k) only through the lag t - k, which keeps the assembly quadratic in
the horizon instead of cubic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ssmodel import ParameterizedModel


@dataclass(frozen=True)
class InformationWeights:
    """Weight matrix K of the information measure tr(K * I(theta)).

    Must be symmetric positive semidefinite. Use :meth:`t_optimal` for
    K = I (total information) or :meth:`c_optimal` for K = c c^T (information
    about the scalar combination c^T theta).
    """

    K: np.ndarray

    def __init__(self, K):
        K = np.asarray(K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"K must be square, got shape {K.shape}")
        if not np.all(np.isfinite(K)):
            raise ValueError("K contains non-finite entries")
        if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, abs(K).max())):
            raise ValueError("K must be symmetric")
        K = 0.5 * (K + K.T)
        w = np.linalg.eigvalsh(K)
        if w[0] < -1e-9 * max(np.trace(K), 0.0):
            raise ValueError(f"K must be positive semidefinite (min eigenvalue {w[0]:.3e})")
        K = np.ascontiguousarray(K)
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @classmethod
    def t_optimal(cls, p: int) -> "InformationWeights":
        return cls(np.eye(p))

    @classmethod
    def c_optimal(cls, c) -> "InformationWeights":
        c = np.asarray(c, dtype=float).reshape(-1)
        return cls(np.outer(c, c))

    @property
    def p(self) -> int:
        return self.K.shape[0]


@dataclass(frozen=True)
class SensitivityTensors:
    """Building blocks of the sensitivity trajectory as a function of u.

    ``m[t, i, h]`` is the free-response part of the sensitivity of state h
    at time t with respect to parameter i:

        m_i(t) = A^t dx0_i + sum_{l=0}^{t-1} A^{t-l-1} dA_i A^l x0.

    ``M[t, k, i, j, h]`` is the (h, j) entry of the matrix mapping input
    sample k to that sensitivity at time t (zero for k >= t):

        M_{ki}(t) = A^{t-k-1} dB_i + sum_{l=k+1}^{t-1} A^{t-l-1} dA_i A^{l-k-1} B.

    The full sensitivity is then sens[t, h, i] = m[t, i, h] + sum over (k, j)
    of M[t, k, i, j, h] * u[k*n_u + j].
    """

    m: np.ndarray
    M: np.ndarray


def build_tensors(model: ParameterizedModel) -> SensitivityTensors:
    """Assemble the sensitivity tensors of a model.

    Uses the lag recursions

        m_i(t+1)   = A m_i(t) + dA_i (A^t x0)
        Phi_i(l+1) = A Phi_i(l) + dA_i (A^{l-1} B),   Phi_i(1) = dB_i

    with M[t, k] = Phi[t - k], caching the powers of A applied to x0 and B
    instead of expanding the nested sums.
    """
    n, n_u, p, N = model.n, model.n_u, model.p, model.N
    A = model.A

    m = np.zeros((N + 1, p, n))
    x_free = model.x0.copy()  # A^t x0
    for i in range(p):
        m[0, i] = model.dx0[i]
    for t in range(N):
        for i in range(p):
            m[t + 1, i] = A @ m[t, i] + model.dA[i] @ x_free
        x_free = A @ x_free

    # phi[l, i] = response of sensitivity i at lag l >= 1 to a unit input
    phi = np.zeros((N + 1, p, n, n_u))
    AB = model.B.copy()  # A^{l-1} B
    for i in range(p):
        phi[1, i] = model.dB[i]
    for lag in range(1, N):
        for i in range(p):
            phi[lag + 1, i] = A @ phi[lag, i] + model.dA[i] @ AB
        AB = A @ AB

    M = np.zeros((N + 1, N, p, n_u, n))
    for t in range(1, N + 1):
        for k in range(t):
            # (i, j, h) layout; phi is (i, h, j)
            M[t, k] = phi[t - k].transpose(0, 2, 1)
    return SensitivityTensors(m=m, M=M)


@dataclass(frozen=True)
class QuadraticObjective:
    """The triple (Q, q, q0) of a quadratic form u^T Q u + 2 q^T u + q0.

    Q is symmetrized on construction and must be positive semidefinite
    (within roundoff, min eigenvalue >= -1e-8 * trace).
    """

    Q: np.ndarray
    q: np.ndarray
    q0: float

    def __init__(self, Q, q, q0):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        d = Q.shape[0]
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != d:
            raise ValueError(f"q must have length {d}, got {q.shape[0]}")
        q0 = float(q0)
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(q)) and np.isfinite(q0)):
            raise ValueError("objective contains non-finite entries")
        Q = 0.5 * (Q + Q.T)
        w_min = float(np.linalg.eigvalsh(Q)[0])
        if w_min < -1e-8 * max(np.trace(Q), 0.0):
            raise ValueError(
                f"Q must be positive semidefinite (min eigenvalue {w_min:.3e})"
            )
        Q.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "q0", q0)

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    def to_json(self) -> dict:
        return {"d": self.d, "Q": self.Q.tolist(), "q": self.q.tolist(), "q0": self.q0}

    @classmethod
    def from_json(cls, doc) -> "QuadraticObjective":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        return cls(doc["Q"], doc["q"], doc["q0"])


def build_quadratic(model: ParameterizedModel, weights: InformationWeights) -> QuadraticObjective:
    """Express tr(K * I(theta)) as a quadratic in the stacked input.

    With S[t] = C[t]^T Sigma^{-1} C[t] the coefficients are

        Q[(j',k'), (j,k)] = sum_t K[i,i'] M[t,k',i',j',h'] S[t,h,h'] M[t,k,i,j,h]
        q[(j,k)]          = sum_t K[i,i'] m[t,i',h']      S[t,h,h'] M[t,k,i,j,h]
        q0                = sum_t K[i,i'] m[t,i',h']      S[t,h,h'] m[t,i,h]

    (repeated indices summed; columns flattened as k*n_u + j). The t-sum
    starts at max(k, k') + 1 automatically because M vanishes for k >= t.
    """
    if weights.p != model.p:
        raise ValueError(
            f"K must be {model.p} x {model.p} to match the model, got {weights.p}"
        )
    K = weights.K
    S = model.output_weights()
    tens = build_tensors(model)
    m, M = tens.m, tens.M
    d = model.d

    Q4 = np.einsum("iI,tLIJg,thg,tkijh->LJkj", K, M, S, M, optimize=True)
    Q = Q4.reshape(d, d)
    q = np.einsum("iI,tIg,thg,tkijh->kj", K, m, S, M, optimize=True).reshape(d)
    q0 = float(np.einsum("iI,tIg,thg,tih->", K, m, S, m, optimize=True))
    return QuadraticObjective(Q=0.5 * (Q + Q.T), q=q, q0=q0)


def evaluate(obj: QuadraticObjective, u) -> float:
    """Value u^T Q u + 2 q^T u + q0 of the quadratic at u."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != obj.d:
        raise ValueError(f"u must have length {obj.d}, got {u.shape[0]}")
    return float(u @ obj.Q @ u + 2.0 * (obj.q @ u) + obj.q0)
