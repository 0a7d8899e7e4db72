"""Reference (numpy) evaluation of the primal-dual penalty and its step size.

The penalty for weights ``v2`` on a constraint system ``(A, s)`` is

    f(x, y) = 1/2 (c.y - v2.x)^2 + 1/2 |[v2 - A^T yG - yI]_+|^2 + 1/2 |[A x - s]_+|^2

with ``y = (yG, yI)`` and ``c = (s, 1)``.  It vanishes exactly at
primal-dual optimal pairs of the relaxed selection LP.  The compiled
solver in :mod:`tvcs._kernels` evaluates the same expression; the
functions here are the readable version used for checking and for
operation counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .structure import ConstraintSystem

#: multiplier applied to the power-iteration eigenvalue estimate
LIPSCHITZ_SAFETY = 1.02


@dataclass
class OpCounter:
    """Tally of array elements read while evaluating the gradient."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


def _split(y, system):
    y = np.asarray(y, dtype=float)
    G = system.n_rows
    if y.shape != (G + system.p,):
        raise ValueError(f"dual vector has shape {y.shape}, expected ({G + system.p},)")
    return y[:G], y[G:]


def _nnz(system: ConstraintSystem) -> int:
    return system.p + int(np.count_nonzero(system.view1_of >= 0)) + int(np.count_nonzero(system.view2_of >= 0))


def _terms(x, y, system, v2, counter=None):
    x = np.asarray(x, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    yG, yI = _split(y, system)
    s = system.s.astype(float)
    nnz = _nnz(system)
    r = s @ yG + yI.sum() - v2 @ x
    h = np.maximum(v2 - system.column_sums(yG) - yI, 0.0)
    q = np.maximum(system.row_counts(x) - s, 0.0)
    if counter is not None:
        counter.add(system.n_rows + 2 * system.p)  # r
        counter.add(nnz + 2 * system.p)            # h
        counter.add(nnz + system.n_rows)           # q
    return r, h, q


def penalty_value(iterate, system: ConstraintSystem, v2) -> float:
    """Penalty at ``iterate`` (anything with ``x`` and ``y`` attributes, or an ``(x, y)`` pair)."""
    x, y = _unpack(iterate)
    r, h, q = _terms(x, y, system, v2)
    return 0.5 * (r * r + h @ h + q @ q)


def penalty_gradient(iterate, system: ConstraintSystem, v2, counter: OpCounter | None = None):
    """Gradient ``(gx, gy)`` of :func:`penalty_value`.

    ``gy`` stacks the group block and the per-coordinate block.  Work is
    linear in ``p`` plus the number of groups; pass an :class:`OpCounter`
    to tally it.
    """
    x, y = _unpack(iterate)
    v2 = np.asarray(v2, dtype=float)
    r, h, q = _terms(x, y, system, v2, counter)
    s = system.s.astype(float)
    gx = -r * v2 + system.column_sums(q)
    gyG = r * s - system.row_counts(h)
    gyI = r - h
    if counter is not None:
        nnz = _nnz(system)
        counter.add(system.p + nnz)
        counter.add(system.n_rows + nnz)
        counter.add(system.p)
    return gx, np.concatenate([gyG, gyI])


def _unpack(iterate):
    if hasattr(iterate, "x"):
        return iterate.x, iterate.y
    x, y = iterate
    return x, y


def _kernel_args(system: ConstraintSystem, v2):
    return (np.ascontiguousarray(v2, dtype=float), system.s.astype(float),
            np.ascontiguousarray(system.view1_of), np.ascontiguousarray(system.view2_of))


def block_steps(system: ConstraintSystem, v2, dual_scaling: bool = False,
                max_power_iterations: int = 2000, tol: float = 1e-10):
    """Per-coordinate step sizes ``(sx, sg, si)`` and the curvature bound used.

    With ``dual_scaling`` the group multipliers get the diagonal
    preconditioner ``1 / max(s_g, 1)^2``; the bound is then computed for
    the rescaled majorant so every step stays below the inverse of its
    curvature.
    """
    v2, s, g1, g2 = _kernel_args(system, v2)
    p, G = v2.size, s.size
    scale = np.ones(2 * p + G)
    if dual_scaling:
        scale[p:p + G] = 1.0 / np.maximum(s, 1.0) ** 2
    lam = _kernels.power_iteration(v2, s, g1, g2, scale, max_power_iterations, tol)
    L = LIPSCHITZ_SAFETY * lam
    st = scale / L
    return st[:p], st[p:p + G], st[p + G:], L


def estimate_step_size(system: ConstraintSystem, v2) -> float:
    """Constant step ``1 / L`` for plain projected gradient on the penalty.

    ``L`` bounds the gradient's Lipschitz constant.  It is a slightly
    inflated power-iteration estimate of the largest eigenvalue of the
    majorant Hessian ``d d^T + blockdiag(A^T A, B^T B)`` with
    ``d = (-v2, s, 1)`` and ``B = [A^T I]``.
    """
    return 1.0 / block_steps(system, v2)[3]


def majorant_matrix(system: ConstraintSystem, v2) -> np.ndarray:
    """Dense majorant Hessian; intended for small checks only."""
    v2 = np.asarray(v2, dtype=float)
    A = system.A.toarray().astype(float)
    G, p = A.shape
    d = np.concatenate([-v2, system.s.astype(float), np.ones(p)])
    B = np.hstack([A.T, np.eye(p)])
    H = np.outer(d, d)
    H[:p, :p] += A.T @ A
    H[p:, p:] += B.T @ B
    return H
