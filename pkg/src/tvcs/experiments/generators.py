"""Synthetic structures, models and data sets for the experiment harnesses."""

from __future__ import annotations

import numpy as np

from ..objectives import CrowdModel, GrnData, RegressionData
from ..projection import FAST_CONFIG, ProjectionConfig, project
from ..structure import Group, TvcsStructure, build_constraint_system


def gen_random_structure(side: int, rng) -> TvcsStructure:
    """Square matrix view with budgets uniform on ``1..side``.

    The overall budget is ``floor(0.8 * min(sum of row budgets, sum of column budgets))``.
    """
    if side < 1:
        raise ValueError("side must be at least 1")
    rb = rng.integers(1, side + 1, size=side)
    cb = rng.integers(1, side + 1, size=side)
    overall = int(np.floor(0.8 * min(rb.sum(), cb.sum())))
    return TvcsStructure.matrix_view(side, side, rb, cb, overall)


def gen_true_model(structure: TvcsStructure, rng, config: ProjectionConfig = FAST_CONFIG) -> np.ndarray:
    """Feasible sparse vector: support of a projected Gaussian draw, fresh Gaussian values on it."""
    p = structure.dimension
    support = project(rng.standard_normal(p), structure, config).support.astype(bool)
    w = np.zeros(p)
    w[support] = rng.standard_normal(int(support.sum()))
    return w


def gen_regression_data(w_true, n: int, noise_sd: float = 0.01, rng=None) -> RegressionData:
    """Gaussian design with responses ``<X_i, w> + N(0, noise_sd^2)``."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    w_true = np.asarray(w_true, dtype=float)
    X = rng.standard_normal((n, w_true.size))
    y = X @ w_true
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal(n)
    return RegressionData(X, y)


def gen_classification_data(w_true, n: int, rng) -> RegressionData:
    """Gaussian design with labels ``sign(<X_i, w>)``; a zero margin is labelled +1."""
    w_true = np.asarray(w_true, dtype=float)
    X = rng.standard_normal((n, w_true.size))
    y = np.where(X @ w_true >= 0, 1.0, -1.0)
    return RegressionData(X, y, classification=True)


def gen_crowd_model(n: int, m: int, rng) -> CrowdModel:
    """Qualities uniform on [0.5, 0.9], balanced priors."""
    return CrowdModel(rng.uniform(0.5, 0.9, size=(n, m)), np.full(m, 0.5))


def crowd_structure(n: int, m: int, overall: int, worker_capacity, task_capacity) -> TvcsStructure:
    """Assignment constraints: workers are rows (view1), tasks are columns (view2)."""
    return TvcsStructure.matrix_view(n, m, worker_capacity, task_capacity, overall)


def random_feasible_assignment(structure: TvcsStructure, rng) -> np.ndarray:
    """Visit coordinates in random order and keep each one that still fits every budget."""
    system = build_constraint_system(structure)
    s = system.s
    cnt = np.zeros(s.size, dtype=np.int64)
    x = np.zeros(system.p, dtype=np.int8)
    for i in rng.permutation(system.p):
        rows = [0] + [int(r) for r in (system.view1_of[i], system.view2_of[i]) if r >= 0]
        if all(cnt[r] < s[r] for r in rows):
            x[i] = 1
            cnt[rows] += 1
    return x


def grn_structure(N: int, degree: int, overall: int | None = None) -> TvcsStructure:
    """Degree budgets on the off-diagonal weights of an ``N x N`` matrix.

    Rows of the weight matrix form view1 and columns view2.  Coordinates
    follow the row-major order of the off-diagonal entries.
    """
    pos = -np.ones((N, N), dtype=np.int64)
    pos[~np.eye(N, dtype=bool)] = np.arange(N * (N - 1))
    view1 = [Group(pos[k][pos[k] >= 0], degree) for k in range(N)]
    view2 = [Group(np.sort(pos[:, k][pos[:, k] >= 0]), degree) for k in range(N)]
    return TvcsStructure(N * (N - 1), overall, view1, view2)


def _sparse_network(N: int, degree: int, rng) -> np.ndarray:
    W = np.zeros((N, N))
    col_deg = np.zeros(N, dtype=np.int64)
    for k in rng.permutation(N):
        free = [j for j in range(N) if j != k and col_deg[j] < degree]
        pick = rng.permutation(free)[:degree]
        col_deg[pick] += 1
        W[k, pick] = rng.choice([-1.0, 1.0], size=pick.size) * rng.uniform(0.5, 1.0, size=pick.size)
    return W


def gen_grn_series(N: int, T: int, sparsity_per_vertex: int, noise_fraction: float, rng):
    """Linear expression dynamics ``x_{t+1} = P x_t + e_t``.

    A random network ``W0`` (zero diagonal, at most ``sparsity_per_vertex``
    edges per row and per column) is turned into ``P = c (I + W0)`` with
    ``c`` chosen so the spectral radius of ``P`` is at most 0.95.  The
    returned network is the off-diagonal part of ``P - I`` (that is,
    ``c W0``); the diagonal of ``P - I`` is the uniform decay ``c - 1``.
    Noise has standard deviation ``noise_fraction`` times the RMS of the
    noiseless trajectory.

    Returns
    -------
    data : GrnData
    network : ndarray, shape (N, N)
    """
    if N < 2 or T < 2:
        raise ValueError("need N >= 2 and T >= 2")
    W0 = _sparse_network(N, sparsity_per_vertex, rng)
    M = np.eye(N) + W0
    rho = np.max(np.abs(np.linalg.eigvals(M)))
    c = min(1.0, 0.95 / rho)
    P = c * M
    x0 = rng.standard_normal(N)
    clean = np.empty((T, N))
    clean[0] = x0
    for t in range(T - 1):
        clean[t + 1] = P @ clean[t]
    if noise_fraction > 0:
        sd = noise_fraction * np.sqrt(np.mean(clean * clean))
        series = np.empty((T, N))
        series[0] = x0
        for t in range(T - 1):
            series[t + 1] = P @ series[t] + sd * rng.standard_normal(N)
    else:
        series = clean
    network = P - np.eye(N)
    np.fill_diagonal(network, 0.0)
    return GrnData(series), network

