"""Loss functions with the oracle interface used by the outer solvers.

Every oracle maps a flat parameter vector ``w`` to a value and gradient.
Matrix-shaped parameters (GRN weights, crowd assignments) are flattened
row-major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

MAX_ENUMERATED_WORKERS = 20


class ObjectiveOracle:
    """Base oracle.

    Subclasses implement :meth:`value` and :meth:`gradient`.  ``bounds``
    is an optional ``(lo, hi)`` box applied after each gradient step.
    """

    dimension: int
    bounds: tuple[float, float] | None = None

    def value(self, w) -> float:
        raise NotImplementedError

    def gradient(self, w) -> np.ndarray:
        raise NotImplementedError

    def stochastic_gradient(self, w, rng) -> np.ndarray:
        return self.gradient(w)

    def default_step_size(self) -> float | None:
        return None

    def subspace_minimize(self, support, budget: int, w0=None, step: float | None = None) -> np.ndarray:
        """Approximate minimizer over vectors supported on ``support``.

        Runs ``budget`` steps of projected gradient restricted to the
        support, starting from ``w0`` masked to it.
        """
        mask = np.asarray(support).astype(bool)
        z = np.zeros(self.dimension) if w0 is None else np.where(mask, w0, 0.0)
        step = step or self.default_step_size()
        if step is None:
            raise ValueError("a step size is required for the restricted gradient solve")
        for _ in range(int(budget)):
            z = z - step * np.where(mask, self.gradient(z), 0.0)
            if self.bounds is not None:
                z = np.clip(z, *self.bounds)
            z[~mask] = 0.0
        return z


def _power_lmax(M: np.ndarray, iters: int = 500, tol: float = 1e-10) -> float:
    """Largest eigenvalue of the PSD matrix ``M.T @ M`` by power iteration."""
    z = np.ones(M.shape[1]) / np.sqrt(M.shape[1])
    lam = 0.0
    for _ in range(iters):
        u = M.T @ (M @ z)
        nrm = np.linalg.norm(u)
        if nrm == 0:
            return 0.0
        z = u / nrm
        if abs(nrm - lam) <= tol * nrm:
            break
        lam = nrm
    return nrm


# ---------------------------------------------------------------- regression

@dataclass(frozen=True, eq=False)
class RegressionData:
    """Samples ``features[i]`` (flattened) with ``responses[i]``."""

    features: np.ndarray
    responses: np.ndarray
    classification: bool = False

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.responses, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"{X.shape[0]} feature rows but {y.size} responses")
        if self.classification and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("classification labels must be -1 or +1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def head(self, n: int) -> "RegressionData":
        return RegressionData(self.features[:n], self.responses[:n], self.classification)

    @classmethod
    def load(cls, path, classification: bool = False) -> "RegressionData":
        """Read ``{"features": [[...]], "responses": [...]}`` JSON, or CSV rows of features followed by the response."""
        path = Path(path)
        if path.suffix.lower() == ".json":
            d = json.loads(path.read_text())
            return cls(d["features"], d["responses"], bool(d.get("classification", classification)))
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(rows[:, :-1], rows[:, -1], classification)


class LeastSquaresObjective(ObjectiveOracle):
    """``f(w) = sum_i (<X_i, w> - y_i)^2``."""

    def __init__(self, data: RegressionData):
        self.data = data
        self.dimension = data.p
        self._L = None

    def value(self, w) -> float:
        r = self.data.features @ w - self.data.responses
        return float(r @ r)

    def gradient(self, w) -> np.ndarray:
        X = self.data.features
        return 2.0 * X.T @ (X @ w - self.data.responses)

    def lipschitz(self) -> float:
        if self._L is None:
            self._L = 2.0 * _power_lmax(self.data.features)
        return self._L

    def default_step_size(self) -> float:
        return 1.0 / self.lipschitz()

    def subspace_minimize(self, support, budget=0, w0=None, step=None) -> np.ndarray:
        idx = np.flatnonzero(np.asarray(support))
        z = np.zeros(self.dimension)
        if idx.size:
            z[idx] = np.linalg.lstsq(self.data.features[:, idx], self.data.responses, rcond=None)[0]
        return z


class SquaredHingeObjective(ObjectiveOracle):
    """``f(w) = sum_i max(0, 1 - y_i <X_i, w>)^2``."""

    def __init__(self, data: RegressionData):
        if not data.classification:
            data = RegressionData(data.features, data.responses, True)
        self.data = data
        self.dimension = data.p
        self._L = None

    def _slack(self, w):
        return np.maximum(1.0 - self.data.responses * (self.data.features @ w), 0.0)

    def value(self, w) -> float:
        h = self._slack(w)
        return float(h @ h)

    def gradient(self, w) -> np.ndarray:
        h = self._slack(w)
        return -2.0 * self.data.features.T @ (h * self.data.responses)

    def default_step_size(self) -> float:
        if self._L is None:
            self._L = 2.0 * _power_lmax(self.data.features)
        return 1.0 / self._L


def least_squares_objective(data: RegressionData) -> LeastSquaresObjective:
    return LeastSquaresObjective(data)


def squared_hinge_objective(data: RegressionData) -> SquaredHingeObjective:
    return SquaredHingeObjective(data)


# ---------------------------------------------------------------------- GRN

@dataclass(frozen=True, eq=False)
class GrnData:
    """Expression time series, one row per time point (``T x N``)."""

    series: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.series, dtype=float))
        if x.shape[0] < 2:
            raise ValueError("need at least two time points")
        object.__setattr__(self, "series", x)

    @property
    def N(self) -> int:
        return self.series.shape[1]

    @property
    def T(self) -> int:
        return self.series.shape[0]

    @property
    def X(self) -> np.ndarray:
        """States ``x_1 .. x_{T-1}`` as columns."""
        return self.series[:-1].T

    @property
    def Y(self) -> np.ndarray:
        """Consecutive differences ``x_{t+1} - x_t`` as columns."""
        return np.diff(self.series, axis=0).T

    @classmethod
    def load(cls, path) -> "GrnData":
        """CSV with ``T`` rows of ``N`` values."""
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


def offdiagonal_index(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of each free weight, in row-major order."""
    r, c = np.nonzero(~np.eye(N, dtype=bool))
    return r, c


def weights_to_matrix(w, N: int) -> np.ndarray:
    W = np.zeros((N, N))
    W[~np.eye(N, dtype=bool)] = w
    return W


def matrix_to_weights(W) -> np.ndarray:
    W = np.asarray(W)
    return W[~np.eye(W.shape[0], dtype=bool)]


class GrnObjective(ObjectiveOracle):
    """``f(W) = 1/2 ||Y - W X||_F^2`` over the off-diagonal entries of ``W``."""

    def __init__(self, data: GrnData):
        self.data = data
        self.N = data.N
        self.dimension = self.N * (self.N - 1)
        self._X = data.X
        self._Y = data.Y
        self._L = None

    def value(self, w) -> float:
        R = self._Y - weights_to_matrix(w, self.N) @ self._X
        return 0.5 * float(np.sum(R * R))

    def gradient(self, w) -> np.ndarray:
        G = (weights_to_matrix(w, self.N) @ self._X - self._Y) @ self._X.T
        return matrix_to_weights(G)

    def default_step_size(self) -> float:
        if self._L is None:
            self._L = _power_lmax(self._X.T)
        return 1.0 / self._L

    def subspace_minimize(self, support, budget=0, w0=None, step=None) -> np.ndarray:
        # rows of W decouple: one small least-squares fit per gene
        S = weights_to_matrix(np.asarray(support).astype(float), self.N) > 0
        W = np.zeros((self.N, self.N))
        for k in range(self.N):
            idx = np.flatnonzero(S[k])
            if idx.size:
                W[k, idx] = np.linalg.lstsq(self._X[idx].T, self._Y[k], rcond=None)[0]
        return matrix_to_weights(W)


def grn_objective(data: GrnData) -> GrnObjective:
    return GrnObjective(data)


# -------------------------------------------------------------------- crowd

def _logit(q):
    return np.log(q / (1.0 - q))


@dataclass(frozen=True, eq=False)
class CrowdModel:
    """Worker quality ``Q`` (``n`` workers by ``m`` tasks) and task priors ``P(y_j = 1)``."""

    Q: np.ndarray
    priors: np.ndarray | None = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if not np.all((Q > 0) & (Q < 1)):
            raise ValueError("worker qualities must lie strictly between 0 and 1")
        pri = np.full(Q.shape[1], 0.5) if self.priors is None else np.asarray(self.priors, dtype=float)
        if pri.shape != (Q.shape[1],):
            raise ValueError(f"expected {Q.shape[1]} priors, got {pri.size}")
        if not np.all((pri > 0) & (pri < 1)):
            raise ValueError("priors must lie strictly between 0 and 1")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "priors", pri)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.Q.shape[1]

    @property
    def thresholds(self) -> np.ndarray:
        """Decision thresholds ``r_j = log((1 - pi_j) / pi_j)``."""
        return np.log((1.0 - self.priors) / self.priors)

    @property
    def log_odds(self) -> np.ndarray:
        return _logit(self.Q)

    def sample_votes(self, rng, size: int, truth: int) -> np.ndarray:
        """Signed log-odds votes ``(2 Yhat - 1) logit(Q)`` given the true label, shape ``(size, n, m)``."""
        correct = rng.random((size,) + self.Q.shape) < self.Q
        label = correct if truth == 1 else ~correct
        return np.where(label, 1.0, -1.0) * self.log_odds

    @classmethod
    def load(cls, q_path, priors_path=None) -> "CrowdModel":
        Q = np.loadtxt(q_path, delimiter=",", ndmin=2)
        pri = None
        if priors_path is not None:
            pri = json.loads(Path(priors_path).read_text())
        return cls(Q, pri)


def bayesian_predict(q_col, assignment_col, labels_col, prior: float = 0.5) -> int:
    """Posterior-majority label for one task; ties go to 1."""
    q = np.asarray(q_col, dtype=float)
    a = np.asarray(assignment_col).astype(bool)
    lab = np.asarray(labels_col)
    if not (q.shape == a.shape == lab.shape):
        raise ValueError("quality, assignment and label columns must have equal length")
    if np.any((q[a] <= 0) | (q[a] >= 1)):
        raise ValueError("assigned qualities must lie strictly between 0 and 1")
    score = np.sum((2 * lab[a] - 1) * _logit(q[a]))
    return int(score >= np.log((1 - prior) / prior))


def exact_expected_accuracy(model: CrowdModel, X) -> tuple[np.ndarray, float]:
    """Probability that the Bayesian prediction is right, per task and averaged.

    Enumerates every label pattern of the assigned workers, so each task
    may have at most :data:`MAX_ENUMERATED_WORKERS` of them.
    """
    X = np.asarray(X).reshape(model.n, model.m).astype(bool)
    counts = X.sum(axis=0)
    if counts.max(initial=0) > MAX_ENUMERATED_WORKERS:
        raise ValueError(f"a task has {counts.max()} workers; enumeration limited to {MAX_ENUMERATED_WORKERS}")
    acc = np.empty(model.m)
    r = model.thresholds
    for j in range(model.m):
        q = model.Q[X[:, j], j]
        k = q.size
        pat = (np.arange(1 << k)[:, None] >> np.arange(k)[None, :]) & 1
        score = np.where(pat == 1, 1.0, -1.0) @ _logit(q) if k else np.zeros(1)
        pred1 = score >= r[j]
        p_given1 = np.prod(np.where(pat == 1, q, 1 - q), axis=1)
        p_given0 = np.prod(np.where(pat == 1, 1 - q, q), axis=1)
        pi = model.priors[j]
        acc[j] = pi * p_given1[pred1].sum() + (1 - pi) * p_given0[~pred1].sum()
    return acc, float(acc.mean())


class CrowdObjective(ObjectiveOracle):
    """Negative smoothed expected accuracy of a relaxed assignment.

    With ``S`` the logistic function and signed votes ``Z``, the smoothed
    accuracy of ``X`` is

        (1/m) sum_j pi_j E[S(sum_i Z1_ij X_ij - r_j)] + (1 - pi_j) E[S(r_j - sum_i Z0_ij X_ij)]

    where ``Z1`` (``Z0``) are votes drawn given true label 1 (0).
    :meth:`value` averages over ``n_samples`` paired draws fixed at
    construction and returns the negative, so the solvers minimize it.
    ``temperature`` multiplies both the votes and the thresholds.
    """

    bounds = (0.0, 1.0)

    def __init__(self, model: CrowdModel, n_samples: int = 64, seed: int = 0,
                 batch_size: int = 16, temperature: float = 1.0, step_size: float | None = None):
        self.model = model
        self.dimension = model.n * model.m
        self.batch_size = int(batch_size)
        self.temperature = float(temperature)
        self._step = step_size
        rng = np.random.default_rng(seed)
        self.Z1 = model.sample_votes(rng, n_samples, 1)
        self.Z0 = model.sample_votes(rng, n_samples, 0)

    def default_step_size(self):
        return self._step

    def sampled_value(self, w, Z1, Z0) -> float:
        """Smoothed accuracy (not negated) averaged over the given vote draws."""
        X = np.asarray(w, dtype=float).reshape(self.model.n, self.model.m)
        tau, r, pi = self.temperature, self.model.thresholds, self.model.priors
        a1 = tau * (np.einsum("kij,ij->kj", Z1, X) - r)
        a0 = tau * (r - np.einsum("kij,ij->kj", Z0, X))
        return float(np.mean(pi * expit(a1) + (1 - pi) * expit(a0), axis=0).sum() / self.model.m)

    def sampled_gradient(self, w, Z1, Z0) -> np.ndarray:
        """Exact derivative of :meth:`sampled_value` with respect to the assignment."""
        X = np.asarray(w, dtype=float).reshape(self.model.n, self.model.m)
        tau, r, pi = self.temperature, self.model.thresholds, self.model.priors
        s1 = expit(tau * (np.einsum("kij,ij->kj", Z1, X) - r))
        s0 = expit(tau * (r - np.einsum("kij,ij->kj", Z0, X)))
        d1 = pi * s1 * (1 - s1)
        d0 = (1 - pi) * s0 * (1 - s0)
        G = tau * (np.einsum("kj,kij->ij", d1, Z1) - np.einsum("kj,kij->ij", d0, Z0))
        return (G / (Z1.shape[0] * self.model.m)).ravel()

    def smoothed_accuracy(self, w) -> float:
        return self.sampled_value(w, self.Z1, self.Z0)

    def value(self, w) -> float:
        return -self.sampled_value(w, self.Z1, self.Z0)

    def gradient(self, w) -> np.ndarray:
        return -self.sampled_gradient(w, self.Z1, self.Z0)

    def stochastic_gradient(self, w, rng) -> np.ndarray:
        Z1 = self.model.sample_votes(rng, self.batch_size, 1)
        Z0 = self.model.sample_votes(rng, self.batch_size, 0)
        return -self.sampled_gradient(w, Z1, Z0)


def crowd_smoothed_objective(model: CrowdModel, **kwargs) -> CrowdObjective:
    return CrowdObjective(model, **kwargs)

