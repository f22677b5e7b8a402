"""Small linear SVM trained by SMO with second-order working-set selection.

Solves the soft-margin dual

    min_a  1/2 a'Qa - e'a    s.t.  0 <= a_i <= C,  y'a = 0

with Q_ij = y_i y_j <x_i, x_j>.  Deterministic: no random restarts or
shuffling, so identical inputs give bit-identical weights.  With a large C
the solution on separable data is the hard maximum-margin separator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU = 1e-12


@dataclass(frozen=True)
class LinearSVM:
    weights: np.ndarray
    bias: float
    alphas: np.ndarray
    iterations: int
    converged: bool

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision(X) >= 0, 1, -1)

    def geometric_margin(self, X, y) -> float:
        norm = float(np.linalg.norm(self.weights))
        if norm == 0:
            return 0.0
        return float(np.min(np.asarray(y) * self.decision(X))) / norm


def fit_linear_svm(X, y, C: float = 1e6, tol: float = 1e-6, max_iter: int = 1_000_000) -> LinearSVM:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not set(np.unique(y)) <= {-1.0, 1.0} or len(np.unique(y)) != 2:
        raise ValueError("labels must contain both -1 and +1")
    n = len(y)
    K = X @ X.T
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        v = -y * G
        v_up = np.where(up, v, -np.inf)
        i = int(np.argmax(v_up))
        gmax = v_up[i]
        v_low = np.where(low, v, np.inf)
        if gmax - np.min(v_low) < tol:
            converged = True
            break
        cand = low & (v < gmax)
        b = gmax - v
        a = QD[i] + QD - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Q[i, j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        G += Q[:, i] * (alpha[i] - ai_old) + Q[:, j] * (alpha[j] - aj_old)

    rho = _rho(alpha, y, G, C)
    w = (alpha * y) @ X
    return LinearSVM(weights=w, bias=-rho, alphas=alpha, iterations=it, converged=converged)


def _rho(alpha: np.ndarray, y: np.ndarray, G: np.ndarray, C: float) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        return float(np.mean(yG[free]))
    at_upper = alpha >= C
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    lb_mask = ~ub_mask
    ub = np.min(yG[ub_mask]) if np.any(ub_mask) else np.inf
    lb = np.max(yG[lb_mask]) if np.any(lb_mask) else -np.inf
    return float((ub + lb) / 2)
