"""Classifiers over distribution-space vectors.

Positive class (label +1) is always the inliers; ``decision_score`` is
positive for points judged to be inliers and feeds ROC computation
directly.

The SVMs share one SMO solver for

    min_a  1/2 a^T Q a + p^T a   s.t.  y^T a = const,  0 <= a_i <= C

that picks the maximal KKT-violating pair at every step and stops once the
violation drops below ``tol`` (libsvm's first-order working-set rule).
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import nnet
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

KERNELS = ("linear", "poly", "rbf", "sigmoid")
TAU = 1e-12
NB_VAR_FLOOR = 1e-9


class ConvergenceWarning(UserWarning):
    pass


def kernel_rows(kernel, X, Y, gamma=1.0, degree=3, coef0=0.0):
    """Kernel matrix ``K[a, b] = k(X[a], Y[b])``."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    if kernel == "rbf":
        sq = np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :] - 2.0 * (X @ Y.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))
    dot = X @ Y.T
    if kernel == "linear":
        return dot
    if kernel == "poly":
        return (gamma * dot + coef0) ** degree
    if kernel == "sigmoid":
        return np.tanh(gamma * dot + coef0)
    raise ConfigError(f"unknown kernel {kernel!r}")


class _KernelCache:
    """LRU cache of signed kernel columns ``Q[:, i] = y * y_i * K[:, i]``."""

    def __init__(self, X, y, kern, max_rows):
        self.X, self.y, self.kern = X, y, kern
        self.max_rows = max(2, max_rows)
        self.rows = OrderedDict()

    def __call__(self, i):
        row = self.rows.get(i)
        if row is None:
            row = self.y * self.y[i] * self.kern(self.X, self.X[i : i + 1])[:, 0]
            self.rows[i] = row
            if len(self.rows) > self.max_rows:
                self.rows.popitem(last=False)
        else:
            self.rows.move_to_end(i)
        return row


def smo_solve(column, diag, p, y, C, alpha0, tol=1e-3, max_iter=10_000):
    """Generic SMO.  Returns ``(alpha, rho, n_iter, converged, gap)``.

    ``column(i)`` returns the signed column ``Q[:, i]``; ``diag`` is the
    diagonal of ``Q``.
    """
    alpha = np.array(alpha0, dtype=np.float64)
    n = len(alpha)
    G = np.array(p, dtype=np.float64)
    for i in np.flatnonzero(alpha):
        G += column(i) * alpha[i]
    pos = y > 0
    converged = False
    gap = math.inf
    it = 0
    while it < max_iter:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = (pos & ~at_upper) | (~pos & ~at_lower)
        low = (pos & ~at_lower) | (~pos & ~at_upper)
        if not up.any() or not low.any():
            gap = 0.0
            converged = True
            break
        minus_yg = -y * G
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        j = int(np.argmin(np.where(low, minus_yg, np.inf)))
        gap = minus_yg[i] - minus_yg[j]
        if gap < tol:
            converged = True
            break
        it += 1
        Qi, Qj = column(i), column(j)
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2.0 * Qi[j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:  # C_i == C_j
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(diag[i] + diag[j] - 2.0 * Qi[j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            else:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total
        G += Qi * (alpha[i] - ai) + Qj * (alpha[j] - aj)
    rho = _rho(alpha, G, y, C)
    return alpha, rho, it, converged, gap


def _rho(alpha, G, y, C):
    yg = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    upper = alpha >= C
    # bounds on rho from the variables stuck at either box edge
    ub_mask = (upper & (y < 0)) | (~upper & (y > 0))
    lb_mask = (upper & (y > 0)) | (~upper & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else math.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -math.inf
    if math.isinf(ub) or math.isinf(lb):
        return float(ub if math.isfinite(ub) else lb)
    return float((ub + lb) / 2.0)


def _stack(pos, neg):
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(neg, dtype=np.float64))
    if len(pos) == 0 or len(neg) == 0 or pos.size == 0 or neg.size == 0:
        raise DataError("both classes need at least one sample")
    if pos.shape[1] != neg.shape[1]:
        raise DataError("positive and negative samples differ in dimension")
    X = np.vstack([pos, neg])
    if not np.all(np.isfinite(X)):
        raise DataError("classifier inputs must be finite")
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    return X, y


@dataclass
class SvmModel:
    kernel: str
    gamma: float
    C: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i, within [0, C]
    sv_labels: np.ndarray  # +1 / -1
    bias: float
    degree: int = 3
    coef0: float = 0.0
    converged: bool = True
    n_iter: int = 0

    kind = "svm"

    def _k(self, X):
        return kernel_rows(self.kernel, X, self.support_vectors, self.gamma, self.degree, self.coef0)

    def decision_score(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self.support_vectors) == 0:
            return np.full(len(X), self.bias)
        return self._k(X) @ (self.dual_coef * self.sv_labels) + self.bias

    def predict(self, X):
        return np.where(self.decision_score(X) > 0, 1, -1)

    def state(self):
        meta = dict(kernel=self.kernel, gamma=self.gamma, C=self.C, bias=self.bias,
                    degree=self.degree, coef0=self.coef0, converged=self.converged,
                    n_iter=self.n_iter)
        arrays = dict(support_vectors=self.support_vectors, dual_coef=self.dual_coef,
                      sv_labels=self.sv_labels)
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(support_vectors=arrays["support_vectors"], dual_coef=arrays["dual_coef"],
                   sv_labels=arrays["sv_labels"], **meta)


def _solver_column(X, y, kern, cache_rows):
    n = len(X)
    if n <= cache_rows:
        Q = (y[:, None] * y[None, :]) * kern(X, X)
        return (lambda i: Q[:, i]), np.diag(Q).copy()
    diag = np.array([kern(X[i : i + 1], X[i : i + 1])[0, 0] for i in range(n)])
    return _KernelCache(X, y, kern, cache_rows), diag


def svm_fit(pos, neg, kernel="rbf", gamma=1.0, C=0.1, degree=3, coef0=0.0,
            tol=1e-3, max_iter=10_000, cache_rows=4096):
    """Train a C-SVC on inliers (+1) versus outliers (-1) with SMO."""
    if kernel not in KERNELS:
        raise ConfigError(f"unknown kernel {kernel!r}")
    if not (gamma > 0 and C > 0):
        raise ConfigError("gamma and C must be positive")
    X, y = _stack(pos, neg)

    def kern(A, B):
        return kernel_rows(kernel, A, B, gamma, degree, coef0)

    column, diag = _solver_column(X, y, kern, cache_rows)
    alpha, rho, it, ok, gap = smo_solve(column, diag, -np.ones(len(X)), y, C,
                                        np.zeros(len(X)), tol, max_iter)
    if not ok:
        warnings.warn(f"SMO stopped after {it} iterations with KKT gap {gap:.3g}",
                      ConvergenceWarning, stacklevel=2)
    sv = alpha > 0
    return SvmModel(kernel, float(gamma), float(C), X[sv], alpha[sv], y[sv], -rho,
                    degree, float(coef0), ok, it)


def decision_score(model, X):
    return model.decision_score(X)


@dataclass
class OneClassSvm:
    """Schölkopf's nu one-class SVM; scores >= 0 inside the learned support."""

    kernel: str
    gamma: float
    nu: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    rho: float
    degree: int = 3
    coef0: float = 0.0
    converged: bool = True
    n_iter: int = 0

    kind = "ocsvm"

    def decision_score(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        K = kernel_rows(self.kernel, X, self.support_vectors, self.gamma, self.degree, self.coef0)
        return K @ self.dual_coef - self.rho

    def state(self):
        meta = dict(kernel=self.kernel, gamma=self.gamma, nu=self.nu, rho=self.rho,
                    degree=self.degree, coef0=self.coef0, converged=self.converged,
                    n_iter=self.n_iter)
        return meta, dict(support_vectors=self.support_vectors, dual_coef=self.dual_coef)

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(support_vectors=arrays["support_vectors"], dual_coef=arrays["dual_coef"], **meta)


def one_class_fit(pos, kernel="rbf", gamma=1.0, nu=0.1, degree=3, coef0=0.0,
                  tol=1e-3, max_iter=10_000, cache_rows=4096):
    X = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    n = len(X)
    if n < 2:
        raise DataError("one-class SVM needs at least two samples")
    if not 0 < nu <= 1:
        raise ConfigError("nu must be in (0, 1]")
    y = np.ones(n)

    def kern(A, B):
        return kernel_rows(kernel, A, B, gamma, degree, coef0)

    # libsvm scaling: box [0, 1], sum(alpha) = nu * n
    total = nu * n
    alpha0 = np.zeros(n)
    whole = int(total)
    alpha0[:whole] = 1.0
    if whole < n:
        alpha0[whole] = total - whole
    column, diag = _solver_column(X, y, kern, cache_rows)
    alpha, rho, it, ok, gap = smo_solve(column, diag, np.zeros(n), y, 1.0, alpha0, tol, max_iter)
    if not ok:
        warnings.warn(f"one-class SMO stopped after {it} iterations (gap {gap:.3g})",
                      ConvergenceWarning, stacklevel=2)
    sv = alpha > 0
    # rescale so sum(alpha) == 1
    return OneClassSvm(kernel, float(gamma), float(nu), X[sv], alpha[sv] / total, rho / total,
                       degree, float(coef0), ok, it)


@dataclass
class GaussianNaiveBayes:
    means: np.ndarray  # (2, d): row 0 inliers, row 1 outliers
    variances: np.ndarray
    log_priors: np.ndarray

    kind = "nb"

    def _log_lik(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        diff = X[:, None, :] - self.means[None]
        return -0.5 * np.sum(np.log(2 * np.pi * self.variances)[None] + diff**2 / self.variances[None], axis=2)

    def decision_score(self, X):
        ll = self._log_lik(X) + self.log_priors[None]
        return ll[:, 0] - ll[:, 1]

    def posterior(self, X):
        """P(inlier | x)."""
        return 1.0 / (1.0 + np.exp(-self.decision_score(X)))

    def state(self):
        return {}, dict(means=self.means, variances=self.variances, log_priors=self.log_priors)

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(**arrays)


def nb_fit(pos, neg):
    X, y = _stack(pos, neg)
    classes = [X[y > 0], X[y < 0]]
    means = np.array([c.mean(axis=0) for c in classes])
    variances = np.maximum(np.array([c.var(axis=0) for c in classes]), NB_VAR_FLOOR)
    priors = np.log(np.array([len(c) for c in classes], dtype=np.float64) / len(X))
    return GaussianNaiveBayes(means, variances, priors)


def nb_score(model, X):
    return model.decision_score(X)


class MlpClassifier:
    """Two-layer ReLU network with a sigmoid output, trained with BCE."""

    kind = "mlp"

    def __init__(self, net):
        self.net = net

    def decision_score(self, X):
        """Pre-sigmoid logit; positive means inlier."""
        *hidden, last = self.net.layers
        logit_net = nnet.DenseNet(hidden + [nnet.Layer(last.weight, last.bias, "linear")])
        return logit_net.forward(X, cache=False)[:, 0]

    def state(self):
        meta = {"activations": [l.activation for l in self.net.layers]}
        arrays = {}
        for k, l in enumerate(self.net.layers):
            arrays[f"w{k}"] = l.weight
            arrays[f"b{k}"] = l.bias
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        layers = [nnet.Layer(arrays[f"w{k}"], arrays[f"b{k}"], act)
                  for k, act in enumerate(meta["activations"])]
        return cls(nnet.DenseNet(layers))


def mlp_fit(pos, neg, hidden=16, cfg=None):
    X, y = _stack(pos, neg)
    cfg = cfg or nnet.TrainConfig(learning_rate=1e-2, batch_size=64, epochs=100)
    net = nnet.DenseNet.build([X.shape[1], hidden, 1], ["relu", "sigmoid"], seed=cfg.seed)
    nnet.fit(net, X, (y > 0).astype(np.float64)[:, None], loss="bce", cfg=cfg)
    return MlpClassifier(net)


def mlp_score(model, X):
    return model.decision_score(X)


CLASSIFIER_TYPES = {
    "svm": SvmModel,
    "ocsvm": OneClassSvm,
    "nb": GaussianNaiveBayes,
    "mlp": MlpClassifier,
}
