"""Propensity and outcome nuisance models and the plug-in score variables.

Nuisances are always fit on a tuning sample that is disjoint from the data
the policy is trained on.
"""
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Optional

import numpy as np

from . import nn
from .data import Dataset, ScoredDataset, rng_stream
from .optim import AdamState, EarlyStop, adam_step, lbfgs_minimize
from .surrogate import sigmoid

FAMILIES = ("linear-logistic", "correct-spec-quadratic", "mlp")


class SingularSystemError(np.linalg.LinAlgError):
    pass


def _with_intercept(F):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    return np.hstack([F, np.ones((F.shape[0], 1))])


def quadratic_features(X: np.ndarray) -> np.ndarray:
    """``x`` followed by all degree-2 monomials ``x_i x_j`` (i <= j)."""
    X = np.asarray(X, dtype=np.float64)
    cols = [X]
    for i, j in combinations_with_replacement(range(X.shape[1]), 2):
        cols.append((X[:, i] * X[:, j])[:, None])
    return np.hstack(cols)


def fit_linear_regression(features, targets, ridge: float = 0.0) -> np.ndarray:
    """Least squares with an appended intercept; returns ``(coef..., intercept)``.

    The ridge penalty ``ridge * ||coef||^2`` leaves the intercept unpenalized.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    A = _with_intercept(features)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    n, p = A.shape
    if n < p - 1:
        raise ValueError(f"need at least {p - 1} rows, got {n}")
    penalty = ridge * np.eye(p)
    penalty[-1, -1] = 0.0
    G = A.T @ A + penalty
    # scale-free singularity test on the correlation form of G
    dscale = np.sqrt(np.maximum(np.diag(G), 1e-300))
    if np.linalg.cond(G / np.outer(dscale, dscale)) > 1e12:
        raise SingularSystemError("normal equations are singular; use ridge > 0")
    return np.linalg.solve(G, A.T @ y)


@dataclass
class LogisticFit:
    coef: np.ndarray
    status: str
    grad_norm: float

    @property
    def degraded(self) -> bool:
        return self.status != "converged"


def _logistic_nll(beta, A, z):
    eta = A @ beta
    # labels z in {0, 1}
    value = float(np.mean(np.logaddexp(0.0, eta) - z * eta))
    grad = A.T @ (sigmoid(eta) - z) / A.shape[0]
    return value, grad


def fit_logistic_regression(features, labels, tol: float = 1e-7, max_iter: int = 500) -> LogisticFit:
    """Maximum-likelihood logistic regression of ``labels in {-1,+1}`` on features.

    Returns coefficients ``(coef..., intercept)``. Separable data has no
    finite maximizer; L-BFGS then stops at ``max_iter`` and the fit is flagged.
    """
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.all(labels == 1.0) or np.all(labels == -1.0):
        raise ValueError("both labels must be present")
    A = _with_intercept(features)
    z = (labels + 1.0) / 2.0
    res = lbfgs_minimize(lambda b: _logistic_nll(b, A, z), np.zeros(A.shape[1]),
                         tol=tol, max_iter=max_iter)
    return LogisticFit(res.x, res.status, res.grad_norm)


@dataclass
class MlpFit:
    spec: nn.MlpSpec
    params: np.ndarray
    initial_val_loss: float
    final_val_loss: float

    def __call__(self, X):
        return nn.forward_batch(self.spec, self.params, X)


def _mlp_objective(spec, X, target, kind):
    n = X.shape[0]

    def fun(theta):
        out, cache = nn.forward_batch(spec, theta, X, return_cache=True)
        if kind == "regression":
            r = out - target
            value = float(0.5 * np.mean(r * r))
            up = r / n
        else:
            value = float(np.mean(np.logaddexp(0.0, out) - target * out))
            up = (sigmoid(out) - target) / n
        return value, nn.backward_batch(spec, theta, X, up, cache=cache)

    return fun


def fit_mlp(X, target, kind: str, seed: int, hidden: int = 50, lr: float = 1e-3,
            patience: int = 5, max_epochs: int = 200, batch_size: int = 256,
            lbfgs_iter: int = 200) -> MlpFit:
    """Fit a one-hidden-layer network: L-BFGS, then Adam with early stopping.

    Half of the rows are held out for validation. ``kind`` is
    ``"regression"`` (squared error) or ``"classification"`` (targets in {0,1}).
    """
    X = np.asarray(X, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    spec = nn.flexible_spec(X.shape[1], hidden)
    rng = rng_stream(seed, f"mlp-{kind}")
    perm = rng.permutation(X.shape[0])
    half = X.shape[0] // 2
    tr, va = perm[:half], perm[half:]
    train_fun = _mlp_objective(spec, X[tr], target[tr], kind)
    val_fun = _mlp_objective(spec, X[va], target[va], kind)
    theta = nn.init_params(spec, rng)
    initial = val_fun(theta)[0]
    theta = lbfgs_minimize(train_fun, theta, tol=1e-8, max_iter=lbfgs_iter).x
    stopper = EarlyStop(patience=patience)
    stopper.update(val_fun(theta)[0])
    best = theta.copy()
    state = AdamState.init(theta.size, lr=lr)
    for _ in range(max_epochs):
        order = rng.permutation(tr.size)
        for start in range(0, tr.size, batch_size):
            idx = tr[order[start:start + batch_size]]
            _, grad = _mlp_objective(spec, X[idx], target[idx], kind)(theta)
            state, theta = adam_step(state, theta, grad)
        val = val_fun(theta)[0]
        if val < stopper.best:
            best = theta.copy()
        if stopper.update(val):
            break
    return MlpFit(spec, best, initial, min(stopper.best, initial))


@dataclass
class NuisanceModels:
    """Fitted ``e_1(x) = P(T=+1 | x)`` and per-arm outcome means ``mu_t(x)``."""

    family: str
    propensity_fn: Callable[[np.ndarray], np.ndarray]
    mu_pos_fn: Callable[[np.ndarray], np.ndarray]
    mu_neg_fn: Callable[[np.ndarray], np.ndarray]
    info: dict = field(default_factory=dict)

    def propensity(self, X) -> np.ndarray:
        return self.propensity_fn(np.asarray(X, dtype=np.float64))

    def mu(self, X, t) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],))
        return np.where(t > 0, self.mu_pos_fn(X), self.mu_neg_fn(X))


def true_nuisances(e1, mu_pos, mu_neg) -> NuisanceModels:
    """Wrap known nuisance functions (synthetic data) in a ``NuisanceModels``."""
    return NuisanceModels("oracle", e1, mu_pos, mu_neg)


def fit_nuisances(dataset: Dataset, tuning_idx, family: str = "linear-logistic",
                  seed: int = 0, ridge: float = 0.0) -> NuisanceModels:
    if family not in FAMILIES:
        raise ValueError(f"unknown nuisance family {family!r}")
    tuning_idx = np.asarray(tuning_idx, dtype=int)
    if tuning_idx.size == 0:
        raise ValueError("tuning split is empty")
    tune = dataset.subset(tuning_idx)
    for t in (1.0, -1.0):
        if not np.any(tune.T == t):
            raise ValueError(f"treatment arm {int(t):+d} is empty in the tuning split")

    if family == "mlp":
        prop = fit_mlp(tune.X, (tune.T + 1) / 2, "classification", seed)
        pos, neg = (fit_mlp(tune.X[tune.T == t], tune.Y[tune.T == t], "regression", seed + k + 1)
                    for k, t in enumerate((1.0, -1.0)))
        info = {
            "validation": {name: (m.initial_val_loss, m.final_val_loss)
                           for name, m in (("propensity", prop), ("mu_pos", pos), ("mu_neg", neg))}
        }
        return NuisanceModels(family, lambda X: sigmoid(prop(X)), pos, neg, info)

    feat = quadratic_features if family == "correct-spec-quadratic" else (lambda X: np.asarray(X, dtype=np.float64))
    F = feat(tune.X)
    logit = fit_logistic_regression(F, tune.T)
    coefs = {}
    for t in (1.0, -1.0):
        arm = tune.T == t
        coefs[t] = fit_linear_regression(F[arm], tune.Y[arm], ridge=ridge)
    b, cp, cn = logit.coef, coefs[1.0], coefs[-1.0]
    return NuisanceModels(
        family,
        lambda X: sigmoid(_with_intercept(feat(X)) @ b),
        lambda X: _with_intercept(feat(X)) @ cp,
        lambda X: _with_intercept(feat(X)) @ cn,
        {"propensity_coef": b.tolist(), "mu_pos_coef": cp.tolist(), "mu_neg_coef": cn.tolist(),
         "propensity_status": logit.status},
    )


@dataclass(frozen=True)
class ScoreConfig:
    kind: str = "DR"
    clip: float = 0.01

    def __post_init__(self):
        if self.kind not in ("IPS", "DM", "DR"):
            raise ValueError(f"unknown score kind {self.kind!r}")
        if not 0.0 < self.clip < 0.5:
            raise ValueError("clip must lie in (0, 0.5)")


def score_arrays(T, Y, e1, mu_pos, mu_neg, kind: str = "DR", clip: float = 0.01):
    """Per-row scores from nuisance values; returns ``(psi, n_clipped)``."""
    T = np.asarray(T, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    mu_pos = np.asarray(mu_pos, dtype=np.float64)
    mu_neg = np.asarray(mu_neg, dtype=np.float64)
    e1 = np.asarray(e1, dtype=np.float64)
    e_T = np.where(T > 0, e1, 1.0 - e1)
    e_clipped = np.clip(e_T, clip, 1.0 - clip)
    n_clipped = int(np.sum(e_clipped != e_T))
    dm = mu_pos - mu_neg
    if kind == "DM":
        return dm, 0
    ips = T * Y / e_clipped
    if kind == "IPS":
        return ips, n_clipped
    mu_T = np.where(T > 0, mu_pos, mu_neg)
    return dm + ips - T * mu_T / e_clipped, n_clipped


def compute_scores(dataset: Dataset, nuisances: NuisanceModels,
                   config: Optional[ScoreConfig] = None) -> ScoredDataset:
    config = config or ScoreConfig()
    X = dataset.X
    psi, n_clipped = score_arrays(dataset.T, dataset.Y, nuisances.propensity(X),
                                  nuisances.mu(X, 1.0), nuisances.mu(X, -1.0),
                                  config.kind, config.clip)
    if not np.all(np.isfinite(psi)):
        raise FloatingPointError("non-finite scores")
    return ScoredDataset(X, psi, config.kind, dataset.T, dataset.Y, clip_binding=n_clipped)
