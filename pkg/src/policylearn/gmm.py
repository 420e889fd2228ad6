"""Multi-step GMM over a finite critic basis, and efficient-instrument plug-ins."""
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable, List, Optional

import numpy as np

from . import nn
from .data import ScoredDataset, rng_stream
from .optim import lbfgs_minimize
from .surrogate import PolicyModel, loss_d1, loss_d2, psi_sign


class PolynomialBasis:
    """All monomials of total degree <= ``degree``, constant first, graded order."""

    def __init__(self, degree: int, input_dim: int = 2):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree
        self.input_dim = input_dim
        self.terms = [()]
        for k in range(1, degree + 1):
            self.terms.extend(combinations_with_replacement(range(input_dim), k))

    @property
    def size(self) -> int:
        return len(self.terms)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise nn.DimensionError("basis input_dim", self.input_dim, X.shape[1])
        out = np.ones((X.shape[0], self.size))
        for j, term in enumerate(self.terms):
            for i in term:
                out[:, j] *= X[:, i]
        return out

    def to_dict(self):
        return {"kind": "Polynomial", "degree": self.degree}


class RandomFourierBasis:
    """Random features approximating the Gaussian kernel ``exp(-|x-y|^2 / (2 sigma^2))``.

    Default features are ``sqrt(2/k) cos(w.x + b)``; ``paired=True`` uses
    ``[cos(w.x), sin(w.x)] / sqrt(k/2)`` (``k/2`` frequencies), for which
    ``phi(x).phi(x) = 1`` exactly.
    """

    def __init__(self, count: int, sigma: float = 0.5, seed: int = 0, input_dim: int = 2,
                 paired: bool = False):
        if paired and count % 2:
            raise ValueError("paired features need an even count")
        self.count = count
        self.sigma = sigma
        self.seed = seed
        self.input_dim = input_dim
        self.paired = paired
        rng = rng_stream(seed, "rff")
        n_freq = count // 2 if paired else count
        self.W = rng.standard_normal((n_freq, input_dim)) / sigma
        self.b = rng.uniform(0.0, 2 * np.pi, n_freq)

    @property
    def size(self) -> int:
        return self.count

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise nn.DimensionError("basis input_dim", self.input_dim, X.shape[1])
        proj = X @ self.W.T
        if self.paired:
            return np.hstack([np.cos(proj), np.sin(proj)]) / np.sqrt(self.count / 2)
        return np.sqrt(2.0 / self.count) * np.cos(proj + self.b)

    def to_dict(self):
        return {"kind": "RandomFourier", "count": self.count, "sigma": self.sigma,
                "seed": self.seed, "paired": self.paired}


class CallableBasis:
    """Wrap any ``X -> (n, k)`` feature map."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], size: int, name: str = "callable"):
        self.fn = fn
        self._size = size
        self.name = name

    @property
    def size(self) -> int:
        return self._size

    def __call__(self, X) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(np.asarray(X, dtype=np.float64))), dtype=np.float64)

    def to_dict(self):
        return {"kind": self.name, "size": self._size}


def gradient_basis(spec: nn.MlpSpec) -> CallableBasis:
    """Critics ``(x, 1)``: the linear class's own gradient features."""
    if not spec.is_linear:
        raise ValueError("gradient features are parameter-free only for the linear class")
    return CallableBasis(lambda X: np.hstack([X, np.ones((X.shape[0], 1))]), spec.input_dim + 1, "gradient")


def eval_basis(basis, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return basis(x)[0] if x.ndim == 1 else basis(x)


def _weights(psi, g):
    return np.abs(psi) * loss_d1(g, psi_sign(psi))


def moment_vector(data: ScoredDataset, spec: nn.MlpSpec, params: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``m_j = mean_i |psi_i| l'(g(X_i), sign psi_i) f_j(X_i)`` for evaluated critics ``F``."""
    g = nn.forward_batch(spec, params, data.X)
    return F.T @ _weights(data.psi, g) / data.n


def moment_jacobian(data: ScoredDataset, spec: nn.MlpSpec, params: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``d m / d theta``, shape ``(k, n_params)``."""
    g, cache = nn.forward_batch(spec, params, data.X, return_cache=True)
    H = nn.jacobian_batch(spec, params, data.X, cache=cache)
    w = np.abs(data.psi) * loss_d2(g, psi_sign(data.psi))
    return (F * w[:, None]).T @ H / data.n


def weighting_matrix(data: ScoredDataset, spec: nn.MlpSpec, anchor: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``C_jk = mean_i psi_i^2 l'(g_anchor(X_i))^2 f_j(X_i) f_k(X_i)``."""
    u = _weights(data.psi, nn.forward_batch(spec, anchor, data.X))
    G = F * u[:, None]
    C = G.T @ G / data.n
    return (C + C.T) / 2.0


def default_ridge(C: np.ndarray) -> float:
    return 1e-6 * float(np.trace(C)) / C.shape[0]


def gmm_objective(m: np.ndarray, C: np.ndarray, rho: Optional[float] = None,
                  jac: Optional[np.ndarray] = None, literal: bool = False):
    """Optimally weighted ``m' (C + rho I)^{-1} m``; ``literal=True`` uses ``m' C m``.

    Returns ``(value, gradient)``; the gradient ``2 J' W m`` needs ``jac`` and
    is None otherwise.
    """
    m = np.asarray(m, dtype=np.float64)
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if literal:
        Wm = C @ m
    else:
        if rho is None:
            rho = default_ridge(C)
        if not rho > 0:
            raise ValueError("rho must be positive")
        Wm = np.linalg.solve(C + rho * np.eye(C.shape[0]), m)
    value = float(m @ Wm)
    grad = None if jac is None else 2.0 * jac.T @ Wm
    return value, grad


@dataclass
class GmmStage:
    stage: int
    anchor: np.ndarray
    objective: float
    moment_norm: float
    status: str


def finite_gmm_fit(data: ScoredDataset, spec: nn.MlpSpec, basis, stages: int = 3, seed: int = 0,
                   anchor: Optional[np.ndarray] = None, literal: bool = False,
                   tol: float = 1e-12, max_iter: int = 500) -> PolicyModel:
    """Multi-step GMM: each stage re-weights with ``C`` at the previous estimate.

    The first anchor is standard normal (seeded) unless ``anchor`` is given.
    Each stage's minimization starts from its anchor.
    """
    if basis.size < spec.n_params:
        raise ValueError(f"basis has {basis.size} critics for {spec.n_params} parameters")
    F = basis(data.X)
    theta = (rng_stream(seed, "gmm-anchor").standard_normal(spec.n_params)
             if anchor is None else np.array(anchor, dtype=np.float64))
    log: List[GmmStage] = []
    for stage in range(stages):
        C = weighting_matrix(data, spec, theta, F)
        rho = default_ridge(C) if default_ridge(C) > 0 else 1e-12

        def objective(th, C=C, rho=rho):
            m = moment_vector(data, spec, th, F)
            J = moment_jacobian(data, spec, th, F)
            return gmm_objective(m, C, rho, jac=J, literal=literal)

        try:
            res = lbfgs_minimize(objective, theta, tol=tol, max_iter=max_iter)
        except FloatingPointError as exc:
            raise FloatingPointError(f"GMM stage {stage}: {exc}") from exc
        log.append(GmmStage(stage, theta.copy(), res.fun,
                            float(np.linalg.norm(moment_vector(data, spec, res.x, F))), res.status))
        theta = res.x
    status = "ok" if all(s.status != "line_search_failed" for s in log) else "degraded:line-search"
    return PolicyModel(spec, theta, method="finite_gmm", status=status,
                       info={"stages": [(s.stage, s.objective, s.moment_norm, s.status) for s in log]})


@dataclass
class EfficientInstruments:
    omega: np.ndarray      # (n,)
    D: np.ndarray          # (n, n_params)
    fstar: np.ndarray      # (n, n_params)


def kernel_conditionals(data: ScoredDataset, bandwidth: Optional[float] = None):
    """Nadaraya-Watson plug-ins for ``(E[psi^2 l'^2 | x], E[|psi| l'' | x])``."""
    X = data.X
    if bandwidth is None:
        bandwidth = 1.06 * float(np.mean(X.std(axis=0))) * X.shape[0] ** (-1.0 / (X.shape[1] + 4))

    def conditionals(points, g_points, g_data):
        s = psi_sign(data.psi)
        a = (data.psi * loss_d1(g_data, s)) ** 2
        b = np.abs(data.psi) * loss_d2(g_data, s)
        d2 = ((points[:, None, :] - X[None, :, :]) ** 2).sum(-1)
        K = np.exp(-0.5 * d2 / bandwidth ** 2)
        norm = K.sum(axis=1)
        return K @ a / norm, K @ b / norm

    return conditionals


def efficient_instruments(data: ScoredDataset, spec: nn.MlpSpec, params: np.ndarray,
                          points: Optional[np.ndarray] = None, conditionals=None,
                          floor: float = 1e-10) -> EfficientInstruments:
    """``f*(x) = D(x) / Omega(x)`` at ``points`` (default: the data's own rows).

    ``conditionals(points, g_points, g_data)`` returns ``(Omega, E[|psi| l'' | x])``;
    by default they are kernel-smoothed from the data.
    """
    points = data.X if points is None else np.atleast_2d(np.asarray(points, dtype=np.float64))
    if conditionals is None:
        conditionals = kernel_conditionals(data)
    g_points = nn.forward_batch(spec, params, points)
    g_data = nn.forward_batch(spec, params, data.X)
    omega, dweight = conditionals(points, g_points, g_data)
    bad = np.flatnonzero(~(omega > floor))
    if bad.size:
        raise FloatingPointError(f"Omega(x) <= {floor} at x = {points[bad[0]].tolist()}")
    D = dweight[:, None] * nn.jacobian_batch(spec, params, points)
    return EfficientInstruments(omega, D, D / omega[:, None])


def fixture_conditionals(fixture):
    """Exact conditionals for a :class:`~policylearn.scenarios.FixtureSpec`."""

    def conditionals(points, g_points, g_data):
        return fixture.conditional_moments(points, g_points)

    return conditionals


def instrument_basis(spec: nn.MlpSpec, params: np.ndarray, conditionals, data: Optional[ScoredDataset] = None):
    """Critic basis made of the estimated efficient instruments at ``params``."""
    params = np.array(params, dtype=np.float64)
    g_data = None if data is None else nn.forward_batch(spec, params, data.X)

    def fn(X):
        omega, dweight = conditionals(X, nn.forward_batch(spec, params, X), g_data)
        return dweight[:, None] * nn.jacobian_batch(spec, params, X) / omega[:, None]

    return CallableBasis(fn, spec.n_params, "efficient-instruments")
