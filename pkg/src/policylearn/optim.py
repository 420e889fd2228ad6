"""Adam, optimistic Adam, L-BFGS and an early-stopping controller."""
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np


class NonFiniteError(FloatingPointError):
    """A gradient or objective value was NaN or infinite."""

    def __init__(self, message: str, index: Optional[int] = None):
        self.index = index
        super().__init__(message)


def _check_finite_gradient(gradient: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(gradient))
    if bad.size:
        raise NonFiniteError(f"non-finite gradient at coordinate {bad[0]}", index=int(bad[0]))


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n: int, lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr, **kwargs)


@dataclass(frozen=True)
class OAdamState(AdamState):
    u_prev: Optional[np.ndarray] = None

    @classmethod
    def init(cls, n: int, lr: float = 1e-3, **kwargs) -> "OAdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr, u_prev=np.zeros(n), **kwargs)


def _adam_update(state: AdamState, params: np.ndarray, gradient: np.ndarray):
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.shape or state.m.shape != params.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, gradient {gradient.shape}, state {state.m.shape}"
        )
    _check_finite_gradient(gradient)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * gradient
    v = state.beta2 * state.v + (1 - state.beta2) * gradient * gradient
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return t, m, v, update


def adam_step(state: AdamState, params: np.ndarray, gradient: np.ndarray) -> Tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam step; returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=np.float64)
    t, m, v, update = _adam_update(state, params, gradient)
    return replace(state, m=m, v=v, t=t), params - update


def oadam_step(state: OAdamState, params: np.ndarray, gradient: np.ndarray) -> Tuple[OAdamState, np.ndarray]:
    """Optimistic Adam: ``params - 2 u_t + u_{t-1}`` with ``u_t`` the Adam update."""
    params = np.asarray(params, dtype=np.float64)
    u_prev = state.u_prev if state.u_prev is not None else np.zeros_like(params)
    t, m, v, update = _adam_update(state, params, gradient)
    new_params = params - 2.0 * update + u_prev
    return replace(state, m=m, v=v, t=t, u_prev=update), new_params


@dataclass
class EarlyStop:
    """Signals a stop once the validation loss fails to improve ``patience`` times in a row."""

    patience: int = 5
    best: float = np.inf
    since_improvement: int = 0
    best_epoch: int = -1
    epoch: int = 0

    def update(self, loss: float) -> bool:
        """Record one epoch's validation loss; return True when training should stop."""
        if loss < self.best:
            self.best = float(loss)
            self.since_improvement = 0
            self.best_epoch = self.epoch
        else:
            self.since_improvement += 1
        self.epoch += 1
        return self.since_improvement >= self.patience


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    status: str  # "converged" | "max_iter" | "line_search_failed"
    f0: float = np.nan

    @property
    def degraded(self) -> bool:
        return self.status != "converged"


Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def _two_loop(grad, s_hist, y_hist):
    q = grad.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def lbfgs_minimize(fun: Objective, x0: np.ndarray, tol: float = 1e-9, max_iter: int = 500,
                   memory: int = 10, armijo: float = 1e-4, backtrack: float = 0.5,
                   max_backtracks: int = 60) -> LbfgsResult:
    """Minimize a smooth objective with L-BFGS and Armijo backtracking.

    ``fun`` returns ``(value, gradient)``. Convergence means the gradient's
    Euclidean norm is at most ``tol``. Pairs failing the curvature condition
    ``s.y > 0`` are not stored. A failed line search returns the best iterate
    with ``status="line_search_failed"`` instead of raising.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteError("objective is not finite at the initial point")
    f0 = float(f)
    s_hist, y_hist = [], []
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            status = "converged"
            it -= 1
            break
        direction = -_two_loop(g, s_hist, y_hist)
        slope = float(g @ direction)
        if slope >= 0 or not np.isfinite(slope):
            s_hist.clear()
            y_hist.clear()
            direction = -g
            slope = -gnorm * gnorm
        step = 1.0 if s_hist else min(1.0, 1.0 / gnorm)
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * direction
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + armijo * step * slope:
                g_new = np.asarray(g_new, dtype=np.float64)
                if np.all(np.isfinite(g_new)):
                    accepted = True
                    break
            step *= backtrack
        if not accepted:
            if s_hist:
                s_hist.clear()
                y_hist.clear()
                continue
            status = "line_search_failed"
            break
        s = x_new - x
        y = g_new - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        stalled = f - f_new <= 1e-16 * max(1.0, abs(f))
        x, f, g = x_new, float(f_new), g_new
        if stalled and float(np.linalg.norm(g)) > tol and step * np.linalg.norm(direction) < 1e-15 * (1 + np.linalg.norm(x)):
            status = "line_search_failed"
            break
    else:
        if float(np.linalg.norm(g)) <= tol:
            status = "converged"
    return LbfgsResult(x=x, fun=float(f), grad_norm=float(np.linalg.norm(g)), n_iter=it,
                       status=status, f0=f0)
