"""Logistic surrogate loss and the weighted-classification ERM learner."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from . import nn
from .data import ScoredDataset, rng_stream
from .optim import AdamState, EarlyStop, adam_step, lbfgs_minimize


def sigmoid(g):
    out = expit(np.asarray(g, dtype=np.float64))
    return out if out.ndim else float(out)


def _check_sign(s):
    s = np.asarray(s, dtype=np.float64)
    if not np.all((s == 1.0) | (s == -1.0)):
        raise ValueError("sign argument must be -1 or +1")
    return s


def loss(g, s):
    """``l(g, s) = 2 log(1 + e^g) - (s + 1) g``, via ``logaddexp`` for stability."""
    s = _check_sign(s)
    out = 2.0 * np.logaddexp(0.0, g) - (s + 1.0) * np.asarray(g, dtype=np.float64)
    return out if np.ndim(out) else float(out)


def loss_d1(g, s):
    s = _check_sign(s)
    out = 2.0 * sigmoid(g) - (s + 1.0)
    return out if np.ndim(out) else float(out)


def loss_d2(g, s):
    _check_sign(s)
    sg = sigmoid(g)
    out = 2.0 * sg * (1.0 - sg) + 0.0 * np.asarray(s, dtype=np.float64)
    return out if np.ndim(out) else float(out)


def psi_sign(psi: np.ndarray) -> np.ndarray:
    """``sign(psi)`` with zero mapped to +1; those rows carry zero weight anyway."""
    return np.where(np.asarray(psi) < 0, -1.0, 1.0)


@dataclass
class PolicyModel:
    spec: nn.MlpSpec
    params: np.ndarray
    method: str = ""
    status: str = "ok"
    info: dict = field(default_factory=dict)

    @property
    def degraded(self) -> bool:
        return self.status != "ok"

    def g(self, X) -> np.ndarray:
        return nn.forward_batch(self.spec, self.params, X)

    def act(self, X) -> np.ndarray:
        """Treatment in {-1, +1}; ``g == 0`` maps to +1."""
        return np.where(self.g(X) < 0, -1.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "spec": self.spec.to_dict(),
            "params": [float(v) for v in self.params],
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyModel":
        return cls(nn.MlpSpec.from_dict(d["spec"]), np.asarray(d["params"], dtype=np.float64),
                   method=d.get("method", ""), status=d.get("status", "ok"))


def risk_and_grad(spec: nn.MlpSpec, params: np.ndarray, X: np.ndarray, psi: np.ndarray):
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    w = np.abs(psi)
    s = psi_sign(psi)
    g, cache = nn.forward_batch(spec, params, X, return_cache=True)
    value = float(np.sum(w * loss(g, s)) / n)
    upstream = w * loss_d1(g, s) / n
    grad = nn.backward_batch(spec, params, X, upstream, cache=cache)
    return value, grad


def empirical_risk(policy: PolicyModel, data: ScoredDataset):
    """Mean of ``|psi_i| l(g(X_i), sign(psi_i))`` and its parameter gradient."""
    return risk_and_grad(policy.spec, policy.params, data.X, data.psi)


def stationarity_moments(spec: nn.MlpSpec, params: np.ndarray, data: ScoredDataset) -> np.ndarray:
    """Mean of ``|psi| l'(g) h(X)`` per parameter coordinate (the ERM first-order system)."""
    return risk_and_grad(spec, params, data.X, data.psi)[1]


@dataclass
class ErmSettings:
    tol: float = 1e-9
    max_iter: int = 500
    adam_lr: float = 1e-3
    adam_max_epochs: int = 200
    batch_size: int = 256
    patience: int = 5
    gradient_tol: float = 1e-5


def erm_fit(data: ScoredDataset, spec: nn.MlpSpec, settings: Optional[ErmSettings] = None,
            seed: int = 0, validation: Optional[ScoredDataset] = None) -> PolicyModel:
    """Minimize the surrogate empirical risk (EntropyLearning baseline).

    L-BFGS runs first. When ``validation`` is given, Adam refinement follows
    with early stopping on the validation risk, and the best validation
    iterate is returned.
    """
    settings = settings or ErmSettings()
    if data.n == 0:
        raise ValueError("empty dataset")
    X, psi = data.X, data.psi
    theta0 = nn.init_params(spec, rng_stream(seed, "erm-init"))
    res = lbfgs_minimize(lambda th: risk_and_grad(spec, th, X, psi), theta0,
                         tol=settings.tol, max_iter=settings.max_iter)
    theta = res.x
    info = {"lbfgs_status": res.status, "lbfgs_iter": res.n_iter, "loss": res.fun}

    if validation is not None:
        rng = rng_stream(seed, "erm-adam")
        state = AdamState.init(theta.size, lr=settings.adam_lr)
        stopper = EarlyStop(patience=settings.patience)
        best = theta.copy()
        stopper.update(risk_and_grad(spec, theta, validation.X, validation.psi)[0])
        for _ in range(settings.adam_max_epochs):
            order = rng.permutation(data.n)
            for start in range(0, data.n, settings.batch_size):
                idx = order[start:start + settings.batch_size]
                _, grad = risk_and_grad(spec, theta, X[idx], psi[idx])
                state, theta = adam_step(state, theta, grad)
            val = risk_and_grad(spec, theta, validation.X, validation.psi)[0]
            improved = val < stopper.best
            stop = stopper.update(val)
            if improved:
                best = theta.copy()
            if stop:
                break
        theta = best
        info["adam_epochs"] = stopper.epoch - 1
        info["validation_loss"] = stopper.best

    loss_val, grad = risk_and_grad(spec, theta, X, psi)
    info["grad_norm"] = float(np.linalg.norm(grad))
    info["loss"] = loss_val
    nz = psi[psi != 0]
    one_sided = nz.size == 0 or np.all(nz > 0) or np.all(nz < 0)
    status = "ok"
    if one_sided:
        status = "degraded:no-finite-minimizer"
    elif validation is None and info["grad_norm"] > settings.gradient_tol:
        status = f"degraded:{res.status}"
    return PolicyModel(spec, theta, method="erm", status=status, info=info)
