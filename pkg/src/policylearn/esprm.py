"""Adversarial GMM policy learner (ESPRM).

The policy minimizes and a neural critic ``f`` maximizes

    U(theta, f; anchor) = mean_i u_i(theta, f) - 1/4 mean_i u_i(anchor, f)^2,
    u_i(theta, f) = |psi_i| l'(g_theta(X_i), sign psi_i) f(X_i).

For fixed ``theta`` the inner supremum over unrestricted critics is attained
at ``f(x) = 2 E[u(theta)/f | x] / E[(u(anchor)/f)^2 | x]``, which recovers the
optimally weighted GMM criterion. The game is solved with alternating
optimistic-Adam steps (critic first), and the anchor tracks the previous
policy iterate.
"""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from . import nn
from .data import ScoredDataset, rng_stream
from .optim import OAdamState, oadam_step
from .surrogate import PolicyModel, loss_d1, loss_d2, psi_sign, risk_and_grad


def u_term(psi, g, f):
    """``|psi| l'(g, sign psi) f``, elementwise."""
    psi = np.asarray(psi, dtype=np.float64)
    out = np.abs(psi) * loss_d1(g, psi_sign(psi)) * np.asarray(f, dtype=np.float64)
    return out if np.ndim(out) else float(out)


def game_objective(X, psi, policy_spec: nn.MlpSpec, theta, critic_spec: nn.MlpSpec, omega, anchor):
    """Return ``(U, dU/dtheta, dU/domega)``; the anchor term carries no theta gradient."""
    X = np.asarray(X, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    n = X.shape[0]
    w = np.abs(psi)
    s = psi_sign(psi)
    g, gcache = nn.forward_batch(policy_spec, theta, X, return_cache=True)
    g_anchor = nn.forward_batch(policy_spec, anchor, X)
    f, fcache = nn.forward_batch(critic_spec, omega, X, return_cache=True)
    a = w * loss_d1(g, s)
    a_anchor = w * loss_d1(g_anchor, s)
    value = float(np.sum(a * f) / n - 0.25 * np.sum((a_anchor * f) ** 2) / n)
    up_f = (a - 0.5 * a_anchor * a_anchor * f) / n
    up_g = w * loss_d2(g, s) * f / n
    grad_theta = nn.backward_batch(policy_spec, theta, X, up_g, cache=gcache)
    grad_omega = nn.backward_batch(critic_spec, omega, X, up_f, cache=fcache)
    return value, grad_theta, grad_omega


def pointwise_best_critic(psi, g, g_anchor, groups):
    """Maximizer of ``U`` over critics taking one free value per group of rows."""
    s = psi_sign(psi)
    a = np.abs(psi) * loss_d1(g, s)
    b = (np.abs(psi) * loss_d1(g_anchor, s)) ** 2
    labels, inv = np.unique(groups, return_inverse=True)
    A = np.bincount(inv, weights=a)
    B = np.bincount(inv, weights=b)
    return labels, 2.0 * A / B


def epochs_for(n: int, budget: float = 8_000_000, cap: int = 8000) -> int:
    return max(1, int(min(budget // n, cap)))


@dataclass
class EsprmConfig:
    policy_spec: nn.MlpSpec
    critic_spec: Optional[nn.MlpSpec] = None
    policy_lr: Optional[float] = None
    critic_lr_ratio: float = 5.0
    betas: tuple = (0.5, 0.9)
    epochs: Optional[int] = None
    epoch_budget: float = 8_000_000
    max_epochs: int = 8000
    batch_size: Optional[int] = None
    seed: int = 0
    log_path: Optional[str] = None
    log_every: int = 1

    def __post_init__(self):
        if self.critic_spec is None:
            self.critic_spec = nn.flexible_spec(self.policy_spec.input_dim)

    def resolved_policy_lr(self) -> float:
        if self.policy_lr is not None:
            return self.policy_lr
        return 1e-3 if self.policy_spec.is_linear else 2e-4

    def resolved_epochs(self, n: int) -> int:
        return self.epochs if self.epochs is not None else epochs_for(n, self.epoch_budget, self.max_epochs)

    def resolved_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return n if n <= 1000 else 256


def esprm_fit(data: ScoredDataset, config: EsprmConfig, validation: Optional[ScoredDataset] = None,
              theta0: Optional[np.ndarray] = None, omega0: Optional[np.ndarray] = None) -> PolicyModel:
    """Solve the policy/critic game; returns the final (or validation-best) policy."""
    n = data.n
    if n == 0:
        raise ValueError("empty dataset")
    pspec, cspec = config.policy_spec, config.critic_spec
    rng = rng_stream(config.seed, "esprm-init")
    theta = nn.init_params(pspec, rng) if theta0 is None else np.array(theta0, dtype=np.float64)
    omega = nn.init_params(cspec, rng) if omega0 is None else np.array(omega0, dtype=np.float64)
    anchor = theta.copy()
    lr = config.resolved_policy_lr()
    b1, b2 = config.betas
    p_state = OAdamState.init(theta.size, lr=lr, beta1=b1, beta2=b2)
    c_state = OAdamState.init(omega.size, lr=lr * config.critic_lr_ratio, beta1=b1, beta2=b2)
    epochs = config.resolved_epochs(n)
    batch = config.resolved_batch_size(n)
    order_rng = rng_stream(config.seed, "esprm-batches")
    X, psi = data.X, data.psi

    w_all = np.abs(psi)
    s1_all = psi_sign(psi) + 1.0
    best_theta, best_val = theta.copy(), np.inf
    log_rows = []
    for epoch in range(epochs):
        order = order_rng.permutation(n) if batch < n else None
        for bi, start in enumerate(range(0, n, batch)):
            if order is None:
                Xb, w, s1 = X, w_all, s1_all
            else:
                idx = order[start:start + batch]
                Xb, w, s1 = X[idx], w_all[idx], s1_all[idx]
            nb = Xb.shape[0]
            g, gcache = nn.forward_batch(pspec, theta, Xb, return_cache=True)
            sg = expit(g)
            a = w * (2.0 * sg - s1)
            a_anchor = w * (2.0 * expit(nn.forward_batch(pspec, anchor, Xb)) - s1)
            f, fcache = nn.forward_batch(cspec, omega, Xb, return_cache=True)
            value = float(np.dot(a, f) - 0.25 * np.dot(a_anchor * a_anchor, f * f)) / nb
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite game objective at epoch {epoch}, batch {bi}")
            g_omega = nn.backward_batch(cspec, omega, Xb, (a - 0.5 * a_anchor * a_anchor * f) / nb, cache=fcache)
            c_state, omega = oadam_step(c_state, omega, -g_omega)
            f_new = nn.forward_batch(cspec, omega, Xb)
            g_theta = nn.backward_batch(pspec, theta, Xb, w * 2.0 * sg * (1.0 - sg) * f_new / nb, cache=gcache)
            p_state, new_theta = oadam_step(p_state, theta, g_theta)
            anchor, theta = theta, new_theta
        if config.log_path is not None and epoch % config.log_every == 0:
            value, g_theta, g_omega = game_objective(X, psi, pspec, theta, cspec, omega, anchor)
            log_rows.append((epoch, value, float(np.linalg.norm(g_theta)), float(np.linalg.norm(g_omega))))
        if validation is not None:
            val = risk_and_grad(pspec, theta, validation.X, validation.psi)[0]
            if val < best_val:
                best_val, best_theta = val, theta.copy()

    if config.log_path is not None:
        path = Path(config.log_path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "U", "grad_theta_norm", "grad_critic_norm"])
            writer.writerows([(e, repr(u), repr(a), repr(b)) for e, u, a, b in log_rows])

    info = {"epochs": epochs, "batch_size": batch, "policy_lr": lr, "critic_params": omega}
    if validation is not None:
        theta = best_theta
        info["validation_loss"] = best_val
    return PolicyModel(pspec, theta, method="esprm", info=info)
