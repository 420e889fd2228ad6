"""Synthetic data-generating processes and Monte-Carlo oracle policy values.

``Linear``: ``mu_t(x) = a_t . x + a_t0`` and ``e_1(x) = sigmoid(b . x + b0)``.
``Quadratic``: adds ``x' A_t x`` to ``mu_t`` and ``x' B x`` to the propensity
logit. ``X`` and the outcome noise are standard normal, ``x`` is 2-d.

The well-specified fixture draws ``psi`` directly: ``psi = +c(x)`` with
probability ``sigmoid(g*(x))`` and ``-c(x)`` otherwise, for a linear ``g*``.
Then ``E[|psi| 1{psi>0} | x] / E[|psi| | x] = sigmoid(g*(x))``, so the linear
class contains the unconstrained surrogate-risk minimizer while ``|psi|``
still varies with ``x``.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .data import Dataset, ScoredDataset, rng_stream
from .surrogate import PolicyModel, loss, sigmoid

DIM = 2
KINDS = ("Linear", "Quadratic")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    a_pos: np.ndarray
    a_neg: np.ndarray
    a0_pos: float
    a0_neg: float
    b: np.ndarray
    b0: float
    A_pos: Optional[np.ndarray] = None
    A_neg: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    seed: int = 0

    def mu(self, X, t: float) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        a, a0, A = (self.a_pos, self.a0_pos, self.A_pos) if t > 0 else (self.a_neg, self.a0_neg, self.A_neg)
        out = X @ a + a0
        if A is not None:
            out = out + np.einsum("ni,ij,nj->n", X, A, X)
        return out

    def tau(self, X) -> np.ndarray:
        return self.mu(X, 1.0) - self.mu(X, -1.0)

    def propensity(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        logit = X @ self.b + self.b0
        if self.B is not None:
            logit = logit + np.einsum("ni,ij,nj->n", X, self.B, X)
        return sigmoid(logit)

    def optimal_linear_params(self) -> Optional[np.ndarray]:
        """``(theta, theta_0)`` of the optimal linear rule ``sign(tau)``; None if tau is not linear."""
        if self.kind != "Linear":
            return None
        return np.append(self.a_pos - self.a_neg, self.a0_pos - self.a0_neg)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        for name in ("a_pos", "a_neg", "b", "A_pos", "A_neg", "B"):
            v = getattr(self, name)
            d[name] = None if v is None else np.asarray(v).tolist()
        for name in ("a0_pos", "a0_neg", "b0"):
            d[name] = float(getattr(self, name))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        arr = lambda v: None if v is None else np.asarray(v, dtype=np.float64)
        return cls(d["kind"], arr(d["a_pos"]), arr(d["a_neg"]), float(d["a0_pos"]), float(d["a0_neg"]),
                   arr(d["b"]), float(d["b0"]), arr(d.get("A_pos")), arr(d.get("A_neg")), arr(d.get("B")),
                   int(d.get("seed", 0)))


def sample_scenario(kind: str, seed: int) -> ScenarioSpec:
    """All coefficients iid standard normal; quadratic matrices symmetrized."""
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}")
    rng = rng_stream(seed, f"scenario-{kind}")
    a_pos, a_neg, b = rng.standard_normal((3, DIM))
    a0_pos, a0_neg, b0 = rng.standard_normal(3)
    mats = {}
    if kind == "Quadratic":
        for name in ("A_pos", "A_neg", "B"):
            M = rng.standard_normal((DIM, DIM))
            mats[name] = (M + M.T) / 2.0
    return ScenarioSpec(kind, a_pos, a_neg, float(a0_pos), float(a0_neg), b, float(b0), seed=seed, **mats)


def generate_data(spec: ScenarioSpec, n: int, seed: int, label: str = "data") -> Dataset:
    if n < 1:
        raise ValueError("n must be positive")
    rng = rng_stream(seed, label)
    X = rng.standard_normal((n, DIM))
    T = np.where(rng.random(n) < spec.propensity(X), 1.0, -1.0)
    Y = np.where(T > 0, spec.mu(X, 1.0), spec.mu(X, -1.0)) + rng.standard_normal(n)
    return Dataset(X, T, Y)


@dataclass(frozen=True)
class FixtureSpec:
    """Well-specified fixture; ``c(x) = c_base + c_amp * sigmoid(c_w . x)``."""

    theta_star: np.ndarray = field(default_factory=lambda: np.array([1.0, -0.5, 0.25]))
    c_base: float = 0.05
    c_amp: float = 0.95
    c_w: np.ndarray = field(default_factory=lambda: np.array([3.0, -3.0]))

    def __post_init__(self):
        if not (0.0 < self.c_base and self.c_base + self.c_amp <= 1.0 and self.c_amp >= 0.0):
            raise ValueError("c(x) must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"kind": "WellSpecFixture", "theta_star": np.asarray(self.theta_star).tolist(),
                "c_base": self.c_base, "c_amp": self.c_amp, "c_w": np.asarray(self.c_w).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        defaults = cls()
        return cls(np.asarray(d.get("theta_star", defaults.theta_star), dtype=np.float64),
                   float(d.get("c_base", defaults.c_base)), float(d.get("c_amp", defaults.c_amp)),
                   np.asarray(d.get("c_w", defaults.c_w), dtype=np.float64))

    def g_star(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X @ self.theta_star[:-1] + self.theta_star[-1]

    def c(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.c_base + self.c_amp * sigmoid(X @ self.c_w)

    def p_pos(self, X) -> np.ndarray:
        return sigmoid(self.g_star(X))

    def tau(self, X) -> np.ndarray:
        """``E[psi | x] = c(x) (2 sigmoid(g*(x)) - 1)``."""
        return self.c(X) * (2.0 * self.p_pos(X) - 1.0)

    def conditional_moments(self, X, g) -> Tuple[np.ndarray, np.ndarray]:
        """Exact ``(E[psi^2 l'(g)^2 | x], E[|psi| l''(g) | x])`` at policy scores ``g``."""
        c, p, s = self.c(X), self.p_pos(X), sigmoid(g)
        omega = c * c * (p * (2.0 * s - 2.0) ** 2 + (1.0 - p) * (2.0 * s) ** 2)
        dweight = c * 2.0 * s * (1.0 - s)
        return omega, dweight

    def surrogate_risk_terms(self, X, g) -> np.ndarray:
        """``E[|psi| l(g, sign psi) | x]`` per row."""
        c, p = self.c(X), self.p_pos(X)
        return c * (p * loss(g, np.ones_like(g)) + (1.0 - p) * loss(g, -np.ones_like(g)))


def scenario_from_dict(d: dict):
    """Rebuild a ``ScenarioSpec`` or ``FixtureSpec`` from its ``to_dict`` form."""
    if d.get("kind") == "WellSpecFixture":
        return FixtureSpec.from_dict(d)
    return ScenarioSpec.from_dict(d)


def generate_fixture(fixture: FixtureSpec, n: int, seed: int, label: str = "fixture") -> ScoredDataset:
    rng = rng_stream(seed, label)
    X = rng.standard_normal((n, DIM))
    c = fixture.c(X)
    psi = np.where(rng.random(n) < fixture.p_pos(X), c, -c)
    return ScoredDataset(X, psi, "GIVEN")


@dataclass
class PolicyValue:
    value: float
    se: float
    optimum: float
    regret: float
    regret_se: float


def oracle_policy_value(spec, policy: PolicyModel, mc_size: int = 1_000_000, seed: int = 0,
                        chunk: int = 250_000) -> PolicyValue:
    """Monte-Carlo ``J(pi) = E[pi(X) tau(X)]`` on fresh draws, with regret vs ``sign(tau)``.

    ``spec`` is a ``ScenarioSpec`` or ``FixtureSpec`` (anything with ``tau``).
    Regret and its standard error use the same draws as the value (paired).
    """
    if mc_size < 10_000:
        raise ValueError("mc_size must be at least 10^4")
    rng = rng_stream(seed, "oracle")
    sums = np.zeros(4)  # value, value^2, regret, regret^2
    opt_sum = 0.0
    done = 0
    while done < mc_size:
        m = min(chunk, mc_size - done)
        X = rng.standard_normal((m, DIM))
        tau = spec.tau(X)
        v = policy.act(X) * tau
        r = np.abs(tau) - v
        sums += [v.sum(), (v * v).sum(), r.sum(), (r * r).sum()]
        opt_sum += np.abs(tau).sum()
        done += m
    n = float(mc_size)
    mean_v, mean_r = sums[0] / n, sums[2] / n
    se_v = np.sqrt(max(sums[1] / n - mean_v ** 2, 0.0) / n)
    se_r = np.sqrt(max(sums[3] / n - mean_r ** 2, 0.0) / n)
    return PolicyValue(float(mean_v), float(se_v), float(opt_sum / n), float(mean_r), float(se_r))
