"""Small fully-connected networks with exact reverse-mode gradients.

Parameters live in a single flat float64 vector. Layer ``k`` occupies a
contiguous block holding its weight matrix ``W_k`` (shape ``out x in``,
row-major) followed by its bias ``b_k``. A spec without hidden layers is the
linear class ``g(x) = theta . x + theta_0`` with the bias stored last.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


class DimensionError(ValueError):
    """Raised when an input or parameter vector has the wrong size."""

    def __init__(self, what: str, expected: int, got: int):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected {expected}, got {got}")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_sizes: Tuple[int, ...] = ()
    leaky_slope: float = 0.01
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.output_dim != 1:
            raise ValueError("only scalar-output networks are supported")

    @property
    def is_linear(self) -> bool:
        return len(self.hidden_sizes) == 0

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_sizes=tuple(d.get("hidden_sizes", ())),
            leaky_slope=float(d.get("leaky_slope", 0.01)),
        )


def linear_spec(input_dim: int) -> MlpSpec:
    return MlpSpec(input_dim=input_dim)


def flexible_spec(input_dim: int, hidden: int = 50) -> MlpSpec:
    return MlpSpec(input_dim=input_dim, hidden_sizes=(hidden,))


def _check_params(spec: MlpSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != spec.n_params:
        raise DimensionError("parameter vector length", spec.n_params, params.size)
    return params


def _check_inputs(spec: MlpSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != spec.input_dim:
        raise DimensionError("input_dim", spec.input_dim, X.shape[1])
    return X


def unflatten(spec: MlpSpec, params: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` views (no copies)."""
    params = _check_params(spec, params)
    sizes = spec.layer_sizes
    layers = []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = params[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def flatten(layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    sizes = spec.layer_sizes
    parts = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(1.0 / fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
        parts.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(parts)


def output_layer_slice(spec: MlpSpec) -> slice:
    """Slice of the flat vector holding the final layer's weights and bias."""
    fan_in = spec.layer_sizes[-2]
    size = spec.output_dim * fan_in + spec.output_dim
    return slice(spec.n_params - size, spec.n_params)


def _leaky(z, slope):
    # valid because 0 < slope < 1
    return np.maximum(z, slope * z)


def _leaky_grad(z, slope):
    return (z > 0) * (1.0 - slope) + slope


def forward_batch(spec: MlpSpec, params: np.ndarray, X: np.ndarray, return_cache: bool = False):
    """Evaluate ``g(x)`` on every row of ``X``; returns shape ``(n,)``."""
    X = _check_inputs(spec, X)
    layers = unflatten(spec, params)
    acts = [X]
    pre = []
    a = X
    for k, (W, b) in enumerate(layers):
        z = a @ W.T + b
        if k < len(layers) - 1:
            pre.append(z)
            a = _leaky(z, spec.leaky_slope)
            acts.append(a)
        else:
            a = z
    out = a[:, 0]
    if return_cache:
        return out, (layers, acts, pre)
    return out


def backward_batch(spec: MlpSpec, params: np.ndarray, X: np.ndarray, upstream: np.ndarray,
                   cache=None) -> np.ndarray:
    """Return ``sum_i upstream_i * grad_theta g(x_i)`` as a flat vector."""
    X = _check_inputs(spec, X)
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.size != X.shape[0]:
        raise DimensionError("upstream length", X.shape[0], upstream.size)
    if cache is None:
        _, cache = forward_batch(spec, params, X, return_cache=True)
    layers, acts, pre = cache
    grads = []
    delta = upstream[:, None]
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append((delta.T @ acts[k], delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ W) * _leaky_grad(pre[k - 1], spec.leaky_slope)
    return flatten(grads[::-1])


def jacobian_batch(spec: MlpSpec, params: np.ndarray, X: np.ndarray, cache=None) -> np.ndarray:
    """Per-row gradients ``grad_theta g(x_i)``, shape ``(n, n_params)``."""
    X = _check_inputs(spec, X)
    n = X.shape[0]
    if spec.is_linear:
        return np.hstack([X, np.ones((n, 1))])
    if cache is None:
        _, cache = forward_batch(spec, params, X, return_cache=True)
    layers, acts, pre = cache
    blocks = []
    delta = np.ones((n, 1))
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        dW = (delta[:, :, None] * acts[k][:, None, :]).reshape(n, -1)
        blocks.append(np.hstack([dW, delta]))
        if k > 0:
            delta = (delta @ W) * _leaky_grad(pre[k - 1], spec.leaky_slope)
    return np.hstack(blocks[::-1])


def mlp_forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("context vector rank", 1, x.ndim)
    return float(forward_batch(spec, params, x)[0])


def mlp_backward(spec: MlpSpec, params: np.ndarray, x: np.ndarray, upstream: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("context vector rank", 1, x.ndim)
    return backward_batch(spec, params, x[None, :], np.array([upstream]))


def grad_check(spec: MlpSpec, params: np.ndarray, x: np.ndarray, epsilon: float = 1e-5) -> float:
    """Worst coordinate-wise relative error of ``mlp_backward`` vs central differences.

    The denominator is floored at ``1e-6 * max(1, |g(x)|)``: central
    differences carry rounding noise proportional to ``|g(x)| / epsilon``, which
    would otherwise dominate near-zero gradient entries.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    params = _check_params(spec, params).copy()
    analytic = mlp_backward(spec, params, x)
    floor = 1e-6 * max(1.0, abs(mlp_forward(spec, params, x)))
    worst = 0.0
    for j in range(params.size):
        old = params[j]
        params[j] = old + epsilon
        up = mlp_forward(spec, params, x)
        params[j] = old - epsilon
        down = mlp_forward(spec, params, x)
        params[j] = old
        numeric = (up - down) / (2 * epsilon)
        denom = max(abs(analytic[j]), abs(numeric), floor)
        worst = max(worst, abs(analytic[j] - numeric) / denom)
    return worst
