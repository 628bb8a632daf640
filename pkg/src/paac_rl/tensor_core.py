"""Two-hidden-layer MLPs in float64 numpy, with exact backprop and Adam.

Weights are stored as ``(out, in)`` matrices so a single input evaluates as
``act(W @ x + b)``. Batched inputs are ``(N, in)`` arrays and are handled by
``x @ W.T``. Nothing here mutates its arguments; updates return new objects.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

ACTOR_ACTIVATION = "relu_relu_tanh"
CRITIC_ACTIVATION = "relu_relu_linear"
ACTIVATIONS = (ACTOR_ACTIVATION, CRITIC_ACTIVATION)
DEFAULT_HIDDEN = 256


@dataclass(frozen=True)
class NetParams:
    """Weights and biases of an ``in -> h -> h -> out`` network."""

    weights: tuple
    biases: tuple
    activation: str = CRITIC_ACTIVATION

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ShapeError("NetParams needs exactly 3 weight matrices and 3 bias vectors")
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))
        fan_in = self.weights[0].shape[1]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if w.shape[1] != fan_in:
                raise ShapeError(f"layer {i}: expects {w.shape[1]} inputs, previous layer gives {fan_in}")
            fan_in = w.shape[0]

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[2].shape[0]

    @property
    def hidden_width(self):
        return self.weights[0].shape[0]

    @property
    def arrays(self):
        return self.weights + self.biases

    @property
    def size(self):
        return sum(a.size for a in self.arrays)

    def with_arrays(self, arrays):
        arrays = list(arrays)
        return NetParams(tuple(arrays[:3]), tuple(arrays[3:]), self.activation)

    def _trusted(self, arrays):
        # Skips validation; only for float64 arrays already shaped like self.
        out = object.__new__(NetParams)
        object.__setattr__(out, "weights", tuple(arrays[:3]))
        object.__setattr__(out, "biases", tuple(arrays[3:]))
        object.__setattr__(out, "activation", self.activation)
        return out

    def map(self, fn, *others):
        """Apply ``fn`` arraywise across this and ``others`` (same shapes)."""
        for o in others:
            check_same_shape(self, o)
        out = [np.asarray(fn(*arrs), dtype=np.float64) for arrs in zip(self.arrays, *(o.arrays for o in others))]
        if all(a.shape == b.shape for a, b in zip(out, self.arrays)):
            return self._trusted(out)
        return self.with_arrays(out)

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays])

    def unflatten(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        out, pos = [], 0
        for a in self.arrays:
            out.append(vec[pos:pos + a.size].reshape(a.shape))
            pos += a.size
        return self.with_arrays(out)

    def shapes(self):
        return tuple(a.shape for a in self.arrays)

    def equals(self, other):
        """Bitwise equality of every parameter."""
        return self.shapes() == other.shapes() and all(
            np.array_equal(a, b) for a, b in zip(self.arrays, other.arrays)
        )


def check_same_shape(a, b):
    if a.shapes() != b.shapes():
        raise ShapeError(f"parameter shapes differ: {a.shapes()} vs {b.shapes()}")


def init_params(rng, in_dim, out_dim, hidden_width=DEFAULT_HIDDEN, activation=CRITIC_ACTIVATION):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for every weight and bias."""
    sizes = [in_dim, hidden_width, hidden_width, out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetParams(tuple(weights), tuple(biases), activation)


@dataclass(frozen=True)
class ForwardCache:
    """Activations recorded by ``mlp_forward`` (always stored batched)."""

    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    out: np.ndarray
    batched: bool
    activation: str


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        batched = False
        x = x[None, :]
    elif x.ndim == 2:
        batched = True
    else:
        raise ShapeError(f"{what} must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[1] != dim:
        raise ShapeError(f"{what} has dimension {x.shape[1]}, network expects {dim}")
    return x, batched


def mlp_forward(params, x):
    """Evaluate the network; returns ``(output, cache)``.

    ``x`` may be a single vector or an ``(N, in)`` batch; the output has the
    matching rank.
    """
    xb, batched = _as_batch(x, params.in_dim)
    (w1, w2, w3), (b1, b2, b3) = params.weights, params.biases
    z1 = xb @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.T + b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ w3.T + b3
    if params.activation == ACTOR_ACTIVATION:
        out = np.tanh(out)
    cache = ForwardCache(xb, z1, a1, z2, a2, out, batched, params.activation)
    return (out if batched else out[0]), cache


def _check_cache(params, cache):
    if (
        cache.activation != params.activation
        or cache.x.shape[1] != params.in_dim
        or cache.z1.shape[1] != params.hidden_width
        or cache.z2.shape[1] != params.weights[1].shape[0]
        or cache.out.shape[1] != params.out_dim
    ):
        raise ShapeError("forward cache was not produced by these parameters")


def _output_delta(params, cache, upstream):
    g = np.asarray(upstream, dtype=np.float64)
    if not cache.batched:
        g = g[None, ...] if g.ndim == 1 else g
    if g.shape != cache.out.shape:
        raise ShapeError(f"upstream shape {np.shape(upstream)} does not match output {cache.out.shape}")
    if params.activation == ACTOR_ACTIVATION:
        g = g * (1.0 - cache.out**2)
    return g


def mlp_backward(params, cache, upstream):
    """Reverse-mode gradient of ``sum(output * upstream)``.

    Returns ``(param_grads, input_grad)``. For batched caches the parameter
    gradients are summed over the batch and ``input_grad`` is per-row.
    """
    _check_cache(params, cache)
    w1, w2, w3 = params.weights
    d3 = _output_delta(params, cache, upstream)
    d2 = (d3 @ w3) * (cache.z2 > 0)
    d1 = (d2 @ w2) * (cache.z1 > 0)
    grads = NetParams(
        (d1.T @ cache.x, d2.T @ cache.a1, d3.T @ cache.a2),
        (d1.sum(axis=0), d2.sum(axis=0), d3.sum(axis=0)),
        params.activation,
    )
    gx = d1 @ w1
    return grads, (gx if cache.batched else gx[0])


def mlp_input_grad(params, cache, upstream):
    """Gradient w.r.t. the input only (skips the parameter outer products)."""
    _check_cache(params, cache)
    w1, w2, w3 = params.weights
    d3 = _output_delta(params, cache, upstream)
    d2 = (d3 @ w3) * (cache.z2 > 0)
    d1 = (d2 @ w2) * (cache.z1 > 0)
    gx = d1 @ w1
    return gx if cache.batched else gx[0]


def per_sample_grads(params, cache, upstream):
    """Per-row parameter gradients, flattened in ``NetParams.flatten`` order.

    Returns an ``(N, params.size)`` array; summing its rows reproduces
    ``mlp_backward(...)[0].flatten()``.
    """
    _check_cache(params, cache)
    w1, w2, w3 = params.weights
    d3 = _output_delta(params, cache, upstream)
    d2 = (d3 @ w3) * (cache.z2 > 0)
    d1 = (d2 @ w2) * (cache.z1 > 0)
    n = d1.shape[0]
    parts = [
        np.einsum("ni,nj->nij", d1, cache.x).reshape(n, -1),
        np.einsum("ni,nj->nij", d2, cache.a1).reshape(n, -1),
        np.einsum("ni,nj->nij", d3, cache.a2).reshape(n, -1),
        d1,
        d2,
        d3,
    ]
    return np.concatenate(parts, axis=1)


@dataclass(frozen=True)
class AdamState:
    first_moment: NetParams
    second_moment: NetParams
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    zeros = params.zeros_like()
    return AdamState(zeros, zeros, 0, float(lr), beta1, beta2, epsilon)


def adam_step(params, grads, state):
    """One bias-corrected Adam descent step; returns ``(params, state)``."""
    check_same_shape(params, grads)
    check_same_shape(params, state.first_moment)
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    lr, eps = state.lr, state.epsilon
    ms, vs, ps = [], [], []
    for i, (p, g, m, v) in enumerate(zip(params.arrays, grads.arrays, state.first_moment.arrays,
                                         state.second_moment.arrays)):
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter array {i} (layer {i % 3})")
        m = b1 * m + (1.0 - b1) * g
        with np.errstate(over="ignore"):
            v = b2 * v + (1.0 - b2) * (g * g)
        if not np.isfinite(v).all():
            raise NumericError(f"second-moment overflow in parameter array {i} (layer {i % 3})")
        ms.append(m)
        vs.append(v)
        ps.append(p - (lr / c1) * m / (np.sqrt(v / c2) + eps))
    return params._trusted(ps), AdamState(params._trusted(ms), params._trusted(vs), t, lr, b1, b2, eps)


def finite_diff_grad(f, params, eps=1e-5):
    """Central-difference estimate of ``d f(params) / d params``."""
    arrays = [a.copy() for a in params.arrays]
    out = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = f(params.with_arrays(arrays))
            flat[j] = orig - eps
            fm = f(params.with_arrays(arrays))
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * eps)
        out.append(g)
    return params.with_arrays(out)
