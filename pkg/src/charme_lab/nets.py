"""Network evaluation, analytic parameter derivatives, and spectral bounds.

The canonical parameter ordering used everywhere (training, covariance
matrices, Monte Carlo rows) is: layer 1..L, each layer's weights flattened
row-major followed by its bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .model import FeedforwardNet

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITER = 10_000


def forward(net: FeedforwardNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the network at ``x``.

    Accepts a single input of length N_0 or a batch of shape (n, N_0); the
    last layer is affine, all earlier layers apply the activation.
    """
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    if (batched and x.shape[1] != net.input_width) or (
        not batched and x.shape != (net.input_width,)
    ):
        raise ShapeMismatch(f"input shape {x.shape} incompatible with width {net.input_width}")
    act = net.activation.apply
    h = x
    last = net.n_layers - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W.T + b if batched else W @ h + b
        if l != last:
            h = act(h)
    return h


@dataclass(frozen=True)
class ParamGradient:
    """Per-layer gradients mirroring a network's weight/bias shapes."""

    weight_grads: tuple
    bias_grads: tuple

    def flatten(self) -> np.ndarray:
        """Concatenate in canonical order: per layer, row-major weights then bias."""
        parts = []
        for dW, db in zip(self.weight_grads, self.bias_grads):
            parts.append(dW.reshape(-1))
            parts.append(db)
        return np.concatenate(parts)


def param_count(net: FeedforwardNet) -> int:
    return sum(W.size + b.size for W, b in zip(net.weights, net.biases))


def flatten_params(net: FeedforwardNet) -> np.ndarray:
    """Parameter vector of the network in canonical order."""
    parts = []
    for W, b in zip(net.weights, net.biases):
        parts.append(W.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


def replace_params(net: FeedforwardNet, vec: np.ndarray) -> FeedforwardNet:
    """Rebuild the network from a canonical parameter vector."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (param_count(net),):
        raise ShapeMismatch(f"parameter vector length {vec.shape} != {param_count(net)}")
    ws, bs = [], []
    pos = 0
    for W, b in zip(net.weights, net.biases):
        ws.append(vec[pos : pos + W.size].reshape(W.shape))
        pos += W.size
        bs.append(vec[pos : pos + b.size])
        pos += b.size
    return FeedforwardNet(net.widths, ws, bs, net.activation)


def backward_batch(weights, biases, activation, x: np.ndarray, upstream: np.ndarray):
    """Reverse accumulation on raw parameter lists; returns per-layer grads.

    ``x`` has shape (n, N_0), ``upstream`` shape (n, N_L); the result sums
    ``upstream_i . f(x_i)`` gradients over the batch as fixed-order matrix
    products, so repeated runs are bitwise reproducible.
    """
    act = activation.apply
    deriv = activation.derivative
    L = len(weights)
    acts = [x]
    zs = []
    h = x
    for l in range(L):
        z = h @ weights[l].T + biases[l]
        zs.append(z)
        if l != L - 1:
            h = act(z)
            acts.append(h)
    weight_grads = [None] * L
    bias_grads = [None] * L
    delta = upstream
    for l in range(L - 1, -1, -1):
        weight_grads[l] = delta.T @ acts[l]
        bias_grads[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ weights[l]) * deriv(zs[l - 1])
    return weight_grads, bias_grads


def param_gradient_batch(
    net: FeedforwardNet, x: np.ndarray, upstream: np.ndarray
) -> ParamGradient:
    """Summed gradient of ``sum_i upstream_i . f(x_i)`` over a batch."""
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise ShapeMismatch(f"batch input shape {x.shape} incompatible with {net.input_width}")
    if upstream.shape != (x.shape[0], net.output_width):
        raise ShapeMismatch(
            f"upstream shape {upstream.shape} != {(x.shape[0], net.output_width)}"
        )
    weight_grads, bias_grads = backward_batch(
        net.weights, net.biases, net.activation, x, upstream
    )
    return ParamGradient(tuple(weight_grads), tuple(bias_grads))


def param_gradient(net: FeedforwardNet, x: np.ndarray, upstream: np.ndarray) -> ParamGradient:
    """Gradient of ``upstream . f(x)`` with respect to every parameter."""
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.shape != (net.input_width,):
        raise ShapeMismatch(f"input shape {x.shape} != ({net.input_width},)")
    if upstream.shape != (net.output_width,):
        raise ShapeMismatch(f"upstream shape {upstream.shape} != ({net.output_width},)")
    return param_gradient_batch(net, x[None, :], upstream[None, :])


def param_jacobian(net: FeedforwardNet, x: np.ndarray) -> np.ndarray:
    """Jacobian of the output wrt the canonical parameter vector, shape (N_L, P)."""
    out = np.empty((net.output_width, param_count(net)))
    eye = np.eye(net.output_width)
    for i in range(net.output_width):
        out[i] = param_gradient(net, x, eye[i]).flatten()
    return out


def per_sample_gradients(net: FeedforwardNet, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Row i is the canonical-order gradient of ``upstream_i . f(x_i)``.

    Shape (n, P).  Unlike ``param_gradient_batch`` nothing is summed; this
    feeds the Gram-matrix estimators, where each observation contributes its
    own outer product.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise ShapeMismatch(f"batch input shape {x.shape} incompatible with {net.input_width}")
    if upstream.shape != (x.shape[0], net.output_width):
        raise ShapeMismatch(
            f"upstream shape {upstream.shape} != {(x.shape[0], net.output_width)}"
        )
    act = net.activation.apply
    deriv = net.activation.derivative
    L = net.n_layers
    acts = [x]
    zs = []
    h = x
    for l in range(L):
        z = h @ net.weights[l].T + net.biases[l]
        zs.append(z)
        if l != L - 1:
            h = act(z)
            acts.append(h)
    n = x.shape[0]
    out = np.empty((n, param_count(net)))
    # canonical slice offsets per layer
    offsets = []
    pos = 0
    for W, b in zip(net.weights, net.biases):
        offsets.append((pos, pos + W.size, pos + W.size + b.size))
        pos += W.size + b.size
    delta = upstream
    for l in range(L - 1, -1, -1):
        w_lo, b_lo, b_hi = offsets[l]
        gw = np.einsum("bi,bj->bij", delta, acts[l])
        out[:, w_lo:b_lo] = gw.reshape(n, -1)
        out[:, b_lo:b_hi] = delta
        if l > 0:
            delta = (delta @ net.weights[l]) * deriv(zs[l - 1])
    return out


@dataclass(frozen=True)
class SpectralNormResult:
    value: float
    converged: bool
    iterations: int


def spectral_norm_result(A: np.ndarray) -> SpectralNormResult:
    """Largest singular value by power iteration on the Gram matrix.

    Deterministic all-ones start, absolute tolerance 1e-10 on the
    eigenvalue estimate, at most 10_000 iterations.  The matrix is
    pre-normalized by its largest entry so the tolerance is scale-free,
    which keeps |||cA||| = |c| |||A||| to high accuracy.  Non-convergence
    returns the best iterate with ``converged=False`` rather than raising.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ShapeMismatch("matrix entries must be finite")
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        return SpectralNormResult(0.0, True, 0)
    An = A / scale
    # Power-iterate on the smaller Gram matrix for stability and speed.
    B = An.T @ An if An.shape[1] <= An.shape[0] else An @ An.T
    n = B.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for it in range(1, SPECTRAL_MAX_ITER + 1):
        w = B @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return SpectralNormResult(0.0, True, it)
        v = w / norm_w
        lam_new = float(v @ (B @ v))
        if abs(lam_new - lam) <= SPECTRAL_TOL:
            return SpectralNormResult(scale * float(np.sqrt(max(lam_new, 0.0))), True, it)
        lam = lam_new
    return SpectralNormResult(scale * float(np.sqrt(max(lam, 0.0))), False, SPECTRAL_MAX_ITER)


def spectral_norm(A: np.ndarray) -> float:
    return spectral_norm_result(A).value


def layer_product_lipschitz(net: FeedforwardNet, from_layer: int) -> float:
    """Product Lipschitz bound of the layers strictly after ``from_layer``.

    Returns Lip(phi)^(L - from_layer) * prod_{l > from_layer} |||W^(l)|||.
    ``from_layer = 0`` bounds the whole network; ``from_layer = 1`` excludes
    the first layer (the form used by the per-lag stability coefficients).
    """
    L = net.n_layers
    if not 0 <= from_layer <= L:
        raise ShapeMismatch(f"from_layer must be in [0, {L}], got {from_layer}")
    out = net.activation.lipschitz_constant ** (L - from_layer)
    for l in range(from_layer, L):
        out *= spectral_norm(net.weights[l])
    return out


def first_layer_block_norms(net: FeedforwardNet, p: int, d: int) -> np.ndarray:
    """Spectral norm of each d-column block of the first layer's weights.

    Block i covers columns (i-1)d .. id-1, i.e. the lag-i input slot.
    """
    W1 = net.weights[0]
    if net.input_width != d * p:
        raise ShapeMismatch(f"input width {net.input_width} != d*p = {d * p}")
    return np.array([spectral_norm(W1[:, i * d : (i + 1) * d]) for i in range(p)])


def project_layer_caps(net: FeedforwardNet, cap: float) -> FeedforwardNet:
    """Rescale layers so the product of spectral norms is at most ``cap``.

    Each layer with |||W||| above cap^(1/L) is shrunk onto that radius;
    biases are untouched.  A network already inside the set is returned
    unchanged (same object), which makes the projection idempotent bitwise.
    """
    if cap <= 0:
        raise ShapeMismatch(f"cap must be positive, got {cap}")
    L = net.n_layers
    per_layer = cap ** (1.0 / L)
    new_weights = []
    changed = False
    for W in net.weights:
        norm = spectral_norm(W)
        # ulp-scale slack keeps the projection idempotent in floating point
        if norm > per_layer * (1.0 + 1e-12):
            new_weights.append(W * (per_layer / norm))
            changed = True
        else:
            new_weights.append(W)
    if not changed:
        return net
    return FeedforwardNet(net.widths, new_weights, net.biases, net.activation)
