"""Regime-gated objective and mini-batch SGD training of expert networks.

The objective averages, over observed steps, the loss between the state and
the active expert's prediction; only the active expert receives gradient.
Training is deterministic given (initial model, data, config): epoch
shuffles come from a keyed substream of the config seed and batch sums are
fixed-order matrix products.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DomainError, NonFiniteLoss, ShapeMismatch
from .model import (
    CharmeModel,
    ExpertSpec,
    FeedforwardNet,
    LossKind,
    LossSpec,
    VolatilityKind,
    VolatilitySpec,
)
from .nets import backward_batch, flatten_params, spectral_norm
from .simulate import Trajectory, lagged_inputs


class InitKind(enum.Enum):
    UNIFORM = "Uniform"
    PROVIDED = "Provided"


@dataclass(frozen=True)
class InitSpec:
    """Either draw every trainable parameter from U(-delta, delta), or keep
    the initial model's parameters as provided."""

    kind: InitKind
    delta: float = 0.05

    @staticmethod
    def uniform(delta: float = 0.05) -> "InitSpec":
        return InitSpec(InitKind.UNIFORM, float(delta))

    @staticmethod
    def provided() -> "InitSpec":
        return InitSpec(InitKind.PROVIDED)


@dataclass(frozen=True)
class FitConfig:
    """SGD hyperparameters.

    The step size at update j (counted from 0 across epochs) is
    lr0 / (1 + decay * j).  When ``lipschitz_cap`` is set, every expert's
    autoregressive network is projected onto the layer-norm cap after each
    update.
    """

    epochs: int
    batch_size: int
    lr0: float
    decay: float = 0.0
    seed: int = 0
    lipschitz_cap: float | None = None
    init: InitSpec = InitSpec.uniform(0.05)

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 < 0:
            raise DomainError(f"lr0 must be >= 0, got {self.lr0}")
        if self.decay < 0:
            raise DomainError(f"decay must be >= 0, got {self.decay}")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Trained parameters plus optimizer metadata.

    ``theta_hat`` holds one canonical parameter vector per expert's
    autoregressive network; ``lambda_hat`` the volatility vectors when those
    were trained.  ``model`` is the fitted model ready for prediction.
    """

    theta_hat: list
    lambda_hat: list | None
    loss_trace: np.ndarray
    final_loss: float
    iterations: int
    projected: bool
    model: CharmeModel


class _NetParams:
    """Mutable working copy of one network's parameters."""

    __slots__ = ("net", "weights", "biases")

    def __init__(self, net: FeedforwardNet):
        self.net = net
        self.weights = [W.copy() for W in net.weights]
        self.biases = [b.copy() for b in net.biases]

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        act = self.net.activation.apply
        h = x
        last = len(self.weights) - 1
        for l in range(last):
            h = act(h @ self.weights[l].T + self.biases[l])
        return h @ self.weights[last].T + self.biases[last]

    def as_net(self) -> FeedforwardNet:
        return FeedforwardNet(self.net.widths, self.weights, self.biases, self.net.activation)

    def draw_uniform(self, delta: float, gen: np.random.Generator) -> None:
        for l in range(len(self.weights)):
            self.weights[l] = gen.uniform(-delta, delta, size=self.weights[l].shape)
            self.biases[l] = gen.uniform(-delta, delta, size=self.biases[l].shape)

    def apply_cap(self, cap: float) -> None:
        per_layer = cap ** (1.0 / len(self.weights))
        for l, W in enumerate(self.weights):
            norm = spectral_norm(W)
            if norm > per_layer * (1.0 + 1e-12):
                self.weights[l] = W * (per_layer / norm)

    def clamp_volatility_feasible(self, floor: float) -> None:
        # keep the positive-output construction intact while training
        np.maximum(self.weights[-1], 0.0, out=self.weights[-1])
        np.maximum(self.biases[-1], floor, out=self.biases[-1])


def _check_data(model: CharmeModel, data: Trajectory) -> None:
    if data.d != model.d or data.p != model.p:
        raise ShapeMismatch(
            f"data carries (d={data.d}, p={data.p}) but model has (d={model.d}, p={model.p})"
        )
    if data.regimes.shape != (data.n,):
        raise ShapeMismatch("regime labels must cover every observed step")
    if data.n > 0 and (data.regimes.min() < 1 or data.regimes.max() > model.K):
        raise ShapeMismatch(f"regime labels must lie in 1..{model.K}")


def _loss_rows(loss: LossSpec, x: np.ndarray, fitted: np.ndarray, vol, floor: float):
    """Vector of per-row losses; x and fitted have shape (B, d)."""
    gap = np.linalg.norm(x - fitted, axis=1)
    if loss.kind is LossKind.QUADRATIC:
        return gap**2
    av = np.abs(vol)
    if np.any(av < floor) or np.any(av == 0.0):
        raise DomainError("volatility fell below its floor inside the objective")
    return gap**loss.gamma / av**loss.gamma


def qn_loss(model: CharmeModel, data: Trajectory, loss: LossSpec) -> float:
    """Average regime-gated loss over the observed window."""
    _check_data(model, data)
    lagged = lagged_inputs(data)
    regimes0 = data.regimes - 1
    total = 0.0
    for k, expert in enumerate(model.experts):
        rows = np.flatnonzero(regimes0 == k)
        if rows.size == 0:
            continue
        fitted = _NetParams(expert.f).forward_batch(lagged[rows])
        if loss.kind is LossKind.QUADRATIC:
            vol, floor = 1.0, 0.0
        elif expert.g.kind is VolatilityKind.CONSTANT_ONE:
            vol, floor = np.ones(rows.size), 0.0
        else:
            vol = _NetParams(expert.g.net).forward_batch(lagged[rows])[:, 0]
            floor = expert.g.floor
        total += float(_loss_rows(loss, data.x[rows], fitted, vol, floor).sum())
    return total / data.n


def _quadratic_upstream(x, fitted):
    return -2.0 * (x - fitted)


def _normpow_upstreams(x, fitted, vol, gamma, floor):
    """Row-wise d(loss)/d(fitted) and d(loss)/d(vol)."""
    gapvec = x - fitted
    gap = np.linalg.norm(gapvec, axis=1)
    av = np.abs(vol)
    if np.any(av < floor) or np.any(av == 0.0):
        raise DomainError("volatility fell below its floor inside the gradient")
    nz = gap > 0.0
    scale = np.zeros_like(gap)
    scale[nz] = gamma * gap[nz] ** (gamma - 2.0) / av[nz] ** gamma
    d_fitted = -scale[:, None] * gapvec
    d_vol = np.zeros_like(gap)
    d_vol[nz] = -gamma * gap[nz] ** gamma * np.sign(vol[nz]) / av[nz] ** (gamma + 1.0)
    return d_fitted, d_vol


def sgd_fit(
    init_model: CharmeModel, data: Trajectory, loss: LossSpec, cfg: FitConfig
) -> FitResult:
    """Mini-batch SGD on the regime-gated objective.

    Each epoch shuffles time indices (seeded) and walks consecutive
    mini-batches; a batch's gradient is the batch mean of per-sample
    gradients, routed only to the experts active in the batch.  Volatility
    networks are trained only under the normalized-power loss, and their
    last layer is clamped back onto the positive-output construction after
    every update.
    """
    _check_data(init_model, data)
    lagged = lagged_inputs(data)
    X = data.x
    regimes0 = data.regimes - 1
    n = data.n
    train_vol = loss.kind is LossKind.NORMALIZED_POWER

    f_params = [_NetParams(e.f) for e in init_model.experts]
    g_params = [
        _NetParams(e.g.net)
        if (train_vol and e.g.kind is VolatilityKind.NETWORK)
        else None
        for e in init_model.experts
    ]
    floors = [
        e.g.floor if e.g.kind is VolatilityKind.NETWORK else 0.0 for e in init_model.experts
    ]

    if cfg.init.kind is InitKind.UNIFORM:
        init_gen = rng.stream(cfg.seed, "init")
        for k in range(init_model.K):
            f_params[k].draw_uniform(cfg.init.delta, init_gen)
            if g_params[k] is not None:
                g_params[k].draw_uniform(cfg.init.delta, init_gen)
    for k in range(init_model.K):
        if g_params[k] is not None:
            g_params[k].clamp_volatility_feasible(floors[k])

    def current_model() -> CharmeModel:
        experts = []
        for k, e in enumerate(init_model.experts):
            f_net = f_params[k].as_net()
            if e.g.kind is VolatilityKind.CONSTANT_ONE:
                g_spec = VolatilitySpec.constant_one()
            elif g_params[k] is not None:
                g_spec = VolatilitySpec.network(g_params[k].as_net(), e.g.floor)
            else:
                g_spec = e.g
            experts.append(ExpertSpec(f=f_net, g=g_spec))
        return CharmeModel(
            init_model.d, init_model.p, init_model.K, init_model.pi, experts, init_model.innovation
        )

    shuffle_gen = rng.stream(cfg.seed, "shuffle")
    trace: list = []
    j = 0
    for _epoch in range(cfg.epochs):
        perm = shuffle_gen.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            lr = cfg.lr0 / (1.0 + cfg.decay * j)
            j += 1
            if lr == 0.0:
                continue
            scale = lr / batch.size
            batch_regimes = regimes0[batch]
            for k in np.unique(batch_regimes):
                rows = batch[batch_regimes == k]
                xb = lagged[rows]
                fitted = f_params[k].forward_batch(xb)
                if loss.kind is LossKind.QUADRATIC:
                    upstream = _quadratic_upstream(X[rows], fitted)
                else:
                    gp = g_params[k]
                    vol = (
                        gp.forward_batch(xb)[:, 0] if gp is not None else np.ones(rows.size)
                    )
                    upstream, d_vol = _normpow_upstreams(
                        X[rows], fitted, vol, loss.gamma, floors[k]
                    )
                fp = f_params[k]
                w_grads, b_grads = backward_batch(
                    fp.weights, fp.biases, fp.net.activation, xb, upstream
                )
                for l in range(len(fp.weights)):
                    fp.weights[l] -= scale * w_grads[l]
                    fp.biases[l] -= scale * b_grads[l]
                if cfg.lipschitz_cap is not None:
                    fp.apply_cap(cfg.lipschitz_cap)
                if train_vol and g_params[k] is not None:
                    gp = g_params[k]
                    vw_grads, vb_grads = backward_batch(
                        gp.weights, gp.biases, gp.net.activation, xb, d_vol[:, None]
                    )
                    for l in range(len(gp.weights)):
                        gp.weights[l] -= scale * vw_grads[l]
                        gp.biases[l] -= scale * vb_grads[l]
                    gp.clamp_volatility_feasible(floors[k])
        epoch_loss = qn_loss(current_model(), data, loss)
        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(
                f"objective became non-finite at epoch {_epoch + 1}", loss_trace=trace
            )
        trace.append(epoch_loss)

    fitted_model = current_model()
    return FitResult(
        theta_hat=[flatten_params(e.f) for e in fitted_model.experts],
        lambda_hat=(
            [
                flatten_params(e.g.net) if e.g.kind is VolatilityKind.NETWORK else None
                for e in fitted_model.experts
            ]
            if train_vol
            else None
        ),
        loss_trace=np.array(trace),
        final_loss=float(trace[-1]),
        iterations=j,
        projected=cfg.lipschitz_cap is not None,
        model=fitted_model,
    )


def fitted_and_residuals(model: CharmeModel, data: Trajectory) -> tuple:
    """Active-expert predictions and residuals X_t - X_hat_t, both (n, d)."""
    _check_data(model, data)
    lagged = lagged_inputs(data)
    regimes0 = data.regimes - 1
    x_hat = np.zeros_like(data.x)
    for k, expert in enumerate(model.experts):
        rows = np.flatnonzero(regimes0 == k)
        if rows.size:
            x_hat[rows] = _NetParams(expert.f).forward_batch(lagged[rows])
    return x_hat, data.x - x_hat
