"""Plug-in curvature/score matrices, sandwich covariance, and the Monte
Carlo harness for the scaled estimation error.

Both plug-in matrices are block-diagonal over experts in the canonical
parameter ordering: the curvature block is the regime-gated average of
Jacobian Gram matrices, the score block the average of residual-contracted
gradient outer products.  The scaled error rows eta = sqrt(n) (theta_hat -
theta0) are collected over independent seeded replicates.
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .errors import CharmeLabError, DomainError, ShapeMismatch, SingularBlock
from .estimate import FitConfig, InitSpec, LossSpec, sgd_fit
from .linalg import spd_condition_number, spd_inverse
from .model import CharmeModel, ExpertSpec, VolatilityKind
from .nets import flatten_params, forward, per_sample_gradients, replace_params
from .simulate import Trajectory, default_burn_in, lagged_inputs, simulate

logger = logging.getLogger("charme_lab.asymptotics")

CONDITION_LIMIT = 1e12
MAX_FAILURE_FRACTION = 0.2
DEFAULT_INIT_JITTER = 0.01

THREADS_ENV_VAR = "CHARME_LAB_THREADS"


class ExcessiveFailures(CharmeLabError):
    """More than the tolerated fraction of Monte Carlo replicates failed."""


@dataclass(frozen=True, eq=False)
class BlockDiagMatrix:
    """Block-diagonal matrix stored as its diagonal blocks."""

    blocks: tuple

    @property
    def block_sizes(self) -> list:
        return [b.shape[0] for b in self.blocks]

    @property
    def dim(self) -> int:
        return sum(self.block_sizes)

    def full(self) -> np.ndarray:
        """Dense matrix; off-diagonal blocks are exact zeros."""
        D = self.dim
        out = np.zeros((D, D))
        pos = 0
        for b in self.blocks:
            k = b.shape[0]
            out[pos : pos + k, pos : pos + k] = b
            pos += k
        return out


def _require_constant_volatility(model: CharmeModel) -> None:
    if any(e.g.kind is not VolatilityKind.CONSTANT_ONE for e in model.experts):
        raise DomainError("plug-in curvature/score matrices require unit volatility experts")


def _per_expert_rows(model: CharmeModel, data: Trajectory):
    lagged = lagged_inputs(data)
    regimes0 = data.regimes - 1
    for k, expert in enumerate(model.experts):
        rows = np.flatnonzero(regimes0 == k)
        yield expert, rows, lagged


def estimate_V(model: CharmeModel, data: Trajectory) -> BlockDiagMatrix:
    """Average Jacobian Gram matrix per expert: block_k = (1/n) sum_t 1{R_t=k} J_t' J_t."""
    _require_constant_volatility(model)
    n = data.n
    blocks = []
    for expert, rows, lagged in _per_expert_rows(model, data):
        P = sum(W.size + b.size for W, b in zip(expert.f.weights, expert.f.biases))
        block = np.zeros((P, P))
        if rows.size:
            d = expert.f.output_width
            for j in range(d):
                U = np.zeros((rows.size, d))
                U[:, j] = 1.0
                G = per_sample_gradients(expert.f, lagged[rows], U)
                block += G.T @ G
        blocks.append(block / n)
    return BlockDiagMatrix(tuple(blocks))


def estimate_W(model: CharmeModel, data: Trajectory) -> BlockDiagMatrix:
    """Residual-contracted score outer products per expert.

    block_k = (1/n) sum_t 1{R_t=k} (r_t' J_t)' (r_t' J_t) with
    r_t = X_t - f_k(lags_t).
    """
    _require_constant_volatility(model)
    n = data.n
    blocks = []
    for expert, rows, lagged in _per_expert_rows(model, data):
        P = sum(W.size + b.size for W, b in zip(expert.f.weights, expert.f.biases))
        if rows.size:
            xb = lagged[rows]
            fitted = forward(expert.f, xb)
            resid = data.x[rows] - fitted
            G = per_sample_gradients(expert.f, xb, resid)
            block = (G.T @ G) / n
        else:
            block = np.zeros((P, P))
        blocks.append(block)
    return BlockDiagMatrix(tuple(blocks))


def sandwich_covariance(V: BlockDiagMatrix, W: BlockDiagMatrix) -> BlockDiagMatrix:
    """Blockwise V^-1 W V^-1 via Cholesky with jitter escalation."""
    if V.block_sizes != W.block_sizes:
        raise ShapeMismatch(f"block sizes differ: {V.block_sizes} vs {W.block_sizes}")
    out = []
    for k, (vb, wb) in enumerate(zip(V.blocks, W.blocks)):
        cond = spd_condition_number(vb)
        if not cond < CONDITION_LIMIT:
            raise SingularBlock(
                f"curvature block {k + 1} has condition number {cond:.3e} (limit 1e12)"
            )
        vinv = spd_inverse(vb, SingularBlock, label=f"curvature block {k + 1}")
        out.append(vinv @ wb @ vinv)
    return BlockDiagMatrix(tuple(out))


@dataclass(frozen=True, eq=False)
class AsymptoticsReport:
    """V, W, the sandwich, and per-block condition numbers."""

    V: BlockDiagMatrix
    W: BlockDiagMatrix
    sandwich: BlockDiagMatrix
    condition_numbers: list

    def to_obj(self) -> dict:
        return {
            "block_sizes": self.V.block_sizes,
            "V": [b.tolist() for b in self.V.blocks],
            "W": [b.tolist() for b in self.W.blocks],
            "sandwich": [b.tolist() for b in self.sandwich.blocks],
            "condition_numbers": [
                c if np.isfinite(c) else None for c in self.condition_numbers
            ],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_obj(), indent=indent, sort_keys=True)


def asymptotics_report(model: CharmeModel, data: Trajectory) -> AsymptoticsReport:
    """Plug-in V, W and sandwich at the parameters carried by ``model``."""
    V = estimate_V(model, data)
    W = estimate_W(model, data)
    sandwich = sandwich_covariance(V, W)
    return AsymptoticsReport(
        V=V,
        W=W,
        sandwich=sandwich,
        condition_numbers=[spd_condition_number(b) for b in V.blocks],
    )


@dataclass(frozen=True, eq=False)
class EtaSample:
    """Monte Carlo matrix of scaled estimation errors.

    Row t is sqrt(n) (theta_hat(t) - theta0) in canonical order, experts
    concatenated.  Failed replicates are dropped and logged, never imputed.
    """

    eta: np.ndarray
    n: int
    N: int
    seeds: np.ndarray
    failed_replicates: list

    @property
    def dim(self) -> int:
        return self.eta.shape[1]


def theta_vector(model: CharmeModel) -> np.ndarray:
    """Concatenated canonical parameter vector of all autoregressive nets."""
    return np.concatenate([flatten_params(e.f) for e in model.experts])


def _jittered_model(model: CharmeModel, jitter: float, gen: np.random.Generator) -> CharmeModel:
    experts = []
    for e in model.experts:
        vec = flatten_params(e.f)
        vec = vec + gen.uniform(-jitter, jitter, size=vec.shape)
        experts.append(ExpertSpec(f=replace_params(e.f, vec), g=e.g))
    return CharmeModel(model.d, model.p, model.K, model.pi, experts, model.innovation)


def _replicate(args):
    (model0, theta0, t, master_seed, n, burn_in, fit_cfg, loss, jitter) = args
    sim_seed = rng.derive_seed(master_seed, "mc-sim", t)
    traj = simulate(model0, n, burn_in=burn_in, seed=sim_seed, retain_innovations=False)
    if traj.overflow_at is not None or traj.n < n:
        return t, sim_seed, None
    init_model = _jittered_model(model0, jitter, rng.stream(master_seed, "mc-init", t))
    cfg = replace(fit_cfg, seed=rng.derive_seed(master_seed, "mc-sgd", t), init=InitSpec.provided())
    try:
        fit = sgd_fit(init_model, traj, loss, cfg)
    except CharmeLabError:
        return t, sim_seed, None
    row = np.sqrt(n) * (theta_vector(fit.model) - theta0)
    if not np.all(np.isfinite(row)):
        return t, sim_seed, None
    return t, sim_seed, row


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit arg, else the thread-cap env variable, else all cores."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def monte_carlo_eta(
    model0: CharmeModel,
    N: int,
    n: int,
    fit_cfg: FitConfig,
    master_seed: int,
    burn_in: int | None = None,
    loss: LossSpec | None = None,
    jitter: float = DEFAULT_INIT_JITTER,
    workers: int | None = None,
) -> EtaSample:
    """Simulate-and-refit N times; collect sqrt(n)-scaled parameter errors.

    Each replicate draws its own keyed sub-seeds (simulation, init jitter,
    SGD shuffling), so results are independent of scheduling; fits start at
    the true parameters plus a small uniform jitter.  Replicates whose
    trajectory overflows or whose fit fails are dropped; more than 20%
    failures aborts the run.
    """
    _require_constant_volatility(model0)
    if N < 1:
        raise DomainError(f"N must be >= 1, got {N}")
    from .stability import compute_Cm  # deferred: stability imports nets only

    c = compute_Cm(model0, 1.0)
    if c >= 1.0:
        logger.warning("model is not certified stationary (c = %.6f >= 1)", c)
    if burn_in is None:
        burn_in = default_burn_in(model0.p)
    if loss is None:
        loss = LossSpec.quadratic()
    theta0 = theta_vector(model0)
    tasks = [
        (model0, theta0, t, master_seed, n, burn_in, fit_cfg, loss, jitter)
        for t in range(1, N + 1)
    ]
    n_workers = min(resolve_workers(workers), N)
    if n_workers > 1:
        try:
            with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as pool:
                results = list(pool.map(_replicate, tasks, chunksize=max(1, N // (4 * n_workers))))
        except (OSError, PermissionError) as exc:  # pool unavailable in some sandboxes
            logger.warning("process pool unavailable (%s); running serially", exc)
            results = [_replicate(task) for task in tasks]
    else:
        results = [_replicate(task) for task in tasks]

    rows, seeds, failed = [], [], []
    for t, sim_seed, row in results:
        if row is None:
            failed.append(t)
            logger.warning("replicate %d (seed %d) failed and was dropped", t, sim_seed)
        else:
            rows.append(row)
            seeds.append(sim_seed)
    if len(failed) > MAX_FAILURE_FRACTION * N:
        raise ExcessiveFailures(
            f"{len(failed)} of {N} replicates failed (tolerance {MAX_FAILURE_FRACTION:.0%})"
        )
    eta = np.vstack(rows) if rows else np.zeros((0, theta0.size))
    return EtaSample(
        eta=eta, n=int(n), N=len(rows), seeds=np.array(seeds, dtype=np.int64), failed_replicates=failed
    )
