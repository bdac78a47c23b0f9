"""Seeded sample-path generation with regime labels, plus coupled simulation.

Regime draws and innovations come from separate counter-based substreams of
the trajectory seed, generated up front as exogenous blocks: the value
consumed at step t is a pure function of (seed, substream, t).  Two models
simulated with ``coupled_simulate`` therefore see identical randomness, and
replicates with distinct seeds never share a stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ModelMismatch
from .model import CharmeModel, InnovationFamily, InnovationSpec, VolatilityKind

#: default burn-in when the caller does not pass one: 1000 + 10 p
def default_burn_in(p: int) -> int:
    return 1000 + 10 * p


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A simulated window X_1..X_n with its p lagged predecessors.

    ``x`` holds X_1..X_n row-wise, ``pre`` the states X_{-p+1}..X_0 needed to
    form lag vectors for every t >= 1.  ``regimes`` holds the active regime
    (1-based) per step t; ``innovations`` the consumed noise when retained.
    ``overflow_at`` flags the first step whose state went non-finite, in
    which case the trajectory is truncated just before it.
    """

    x: np.ndarray
    pre: np.ndarray
    regimes: np.ndarray
    innovations: np.ndarray | None
    seed: int
    burn_in: int
    overflow_at: int | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.pre.shape[0]


def lagged_inputs(traj: Trajectory) -> np.ndarray:
    """Matrix of lag vectors: row t-1 is (X_{t-1}, ..., X_{t-p}) flattened."""
    n, p = traj.n, traj.p
    full = np.vstack([traj.pre, traj.x])
    idx = np.arange(n)[:, None] + (p - 1 - np.arange(p))[None, :]
    return full[idx].reshape(n, p * traj.d)


def draw_regimes(pi: np.ndarray, count: int, gen: np.random.Generator) -> np.ndarray:
    """Inverse-CDF regime draws (0-based); boundary ties go to the lower index."""
    cum = np.cumsum(np.asarray(pi, dtype=float))
    u = gen.random(count)
    return np.minimum(np.searchsorted(cum, u, side="left"), len(cum) - 1)


def draw_innovations(
    spec: InnovationSpec, count: int, d: int, gen: np.random.Generator
) -> np.ndarray:
    if spec.family is InnovationFamily.STANDARD_GAUSSIAN:
        return gen.standard_normal((count, d))
    if spec.family is InnovationFamily.SCALED_GAUSSIAN:
        return spec.sigma * gen.standard_normal((count, d))
    if spec.family is InnovationFamily.TWO_POINT_HALF:
        return (gen.random((count, d)) < 0.5).astype(float)
    raise ModelMismatch(f"cannot sample innovation family {spec.family!r}")


def _compiled_experts(model: CharmeModel):
    """Per-expert evaluation closures used by the recursion hot loop."""
    compiled = []
    for expert in model.experts:
        f = expert.f
        fw, fb, fact = list(f.weights), list(f.biases), f.activation.apply
        if expert.g.kind is VolatilityKind.CONSTANT_ONE:
            gw = gb = gact = None
        else:
            gnet = expert.g.net
            gw, gb, gact = list(gnet.weights), list(gnet.biases), gnet.activation.apply
        compiled.append((fw, fb, fact, gw, gb, gact))
    return compiled


def _eval_net(ws, bs, act, x):
    h = x
    last = len(ws) - 1
    for i in range(last):
        h = act(ws[i] @ h + bs[i])
    return ws[last] @ h + bs[last]


def _run_recursion(model, regimes0, eps, n, burn_in):
    """Drive one recursion; returns (x, pre, overflow_at)."""
    d, p = model.d, model.p
    total = burn_in + n
    hist = np.zeros((p + total, d))
    lag = np.zeros(p * d)
    compiled = _compiled_experts(model)
    isfinite = np.isfinite
    overflow_at = None
    steps_done = total
    for s in range(total):
        fw, fb, fact, gw, gb, gact = compiled[regimes0[s]]
        x_new = _eval_net(fw, fb, fact, lag)
        if gw is None:
            x_new = x_new + eps[s]
        else:
            x_new = x_new + float(_eval_net(gw, gb, gact, lag)[0]) * eps[s]
        if not isfinite(x_new).all():
            overflow_at = s + 1 - burn_in
            steps_done = s
            break
        hist[p + s] = x_new
        if d == 1:
            lag[1:] = lag[:-1]
            lag[0] = x_new[0]
        else:
            lag[d:] = lag[:-d]
            lag[:d] = x_new
    kept = max(0, min(n, steps_done - burn_in))
    x = hist[p + burn_in : p + burn_in + kept].copy()
    pre = hist[burn_in : burn_in + p].copy()
    return x, pre, overflow_at


def simulate(
    model: CharmeModel,
    n: int,
    burn_in: int | None = None,
    seed: int = 0,
    retain_innovations: bool = True,
) -> Trajectory:
    """Generate n post-burn-in states plus the p lagged states before them.

    The recursion starts from zeros, runs ``burn_in + n`` steps, and keeps
    the final window.  Identical seeds give bitwise-identical output.  A
    non-finite state truncates the trajectory and sets ``overflow_at``
    instead of raising, so non-contractive models stay explorable.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if burn_in is None:
        burn_in = default_burn_in(model.p)
    if burn_in < 0:
        raise ValueError(f"burn_in must be >= 0, got {burn_in}")
    total = burn_in + n
    regimes0 = draw_regimes(model.pi, total, rng.stream(seed, "regimes"))
    eps = draw_innovations(model.innovation, total, model.d, rng.stream(seed, "innovations"))
    x, pre, overflow_at = _run_recursion(model, regimes0, eps, n, burn_in)
    kept = x.shape[0]
    return Trajectory(
        x=x,
        pre=pre,
        regimes=(regimes0[burn_in : burn_in + kept] + 1).astype(np.int64),
        innovations=eps[burn_in : burn_in + kept].copy() if retain_innovations else None,
        seed=int(seed),
        burn_in=int(burn_in),
        overflow_at=overflow_at,
    )


def _require_shared_frame(a: CharmeModel, b: CharmeModel) -> None:
    if (a.d, a.p, a.K) != (b.d, b.p, b.K):
        raise ModelMismatch(
            f"(d, p, K) differ: {(a.d, a.p, a.K)} vs {(b.d, b.p, b.K)}"
        )
    if not np.array_equal(a.pi, b.pi):
        raise ModelMismatch("regime probabilities differ")
    if a.innovation != b.innovation:
        raise ModelMismatch("innovation specifications differ")


def coupled_simulate(
    model_a: CharmeModel,
    model_b: CharmeModel,
    n: int,
    burn_in: int | None = None,
    seed: int = 0,
    retain_innovations: bool = True,
) -> tuple:
    """Simulate both models on one shared draw of regimes and innovations.

    Each marginal trajectory is exactly what ``simulate`` would produce with
    the same seed; the pair measures pathwise gaps between nearby models.
    """
    _require_shared_frame(model_a, model_b)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if burn_in is None:
        burn_in = default_burn_in(model_a.p)
    total = burn_in + n
    regimes0 = draw_regimes(model_a.pi, total, rng.stream(seed, "regimes"))
    eps = draw_innovations(
        model_a.innovation, total, model_a.d, rng.stream(seed, "innovations")
    )
    out = []
    for model in (model_a, model_b):
        x, pre, overflow_at = _run_recursion(model, regimes0, eps, n, burn_in)
        kept = x.shape[0]
        out.append(
            Trajectory(
                x=x,
                pre=pre,
                regimes=(regimes0[burn_in : burn_in + kept] + 1).astype(np.int64),
                innovations=eps[burn_in : burn_in + kept].copy()
                if retain_innovations
                else None,
                seed=int(seed),
                burn_in=int(burn_in),
                overflow_at=overflow_at,
            )
        )
    return out[0], out[1]
