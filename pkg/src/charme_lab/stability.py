"""Stationarity certificates and pathwise approximation bounds.

For a K-regime mixture whose experts carry per-lag Lipschitz coefficients
``a_i`` (autoregression) and ``b_i`` (volatility), the contraction
coefficient

    C(m) = 2^(m-1) * sum_k pi_k * (A_k^m + B_k^m * E||eps_0||^m)

with A_k = sum_i a_i, B_k = sum_i b_i certifies, when C(1) < 1, that a
strictly stationary weakly dependent solution exists; the dependence decay
and the truncation/approximation gaps then obey the explicit formulas below.

For network experts the per-lag coefficients are certified upper bounds
(product-of-layer-norms estimates), not exact Lipschitz moduli: exact
computation is NP-hard already for two layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import CharmeModel, VolatilityKind
from .nets import first_layer_block_norms, forward, layer_product_lipschitz


@dataclass(frozen=True)
class ExpertLipschitz:
    """Per-lag Lipschitz upper bounds of one expert; A/B are their sums."""

    A: float
    B: float
    lag_coeffs_a: np.ndarray
    lag_coeffs_b: np.ndarray


def expert_lipschitz(model: CharmeModel) -> list:
    """Certified per-lag Lipschitz bounds for every expert.

    a_i = (product bound of layers 2..L) * Lip(phi) * |||W1 block i|||;
    b_i analogously from the volatility network, identically zero for
    constant volatility.
    """
    out = []
    for expert in model.experts:
        f = expert.f
        tail = layer_product_lipschitz(f, 1) * f.activation.lipschitz_constant
        a = tail * first_layer_block_norms(f, model.p, model.d)
        if expert.g.kind is VolatilityKind.CONSTANT_ONE:
            b = np.zeros(model.p)
        else:
            gnet = expert.g.net
            gtail = layer_product_lipschitz(gnet, 1) * gnet.activation.lipschitz_constant
            b = gtail * first_layer_block_norms(gnet, model.p, model.d)
        out.append(
            ExpertLipschitz(A=float(a.sum()), B=float(b.sum()), lag_coeffs_a=a, lag_coeffs_b=b)
        )
    return out


def cm_from_coefficients(pi, A, B, eps_moment_m: float, m: float) -> float:
    """C(m) from explicit aggregates: 2^(m-1) sum_k pi_k (A_k^m + B_k^m E||eps||^m)."""
    pi = np.asarray(pi, dtype=float)
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return float(2.0 ** (m - 1.0) * np.sum(pi * (A**m + B**m * eps_moment_m)))


def compute_Cm(model: CharmeModel, m: float, lipschitz: list | None = None) -> float:
    """Contraction coefficient C(m) of the model, using certified A_k, B_k."""
    if m < 1:
        raise DomainError(f"C(m) requires m >= 1, got {m}")
    lip = expert_lipschitz(model) if lipschitz is None else lipschitz
    eps_m = model.innovation.norm_moment_m(m, model.d)
    return cm_from_coefficients(
        model.pi, [e.A for e in lip], [e.B for e in lip], eps_m, m
    )


def _vol_at_zero(expert, dp: int) -> float:
    if expert.g.kind is VolatilityKind.CONSTANT_ONE:
        return 1.0
    return float(forward(expert.g.net, np.zeros(dp))[0])


def mu1(model: CharmeModel) -> float:
    """Level term sum_k pi_k (||f_k(0)|| + |g_k(0)| E||eps_0||)."""
    eps1 = model.innovation.norm_moment(1, model.d)
    dp = model.d * model.p
    zero = np.zeros(dp)
    total = 0.0
    for pik, expert in zip(model.pi, model.experts):
        f0 = float(np.linalg.norm(forward(expert.f, zero)))
        g0 = abs(_vol_at_zero(expert, dp))
        total += pik * (f0 + g0 * eps1)
    return float(total)


def lag_coefficients(model: CharmeModel, lipschitz: list | None = None) -> np.ndarray:
    """Mixture-level per-lag coefficients c_i = sum_k pi_k (a_i + b_i E||eps_0||)."""
    lip = expert_lipschitz(model) if lipschitz is None else lipschitz
    eps1 = model.innovation.norm_moment(1, model.d)
    ci = np.zeros(model.p)
    for pik, e in zip(model.pi, lip):
        ci += pik * (e.lag_coeffs_a + e.lag_coeffs_b * eps1)
    return ci


def tau_bound_finite(mu1_value: float, c: float, p: int, r: int) -> float:
    """Dependence-decay bound 2 mu1 (1-c)^-1 c^(r/p) for lag order p, r >= p."""
    if c >= 1:
        raise DomainError(f"bound requires c < 1, got {c}")
    if r < p:
        raise DomainError(f"bound valid for r >= p, got r = {r} < p = {p}")
    return 2.0 * mu1_value / (1.0 - c) * c ** (r / p)


def tau_bound_infinite(mu1_value: float, c: float, ci, r: int) -> float:
    """Dependence-decay bound with explicit per-lag tail.

    Evaluates 2 mu1 (1-c)^-1 min_{1 <= s <= r} [ c^(r/s) + (1-c)^-1 sum_{i>s} c_i ]
    by exhaustive scan over integer s.  ``ci`` holds coefficients c_1..c_q;
    the tail beyond its support is zero.
    """
    if c >= 1:
        raise DomainError(f"bound requires c < 1, got {c}")
    if r < 1:
        raise DomainError(f"r must be >= 1, got {r}")
    ci = np.asarray(ci, dtype=float)
    # tail[s] = sum of c_i for i > s (1-based lags)
    suffix = np.concatenate([np.cumsum(ci[::-1])[::-1], [0.0]])
    best = np.inf
    for s in range(1, r + 1):
        tail = suffix[s] if s < len(suffix) else 0.0
        val = c ** (r / s) + tail / (1.0 - c)
        if val < best:
            best = val
    return 2.0 * mu1_value / (1.0 - c) * best


def truncation_bound(mu1_value: float, c: float, ci_tail_sum: float) -> float:
    """Mean gap bound mu1 (1-c)^-2 * tail between a model and its lag truncation."""
    if c >= 1:
        raise DomainError(f"bound requires c < 1, got {c}")
    return mu1_value / (1.0 - c) ** 2 * ci_tail_sum


def approximation_bound(eps_k, pi, eps_moment1: float, Cm: float, m: float) -> float:
    """Mean gap bound (1 + E||eps||) sum_k pi_k eps_k / (1 - C(m)^(1/m)).

    ``eps_k`` are per-expert sup-norm approximation accuracies of the
    substituted expert functions.
    """
    if Cm >= 1:
        raise DomainError(f"bound requires C(m) < 1, got {Cm}")
    eps_k = np.asarray(eps_k, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return float((1.0 + eps_moment1) * np.sum(pi * eps_k) / (1.0 - Cm ** (1.0 / m)))


@dataclass(frozen=True)
class StabilityReport:
    """Certificate bundle: per-expert bounds, contraction values, decay curve."""

    per_expert: list
    c: float
    Cm: dict
    mu1: float
    ci: np.ndarray
    certified_stationary: bool
    tau_curve: list

    def to_obj(self) -> dict:
        return {
            "per_expert": [
                {
                    "A_k": e.A,
                    "B_k": e.B,
                    "lag_coeffs_a": e.lag_coeffs_a.tolist(),
                    "lag_coeffs_b": e.lag_coeffs_b.tolist(),
                }
                for e in self.per_expert
            ],
            "c": self.c,
            "Cm": {str(m): v for m, v in self.Cm.items()},
            "mu1": self.mu1,
            "ci": self.ci.tolist(),
            "certified_stationary": self.certified_stationary,
            "tau_curve": [[int(r), float(v)] for r, v in self.tau_curve],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_obj(), indent=indent, sort_keys=True)


def stability_report(
    model: CharmeModel, m_values=(1.0, 2.0), r_max: int | None = None
) -> StabilityReport:
    """Assemble the full stability certificate for a model.

    The decay curve is evaluated at r = p .. r_max (default 10 p) with the
    finite-lag formula; it is only populated when c < 1.
    """
    lip = expert_lipschitz(model)
    cm_map = {float(m): compute_Cm(model, m, lipschitz=lip) for m in m_values}
    c = cm_map.get(1.0)
    if c is None:
        c = compute_Cm(model, 1.0, lipschitz=lip)
    mu = mu1(model)
    ci = lag_coefficients(model, lipschitz=lip)
    certified = c < 1.0
    r_hi = 10 * model.p if r_max is None else r_max
    curve = []
    if certified:
        curve = [(r, tau_bound_finite(mu, c, model.p, r)) for r in range(model.p, r_hi + 1)]
    return StabilityReport(
        per_expert=lip,
        c=float(c),
        Cm=cm_map,
        mu1=mu,
        ci=ci,
        certified_stationary=certified,
        tau_curve=curve,
    )
