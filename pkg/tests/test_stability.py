import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import charme_lab as cl
from charme_lab.errors import DomainError
from charme_lab.stability import cm_from_coefficients

from conftest import linear_ar1_model, random_net, small_mixture_model
from oracles import jacobi_spectral_norm, tau_infinite_rescan


def _gen(seed):
    return np.random.Generator(np.random.Philox(key=np.array([seed, 7], dtype=np.uint64)))


# ------------------------------------------------------------ expert bounds


def test_expert_lipschitz_linear_scalar():
    model = linear_ar1_model(a=0.5)
    lip = cl.expert_lipschitz(model)
    assert lip[0].A == 0.5
    assert lip[0].B == 0.0
    assert np.array_equal(lip[0].lag_coeffs_a, [0.5])


def test_expert_lipschitz_zero_weights():
    net = cl.FeedforwardNet((2, 3, 1), [np.zeros((3, 2)), np.zeros((1, 3))],
                            [np.zeros(3), np.zeros(1)], cl.RELU)
    model = cl.CharmeModel(1, 2, 1, [1.0],
                           [cl.ExpertSpec(net, cl.VolatilitySpec.constant_one())],
                           cl.InnovationSpec.standard_gaussian())
    assert cl.expert_lipschitz(model)[0].A == 0.0


def test_expert_lipschitz_matches_svd_oracle():
    gen = _gen(1)
    p, d = 3, 1
    net = random_net(gen, (3, 5, 4, 1), cl.RELU)
    model = cl.CharmeModel(d, p, 1, [1.0],
                           [cl.ExpertSpec(net, cl.VolatilitySpec.constant_one())],
                           cl.InnovationSpec.standard_gaussian())
    tail = 1.0
    for W in net.weights[1:]:
        tail *= jacobi_spectral_norm(W)
    blocks = [jacobi_spectral_norm(net.weights[0][:, i : i + 1]) for i in range(3)]
    expected = tail * sum(blocks)
    assert cl.expert_lipschitz(model)[0].A == pytest.approx(expected, abs=1e-8)


def test_expert_lipschitz_volatility_network():
    f = cl.FeedforwardNet((1, 1), [np.array([[0.5]])], [np.array([0.0])], cl.IDENTITY)
    g = cl.FeedforwardNet((1, 1), [np.array([[0.2]])], [np.array([0.3])], cl.SOFTPLUS)
    model = cl.CharmeModel(1, 1, 1, [1.0],
                           [cl.ExpertSpec(f, cl.VolatilitySpec.network(g, floor=0.3))],
                           cl.InnovationSpec.standard_gaussian())
    lip = cl.expert_lipschitz(model)
    assert lip[0].B == pytest.approx(0.2, abs=1e-12)


# ------------------------------------------------------------ contraction coefficient


def test_cm_trivial_examples():
    assert cm_from_coefficients([1.0], [0.5], [0.0], 1.0, 1.0) == 0.5
    assert cm_from_coefficients([0.5, 0.5], [0.4, 0.6], [0.0, 0.0], 1.0, 1.0) == 0.5


def test_cm_hand_composite():
    # K=1, A=0.5, B=0.2, m=2, unit second moment: 2 (0.25 + 0.04) = 0.58
    assert cm_from_coefficients([1.0], [0.5], [0.2], 1.0, 2.0) == pytest.approx(0.58, abs=1e-12)


def test_cm_model_path_matches_formula():
    model = linear_ar1_model(a=0.5)
    assert cl.compute_Cm(model, 1.0) == pytest.approx(0.5, abs=1e-12)
    assert cl.compute_Cm(model, 2.0) == pytest.approx(2 * 0.25, abs=1e-12)


def test_cm_doubling_scaling():
    """Doubling every A with B = 0 multiplies C(m) by 2^m, exactly."""
    pi = [0.3, 0.7]
    A = np.array([0.25, 0.5])
    for m in (1.0, 2.0, 3.0):
        base = cm_from_coefficients(pi, A, [0.0, 0.0], 1.3, m)
        doubled = cm_from_coefficients(pi, 2.0 * A, [0.0, 0.0], 1.3, m)
        assert doubled == 2.0**m * base


def test_cm_rejects_small_m():
    with pytest.raises(DomainError):
        cl.compute_Cm(linear_ar1_model(), 0.5)


# ------------------------------------------------------------ decay bounds


def test_tau_finite_examples():
    assert cl.tau_bound_finite(1.0, 0.5, 1, 2) == pytest.approx(1.0, abs=1e-15)
    assert cl.tau_bound_finite(0.0, 0.5, 1, 5) == 0.0
    vals = [cl.tau_bound_finite(1.0, 0.5, 2, r) for r in range(2, 30)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_tau_finite_domain():
    with pytest.raises(DomainError):
        cl.tau_bound_finite(1.0, 1.0, 1, 2)
    with pytest.raises(DomainError):
        cl.tau_bound_finite(1.0, 0.5, 4, 2)


def test_tau_infinite_zero_tail_reduces_to_geometric():
    # with no tail the scan is minimized at s = 1
    val = cl.tau_bound_infinite(1.0, 0.5, [0.0, 0.0], r=6)
    assert val == pytest.approx(2.0 / 0.5 * 0.5**6, abs=1e-15)


def test_tau_infinite_single_coefficient():
    # any s >= 1 kills a tail supported on lag 1 only
    with_c1 = cl.tau_bound_infinite(1.0, 0.5, [0.7], r=5)
    no_tail = cl.tau_bound_infinite(1.0, 0.5, [0.0], r=5)
    assert with_c1 == no_tail


def test_tau_infinite_matches_rescan_oracle():
    ci = [2.0**-i for i in range(1, 12)]
    for r in (1, 3, 10):
        assert cl.tau_bound_infinite(1.0, 0.5, ci, r) == pytest.approx(
            tau_infinite_rescan(1.0, 0.5, ci, r), rel=1e-14
        )


def test_tau_infinite_monotone_in_r():
    """Larger r never increases the bound, over 100 random sequences."""
    gen = _gen(2)
    for _ in range(100):
        c = float(gen.uniform(0.05, 0.95))
        mu = float(gen.uniform(0.0, 3.0))
        ci = gen.uniform(0.0, 0.4, size=int(gen.integers(1, 10)))
        vals = [cl.tau_bound_infinite(mu, c, ci, r) for r in range(1, 12)]
        for a, b in zip(vals, vals[1:]):
            assert b <= a + 1e-15


def test_truncation_bound_examples():
    assert cl.truncation_bound(1.0, 0.5, 0.0) == 0.0
    assert cl.truncation_bound(1.0, 0.5, 0.1) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(DomainError):
        cl.truncation_bound(1.0, 1.2, 0.1)


def test_approximation_bound_examples():
    assert cl.approximation_bound([0.0], [1.0], 1.0, 0.5, 1.0) == 0.0
    assert cl.approximation_bound([0.1], [1.0], 1.0, 0.5, 1.0) == pytest.approx(0.4, abs=1e-15)
    with pytest.raises(DomainError):
        cl.approximation_bound([0.1], [1.0], 1.0, 1.0, 1.0)


@given(st.floats(0.01, 0.95), st.floats(0.0, 5.0), st.integers(1, 6), st.integers(0, 40))
def test_tau_finite_nonnegative(c, mu, p, extra):
    assert cl.tau_bound_finite(mu, c, p, p + extra) >= 0.0


# ------------------------------------------------------------ report assembly


def test_stability_report_fields_and_consistency():
    model = small_mixture_model(seed=5, p=4, K=2, widths=(6, 1), targets=(0.5, 0.6))
    report = cl.stability_report(model, m_values=(1.0, 2.0))
    for e in report.per_expert:
        assert e.A == pytest.approx(float(e.lag_coeffs_a.sum()), abs=1e-12)
        assert e.B == pytest.approx(float(e.lag_coeffs_b.sum()), abs=1e-12)
    assert report.certified_stationary == (report.c < 1.0)
    assert report.c == pytest.approx(0.5 * 0.5 + 0.5 * 0.6, abs=1e-9)
    assert report.ci.shape == (4,)
    rs = [r for r, _ in report.tau_curve]
    assert rs[0] == model.p and rs[-1] == 10 * model.p
    obj = json.loads(report.to_json())
    assert obj["certified_stationary"] is True
    assert len(obj["per_expert"]) == 2


def test_mu1_linear_model_with_bias():
    model = linear_ar1_model(a=0.5, bias=2.0)
    # f(0) = 2, g constant 1: mu1 = 2 + E|eps|
    expected = 2.0 + math.sqrt(2.0 / math.pi)
    assert cl.mu1(model) == pytest.approx(expected, rel=1e-12)


def test_lag_coefficients_mixture():
    model = small_mixture_model(seed=9, p=3, K=2, widths=(5, 1), targets=(0.4, 0.8))
    lip = cl.expert_lipschitz(model)
    ci = cl.lag_coefficients(model)
    manual = 0.5 * lip[0].lag_coeffs_a + 0.5 * lip[1].lag_coeffs_a
    assert np.allclose(ci, manual, atol=1e-12)
    assert ci.sum() == pytest.approx(report_free_c(model), abs=1e-9)


def report_free_c(model):
    lip = cl.expert_lipschitz(model)
    return float(sum(pik * e.A for pik, e in zip(model.pi, lip)))


# ------------------------------------------------------------ pathwise domination (smoke scale)


def test_coupled_shift_domination_smoke():
    """Mean coupled gap under a constant output shift stays below the bound."""
    model = small_mixture_model(seed=11, p=4, K=2, widths=(6, 1), targets=(0.5, 0.6))
    eps_shift = 0.1
    shifted_experts = []
    for e in model.experts:
        biases = list(e.f.biases[:-1]) + [e.f.biases[-1] + eps_shift]
        shifted_experts.append(
            cl.ExpertSpec(cl.FeedforwardNet(e.f.widths, e.f.weights, biases, e.f.activation), e.g)
        )
    shifted = cl.CharmeModel(model.d, model.p, model.K, model.pi, shifted_experts, model.innovation)
    c = cl.compute_Cm(model, 1.0)
    eps1 = model.innovation.norm_moment(1, model.d)
    bound = cl.approximation_bound([eps_shift] * model.K, model.pi, eps1, c, 1.0)
    hits = 0
    trials = 20
    for seed in range(trials):
        ta, tb = cl.coupled_simulate(model, shifted, 2000, burn_in=300, seed=seed)
        gap = float(np.linalg.norm(ta.x - tb.x, axis=1).mean())
        hits += gap <= bound
    assert hits == trials


def test_truncation_domination_smoke():
    """Zeroing the deep lag blocks keeps the coupled gap under the bound."""
    model = small_mixture_model(seed=13, p=8, K=2, widths=(6, 1), targets=(0.55, 0.65))
    d = model.d
    trunc_experts = []
    for e in model.experts:
        W0 = e.f.weights[0].copy()
        W0[:, 4 * d :] = 0.0
        trunc_experts.append(
            cl.ExpertSpec(
                cl.FeedforwardNet(e.f.widths, [W0] + list(e.f.weights[1:]), e.f.biases, e.f.activation),
                e.g,
            )
        )
    truncated = cl.CharmeModel(model.d, model.p, model.K, model.pi, trunc_experts, model.innovation)
    c = cl.compute_Cm(model, 1.0)
    ci = cl.lag_coefficients(model)
    bound = cl.truncation_bound(cl.mu1(model), c, float(ci[4:].sum()))
    hits = 0
    trials = 20
    for seed in range(trials):
        ta, tb = cl.coupled_simulate(model, truncated, 2000, burn_in=300, seed=100 + seed)
        gap = float(np.linalg.norm(ta.x - tb.x, axis=1).mean())
        hits += gap <= bound
    assert hits == trials
