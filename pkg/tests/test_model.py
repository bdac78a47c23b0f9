import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import charme_lab as cl
from charme_lab.errors import DomainError, MomentUndefined, ShapeMismatch
from charme_lab.model import Smoothness, model_from_obj, model_to_obj

from conftest import linear_ar1_model, two_point_ar1_model


def test_activation_registry_invariants():
    for tag, act in cl.ACTIVATIONS.items():
        assert act.lipschitz_constant == 1.0
        expected = Smoothness.NON_SMOOTH if tag == "ReLU" else Smoothness.THREE_TIMES_DIFFERENTIABLE
        assert act.smoothness is expected
    assert set(cl.ACTIVATIONS) == {"ReLU", "Sigmoid", "Softplus", "Tanh", "Identity"}


def test_net_shape_validation():
    with pytest.raises(ShapeMismatch):
        cl.FeedforwardNet((2, 3), [np.zeros((2, 2))], [np.zeros(3)], cl.RELU)
    with pytest.raises(ShapeMismatch):
        cl.FeedforwardNet((2, 3), [np.zeros((3, 2))], [np.zeros(2)], cl.RELU)
    with pytest.raises(ShapeMismatch):
        cl.FeedforwardNet((2,), [], [], cl.RELU)


def test_validate_identity_case_is_valid():
    model = linear_ar1_model(a=0.5)
    assert cl.validate_model(model) == []


def test_validate_pi_not_normalized():
    net1 = cl.FeedforwardNet((1, 1), [np.array([[0.2]])], [np.array([0.0])], cl.RELU)
    net2 = cl.FeedforwardNet((1, 1), [np.array([[0.1]])], [np.array([0.0])], cl.RELU)
    model = cl.CharmeModel(
        1, 1, 2, [0.5, 0.4],
        [cl.ExpertSpec(n, cl.VolatilitySpec.constant_one()) for n in (net1, net2)],
        cl.InnovationSpec.standard_gaussian(),
    )
    codes = [v.code for v in cl.validate_model(model)]
    assert codes == ["PiNotNormalized"]


def test_validate_volatility_floor():
    f = cl.FeedforwardNet((1, 1), [np.array([[0.3]])], [np.array([0.0])], cl.RELU)
    g = cl.FeedforwardNet((1, 1), [np.array([[0.0]])], [np.array([0.0])], cl.RELU)
    model = cl.CharmeModel(
        1, 1, 1, [1.0],
        [cl.ExpertSpec(f, cl.VolatilitySpec.network(g, floor=0.1))],
        cl.InnovationSpec.standard_gaussian(),
    )
    codes = [v.code for v in cl.validate_model(model)]
    assert "VolatilityFloor" in codes


def test_validate_volatility_sign_and_activation():
    f = cl.FeedforwardNet((1, 1), [np.array([[0.3]])], [np.array([0.0])], cl.RELU)
    g_bad_w = cl.FeedforwardNet((1, 1), [np.array([[-0.2]])], [np.array([0.5])], cl.RELU)
    g_bad_act = cl.FeedforwardNet((1, 1), [np.array([[0.2]])], [np.array([0.5])], cl.TANH)
    for g, code in ((g_bad_w, "VolatilityWeightSign"), (g_bad_act, "VolatilityActivation")):
        model = cl.CharmeModel(
            1, 1, 1, [1.0],
            [cl.ExpertSpec(f, cl.VolatilitySpec.network(g, floor=0.1))],
            cl.InnovationSpec.standard_gaussian(),
        )
        assert code in [v.code for v in cl.validate_model(model)]


def test_validate_flags_two_point_innovation():
    model = two_point_ar1_model()
    codes = [v.code for v in cl.validate_model(model)]
    assert codes == ["InnovationNotZeroMean"]


def test_validate_expert_widths():
    f = cl.FeedforwardNet((3, 1), [np.zeros((1, 3))], [np.zeros(1)], cl.RELU)
    model = cl.CharmeModel(
        1, 2, 1, [1.0],
        [cl.ExpertSpec(f, cl.VolatilitySpec.constant_one())],
        cl.InnovationSpec.standard_gaussian(),
    )
    assert "ExpertInputWidth" in [v.code for v in cl.validate_model(model)]


def test_validate_is_pure():
    model = two_point_ar1_model()
    assert cl.validate_model(model) == cl.validate_model(model)


def test_loss_quadratic_examples():
    q = cl.LossSpec.quadratic()
    assert cl.loss_value(q, np.array([1.0, 0.0]), np.array([0.0, 0.0])) == 1.0
    assert cl.loss_value(q, np.array([2.0]), np.array([2.0])) == 0.0


def test_loss_normalized_power_examples():
    npow = cl.LossSpec.normalized_power(2.0)
    assert cl.loss_value(npow, np.array([2.0]), np.array([0.0]), vol=2.0) == 1.0
    assert cl.loss_value(npow, np.array([3.0]), np.array([3.0]), vol=2.0) == 0.0
    with pytest.raises(DomainError):
        cl.loss_value(npow, np.array([1.0]), np.array([0.0]), vol=0.05, floor=0.1)
    with pytest.raises(DomainError):
        cl.loss_value(npow, np.array([1.0]), np.array([0.0]), vol=0.0)


@given(
    x=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=4),
    fitted=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=4),
    vol=st.floats(0.5, 100.0),
    gamma=st.floats(0.5, 4.0),
)
def test_loss_nonnegative(x, fitted, vol, gamma):
    k = min(len(x), len(fitted))
    x, fitted = np.array(x[:k]), np.array(fitted[:k])
    assert cl.loss_value(cl.LossSpec.quadratic(), x, fitted) >= 0.0
    assert cl.loss_value(cl.LossSpec.normalized_power(gamma), x, fitted, vol=vol) >= 0.0


@given(u=st.lists(st.floats(-1e8, 1e8), min_size=1, max_size=4), vol=st.floats(0.5, 10.0))
def test_loss_zero_at_match(u, vol):
    u = np.array(u)
    assert cl.loss_value(cl.LossSpec.quadratic(), u, u, vol=vol) == 0.0
    assert cl.loss_value(cl.LossSpec.normalized_power(1.5), u, u, vol=vol) == 0.0


def test_gaussian_norm_moments_scalar():
    spec = cl.InnovationSpec.standard_gaussian()
    assert spec.norm_moment(2, 1) == pytest.approx(1.0, abs=1e-14)
    assert spec.norm_moment(1, 1) == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-14)
    scaled = cl.InnovationSpec.scaled_gaussian(3.0)
    assert scaled.norm_moment(2, 1) == pytest.approx(3.0, rel=1e-14)


@pytest.mark.parametrize("d", [1, 3])
@pytest.mark.parametrize("m", [1.0, 2.0, 3.0])
def test_gaussian_norm_moments_match_monte_carlo(d, m):
    gen = np.random.Generator(np.random.Philox(key=np.array([55, d], dtype=np.uint64)))
    draws = gen.standard_normal((1_000_000, d))
    norms = np.linalg.norm(draws, axis=1)
    mc = float(np.mean(norms**m)) ** (1.0 / m)
    spec = cl.InnovationSpec.standard_gaussian()
    assert spec.norm_moment(m, d) == pytest.approx(mc, rel=0.01)


def test_two_point_moments():
    spec = cl.InnovationSpec.two_point_half()
    for m in (1.0, 2.0, 5.0):
        assert spec.norm_moment(m, 1) == pytest.approx(0.5 ** (1.0 / m), rel=1e-14)
    with pytest.raises(MomentUndefined):
        spec.norm_moment(2, 2)


def test_moment_requires_m_at_least_one():
    with pytest.raises(MomentUndefined):
        cl.InnovationSpec.standard_gaussian().norm_moment(0.5, 1)


def test_normalized_pi():
    out = cl.normalized_pi([2.0, 2.0])
    assert np.allclose(out, [0.5, 0.5])
    with pytest.raises(DomainError):
        cl.normalized_pi([0.0, 0.0])


def test_json_round_trip_exact():
    model = two_point_ar1_model()
    text = cl.model_to_json(model)
    back = cl.model_from_json(text)
    assert back.d == model.d and back.p == model.p and back.K == model.K
    assert np.array_equal(back.pi, model.pi)
    for e0, e1 in zip(model.experts, back.experts):
        for W0, W1 in zip(e0.f.weights, e1.f.weights):
            assert np.array_equal(W0, W1)
        assert e1.g.kind == e0.g.kind and e1.g.floor == e0.g.floor
    assert back.innovation == model.innovation


def test_json_field_names():
    obj = model_to_obj(linear_ar1_model())
    assert set(obj) == {"d", "p", "K", "pi", "experts", "innovation"}
    assert set(obj["experts"][0]) == {"f", "g"}
    assert set(obj["experts"][0]["f"]) == {"widths", "weights", "biases", "activation"}
    # weights serialize row-major: entry [i][j] is row i, column j
    net = cl.FeedforwardNet((2, 1), [np.array([[1.0, 2.0]])], [np.array([0.0])], cl.RELU)
    model = cl.CharmeModel(
        1, 2, 1, [1.0],
        [cl.ExpertSpec(net, cl.VolatilitySpec.constant_one())],
        cl.InnovationSpec.standard_gaussian(),
    )
    enc = model_to_obj(model)
    assert enc["experts"][0]["f"]["weights"][0] == [[1.0, 2.0]]
    assert model_from_obj(json.loads(json.dumps(enc))).experts[0].f.weights[0][0, 1] == 2.0


def test_model_arrays_immutable():
    model = linear_ar1_model()
    with pytest.raises(ValueError):
        model.pi[0] = 0.3
    with pytest.raises(ValueError):
        model.experts[0].f.weights[0][0, 0] = 9.0
