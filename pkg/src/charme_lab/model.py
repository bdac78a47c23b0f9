"""Model data types, validity rules, and loss functions.

A model couples K experts, each an autoregressive network paired with a
volatility function, with an iid regime process over ``{1..K}`` and an iid
innovation sequence.  All types are immutable after construction and safe to
share across workers.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, MomentUndefined, ShapeMismatch

PI_TOLERANCE = 1e-12


class Smoothness(enum.Enum):
    NON_SMOOTH = "NonSmooth"
    THREE_TIMES_DIFFERENTIABLE = "ThreeTimesDifferentiable"


@dataclass(frozen=True)
class Activation:
    """Scalar activation map applied componentwise between layers.

    ``lipschitz_constant`` is the modulus used by every stability estimate;
    it is 1 for all supported tags.
    """

    tag: str
    lipschitz_constant: float
    smoothness: Smoothness

    def apply(self, z: np.ndarray) -> np.ndarray:
        return _ACT_FN[self.tag](z)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        return _ACT_DERIV[self.tag](z)

    @property
    def positive_valued(self) -> bool:
        """True when the range is contained in [0, inf)."""
        return self.tag in ("ReLU", "Sigmoid", "Softplus")


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_ACT_FN = {
    "ReLU": lambda z: np.maximum(z, 0.0),
    "Sigmoid": lambda z: _sigmoid(np.asarray(z, dtype=float)),
    "Softplus": lambda z: np.logaddexp(0.0, z),
    "Tanh": np.tanh,
    "Identity": lambda z: z,
}

# ReLU derivative at exactly 0 is pinned to 0.
_ACT_DERIV = {
    "ReLU": lambda z: np.where(z > 0.0, 1.0, 0.0),
    "Sigmoid": lambda z: _sigmoid(np.asarray(z, dtype=float))
    * (1.0 - _sigmoid(np.asarray(z, dtype=float))),
    "Softplus": lambda z: _sigmoid(np.asarray(z, dtype=float)),
    "Tanh": lambda z: 1.0 - np.tanh(z) ** 2,
    "Identity": lambda z: np.ones_like(z, dtype=float),
}

RELU = Activation("ReLU", 1.0, Smoothness.NON_SMOOTH)
SIGMOID = Activation("Sigmoid", 1.0, Smoothness.THREE_TIMES_DIFFERENTIABLE)
SOFTPLUS = Activation("Softplus", 1.0, Smoothness.THREE_TIMES_DIFFERENTIABLE)
TANH = Activation("Tanh", 1.0, Smoothness.THREE_TIMES_DIFFERENTIABLE)
IDENTITY = Activation("Identity", 1.0, Smoothness.THREE_TIMES_DIFFERENTIABLE)

ACTIVATIONS = {a.tag: a for a in (RELU, SIGMOID, SOFTPLUS, TANH, IDENTITY)}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FeedforwardNet:
    """Fully connected network: L affine layers, activation between them.

    ``widths`` is (N_0, ..., N_L); ``weights[l]`` has shape (N_{l+1}, N_l)
    and ``biases[l]`` length N_{l+1}.  The last layer is affine (no
    activation).  Shape congruence is enforced at construction; entry
    finiteness is a model-validation concern, not a constructor one.
    """

    widths: tuple
    weights: tuple
    biases: tuple
    activation: Activation

    def __init__(self, widths, weights, biases, activation):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ShapeMismatch("a network needs at least one layer (len(widths) >= 2)")
        if any(w < 1 for w in widths):
            raise ShapeMismatch(f"layer widths must be positive, got {widths}")
        L = len(widths) - 1
        if len(weights) != L or len(biases) != L:
            raise ShapeMismatch(
                f"expected {L} weight matrices and bias vectors, "
                f"got {len(weights)} and {len(biases)}"
            )
        ws, bs = [], []
        for l in range(L):
            W = np.asarray(weights[l], dtype=float)
            b = np.asarray(biases[l], dtype=float)
            if W.shape != (widths[l + 1], widths[l]):
                raise ShapeMismatch(
                    f"layer {l + 1} weights have shape {W.shape}, "
                    f"expected {(widths[l + 1], widths[l])}"
                )
            if b.shape != (widths[l + 1],):
                raise ShapeMismatch(
                    f"layer {l + 1} bias has shape {b.shape}, expected ({widths[l + 1]},)"
                )
            ws.append(_frozen(W))
            bs.append(_frozen(b))
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))
        object.__setattr__(self, "activation", activation)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]


class VolatilityKind(enum.Enum):
    CONSTANT_ONE = "ConstantOne"
    NETWORK = "Network"


@dataclass(frozen=True, eq=False)
class VolatilitySpec:
    """Volatility function: identically 1, or a network with a positive floor.

    The network form keeps its output above ``floor`` by construction when
    the last-layer weights are nonnegative, the last-layer bias is at least
    ``floor``, and the activation is positive-valued; ``validate_model``
    reports any breach.
    """

    kind: VolatilityKind
    net: FeedforwardNet | None = None
    floor: float | None = None

    @staticmethod
    def constant_one() -> "VolatilitySpec":
        return VolatilitySpec(VolatilityKind.CONSTANT_ONE)

    @staticmethod
    def network(net: FeedforwardNet, floor: float) -> "VolatilitySpec":
        return VolatilitySpec(VolatilityKind.NETWORK, net=net, floor=float(floor))


@dataclass(frozen=True, eq=False)
class ExpertSpec:
    """One regime's autoregressive network ``f`` and volatility ``g``."""

    f: FeedforwardNet
    g: VolatilitySpec


class InnovationFamily(enum.Enum):
    STANDARD_GAUSSIAN = "StandardGaussian"
    SCALED_GAUSSIAN = "ScaledGaussian"
    TWO_POINT_HALF = "TwoPointHalf"


@dataclass(frozen=True)
class InnovationSpec:
    """Innovation distribution with closed-form norm moments.

    ``TwoPointHalf`` takes values {0, 1} with probability 1/2 each.  It is
    not zero-mean and exists only as a simulation fixture; ``validate_model``
    flags any model carrying it.
    """

    family: InnovationFamily
    sigma: float = 1.0

    @staticmethod
    def standard_gaussian() -> "InnovationSpec":
        return InnovationSpec(InnovationFamily.STANDARD_GAUSSIAN)

    @staticmethod
    def scaled_gaussian(sigma: float) -> "InnovationSpec":
        if sigma <= 0:
            raise DomainError("sigma must be positive")
        return InnovationSpec(InnovationFamily.SCALED_GAUSSIAN, sigma=float(sigma))

    @staticmethod
    def two_point_half() -> "InnovationSpec":
        return InnovationSpec(InnovationFamily.TWO_POINT_HALF)

    def norm_moment(self, m: float, d: int) -> float:
        """Return ||eps||_m = (E ||eps_0||^m)^(1/m) for state dimension d.

        For Gaussian families ||eps_0|| follows sigma times a chi
        distribution with d degrees of freedom, whose m-th raw moment is
        2^(m/2) Gamma((d+m)/2) / Gamma(d/2).
        """
        if m < 1:
            raise MomentUndefined(f"norm moments require m >= 1, got {m}")
        if d < 1:
            raise DomainError("state dimension must be positive")
        fam = self.family
        if fam in (InnovationFamily.STANDARD_GAUSSIAN, InnovationFamily.SCALED_GAUSSIAN):
            logm = (m / 2.0) * math.log(2.0) + gammaln((d + m) / 2.0) - gammaln(d / 2.0)
            return self.sigma * math.exp(logm / m)
        if fam is InnovationFamily.TWO_POINT_HALF:
            if d != 1:
                raise MomentUndefined("TwoPointHalf is a scalar fixture (d = 1 only)")
            return 0.5 ** (1.0 / m)
        raise MomentUndefined(f"unknown innovation family {fam!r}")

    def norm_moment_m(self, m: float, d: int) -> float:
        """Return E ||eps_0||^m (the m-th power of ``norm_moment``)."""
        return self.norm_moment(m, d) ** m


@dataclass(frozen=True, eq=False)
class CharmeModel:
    """K-regime mixture of AR experts over R^d with lag order p.

    ``pi`` is the regime probability vector; expert k drives the recursion
    whenever the regime process selects k.
    """

    d: int
    p: int
    K: int
    pi: np.ndarray
    experts: tuple
    innovation: InnovationSpec

    def __init__(self, d, p, K, pi, experts, innovation):
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "K", int(K))
        object.__setattr__(self, "pi", _frozen(np.asarray(pi, dtype=float)))
        object.__setattr__(self, "experts", tuple(experts))
        object.__setattr__(self, "innovation", innovation)


def normalized_pi(pi) -> np.ndarray:
    """Return pi rescaled to sum to 1.  Never applied implicitly anywhere."""
    pi = np.asarray(pi, dtype=float)
    total = pi.sum()
    if total <= 0:
        raise DomainError("probability vector must have positive sum")
    return pi / total


class LossKind(enum.Enum):
    QUADRATIC = "Quadratic"
    NORMALIZED_POWER = "NormalizedPower"


@dataclass(frozen=True)
class LossSpec:
    """Pointwise loss l(x, fitted, vol).

    Quadratic is ||x - fitted||^2 (vol ignored); NormalizedPower is
    ||x - fitted||^gamma / |vol|^gamma and requires the volatility floor.
    """

    kind: LossKind
    gamma: float = 2.0

    @staticmethod
    def quadratic() -> "LossSpec":
        return LossSpec(LossKind.QUADRATIC, 2.0)

    @staticmethod
    def normalized_power(gamma: float) -> "LossSpec":
        if gamma <= 0:
            raise DomainError("gamma must be positive")
        return LossSpec(LossKind.NORMALIZED_POWER, float(gamma))


def loss_value(loss: LossSpec, x, fitted, vol: float = 1.0, floor: float = 0.0) -> float:
    """Evaluate the loss at one observation.

    ``floor`` is the volatility floor in force (NormalizedPower only);
    |vol| below it is a domain violation.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    fitted = np.atleast_1d(np.asarray(fitted, dtype=float))
    if x.shape != fitted.shape:
        raise ShapeMismatch(f"x shape {x.shape} != fitted shape {fitted.shape}")
    gap = float(np.linalg.norm(x - fitted))
    if loss.kind is LossKind.QUADRATIC:
        return gap**2
    av = abs(float(vol))
    if av < floor or av == 0.0:
        raise DomainError(f"|vol| = {av} below the volatility floor {floor}")
    return gap**loss.gamma / av**loss.gamma


@dataclass(frozen=True)
class Violation:
    """One invariant breach: machine-readable code plus human detail."""

    code: str
    location: str
    detail: str


def _check_net_shapes(net: FeedforwardNet, where: str, out: list) -> None:
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            out.append(Violation("NonFiniteParam", where, f"layer {l + 1} has non-finite entries"))


def validate_model(model: CharmeModel) -> list:
    """Return every invariant violation; an empty list means the model is valid.

    Violations are data, not errors: the report is deterministic for a given
    model and simulation remains possible for invalid models (useful for
    non-stationary demonstrations).
    """
    out: list = []
    if model.d < 1:
        out.append(Violation("DimPositive", "model", f"d = {model.d}"))
    if model.p < 1:
        out.append(Violation("LagPositive", "model", f"p = {model.p}"))
    if model.K < 1:
        out.append(Violation("RegimeCountPositive", "model", f"K = {model.K}"))

    pi = model.pi
    if pi.shape != (model.K,):
        out.append(Violation("PiLength", "pi", f"len(pi) = {pi.shape} but K = {model.K}"))
    else:
        if np.any(pi < 0):
            out.append(Violation("PiNegative", "pi", f"pi = {pi.tolist()}"))
        if abs(float(pi.sum()) - 1.0) > PI_TOLERANCE:
            out.append(Violation("PiNotNormalized", "pi", f"sum(pi) = {float(pi.sum())!r}"))

    if len(model.experts) != model.K:
        out.append(
            Violation("ExpertCount", "experts", f"{len(model.experts)} experts but K = {model.K}")
        )

    dp = model.d * model.p
    for k, expert in enumerate(model.experts, start=1):
        where = f"expert[{k}].f"
        f = expert.f
        act = f.activation
        if act.lipschitz_constant != 1.0:
            out.append(Violation("ActivationLipschitz", where, f"Lip = {act.lipschitz_constant}"))
        expected = (
            Smoothness.NON_SMOOTH if act.tag == "ReLU" else Smoothness.THREE_TIMES_DIFFERENTIABLE
        )
        if act.smoothness is not expected:
            out.append(Violation("ActivationSmoothness", where, f"{act.tag}: {act.smoothness}"))
        if f.input_width != dp:
            out.append(Violation("ExpertInputWidth", where, f"{f.input_width} != d*p = {dp}"))
        if f.output_width != model.d:
            out.append(Violation("ExpertOutputWidth", where, f"{f.output_width} != d = {model.d}"))
        _check_net_shapes(f, where, out)

        g = expert.g
        gwhere = f"expert[{k}].g"
        if g.kind is VolatilityKind.CONSTANT_ONE:
            if g.net is not None:
                out.append(Violation("VolatilityNetPresent", gwhere, "ConstantOne carries a net"))
        elif g.kind is VolatilityKind.NETWORK:
            if g.net is None:
                out.append(Violation("VolatilityNetMissing", gwhere, "Network kind without a net"))
                continue
            if g.floor is None or not (g.floor > 0):
                out.append(Violation("VolatilityFloorMissing", gwhere, f"floor = {g.floor}"))
            net = g.net
            if net.input_width != dp:
                out.append(
                    Violation("VolatilityInputWidth", gwhere, f"{net.input_width} != d*p = {dp}")
                )
            if net.output_width != 1:
                out.append(Violation("VolatilityOutputWidth", gwhere, f"{net.output_width} != 1"))
            if not net.activation.positive_valued:
                out.append(
                    Violation("VolatilityActivation", gwhere, f"{net.activation.tag} takes negative values")
                )
            if np.any(net.weights[-1] < 0):
                out.append(Violation("VolatilityWeightSign", gwhere, "negative last-layer weight"))
            if g.floor is not None and np.any(net.biases[-1] < g.floor):
                out.append(
                    Violation(
                        "VolatilityFloor",
                        gwhere,
                        f"last-layer bias {net.biases[-1].tolist()} below floor {g.floor}",
                    )
                )
            _check_net_shapes(net, gwhere, out)

    if model.innovation.family is InnovationFamily.TWO_POINT_HALF:
        out.append(
            Violation(
                "InnovationNotZeroMean",
                "innovation",
                "TwoPointHalf has mean 1/2; it is a simulation fixture only",
            )
        )
    return out


# ---------------------------------------------------------------------------
# JSON serialization.  Field names and layout are a wire contract:
# {d, p, K, pi, experts: [{f: {widths, weights, biases, activation}, g: {...}}],
#  innovation: {...}} with weights as row-major nested arrays.
# ---------------------------------------------------------------------------


def _net_to_obj(net: FeedforwardNet) -> dict:
    return {
        "widths": list(net.widths),
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "activation": net.activation.tag,
    }


def _net_from_obj(obj: dict) -> FeedforwardNet:
    tag = obj["activation"]
    if tag not in ACTIVATIONS:
        raise DomainError(f"unknown activation tag {tag!r}")
    return FeedforwardNet(obj["widths"], obj["weights"], obj["biases"], ACTIVATIONS[tag])


def _vol_to_obj(g: VolatilitySpec) -> dict:
    if g.kind is VolatilityKind.CONSTANT_ONE:
        return {"kind": "ConstantOne"}
    return {"kind": "Network", "net": _net_to_obj(g.net), "floor": g.floor}


def _vol_from_obj(obj: dict) -> VolatilitySpec:
    if obj["kind"] == "ConstantOne":
        return VolatilitySpec.constant_one()
    if obj["kind"] == "Network":
        return VolatilitySpec.network(_net_from_obj(obj["net"]), obj["floor"])
    raise DomainError(f"unknown volatility kind {obj['kind']!r}")


def _innovation_to_obj(spec: InnovationSpec) -> dict:
    obj = {"family": spec.family.value}
    if spec.family is InnovationFamily.SCALED_GAUSSIAN:
        obj["sigma"] = spec.sigma
    return obj


def _innovation_from_obj(obj: dict) -> InnovationSpec:
    fam = obj["family"]
    if fam == "StandardGaussian":
        return InnovationSpec.standard_gaussian()
    if fam == "ScaledGaussian":
        return InnovationSpec.scaled_gaussian(obj["sigma"])
    if fam == "TwoPointHalf":
        return InnovationSpec.two_point_half()
    raise DomainError(f"unknown innovation family {fam!r}")


def model_to_obj(model: CharmeModel) -> dict:
    return {
        "d": model.d,
        "p": model.p,
        "K": model.K,
        "pi": model.pi.tolist(),
        "experts": [{"f": _net_to_obj(e.f), "g": _vol_to_obj(e.g)} for e in model.experts],
        "innovation": _innovation_to_obj(model.innovation),
    }


def model_from_obj(obj: dict) -> CharmeModel:
    experts = [
        ExpertSpec(f=_net_from_obj(e["f"]), g=_vol_from_obj(e["g"])) for e in obj["experts"]
    ]
    return CharmeModel(
        d=obj["d"],
        p=obj["p"],
        K=obj["K"],
        pi=obj["pi"],
        experts=experts,
        innovation=_innovation_from_obj(obj["innovation"]),
    )


def model_to_json(model: CharmeModel, indent: int = 2) -> str:
    return json.dumps(model_to_obj(model), indent=indent, sort_keys=True)


def model_from_json(text: str) -> CharmeModel:
    return model_from_obj(json.loads(text))
