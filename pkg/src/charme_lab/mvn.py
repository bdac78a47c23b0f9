"""Multivariate normality diagnostics for Monte Carlo error samples.

Four diagnostics over an (N, q) sample matrix: multivariate skewness and
kurtosis (chi-square / standard normal references), a characteristic-
function distance with a log-normal null approximation, a combination of
per-coordinate Shapiro-Wilk statistics with an equivalent-degrees
correction, and chi-square Q-Q data for squared Mahalanobis distances.

Conventions pinned here and relied on by the tests: the skewness/kurtosis
and characteristic-function statistics standardize with the maximum-
likelihood covariance (divisor N); the Q-Q distances use the unbiased
covariance (divisor N-1), which makes the distances sum to q(N-1) exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .errors import IndexOutOfRange, SampleSizeOutOfRange, SingularCovariance
from .linalg import spd_inverse

SHAPIRO_WILK_MIN_N = 3
SHAPIRO_WILK_MAX_N = 2000


@dataclass(frozen=True)
class TestResult:
    stat: float
    p_value: float

    def to_obj(self) -> dict:
        return {"stat": self.stat, "p_value": self.p_value}


@dataclass(frozen=True, eq=False)
class NormalityReport:
    """All four diagnostics on one (sub)sample."""

    mardia_skewness: TestResult
    mardia_kurtosis: TestResult
    henze_zirkler: TestResult
    royston: TestResult
    subset: list
    n_samples: int
    dim: int

    def to_obj(self) -> dict:
        return {
            "mardia_skewness": self.mardia_skewness.to_obj(),
            "mardia_kurtosis": self.mardia_kurtosis.to_obj(),
            "henze_zirkler": self.henze_zirkler.to_obj(),
            "royston": self.royston.to_obj(),
            "subset": list(self.subset),
            "n_samples": self.n_samples,
            "dim": self.dim,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_obj(), indent=indent, sort_keys=True)


def _as_sample_matrix(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise SingularCovariance(f"expected an (N, q) sample matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise SingularCovariance("sample matrix contains non-finite entries")
    return x


def select_subset(eta, indices) -> np.ndarray:
    """Column slice of an error sample, coordinates numbered from 1.

    ``eta`` is an EtaSample or a plain (N, D) matrix; ``indices`` must be
    distinct and within 1..D.  Columns come back in the given order.
    """
    mat = eta.eta if hasattr(eta, "eta") else np.asarray(eta, dtype=float)
    D = mat.shape[1]
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise IndexOutOfRange(f"subset indices must be distinct, got {idx}")
    for i in idx:
        if not 1 <= i <= D:
            raise IndexOutOfRange(f"coordinate {i} outside 1..{D}")
    return mat[:, [i - 1 for i in idx]]


def _ml_standardized_gram(x: np.ndarray) -> tuple:
    """Gram matrix of centered data under the ML covariance metric.

    Returns (G, d2) where G_ij = (x_i - mean)' S^-1 (x_j - mean) with S the
    divisor-N covariance, and d2 its diagonal.
    """
    n = x.shape[0]
    centered = x - x.mean(axis=0)
    S = (centered.T @ centered) / n
    Sinv = spd_inverse(S, SingularCovariance, label="ML sample covariance")
    G = centered @ Sinv @ centered.T
    return G, np.diag(G).copy()


@dataclass(frozen=True)
class MardiaResult:
    skew_stat: float
    skew_p: float
    kurt_stat: float
    kurt_p: float


def mardia(samples) -> MardiaResult:
    """Multivariate skewness and kurtosis statistics.

    Skewness: N b1 / 6 against chi-square with q(q+1)(q+2)/6 degrees of
    freedom, upper tail.  Kurtosis: (b2 - q(q+2)) / sqrt(8 q(q+2) / N)
    against the standard normal, two-sided.
    """
    x = _as_sample_matrix(samples)
    n, q = x.shape
    if n <= q:
        raise SingularCovariance(f"need N > q, got N = {n}, q = {q}")
    G, d2 = _ml_standardized_gram(x)
    b1 = float(np.mean(G**3))
    b2 = float(np.mean(d2**2))
    skew_stat = n * b1 / 6.0
    skew_df = q * (q + 1) * (q + 2) / 6.0
    skew_p = float(chi2.sf(skew_stat, skew_df))
    kurt_stat = (b2 - q * (q + 2)) / math.sqrt(8.0 * q * (q + 2) / n)
    kurt_p = float(2.0 * norm.sf(abs(kurt_stat)))
    return MardiaResult(
        skew_stat=float(skew_stat), skew_p=skew_p, kurt_stat=float(kurt_stat), kurt_p=kurt_p
    )


def hz_beta(n: int, q: int) -> float:
    """Smoothing parameter ((N (2q+1) / 4)^(1/(q+2))) / sqrt(2), pinned."""
    return (n * (2 * q + 1) / 4.0) ** (1.0 / (q + 2)) / math.sqrt(2.0)


def henze_zirkler(samples) -> TestResult:
    """Characteristic-function distance with log-normal null approximation."""
    x = _as_sample_matrix(samples)
    n, q = x.shape
    if n <= q + 1:
        raise SingularCovariance(f"need N >= q + 2, got N = {n}, q = {q}")
    G, d2 = _ml_standardized_gram(x)
    b = hz_beta(n, q)
    b2_ = b * b
    # pairwise squared distances in the standardized metric
    D = d2[:, None] + d2[None, :] - 2.0 * G
    term1 = float(np.exp(-b2_ / 2.0 * D).sum()) / n
    term2 = 2.0 * (1.0 + b2_) ** (-q / 2.0) * float(np.exp(-b2_ / (2.0 * (1.0 + b2_)) * d2).sum())
    term3 = n * (1.0 + 2.0 * b2_) ** (-q / 2.0)
    stat = term1 - term2 + term3

    a = 1.0 + 2.0 * b2_
    wb = (1.0 + b2_) * (1.0 + 3.0 * b2_)
    mu = 1.0 - a ** (-q / 2.0) * (
        1.0 + q * b2_ / a + q * (q + 2) * b2_**2 / (2.0 * a**2)
    )
    si2 = (
        2.0 * (1.0 + 4.0 * b2_) ** (-q / 2.0)
        + 2.0 * a ** (-q)
        * (1.0 + 2.0 * q * b2_**2 / a**2 + 3.0 * q * (q + 2) * b2_**4 / (4.0 * a**4))
        - 4.0 * wb ** (-q / 2.0)
        * (1.0 + 3.0 * q * b2_**2 / (2.0 * wb) + q * (q + 2) * b2_**4 / (2.0 * wb**2))
    )
    pmu = math.log(math.sqrt(mu**4 / (si2 + mu**2)))
    psi = math.sqrt(math.log((si2 + mu**2) / mu**2))
    p = float(norm.sf((math.log(stat) - pmu) / psi))
    return TestResult(stat=float(stat), p_value=p)


def shapiro_wilk_w(values) -> float:
    """Shapiro-Wilk W statistic with the 1992 coefficient approximation.

    Valid for 3 <= N <= 2000; the order-statistic weights come from the
    normal quantiles m_i = Phi^-1((i - 3/8)/(N + 1/4)) with polynomial
    corrections to the extreme one (N <= 5) or two (N > 5) coefficients.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if not SHAPIRO_WILK_MIN_N <= n <= SHAPIRO_WILK_MAX_N:
        raise SampleSizeOutOfRange(f"Shapiro-Wilk needs 3 <= N <= 2000, got {n}")
    ssd = float(np.sum((x - x.mean()) ** 2))
    if ssd == 0.0:
        raise SingularCovariance("constant column: Shapiro-Wilk undefined")
    if n == 3:
        a = np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
        return float(np.dot(a, x) ** 2 / ssd)
    m = norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    mm = float(m @ m)
    c = m / math.sqrt(mm)
    u = 1.0 / math.sqrt(n)
    a_n = (
        c[-1]
        + 0.221157 * u
        - 0.147981 * u**2
        - 2.071190 * u**3
        + 4.434685 * u**4
        - 2.706056 * u**5
    )
    if n <= 5:
        phi = (mm - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n**2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = a_n, -a_n
    else:
        a_n1 = (
            c[-2]
            + 0.042981 * u
            - 0.293762 * u**2
            - 1.752461 * u**3
            + 5.682633 * u**4
            - 3.582633 * u**5
        )
        phi = (mm - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = a_n, -a_n
        a[-2], a[1] = a_n1, -a_n1
    return float(np.dot(a, x) ** 2 / ssd)


def _shapiro_z(w: float, n: int) -> float:
    """Transform W to an approximately standard normal deviate (large = bad)."""
    if n == 3:
        # exact upper-tail probability for the smallest sample size
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(max(p, 1e-15), 1.0 - 1e-15)
        return float(norm.isf(p))
    if n <= 11:
        g = -2.273 + 0.459 * n
        m = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        s = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
        return float((-math.log(g - math.log(1.0 - w)) - m) / s)
    y = math.log(n)
    m = -1.5861 - 0.31082 * y - 0.083751 * y**2 + 0.0038915 * y**3
    s = math.exp(-0.4803 - 0.082676 * y + 0.0030302 * y**2)
    return float((math.log(1.0 - w) - m) / s)


def royston(samples) -> TestResult:
    """Combined per-coordinate Shapiro-Wilk statistic with equivalent degrees.

    Each column's W is mapped to a normal deviate z_j, then to
    psi_j = (Phi^-1(Phi(-z_j)/2))^2; the statistic e * sum(psi) / q is
    referred to chi-square with e degrees of freedom, where e corrects for
    the average inter-coordinate correlation.
    """
    x = _as_sample_matrix(samples)
    n, q = x.shape
    if not SHAPIRO_WILK_MIN_N <= n <= SHAPIRO_WILK_MAX_N:
        raise SampleSizeOutOfRange(f"Royston needs 3 <= N <= 2000, got {n}")
    psi = np.empty(q)
    for j in range(q):
        w = shapiro_wilk_w(x[:, j])
        z = _shapiro_z(w, n)
        psi[j] = norm.ppf(norm.cdf(-z) / 2.0) ** 2
    if q == 1:
        e = 1.0
    else:
        sd = x.std(axis=0, ddof=1)
        if np.any(sd == 0.0):
            raise SingularCovariance("constant column: correlation matrix undefined")
        corr = np.corrcoef(x, rowvar=False)
        u = 0.715
        lam = 5.0
        v = 0.21364 + 0.015124 * math.log(n) ** 2 - 0.0018034 * math.log(n) ** 3
        nc = corr**lam * (1.0 - u * (1.0 - corr) ** u / v)
        total = float(nc.sum()) - q
        mean_c = total / (q**2 - q)
        e = q / (1.0 + (q - 1) * mean_c)
    stat = float(e * psi.sum() / q)
    p = float(chi2.sf(stat, e))
    return TestResult(stat=stat, p_value=p)


@dataclass(frozen=True, eq=False)
class QQData:
    """Sorted squared Mahalanobis distances with matching chi-square quantiles."""

    d2_sorted: np.ndarray
    chi2_quantiles: np.ndarray

    def slope(self) -> float:
        """Least-squares slope through the origin of d2 on the quantiles."""
        x, y = self.chi2_quantiles, self.d2_sorted
        return float((x @ y) / (x @ x))


def mahalanobis_qq(samples) -> QQData:
    """Q-Q data: d2_(i) ascending against chi-square_q quantiles at (i-0.5)/N.

    The metric uses the divisor-(N-1) covariance, so the distances sum to
    q (N-1).
    """
    x = _as_sample_matrix(samples)
    n, q = x.shape
    if n < 2:
        raise SingularCovariance("need at least two samples")
    centered = x - x.mean(axis=0)
    S = (centered.T @ centered) / (n - 1)
    Sinv = spd_inverse(S, SingularCovariance, label="sample covariance")
    d2 = np.einsum("ij,jk,ik->i", centered, Sinv, centered)
    order = np.argsort(d2, kind="stable")
    quantiles = chi2.ppf((np.arange(1, n + 1) - 0.5) / n, df=q)
    return QQData(d2_sorted=d2[order], chi2_quantiles=quantiles)


def normality_report(eta, indices=None) -> NormalityReport:
    """Run all four diagnostics on a coordinate subset of an error sample.

    ``indices`` defaults to the first min(15, D) canonical coordinates; the
    choice is arbitrary by design and recorded in the report.
    """
    mat = eta.eta if hasattr(eta, "eta") else np.asarray(eta, dtype=float)
    if indices is None:
        indices = list(range(1, min(15, mat.shape[1]) + 1))
    sub = select_subset(mat, indices)
    mr = mardia(sub)
    return NormalityReport(
        mardia_skewness=TestResult(mr.skew_stat, mr.skew_p),
        mardia_kurtosis=TestResult(mr.kurt_stat, mr.kurt_p),
        henze_zirkler=henze_zirkler(sub),
        royston=royston(sub),
        subset=list(indices),
        n_samples=sub.shape[0],
        dim=sub.shape[1],
    )
