"""Small statistics toolkit: Poisson goodness of fit, KS tests, standard errors, contrasts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

__all__ = [
    "MIN_SAMPLE",
    "TestResult",
    "poisson_gof",
    "two_sample_ks",
    "one_sample_ks",
    "stderr",
    "mean_se",
    "contrast",
    "within",
]

MIN_SAMPLE = 30


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float
    df: int | None = None


def _check(n: int, what: str = "sample") -> None:
    if n < MIN_SAMPLE:
        raise ValueError(f"{what} size {n} below {MIN_SAMPLE}")


def poisson_gof(counts, mean: float, min_expected: float = 5.0) -> TestResult:
    """Pearson chi-square test of integer counts against ``Poisson(mean)``.

    Cells ``0, 1, 2, ...`` are merged from the top until every expected
    count is at least ``min_expected``; the last cell holds the upper tail.
    Degrees of freedom are ``cells - 1`` (the mean is not fitted).
    """
    c = np.asarray(counts, dtype=np.int64)
    _check(len(c))
    if mean <= 0:
        raise ValueError("mean must be positive")
    n = len(c)
    top = int(max(c.max(), 1))
    probs = scipy.stats.poisson.pmf(np.arange(top + 1), mean)
    # shrink the number of cells until the tail cell is large enough
    k = top
    while k > 0:
        tail = scipy.stats.poisson.sf(k - 1, mean)
        if n * tail >= min_expected and n * probs[:k].min() >= min_expected:
            break
        k -= 1
    if k == 0:
        raise ValueError("mean too small for a chi-square test at this sample size")
    exp = np.append(probs[:k], scipy.stats.poisson.sf(k - 1, mean)) * n
    obs = np.append(np.bincount(np.minimum(c, k), minlength=k + 1)[:k], np.sum(c >= k))
    stat = float(np.sum((obs - exp) ** 2 / exp))
    df = len(exp) - 1
    return TestResult(stat, float(scipy.stats.chi2.sf(stat, df)), df)


def two_sample_ks(a, b) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test (``scipy.stats.ks_2samp``)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check(len(a))
    _check(len(b))
    r = scipy.stats.ks_2samp(a, b)
    return TestResult(float(r.statistic), float(r.pvalue))


def one_sample_ks(a, cdf) -> TestResult:
    a = np.asarray(a, dtype=float)
    _check(len(a))
    r = scipy.stats.kstest(a, cdf)
    return TestResult(float(r.statistic), float(r.pvalue))


def stderr(x, axis: int = 0) -> np.ndarray | float:
    """Standard error of the mean, ``std(ddof=1) / sqrt(n)``."""
    x = np.asarray(x, dtype=float)
    _check(x.shape[axis])
    return x.std(axis=axis, ddof=1) / np.sqrt(x.shape[axis])


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(stderr(x))


def contrast(a: float, se_a: float, b: float, se_b: float, sigmas: float = 3.0) -> tuple[bool, float]:
    """Is ``b - a`` positive at ``sigmas`` combined standard errors?  Returns ``(passed, z)``."""
    se = float(np.hypot(se_a, se_b))
    z = (b - a) / se if se > 0 else (np.inf if b > a else -np.inf)
    return bool(z > sigmas), float(z)


def within(estimate: float, target: float, tol: float) -> bool:
    return bool(abs(estimate - target) <= tol)
