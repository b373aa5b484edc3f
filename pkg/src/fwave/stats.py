"""Hypothesis tests used for group comparison and model comparison.

All p-values are two-sided.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np
from scipy import stats

from .errors import LengthMismatch, SampleTooSmall

LILLIEFORS_SIMULATIONS = 20000
LILLIEFORS_SEED = 20221014


def _as_sample(x, min_n: int, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.size < min_n:
        raise SampleTooSmall(f"{what} needs at least {min_n} observations, got {arr.size}")
    return arr


def _ks_normal(x: np.ndarray) -> np.ndarray:
    """KS distance to a normal with the sample's own mean and SD, along the last axis."""
    n = x.shape[-1]
    xs = np.sort(x, axis=-1)
    mu = xs.mean(axis=-1, keepdims=True)
    sd = xs.std(axis=-1, ddof=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        cdf = stats.norm.cdf((xs - mu) / sd)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf, axis=-1)
    d_minus = np.max(cdf - (i - 1) / n, axis=-1)
    return np.maximum(d_plus, d_minus)


@functools.lru_cache(maxsize=256)
def lilliefors_null(n: int) -> np.ndarray:
    """Sorted Monte Carlo null distribution of the Lilliefors statistic for size ``n``."""
    rng = np.random.default_rng([LILLIEFORS_SEED, n])
    sims = []
    left = LILLIEFORS_SIMULATIONS
    while left:
        k = min(left, max(1, 2_000_000 // n))
        sims.append(_ks_normal(rng.standard_normal((k, n))))
        left -= k
    null = np.sort(np.concatenate(sims))
    null.setflags(write=False)
    return null


def lilliefors_statistic(sample) -> float:
    x = _as_sample(sample, 4, "Lilliefors test")
    return float(_ks_normal(x))


def lilliefors(sample) -> float:
    """Lilliefors normality test with a seeded Monte Carlo p-value."""
    x = _as_sample(sample, 4, "Lilliefors test")
    if np.ptp(x) == 0:
        return 0.0
    d = float(_ks_normal(x))
    null = lilliefors_null(x.size)
    exceed = null.size - np.searchsorted(null, d - 1e-12, side="left")
    return float((exceed + 1) / (null.size + 1))


def levene(*groups) -> float:
    """Levene's test (deviations from group means)."""
    arrs = [_as_sample(g, 2, "Levene test") for g in groups]
    if len(arrs) < 2:
        raise SampleTooSmall("Levene test needs at least two groups")
    if all(np.ptp(a) == 0 for a in arrs):
        return 1.0
    return float(stats.levene(*arrs, center="mean").pvalue)


def t_test(a, b) -> float:
    """Student's t-test with pooled variance."""
    a = _as_sample(a, 2, "t-test")
    b = _as_sample(b, 2, "t-test")
    if np.ptp(np.concatenate([a, b])) == 0:
        return 1.0
    p = float(stats.ttest_ind(a, b, equal_var=True).pvalue)
    return 1.0 if math.isnan(p) else min(1.0, p)


def mann_whitney_u(a, b) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    ranks = stats.rankdata(np.concatenate([a, b]))
    return float(ranks[: a.size].sum() - a.size * (a.size + 1) / 2)


EXACT_MAX_N = 10


def mann_whitney(a, b) -> float:
    """Mann-Whitney U test.

    Combined sizes up to 10 use the exact permutation distribution of U
    (midranks, so ties are handled); larger samples use the normal
    approximation with tie and continuity corrections.
    """
    a = _as_sample(a, 2, "Mann-Whitney test")
    b = _as_sample(b, 2, "Mann-Whitney test")
    n1, n2 = a.size, b.size
    n = n1 + n2
    ranks = stats.rankdata(np.concatenate([a, b]))
    offset = n1 * (n1 + 1) / 2
    u_obs = ranks[:n1].sum() - offset
    mu = n1 * n2 / 2
    if n <= EXACT_MAX_N:
        dev_obs = abs(u_obs - mu)
        hits = total = 0
        for pos in itertools.combinations(range(n), n1):
            u = ranks[list(pos)].sum() - offset
            total += 1
            if abs(u - mu) >= dev_obs - 1e-9:
                hits += 1
        return hits / total
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(np.sum(counts**3 - counts)) / (n * (n - 1))
    var = n1 * n2 / 12 * ((n + 1) - tie)
    if var <= 0:
        return 1.0
    z = (abs(u_obs - mu) - 0.5) / math.sqrt(var)
    return float(min(1.0, 2 * stats.norm.sf(z)))


def fisher_exact(table) -> float:
    t = np.asarray(table)
    if t.shape != (2, 2) or np.any(t < 0):
        raise ValueError("Fisher's exact test needs a 2x2 table of non-negative counts")
    return float(min(1.0, stats.fisher_exact(t.astype(np.int64)).pvalue))


def mcnemar(pred_a, pred_b, truth) -> float:
    """Asymptotic McNemar test (no continuity correction) on two classifiers' errors.

    ``b`` counts cases model A got right and model B got wrong, ``c`` the reverse.
    """
    pa, pb, y = (np.asarray(v).reshape(-1) for v in (pred_a, pred_b, truth))
    if not pa.size == pb.size == y.size:
        raise LengthMismatch(f"lengths differ: {pa.size}, {pb.size}, {y.size}")
    ok_a, ok_b = pa == y, pb == y
    b = int(np.sum(ok_a & ~ok_b))
    c = int(np.sum(~ok_a & ok_b))
    return mcnemar_from_counts(b, c)


def mcnemar_from_counts(b: int, c: int) -> float:
    if b + c == 0:
        return 1.0
    chi2 = (b - c) ** 2 / (b + c)
    return float(stats.chi2.sf(chi2, df=1))
