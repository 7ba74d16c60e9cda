"""Wald-type, studentized permutation and Monte-Carlo calibrated multiple tests.

All resampling procedures are pure functions of the data, the contrast
matrix, the level, the number of replicates and the random stream.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import fit_all, labelled_moments, stack_blocks
from .exceptions import DegenerateTestError, DomainError
from .numerics import (
    DEFAULT_TOL,
    as_generator,
    chi2_quantile,
    chi2_sf,
    numeric_rank,
    pseudo_inverse,
    psd_sqrt,
)

# Upper bound on floats held by one batch of permutation fits.
_BATCH_FLOATS = 2_000_000


@dataclass
class GlobalTestResult:
    statistic: float
    df: int
    critical_value: float
    p_value: float
    method: str
    rejected: bool
    alpha: float
    B_used: int = 0
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class MultipleTestResult:
    labels: list
    statistics: np.ndarray
    ranks: np.ndarray
    critical_values: np.ndarray
    rejected: np.ndarray
    p_values: np.ndarray
    adjusted_p_values: np.ndarray
    intervals: list
    method: str
    alpha: float
    beta: float = None
    B_used: int = 0
    warnings: list = field(default_factory=list)

    @property
    def any_rejected(self):
        return bool(np.any(self.rejected))

    def to_dict(self):
        return {
            "method": self.method,
            "alpha": self.alpha,
            "local_level": self.beta,
            "B_used": self.B_used,
            "hypotheses": [
                {
                    "label": lab,
                    "statistic": float(self.statistics[ell]),
                    "rank": int(self.ranks[ell]),
                    "critical_value": float(self.critical_values[ell]),
                    "p_value": float(self.p_values[ell]),
                    "adjusted_p_value": float(self.adjusted_p_values[ell]),
                    "rejected": bool(self.rejected[ell]),
                    "interval": None if self.intervals[ell] is None
                    else [float(v) for v in self.intervals[ell]],
                }
                for ell, lab in enumerate(self.labels)
            ],
            "warnings": list(self.warnings),
        }


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")


def _check_B(B):
    if int(B) != B or B < 1:
        raise DomainError("B must be a positive integer")


def quadratic_form(diff, cov, n):
    """``n * d^T cov^+ d`` and ``rank(cov)`` for (batched) ``d`` and ``cov``."""
    diff = np.asarray(diff, dtype=float)
    pinv = pseudo_inverse(cov)
    stat = n * np.einsum("...i,...ij,...j->...", diff, pinv, diff)
    return np.maximum(stat, 0.0), numeric_rank(cov)


def wald_statistic(summary, H, c=None):
    """``W_n(H, c) = n (H mu - c)^T (H Sigma H^T)^+ (H mu - c)`` and ``rank(H Sigma H^T)``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[1] != summary.mu_hat.size:
        raise DomainError(f"H has {H.shape[1]} columns, expected {summary.mu_hat.size}")
    c = np.zeros(H.shape[0]) if c is None else np.asarray(c, dtype=float).reshape(-1)
    if c.size != H.shape[0]:
        raise DomainError("c must have one entry per row of H")
    stat, rank = quadratic_form(H @ summary.mu_hat - c, H @ summary.sigma_hat @ H.T, summary.n)
    return float(stat), int(rank)


def _matrix_rank(H):
    H = np.atleast_2d(H)
    return numeric_rank(H @ H.T)


def asymptotic_global_test(summary, spec, alpha=0.05):
    """Wald-type test against the chi-squared limit.

    The degrees of freedom are ``rank(H Sigma H^T)``; a warning is attached
    when this differs from ``rank(H)``.
    """
    _check_alpha(alpha)
    stat, rank = wald_statistic(summary, spec.H, spec.c)
    if rank == 0:
        raise DegenerateTestError("H Sigma H^T has rank 0; the test is degenerate")
    warnings = []
    h_rank = _matrix_rank(spec.H)
    if h_rank != rank:
        warnings.append(f"rank(H Sigma H^T) = {rank} differs from rank(H) = {h_rank}; "
                        f"using df = {rank}")
    crit = chi2_quantile(rank, 1 - alpha)
    return GlobalTestResult(stat, rank, crit, chi2_sf(rank, stat), "asymptotic",
                            bool(stat > crit), alpha, 0, warnings)


def _pooled(samples):
    times = np.concatenate([s.times for s in samples])
    statuses = np.concatenate([s.statuses for s in samples])
    sizes = np.array([s.n for s in samples])
    labels = np.repeat(np.arange(len(samples)), sizes)
    return times, statuses, labels, sizes


def permutation_statistics(samples, blocks, tau, B, rng):
    """Permutation Wald statistics ``W^pi(H_l)`` for every block.

    Group labels of the pooled observations are shuffled ``B`` times (group
    sizes preserved); each replicate re-estimates ``mu`` and ``Sigma`` and
    evaluates every block with ``c = 0``.  Returns an array ``(B, L)``.
    """
    _check_B(B)
    gen = as_generator(rng)
    times, statuses, labels, sizes = _pooled(samples)
    k, M, n = len(samples), samples[0].M, labels.size
    J = np.unique(times[times <= tau]).size
    per_rep = k * (J + 1) * (M + 1) * max(M, 2) * 2
    batch = max(1, min(int(B), _BATCH_FLOATS // per_rep))
    out = np.empty((int(B), len(blocks)))
    done = 0
    while done < B:
        size = min(batch, B - done)
        perm = gen.permuted(np.broadcast_to(labels, (size, n)), axis=1)
        mu, sig, _ = labelled_moments(times, statuses, perm, k, M, tau)
        mu = mu.reshape(size, k * M)
        sigma = stack_blocks(sig, sizes)
        for ell, (Hl, _) in enumerate(blocks):
            stat, _ = quadratic_form(mu @ Hl.T, Hl @ sigma @ Hl.T, n)
            out[done:done + size, ell] = stat
        done += size
    return out


def permutation_quantile(stats, alpha):
    """The ``ceil((1 - alpha)(B + 1))``-th order statistic, capped at the maximum."""
    stats = np.sort(np.asarray(stats, dtype=float))
    B = stats.size
    j = min(math.ceil((1 - alpha) * (B + 1) - 1e-9), B)
    return float(stats[j - 1])


def permutation_p_value(stats, observed):
    stats = np.asarray(stats)
    return float((1 + np.count_nonzero(stats >= observed)) / (stats.size + 1))


def permutation_global_test(samples, spec, tau, alpha=0.05, B=1999, rng=0, summary=None):
    """Studentized permutation test of ``H mu = c``."""
    _check_alpha(alpha)
    _check_B(B)
    if summary is None:
        summary = fit_all(samples, tau)
    stat, rank = wald_statistic(summary, spec.H, spec.c)
    perm = permutation_statistics(samples, [(spec.H, spec.c)], tau, int(B), rng)[:, 0]
    q = permutation_quantile(perm, alpha)
    return GlobalTestResult(stat, rank, q, permutation_p_value(perm, stat), "permutation",
                            bool(stat > q), alpha, int(B), [])


def confidence_interval(summary, H, critical_value, c_shift=0.0):
    """``H mu_hat +/- (H Sigma H^T / n * critical_value)^{1/2}`` for a one-row ``H``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] != 1:
        raise DomainError("intervals need a one-row H; use in_confidence_region for regions")
    centre = (H @ summary.mu_hat).item() - c_shift
    var = max((H @ summary.sigma_hat @ H.T).item(), 0.0)
    half = math.sqrt(var / summary.n * critical_value) if var > 0 else 0.0
    return centre - half, centre + half


def permutation_ci(summary, q_pi, H):
    return confidence_interval(summary, H, q_pi)


def asymptotic_ci(summary, H, alpha=0.05):
    _check_alpha(alpha)
    return confidence_interval(summary, H, chi2_quantile(1, 1 - alpha))


def in_confidence_region(summary, H, xi, critical_value):
    """Whether ``xi`` lies in ``{xi : W_n(H, xi) <= critical_value}``."""
    stat, _ = wald_statistic(summary, H, xi)
    return stat <= critical_value


@dataclass
class LocalLevel:
    beta: float
    statistics: np.ndarray  # (B, L)
    min_p_values: np.ndarray  # (B,)
    ranks: np.ndarray  # rank(H_l Sigma H_l^T)


def _grid_level(min_p, alpha):
    """Largest ``beta`` on ``{0, 1/B, .., (B-1)/B}`` whose MC FWER is ``<= alpha``."""
    B = min_p.size
    grid = np.arange(B) / B
    exceed = np.searchsorted(np.sort(min_p), grid, side="left")
    ok = np.flatnonzero(exceed <= math.floor(alpha * B + 1e-9))
    return float(grid[ok[-1]])


def local_level(summary, spec, alpha=0.05, B=10_000, rng=0):
    """Monte-Carlo calibrated common local level ``beta_n(alpha)``.

    Draws ``Y ~ N(0, I)``, forms ``Sigma^{1/2} Y`` and, for every block,
    the quadratic form ``T_l`` with its chi-squared p-value on
    ``rank(H_l Sigma H_l^T)`` degrees of freedom.  ``FWER(beta)`` is the share
    of replicates whose smallest p-value falls below ``beta``.
    """
    _check_alpha(alpha)
    _check_B(B)
    B = int(B)
    gen = as_generator(rng)
    root = psd_sqrt(summary.sigma_hat, tol=max(DEFAULT_TOL, 1e-8))
    Z = gen.standard_normal((B, summary.mu_hat.size)) @ root
    stats = np.empty((B, spec.L))
    pvals = np.ones((B, spec.L))
    ranks = np.empty(spec.L, dtype=int)
    for ell, (Hl, _) in enumerate(spec.blocks()):
        T, rank = quadratic_form(Z @ Hl.T, Hl @ summary.sigma_hat @ Hl.T, 1.0)
        stats[:, ell] = T
        ranks[ell] = rank
        if rank > 0:
            pvals[:, ell] = chi2_sf(rank, T)
    if not np.any(ranks > 0):
        raise DegenerateTestError("every block has a degenerate covariance")
    min_p = pvals.min(axis=1)
    return LocalLevel(_grid_level(min_p, alpha), stats, min_p, ranks)


def _block_statistics(summary, spec):
    stats, cov_ranks, h_ranks = [], [], []
    for Hl, cl in spec.blocks():
        stat, rank = wald_statistic(summary, Hl, cl)
        stats.append(stat)
        cov_ranks.append(rank)
        h_ranks.append(_matrix_rank(Hl))
    return np.array(stats), np.array(cov_ranks), np.array(h_ranks)


def multiple_asymptotic_test(summary, spec, alpha=0.05, B=10_000, rng=0):
    """Single-step multiple test with the Monte-Carlo local level.

    Block ``l`` is rejected when ``W_n(H_l, c_l)`` exceeds the
    ``1 - beta_n(alpha)`` quantile of ``chi2_{rank(H_l)}``.  Adjusted p-values
    are the MC probability that the smallest local p-value is ``<= p_l``.
    """
    level = local_level(summary, spec, alpha, B, rng)
    stats, cov_ranks, h_ranks = _block_statistics(summary, spec)
    beta = level.beta
    warnings = [
        f"{lab}: rank(H Sigma H^T) = {cr} differs from rank(H) = {hr}"
        for lab, cr, hr in zip(spec.labels, cov_ranks, h_ranks) if cr != hr
    ]
    p = chi2_sf(h_ranks, stats)
    crit = chi2_quantile(h_ranks, 1 - beta) if beta > 0 else np.full(spec.L, np.inf)
    crit = np.broadcast_to(crit, (spec.L,)).astype(float)
    rejected = stats > crit
    sorted_min = np.sort(level.min_p_values)
    adjusted = np.searchsorted(sorted_min, p, side="right") / sorted_min.size
    intervals = []
    for (Hl, _), cv in zip(spec.blocks(), crit):
        if Hl.shape[0] == 1:
            intervals.append(confidence_interval(summary, Hl, chi2_quantile(1, 1 - beta))
                             if beta > 0 else (-np.inf, np.inf))
        else:
            intervals.append(None)
    return MultipleTestResult(list(spec.labels), stats, h_ranks, crit, rejected, p,
                              adjusted, intervals, "asymptotic", alpha, beta, int(B), warnings)


def bonferroni_multiple(samples, spec, tau, alpha=0.05, method="asymptotic", B=1999, rng=0,
                        summary=None):
    """Each block tested by the global procedure at level ``alpha / L``.

    ``method="permutation"`` evaluates all blocks on one shared stream of
    permutations.  Adjusted p-values are ``min(1, L * p_l)``.
    """
    _check_alpha(alpha)
    if method not in ("asymptotic", "permutation"):
        raise DomainError("method must be 'asymptotic' or 'permutation'")
    if summary is None:
        summary = fit_all(samples, tau)
    L = spec.L
    level = alpha / L
    stats, cov_ranks, h_ranks = _block_statistics(summary, spec)
    warnings = []
    if method == "asymptotic":
        for lab, cr, hr in zip(spec.labels, cov_ranks, h_ranks):
            if cr == 0:
                warnings.append(f"{lab}: degenerate covariance, never rejected")
            elif cr != hr:
                warnings.append(f"{lab}: rank(H Sigma H^T) = {cr} differs from rank(H) = {hr}; "
                                f"using df = {cr}")
        df = np.maximum(cov_ranks, 1)
        p = np.where(cov_ranks > 0, chi2_sf(df, stats), 1.0)
        crit = np.where(cov_ranks > 0, chi2_quantile(df, 1 - level), np.inf)
        B_used = 0
    else:
        _check_B(B)
        perm = permutation_statistics(samples, spec.blocks(), tau, int(B), rng)
        p = np.array([permutation_p_value(perm[:, ell], stats[ell]) for ell in range(L)])
        crit = np.array([permutation_quantile(perm[:, ell], level) for ell in range(L)])
        B_used = int(B)
    rejected = stats > crit
    intervals = [
        confidence_interval(summary, Hl, cv) if Hl.shape[0] == 1 and np.isfinite(cv) else None
        for (Hl, _), cv in zip(spec.blocks(), crit)
    ]
    return MultipleTestResult(list(spec.labels), stats, cov_ranks, crit, rejected, p,
                              np.minimum(1.0, L * p), intervals, f"{method}_bonf", alpha, level,
                              B_used, warnings)
