"""Tie-aware nonparametric estimation for competing-risks samples.

Per group this provides the risk table, cause-specific and all-cause
Nelson-Aalen estimators, Kaplan-Meier, Aalen-Johansen cumulative incidence
functions, the restricted mean time lost (RMTL) per cause and its
asymptotic covariance.  :func:`fit_all` stacks groups into the
``k * M`` dimensional summary consumed by :mod:`rmtl.inference`.

The covariance is the delta-method variance of ``int_0^tau F_m(t) dt``
driven by the multinomial increments of the cause-specific hazards.  With
``a_m(u) = dN_m(u) / Y(u)``, ``c(u) = (tau - u) S(u-)`` and
``g_m(u) = int_u^tau F_m - (tau - u) F_m(u)``, the per-time contribution is

    n / Y * [ c^2 (diag(a) - a a^T) - c (a g^T + g a^T) + dA / (1 - dA) g g^T ]

which is ``K V K^T`` for the kernel ``K = c I - g 1^T / (1 - dA)`` and the
hazard increment covariance ``V = n / Y (diag(a) - a a^T)``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import DomainError
from .numerics import StepFunction, integrate_step

# Warning flags attached to GroupFit.
EMPTY_RISK_SET = "empty_risk_set_at_tau"
CENSORED_BEFORE_TAU = "last_observation_censored_before_tau"
NO_EVENTS = "no_events_before_tau_cause_{}"


@dataclass
class GroupSample:
    """Right-censored competing-risks observations of one group.

    ``statuses`` are 0 for censored and ``1..M`` for the cause observed.
    """

    times: np.ndarray
    statuses: np.ndarray
    M: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.statuses = np.asarray(self.statuses).reshape(-1)
        if self.statuses.size and not np.all(np.equal(np.mod(self.statuses, 1), 0)):
            raise DomainError("statuses must be integers")
        self.statuses = self.statuses.astype(np.int64)
        self.M = int(self.M)
        if self.times.shape != self.statuses.shape:
            raise DomainError("times and statuses differ in length")
        if self.M < 1:
            raise DomainError("M must be >= 1")
        if self.times.size < 2:
            raise DomainError("a group needs at least 2 observations")
        if not np.all(np.isfinite(self.times)) or np.any(self.times < 0):
            raise DomainError("times must be finite and nonnegative")
        if np.any(self.statuses < 0) or np.any(self.statuses > self.M):
            raise DomainError(f"statuses must lie in 0..{self.M}")

    @property
    def n(self):
        return self.times.size


@dataclass(frozen=True)
class RiskTable:
    distinct_times: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray  # (J, M) counts
    censored: np.ndarray
    n: int

    @property
    def M(self):
        return self.events.shape[1]

    @property
    def total_events(self):
        return self.events.sum(axis=1)


def build_risk_table(sample):
    if sample.times.size == 0:
        raise DomainError("empty sample")
    grid, idx = np.unique(sample.times, return_inverse=True)
    J = grid.size
    counts = np.zeros((J, sample.M + 1), dtype=np.int64)
    np.add.at(counts, (idx, sample.statuses), 1)
    leaving = counts.sum(axis=1)
    at_risk = sample.n - np.concatenate(([0], np.cumsum(leaving)[:-1]))
    return RiskTable(grid, at_risk, counts[:, 1:], counts[:, 0], sample.n)


def _hazard_increments(rt):
    y = rt.at_risk.astype(float)
    return rt.events / y[:, None]


def _cumulative(times, increments):
    jumps = increments != 0
    return StepFunction(0.0, times[jumps], np.cumsum(increments)[jumps])


def nelson_aalen(rt, cause=None):
    """Cause-specific (``cause`` in ``1..M``) or all-cause Nelson-Aalen estimator."""
    a = _hazard_increments(rt)
    if cause is None:
        return _cumulative(rt.distinct_times, a.sum(axis=1))
    if not 1 <= cause <= rt.M:
        raise DomainError(f"cause must lie in 1..{rt.M}")
    return _cumulative(rt.distinct_times, a[:, cause - 1])


def _km_values(rt):
    d_all = rt.total_events
    factor = 1.0 - d_all / rt.at_risk
    # exact zero when the whole risk set fails
    factor[d_all == rt.at_risk] = 0.0
    surv = np.cumprod(factor)
    return surv, np.concatenate(([1.0], surv[:-1]))


def kaplan_meier(rt):
    surv, _ = _km_values(rt)
    jumps = rt.total_events > 0
    return StepFunction(1.0, rt.distinct_times[jumps], surv[jumps])


def aalen_johansen(rt, cause):
    """Cumulative incidence ``F_m(t) = int_[0,t] S(u-) dA_m(u)``."""
    if not 1 <= cause <= rt.M:
        raise DomainError(f"cause must lie in 1..{rt.M}")
    _, surv_minus = _km_values(rt)
    dF = surv_minus * _hazard_increments(rt)[:, cause - 1]
    return _cumulative(rt.distinct_times, dF)


def rmtl(cif, tau):
    if tau <= 0:
        raise DomainError("tau must be positive")
    return integrate_step(cif, 0.0, tau)


def rmtl_moments(times, events, at_risk, n, tau):
    """RMTL vector and group covariance from (possibly batched) counts.

    Parameters
    ----------
    times : (J,) array
        Increasing distinct times; entries beyond ``tau`` are ignored.
    events : (..., J, M) array
        Cause-specific event counts at each time.
    at_risk : (..., J) array
        Number at risk just before each time.
    n : (...) array
        Group sizes (the ``n_i`` factor of the covariance).
    tau : float

    Returns
    -------
    mu : (..., M) array
    sigma : (..., M, M) array
        Covariance of ``sqrt(n_i) * (mu_hat - mu)``.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    y = np.asarray(at_risk, dtype=float)
    n = np.asarray(n, dtype=float)

    w = np.where(times <= tau, tau - times, 0.0)
    d_all = events.sum(axis=-1)
    a = np.divide(events, y[..., None], out=np.zeros_like(events), where=y[..., None] > 0)
    dA = a.sum(axis=-1)
    full = (d_all == y) & (y > 0)
    factor = np.where(full, 0.0, 1.0 - dA)
    surv = np.cumprod(factor, axis=-1)
    surv_minus = np.concatenate([np.ones(surv.shape[:-1] + (1,)), surv[..., :-1]], axis=-1)

    wdF = (w * surv_minus)[..., None] * a
    mu = wdF.sum(axis=-2)
    g = mu[..., None, :] - np.cumsum(wdF, axis=-2)
    c = w * surv_minus
    q = np.divide(n[..., None], y, out=np.zeros_like(y), where=y > 0)
    ratio = np.divide(dA, factor, out=np.zeros_like(dA), where=~full & (factor > 0))

    qc = q * c
    qca_t = np.swapaxes(qc[..., None] * a, -1, -2)  # (..., M, J)
    diag = (qca_t * c[..., None, :]).sum(axis=-1)
    sigma = diag[..., :, None] * np.eye(a.shape[-1])
    sigma -= (qca_t * c[..., None, :]) @ a
    cross = qca_t @ g
    sigma -= cross + np.swapaxes(cross, -1, -2)
    sigma += np.swapaxes((q * ratio)[..., None] * g, -1, -2) @ g
    return mu, 0.5 * (sigma + np.swapaxes(sigma, -1, -2))


def _truncate(rt, tau):
    keep = rt.distinct_times <= tau
    return rt.distinct_times[keep], rt.events[keep], rt.at_risk[keep]


def group_covariance(rt, tau):
    """``M x M`` covariance estimate of ``sqrt(n_i) * mu_hat_i``."""
    if tau <= 0:
        raise DomainError("tau must be positive")
    times, events, at_risk = _truncate(rt, tau)
    _, sigma = rmtl_moments(times, events, at_risk, rt.n, tau)
    return sigma


def assumption_flags(rt, tau):
    flags = []
    j = np.searchsorted(rt.distinct_times, tau, side="left")
    if j == rt.distinct_times.size:
        flags.append(EMPTY_RISK_SET)
    last = rt.distinct_times[-1]
    if last < tau and rt.total_events[-1] == 0:
        flags.append(CENSORED_BEFORE_TAU)
    before = rt.distinct_times < tau
    for m in range(rt.M):
        if rt.events[before, m].sum() == 0:
            flags.append(NO_EVENTS.format(m + 1))
    return flags


@dataclass
class GroupFit:
    risk_table: RiskTable
    tau: float
    rmtl: np.ndarray
    covariance: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def n(self):
        return self.risk_table.n

    @property
    def M(self):
        return self.risk_table.M

    @cached_property
    def nelson_aalen(self):
        return [nelson_aalen(self.risk_table, m) for m in range(1, self.M + 1)]

    @cached_property
    def nelson_aalen_all(self):
        return nelson_aalen(self.risk_table)

    @cached_property
    def kaplan_meier(self):
        return kaplan_meier(self.risk_table)

    @cached_property
    def cifs(self):
        return [aalen_johansen(self.risk_table, m) for m in range(1, self.M + 1)]

    @property
    def standard_errors(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None) / self.n)


def fit_group(sample, tau):
    if tau <= 0:
        raise DomainError("tau must be positive")
    rt = build_risk_table(sample)
    times, events, at_risk = _truncate(rt, tau)
    mu, sigma = rmtl_moments(times, events, at_risk, rt.n, tau)
    return GroupFit(rt, float(tau), mu, sigma, assumption_flags(rt, tau))


@dataclass
class RmtlSummary:
    """Stacked group-major RMTL vector with its block-diagonal covariance.

    ``sigma_hat`` is the direct sum of ``(n / n_i) * Sigma_i`` so that
    ``sigma_hat / n`` estimates ``Cov(mu_hat)``.
    """

    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    n_per_group: np.ndarray
    tau: float
    M: int
    group_fits: list = field(default_factory=list, repr=False)

    @property
    def k(self):
        return self.n_per_group.size

    @property
    def n(self):
        return int(self.n_per_group.sum())

    @property
    def warnings(self):
        return [f"group {i + 1}: {w}" for i, fit in enumerate(self.group_fits) for w in fit.warnings]


def stack_blocks(group_sigmas, n_per_group):
    """Direct sum of ``(n / n_i) * Sigma_i`` over the group axis (batched)."""
    group_sigmas = np.asarray(group_sigmas, dtype=float)
    n_per_group = np.asarray(n_per_group, dtype=float)
    k, M = group_sigmas.shape[-3], group_sigmas.shape[-1]
    scale = n_per_group.sum(axis=-1, keepdims=True) / n_per_group
    scaled = group_sigmas * scale[..., None, None]
    out = np.zeros(group_sigmas.shape[:-3] + (k * M, k * M))
    for i in range(k):
        out[..., i * M:(i + 1) * M, i * M:(i + 1) * M] = scaled[..., i, :, :]
    return out


def fit_all(samples, tau):
    samples = list(samples)
    if not samples:
        raise DomainError("need at least one group")
    M = samples[0].M
    if any(s.M != M for s in samples):
        raise DomainError("all groups must share the same number of causes M")
    fits = [fit_group(s, tau) for s in samples]
    sizes = np.array([f.n for f in fits])
    mu = np.concatenate([f.rmtl for f in fits])
    sigma = stack_blocks(np.stack([f.covariance for f in fits]), sizes)
    return RmtlSummary(mu, sigma, sizes, float(tau), M, fits)


def labelled_moments(times, statuses, labels, k, M, tau):
    """Group-wise RMTL moments for many relabellings of one pooled sample.

    ``labels`` has shape ``(B, n)`` with entries in ``0..k-1``; row ``b``
    assigns each pooled observation to a group.  Returns ``mu`` of shape
    ``(B, k, M)``, ``sigma`` of shape ``(B, k, M, M)`` and group sizes
    ``(B, k)``.
    """
    times = np.asarray(times, dtype=float)
    statuses = np.asarray(statuses, dtype=np.int64)
    labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
    B = labels.shape[0]
    grid = np.unique(times[times <= tau])
    J = grid.size
    # times beyond tau land in an overflow bin that only feeds the risk set
    tidx = np.searchsorted(grid, times)
    tidx[times > tau] = J
    cell = (J + 1) * (M + 1)
    flat = (labels * cell + (tidx * (M + 1) + statuses)) + (np.arange(B) * k * cell)[:, None]
    counts = np.bincount(flat.ravel(), minlength=B * k * cell).reshape(B, k, J + 1, M + 1)
    leaving = counts.sum(axis=-1)
    sizes = leaving.sum(axis=-1)
    exits_before = np.cumsum(leaving, axis=-1) - leaving
    at_risk = sizes[..., None] - exits_before[..., :J]
    # censoring-only times leave mu and Sigma unchanged once Y is known
    has_event = np.zeros(J + 1, dtype=bool)
    has_event[tidx[statuses > 0]] = True
    cols = np.flatnonzero(has_event[:J])
    mu, sigma = rmtl_moments(grid[cols], counts[..., cols, 1:], at_risk[..., cols], sizes, tau)
    return mu, sigma, sizes
