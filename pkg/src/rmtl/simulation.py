"""Scenario-driven data generation and type-I-error / power studies.

Causes are drawn independently of event and censoring times, so every
cumulative incidence function is ``p_m * (1 - S_i)`` and the true RMTL is
``p_m * (tau - RMST_i)``.  The shifted group (by default the last one) gets
its hazard multiplied by a factor chosen so that
``RMST_reference - RMST_shifted = delta``.
"""

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator
from scipy import integrate, optimize, stats

from . import contrasts, inference
from .estimators import GroupSample, fit_all
from .exceptions import DomainError, RmtlError
from .numerics import RngStream, as_generator

METHODS = ("asymptotic", "asymptotic_bonf", "permutation_bonf")
# Interval drawn around 0.05 for 5000 runs in published simulation figures.
REFERENCE_BAND_5000 = (0.037, 0.064)


class _Law(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    def survival(self, t):
        return np.exp(-self.cumulative_hazard(np.asarray(t, dtype=float)))

    def sample(self, gen, size):
        return self.inverse_cumulative_hazard(gen.standard_exponential(size))


class Exponential(_Law):
    family: Literal["exponential"] = "exponential"
    rate: PositiveFloat

    def cumulative_hazard(self, t):
        return self.rate * t

    def inverse_cumulative_hazard(self, h):
        return h / self.rate

    def scaled(self, factor):
        return Exponential(rate=self.rate * factor)

    def rmst(self, tau):
        return (1.0 - math.exp(-self.rate * tau)) / self.rate


class Weibull(_Law):
    family: Literal["weibull"] = "weibull"
    shape: PositiveFloat
    scale: PositiveFloat

    def cumulative_hazard(self, t):
        return (np.maximum(t, 0.0) / self.scale) ** self.shape

    def inverse_cumulative_hazard(self, h):
        return self.scale * h ** (1.0 / self.shape)

    def scaled(self, factor):
        return Weibull(shape=self.shape, scale=self.scale * factor ** (-1.0 / self.shape))


class PiecewiseExponential(_Law):
    family: Literal["piecewise_exponential"] = "piecewise_exponential"
    breakpoints: List[PositiveFloat] = Field(default_factory=list)
    rates: List[PositiveFloat]

    @model_validator(mode="after")
    def _check(self):
        if len(self.rates) != len(self.breakpoints) + 1:
            raise ValueError("rates needs exactly one more entry than breakpoints")
        if any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        return self

    def _knots(self):
        edges = np.concatenate(([0.0], self.breakpoints))
        rates = np.asarray(self.rates)
        cum = np.concatenate(([0.0], np.cumsum(rates[:-1] * np.diff(edges))))
        return edges, rates, cum

    def cumulative_hazard(self, t):
        edges, rates, cum = self._knots()
        t = np.maximum(t, 0.0)
        j = np.searchsorted(edges, t, side="right") - 1
        return cum[j] + rates[j] * (t - edges[j])

    def inverse_cumulative_hazard(self, h):
        edges, rates, cum = self._knots()
        j = np.searchsorted(cum, h, side="right") - 1
        return edges[j] + (h - cum[j]) / rates[j]

    def scaled(self, factor):
        return PiecewiseExponential(breakpoints=list(self.breakpoints),
                                    rates=[r * factor for r in self.rates])


class UniformCensoring(_Law):
    family: Literal["uniform"] = "uniform"
    low: float = 0.0
    high: PositiveFloat

    @model_validator(mode="after")
    def _check(self):
        if not 0 <= self.low < self.high:
            raise ValueError("need 0 <= low < high")
        return self

    def sample(self, gen, size):
        return gen.uniform(self.low, self.high, size)


class NoCensoring(_Law):
    family: Literal["none"] = "none"

    def sample(self, gen, size):
        return np.full(size, np.inf)


EventLaw = Annotated[Union[Exponential, Weibull, PiecewiseExponential],
                     Field(discriminator="family")]
CensoringLaw = Annotated[Union[Exponential, Weibull, UniformCensoring, NoCensoring],
                         Field(discriminator="family")]


def rmst(law, tau, discrete=False):
    """Restricted mean survival time of ``law`` (or of its rounded-up version)."""
    if discrete:
        whole = math.floor(tau)
        grid = np.arange(whole)
        total = float(np.sum(law.survival(grid)))
        return total + (tau - whole) * float(law.survival(whole))
    if isinstance(law, Exponential):
        return law.rmst(tau)
    breaks = [b for b in getattr(law, "breakpoints", []) if b < tau]
    value, _ = integrate.quad(lambda t: float(law.survival(t)), 0.0, tau, points=breaks or None,
                              epsabs=1e-13, epsrel=1e-13, limit=200)
    return value


def calibrate_shift(law, target_rmst, tau, discrete=False):
    """Hazard multiplier ``theta`` with ``rmst(law.scaled(theta)) == target_rmst``."""
    if not 0 < target_rmst < tau:
        raise DomainError(f"target RMST {target_rmst} must lie in (0, tau)")

    def gap(log_theta):
        return rmst(law.scaled(math.exp(log_theta)), tau, discrete) - target_rmst

    lo, hi = -1.0, 1.0
    while gap(lo) < 0:
        lo *= 2
        if lo < -60:
            raise DomainError("cannot reach the requested RMST shift")
    while gap(hi) > 0:
        hi *= 2
        if hi > 60:
            raise DomainError("cannot reach the requested RMST shift")
    if gap(0.0) == 0:
        return 1.0
    return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                    maxiter=500))


class ScenarioConfig(BaseModel):
    """Declarative description of one simulation scenario.

    ``event_laws`` / ``censoring_laws`` override the common ``event_law`` /
    ``censoring_law`` per group.  Groups are 1-based in ``shifted_group`` and
    ``reference_group``.
    """

    model_config = ConfigDict(extra="forbid")

    k: int = Field(4, ge=1)
    M: int = Field(3, ge=1)
    event_law: EventLaw = Exponential(rate=0.2)
    event_laws: Optional[List[EventLaw]] = None
    censoring_law: CensoringLaw = UniformCensoring(low=0.0, high=25.0)
    censoring_laws: Optional[List[CensoringLaw]] = None
    cause_probabilities: List[float] = [0.33, 0.25, 0.42]
    delta: float = 0.0
    shifted_group: Optional[int] = None
    reference_group: int = 1
    sample_sizes: List[int] = [60, 60, 60, 60]
    tau: PositiveFloat = 10.0
    discrete_rounding: bool = False
    alpha: float = Field(0.05, gt=0, lt=1)
    B: int = Field(1999, ge=1)
    replications: int = Field(1000, ge=1)
    master_seed: int = 1
    methods: List[Literal["asymptotic", "asymptotic_bonf", "permutation_bonf"]] = \
        list(METHODS)
    contrast: Literal["dunnett", "tukey", "2x2"] = "2x2"
    mode: Literal["all_events", "per_event"] = "per_event"
    band_coverage: float = Field(0.99, gt=0, lt=1)

    @model_validator(mode="after")
    def _check(self):
        p = self.cause_probabilities
        if len(p) != self.M:
            raise ValueError(f"cause_probabilities needs M = {self.M} entries")
        if any(x <= 0 for x in p) or abs(sum(p) - 1) > 1e-9:
            raise ValueError("cause_probabilities must be positive and sum to 1")
        if len(self.sample_sizes) != self.k or any(s < 2 for s in self.sample_sizes):
            raise ValueError(f"sample_sizes needs k = {self.k} entries, each >= 2")
        for name in ("event_laws", "censoring_laws"):
            laws = getattr(self, name)
            if laws is not None and len(laws) != self.k:
                raise ValueError(f"{name} needs k = {self.k} entries")
        shifted = self.k if self.shifted_group is None else self.shifted_group
        if not 1 <= shifted <= self.k or not 1 <= self.reference_group <= self.k:
            raise ValueError("shifted_group and reference_group must lie in 1..k")
        self.shifted_group = shifted
        if self.contrast == "2x2" and self.k != 4:
            raise ValueError("contrast '2x2' needs k = 4")
        return self

    def group_event_laws(self):
        laws = list(self.event_laws) if self.event_laws else [self.event_law] * self.k
        ref = laws[self.reference_group - 1]
        s = self.shifted_group - 1
        if self.delta != 0:
            target = rmst(ref, self.tau, self.discrete_rounding) - self.delta
            laws[s] = laws[s].scaled(calibrate_shift(laws[s], target, self.tau,
                                                     self.discrete_rounding))
        return laws

    def group_censoring_laws(self):
        return list(self.censoring_laws) if self.censoring_laws else [self.censoring_law] * self.k

    def rmtl_targets(self):
        """True RMTL matrix ``(k, M)``: ``p_m * (tau - RMST_i)``."""
        surv = np.array([rmst(law, self.tau, self.discrete_rounding)
                         for law in self.group_event_laws()])
        return np.outer(self.tau - surv, self.cause_probabilities)

    def contrast_spec(self):
        return contrasts.builtin(self.contrast, self.k, self.M, mode=self.mode)


PRESETS = {
    # repo choices; laws are illustrative, not reproductions of published settings
    "null-balanced": {},
    "alt-balanced": {"delta": 1.5},
    "null-unbalanced": {"sample_sizes": [128, 44, 52, 16]},
    "alt-unbalanced": {"sample_sizes": [128, 44, 52, 16], "delta": 1.5},
    "null-unbalanced-heavy-censoring": {
        "sample_sizes": [128, 44, 52, 16],
        "event_law": {"family": "exponential", "rate": 0.1},
        "censoring_law": {"family": "uniform", "low": 0.0, "high": 12.0},
        "contrast": "dunnett",
    },
    "null-discrete": {"discrete_rounding": True},
    "alt-discrete": {"discrete_rounding": True, "delta": 1.5},
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ScenarioConfig(**{**PRESETS[name], **overrides})


def generate_dataset(cfg, rng, event_laws=None, censoring_laws=None):
    """One simulated dataset: a list of ``k`` :class:`GroupSample`."""
    gen = as_generator(rng)
    event_laws = event_laws or cfg.group_event_laws()
    censoring_laws = censoring_laws or cfg.group_censoring_laws()
    p = np.asarray(cfg.cause_probabilities) / np.sum(cfg.cause_probabilities)
    samples = []
    for n_i, ev, ce in zip(cfg.sample_sizes, event_laws, censoring_laws):
        t = ev.sample(gen, n_i)
        if cfg.discrete_rounding:
            t = np.ceil(t)
        cause = gen.choice(cfg.M, size=n_i, p=p) + 1
        cens = ce.sample(gen, n_i)
        observed = t <= cens
        samples.append(GroupSample(np.where(observed, t, cens), np.where(observed, cause, 0),
                                   cfg.M))
    return samples


def binomial_band(level, replications, coverage=0.99, z=None):
    """Normal-approximation band ``level +/- z * sqrt(level (1 - level) / N)``."""
    if replications < 1:
        raise DomainError("replications must be >= 1")
    if z is None:
        z = stats.norm.ppf(0.5 + coverage / 2)
    half = z * math.sqrt(level * (1 - level) / replications)
    return level - half, level + half


def _run_methods(samples, spec, cfg, methods, stream):
    summary = fit_all(samples, cfg.tau)
    out = {}
    for j, method in enumerate(methods):
        sub = stream.child(j + 1)
        if method == "asymptotic":
            res = inference.multiple_asymptotic_test(summary, spec, cfg.alpha, cfg.B, sub)
        elif method == "asymptotic_bonf":
            res = inference.bonferroni_multiple(samples, spec, cfg.tau, cfg.alpha, "asymptotic",
                                                summary=summary)
        else:
            res = inference.bonferroni_multiple(samples, spec, cfg.tau, cfg.alpha, "permutation",
                                                cfg.B, sub, summary=summary)
        out[method] = res.rejected.copy()
    return out


def _replication(args):
    cfg, methods, index, event_laws, censoring_laws = args
    spec = cfg.contrast_spec()
    stream = RngStream(cfg.master_seed, index)
    try:
        samples = generate_dataset(cfg, stream.child(0), event_laws, censoring_laws)
        result = _run_methods(samples, spec, cfg, methods, stream)
    except RmtlError as exc:
        raise RmtlError(f"replication {index} failed: {exc}") from exc
    return np.stack([result[m] for m in methods])


@dataclass
class StudyReport:
    methods: list
    hypotheses: list
    true_nulls: list
    rejection_rates: dict  # method -> per-hypothesis rates
    global_rejection: dict  # method -> share of runs with any rejection
    fwer: dict  # method -> share of runs rejecting a true null (None if no true nulls)
    band: tuple
    reference_band: tuple
    replications: int
    config: dict
    runtime_seconds: float = None
    meta: dict = field(default_factory=dict)

    def to_dict(self, include_timing=False):
        out = {
            "schema_version": 1,
            "replications": self.replications,
            "methods": list(self.methods),
            "hypotheses": list(self.hypotheses),
            "true_nulls": list(self.true_nulls),
            "rejection_rates": {m: list(v) for m, v in self.rejection_rates.items()},
            "global_rejection": dict(self.global_rejection),
            "fwer": dict(self.fwer),
            "band": list(self.band),
            "reference_band_5000": list(self.reference_band),
            "config": self.config,
        }
        if include_timing:
            out["runtime_seconds"] = self.runtime_seconds
        return out

    def to_json(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "hypothesis", "true_null", "rejection_rate"])
        for m in self.methods:
            for h, t, rate in zip(self.hypotheses, self.true_nulls, self.rejection_rates[m]):
                writer.writerow([m, h, int(t), repr(float(rate))])
            writer.writerow([m, "global", "", repr(float(self.global_rejection[m]))])
            fwer = self.fwer[m]
            writer.writerow([m, "fwer", "", "" if fwer is None else repr(float(fwer))])
        return buf.getvalue()


def run_study(cfg, methods=None, workers=1):
    """Run ``cfg.replications`` simulated analyses and aggregate rejection rates.

    Replication ``r`` draws everything from ``RngStream(master_seed, r)``, so
    the report does not depend on ``workers``.
    """
    methods = list(methods or cfg.methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise DomainError(f"unknown methods {sorted(unknown)}")
    start = time.perf_counter()
    spec = cfg.contrast_spec()
    event_laws, censoring_laws = cfg.group_event_laws(), cfg.group_censoring_laws()
    targets = cfg.rmtl_targets().reshape(-1)
    true_nulls = [bool(np.all(np.abs(Hl @ targets - cl) <= 1e-9 * cfg.tau))
                  for Hl, cl in spec.blocks()]
    jobs = [(cfg, methods, r, event_laws, censoring_laws) for r in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_replication(job) for job in jobs]
    rej = np.stack(results)  # (R, methods, L)
    true_mask = np.array(true_nulls)
    rates, global_rej, fwer = {}, {}, {}
    for j, m in enumerate(methods):
        rates[m] = rej[:, j, :].mean(axis=0).tolist()
        global_rej[m] = float(rej[:, j, :].any(axis=1).mean())
        fwer[m] = float(rej[:, j, true_mask].any(axis=1).mean()) if true_mask.any() else None
    return StudyReport(
        methods, list(spec.labels), true_nulls, rates, global_rej, fwer,
        binomial_band(cfg.alpha, cfg.replications, cfg.band_coverage), REFERENCE_BAND_5000,
        cfg.replications, cfg.model_dump(mode="json"), time.perf_counter() - start,
    )
