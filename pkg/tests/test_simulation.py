import json
import math

import numpy as np
import pydantic
import pytest
from scipy import special

from rmtl.estimators import fit_group
from rmtl.exceptions import DomainError
from rmtl.numerics import RngStream
from rmtl.simulation import (
    PRESETS,
    REFERENCE_BAND_5000,
    Exponential,
    NoCensoring,
    PiecewiseExponential,
    ScenarioConfig,
    Weibull,
    binomial_band,
    calibrate_shift,
    generate_dataset,
    preset,
    rmst,
    run_study,
)


# ----------------------------------------------------------------- laws

def test_weibull_rmst_closed_form():
    law = Weibull(shape=1.7, scale=6.0)
    tau = 10.0
    a = 1 / law.shape
    upper = (tau / law.scale) ** law.shape
    ref = law.scale / law.shape * special.gamma(a) * special.gammainc(a, upper)
    assert rmst(law, tau) == pytest.approx(ref, rel=1e-10)


def test_piecewise_rmst_by_hand():
    law = PiecewiseExponential(breakpoints=[2.0], rates=[0.1, 0.5])
    tau = 5.0
    head = (1 - math.exp(-0.2)) / 0.1
    tail = math.exp(-0.2) * (1 - math.exp(-0.5 * 3)) / 0.5
    assert rmst(law, tau) == pytest.approx(head + tail, rel=1e-12)
    t = np.array([0.0, 1.0, 2.0, 4.0])
    np.testing.assert_allclose(law.cumulative_hazard(t), [0, 0.1, 0.2, 1.2])
    np.testing.assert_allclose(law.inverse_cumulative_hazard(law.cumulative_hazard(t)), t)


def test_discrete_rmst_matches_simulation():
    law = Exponential(rate=0.2)
    tau = 10.5
    gen = np.random.default_rng(0)
    t = np.ceil(law.sample(gen, 2_000_000))
    x = np.minimum(t, tau)
    se = x.std() / math.sqrt(x.size)
    assert abs(rmst(law, tau, discrete=True) - x.mean()) < 4 * se


@pytest.mark.parametrize("law", [
    Exponential(rate=0.2),
    Weibull(shape=1.5, scale=5.0),
    PiecewiseExponential(breakpoints=[3.0, 6.0], rates=[0.1, 0.3, 0.2]),
])
@pytest.mark.parametrize("discrete", [False, True])
def test_calibrate_shift_hits_target(law, discrete):
    tau = 10.0
    target = rmst(law, tau, discrete) - 1.5
    theta = calibrate_shift(law, target, tau, discrete)
    assert theta > 1
    assert rmst(law.scaled(theta), tau, discrete) == pytest.approx(target, abs=1e-10)


def test_calibrate_shift_domain():
    with pytest.raises(DomainError):
        calibrate_shift(Exponential(rate=0.2), 12.0, 10.0)


def test_law_sampling_matches_survival():
    law = Weibull(shape=0.8, scale=4.0)
    x = law.sample(np.random.default_rng(1), 400_000)
    for t in (1.0, 4.0, 9.0):
        assert np.mean(x > t) == pytest.approx(float(law.survival(t)), abs=0.004)


# ------------------------------------------------------------ scenarios

def test_config_validation():
    with pytest.raises(pydantic.ValidationError):
        ScenarioConfig(cause_probabilities=[0.5, 0.5])
    with pytest.raises(pydantic.ValidationError):
        ScenarioConfig(sample_sizes=[10, 10, 1, 10])
    with pytest.raises(pydantic.ValidationError):
        ScenarioConfig(event_law={"family": "gompertz", "rate": 1.0})
    with pytest.raises(pydantic.ValidationError):
        ScenarioConfig(k=3, sample_sizes=[5, 5, 5])  # 2x2 needs four groups
    with pytest.raises(pydantic.ValidationError):
        PiecewiseExponential(breakpoints=[1.0], rates=[0.1])


def test_presets_build():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.contrast_spec().L >= 1
    with pytest.raises(DomainError):
        preset("nope")


def test_generator_without_censoring():
    cfg = ScenarioConfig(censoring_law={"family": "none"}, sample_sizes=[30] * 4)
    samples = generate_dataset(cfg, RngStream(1))
    assert all(np.all(s.statuses >= 1) for s in samples)
    assert isinstance(cfg.group_censoring_laws()[0], NoCensoring)


def test_generator_single_cause():
    cfg = ScenarioConfig(M=1, cause_probabilities=[1.0], censoring_law={"family": "none"},
                         sample_sizes=[20] * 4)
    assert all(np.all(s.statuses == 1) for s in generate_dataset(cfg, RngStream(2)))


def test_generator_discrete_event_times_are_integers():
    cfg = ScenarioConfig(discrete_rounding=True, censoring_law={"family": "none"})
    for s in generate_dataset(cfg, RngStream(3)):
        assert np.all(s.times == np.ceil(s.times))


def test_generator_cumulative_incidence():
    p = [0.33, 0.25, 0.42]
    cfg = ScenarioConfig(k=2, sample_sizes=[20_000, 2], contrast="dunnett")
    sample = generate_dataset(cfg, RngStream(4))[0]
    fit = fit_group(sample, 10.0)
    for m, f in enumerate(fit.cifs):
        for t in (2.0, 5.0, 8.0):
            assert f(t) == pytest.approx(p[m] * (1 - math.exp(-0.2 * t)), abs=0.015)


def test_generator_is_deterministic():
    cfg = ScenarioConfig()
    a = generate_dataset(cfg, RngStream(5))
    b = generate_dataset(cfg, RngStream(5))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.times, y.times)
        np.testing.assert_array_equal(x.statuses, y.statuses)


def test_targets_sum_to_time_lost():
    cfg = ScenarioConfig(event_laws=[{"family": "exponential", "rate": r}
                                     for r in (0.1, 0.2, 0.3, 0.2)])
    targets = cfg.rmtl_targets()
    rmsts = [rmst(law, cfg.tau) for law in cfg.group_event_laws()]
    np.testing.assert_allclose(targets.sum(axis=1), cfg.tau - np.array(rmsts), rtol=1e-14)


@pytest.mark.parametrize("discrete", [False, True])
def test_shift_bookkeeping(discrete):
    cfg = ScenarioConfig(delta=1.5, discrete_rounding=discrete)
    targets = cfg.rmtl_targets()
    np.testing.assert_allclose(targets[3] - targets[0], np.array(cfg.cause_probabilities) * 1.5,
                               atol=1e-10)
    np.testing.assert_allclose(targets[1], targets[0], atol=0)


def test_no_shift_keeps_group_laws():
    laws = [{"family": "exponential", "rate": r} for r in (0.1, 0.2, 0.3, 0.4)]
    cfg = ScenarioConfig(event_laws=laws)
    assert [law.rate for law in cfg.group_event_laws()] == [0.1, 0.2, 0.3, 0.4]


def test_true_nulls_follow_targets():
    null = run_study(ScenarioConfig(replications=2, methods=["asymptotic_bonf"]))
    assert all(null.true_nulls) and len(null.true_nulls) == 9
    alt = run_study(ScenarioConfig(replications=2, delta=1.5, contrast="dunnett",
                                   methods=["asymptotic_bonf"]))
    # group 4 is shifted: 2-1 and 3-1 stay true, 4-1 is false for every cause
    assert alt.true_nulls == [True] * 6 + [False] * 3


# ----------------------------------------------------------------- band

def test_binomial_band_examples():
    lo, hi = binomial_band(0.05, 2000, z=2.576)
    assert (round(lo, 4), round(hi, 4)) == (0.0374, 0.0626)
    lo, hi = binomial_band(0.05, 10**16)
    assert hi - lo < 1e-6
    lo99, hi99 = binomial_band(0.05, 2000, coverage=0.99)
    assert hi99 - 0.05 == pytest.approx(2.5758293 * math.sqrt(0.05 * 0.95 / 2000), rel=1e-6)
    with pytest.raises(DomainError):
        binomial_band(0.05, 0)


def test_reference_band_reported():
    report = run_study(ScenarioConfig(replications=2, methods=["asymptotic_bonf"]))
    assert report.to_dict()["reference_band_5000"] == list(REFERENCE_BAND_5000)


# ---------------------------------------------------------------- studies

SMALL = dict(replications=6, B=49, sample_sizes=[20, 20, 20, 20])


def test_study_reproducible_and_worker_independent():
    cfg = ScenarioConfig(**SMALL)
    a = run_study(cfg).to_json()
    b = run_study(cfg).to_json()
    c = run_study(cfg, workers=2).to_json()
    assert a == b == c
    assert "runtime_seconds" not in json.loads(a)
    assert "runtime_seconds" in json.loads(run_study(cfg).to_json(include_timing=True))


def test_study_seed_changes_result():
    a = run_study(ScenarioConfig(**SMALL, master_seed=1))
    b = run_study(ScenarioConfig(**SMALL, master_seed=2))
    assert a.to_json() != b.to_json()


def test_study_report_contents():
    report = run_study(ScenarioConfig(**SMALL))
    d = report.to_dict()
    assert d["methods"] == ["asymptotic", "asymptotic_bonf", "permutation_bonf"]
    for m in d["methods"]:
        rates = d["rejection_rates"][m]
        assert len(rates) == 9 and all(0 <= r <= 1 for r in rates)
        assert 0 <= d["fwer"][m] <= 1
        assert d["global_rejection"][m] == d["fwer"][m]  # every hypothesis is a true null
    lines = report.to_csv().splitlines()
    assert lines[0] == "method,hypothesis,true_null,rejection_rate"
    assert len(lines) == 1 + 3 * (9 + 2)


def test_study_rejects_unknown_method():
    with pytest.raises(DomainError):
        run_study(ScenarioConfig(**SMALL), methods=["bootstrap"])


def test_power_grows_with_sample_size():
    base = dict(delta=1.5, contrast="dunnett", replications=60, methods=["asymptotic_bonf"])
    small = run_study(ScenarioConfig(**base, sample_sizes=[30] * 4))
    large = run_study(ScenarioConfig(**base, sample_sizes=[400] * 4))
    assert large.global_rejection["asymptotic_bonf"] > small.global_rejection["asymptotic_bonf"]
    assert large.global_rejection["asymptotic_bonf"] > 0.5
