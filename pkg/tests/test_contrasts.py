import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmtl.contrasts import (
    ContrastSpec,
    builtin,
    dunnett,
    expand,
    factorial_2x2,
    find_violations,
    tukey,
    validate,
)
from rmtl.exceptions import ContrastError, DomainError


def test_dunnett_examples():
    np.testing.assert_array_equal(dunnett(2), [[-1, 1]])
    np.testing.assert_array_equal(dunnett(3), [[-1, 1, 0], [-1, 0, 1]])
    d4 = dunnett(4)
    assert d4.shape == (3, 4) and np.all(d4.sum(axis=1) == 0)


def test_tukey_examples():
    np.testing.assert_array_equal(tukey(2), [[-1, 1]])
    np.testing.assert_array_equal(tukey(3), [[-1, 1, 0], [-1, 0, 1], [0, -1, 1]])
    assert tukey(4).shape == (6, 4)


@pytest.mark.parametrize("f", [dunnett, tukey])
def test_small_k_rejected(f):
    with pytest.raises(DomainError):
        f(1)


def test_factorial_rows():
    h = factorial_2x2()
    for row in h.values():
        assert row.sum() == 0
    np.testing.assert_array_equal(h["AB"], h["A"] * h["B"])
    I3 = np.eye(3)
    HA = expand(h["A"], 3).H
    np.testing.assert_array_equal(HA, np.hstack([I3, I3, -I3, -I3]))


def test_validate_dunnett_ok():
    validate(expand(dunnett(3), 2), 3, 2)


def test_validate_group_selector_fails():
    H = np.zeros((1, 6))
    H[0, 0] = 1
    with pytest.raises(ContrastError) as err:
        validate(ContrastSpec(H), 3, 2)
    assert any("row 0" in v and "cause 1" in v for v in err.value.violations)


def test_validate_zero_matrix_fails():
    problems = find_violations(ContrastSpec(np.zeros((2, 6))), 3, 2)
    assert any("zero matrix" in p for p in problems)
    assert any("rank 0" in p for p in problems)


def test_validate_dimension_and_blocks():
    assert find_violations(ContrastSpec(np.ones((1, 5))), 3, 2)
    spec = ContrastSpec(dunnett(2), block_starts=[0, 1])
    assert any("partition" in p for p in find_violations(spec, 2, 1))
    spec = ContrastSpec(np.kron(dunnett(2), np.eye(2)), c=[0.0])
    assert any("c has length" in p for p in find_violations(spec, 2, 2))


def test_zero_block_reported():
    H = np.vstack([np.kron(dunnett(2), [1.0, 0.0]), np.zeros(4)])
    problems = find_violations(ContrastSpec(H, block_starts=[0, 1]), 2, 2)
    assert problems == ["block 1 (rows 1..1) has rank 0"]


def test_per_event_2x2_has_nine_blocks():
    spec = builtin("2x2", 4, 3, mode="per_event")
    assert spec.L == 9 and spec.r == 9
    assert spec.labels[:3] == ["A:cause1", "A:cause2", "A:cause3"]


def test_dunnett_all_events_blocks():
    spec = builtin("dunnett", 4, 3)
    assert spec.L == 3
    assert [s.stop - s.start for s in spec.block_slices()] == [3, 3, 3]


def test_selected_events_two_sample():
    spec = expand(dunnett(2), 3, mode="selected_events", causes=[1])
    assert spec.L == 1
    np.testing.assert_array_equal(spec.H, [[-1, 0, 0, 1, 0, 0]])


def test_selected_events_errors():
    with pytest.raises(DomainError):
        expand(dunnett(2), 3, mode="selected_events", causes=[])
    with pytest.raises(DomainError):
        expand(dunnett(2), 3, mode="selected_events", causes=[4])
    with pytest.raises(DomainError):
        expand(dunnett(2), 3, mode="bogus")
    with pytest.raises(DomainError):
        builtin("2x2", 3, 1)
    with pytest.raises(DomainError):
        builtin("nope", 3, 1)


FAMILIES = [(name, k) for name in ("dunnett", "tukey") for k in range(2, 7)] + [("2x2", 4)]


@pytest.mark.parametrize("M", [1, 2, 3])
@pytest.mark.parametrize("mode", ["all_events", "per_event"])
@pytest.mark.parametrize("name, k", FAMILIES)
def test_builtins_validate(name, k, M, mode):
    spec = builtin(name, k, M, mode=mode)
    assert find_violations(spec, k, M) == []


@pytest.mark.parametrize("name, k", [("dunnett", 4), ("tukey", 5), ("2x2", 4)])
@pytest.mark.parametrize("M", [1, 2, 3])
def test_per_event_rows_reorder_all_events(name, k, M):
    # per-event rows are l-major then cause, the same order as the kron rows
    per = builtin(name, k, M, mode="per_event")
    full = builtin(name, k, M, mode="all_events")
    np.testing.assert_array_equal(per.H, full.H)


@given(st.integers(2, 6), st.integers(1, 3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
@settings(max_examples=60, deadline=None)
def test_group_constant_vector_is_annihilated(k, M, per_cause):
    mu = np.tile(per_cause[:M], k)
    for name in ("dunnett", "tukey"):
        np.testing.assert_allclose(builtin(name, k, M).H @ mu, 0, atol=1e-12)


def test_spec_helpers():
    spec = builtin("dunnett", 3, 2)
    shifted = spec.with_offset(np.arange(4.0))
    np.testing.assert_array_equal(shifted.c, np.arange(4.0))
    assert shifted.labels == spec.labels == ["2-1", "3-1"]
    d = spec.to_dict()
    assert d["blocks"] == [{"label": "2-1", "rows": [0, 2]}, {"label": "3-1", "rows": [2, 4]}]
    H1, c1 = spec.blocks()[1]
    np.testing.assert_array_equal(H1, spec.H[2:])
    np.testing.assert_array_equal(c1, [0, 0])
