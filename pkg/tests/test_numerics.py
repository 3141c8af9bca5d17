"""Vector helpers and keyed random streams."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossipsim.numerics import (
    RngStream,
    add_scaled,
    as_vector,
    coordinate_stats,
    squared_norm,
)


def test_as_vector_accepts_lists():
    v = as_vector([1, 2, 3])
    assert v.dtype == np.float64
    assert v.tolist() == [1.0, 2.0, 3.0]


def test_as_vector_rejects_bad_shapes():
    with pytest.raises(ValueError):
        as_vector([[1, 2], [3, 4]])
    with pytest.raises(ValueError):
        as_vector([])


def test_as_vector_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_vector([1.0, math.nan])
    with pytest.raises(ValueError):
        as_vector([math.inf])


def test_add_scaled_examples():
    assert add_scaled([1, 2], 0.0, [5, 5]).tolist() == [1.0, 2.0]
    assert add_scaled([1, 2], 1.0, [3, 4]).tolist() == [4.0, 6.0]
    assert add_scaled([0, 0, 0], -0.5, [2, 4, 6]).tolist() == [-1.0, -2.0, -3.0]


def test_add_scaled_dimension_mismatch():
    with pytest.raises(ValueError):
        add_scaled([1, 2], 1.0, [1, 2, 3])


def test_squared_norm_examples():
    assert squared_norm([0, 0]) == 0.0
    assert squared_norm([3, 4]) == 25.0
    assert squared_norm([1, 1, 1, 1]) == 4.0


def test_coordinate_stats_examples():
    mean, std = coordinate_stats([[1], [1], [1]])
    assert mean.tolist() == [1.0] and std.tolist() == [0.0]
    mean, std = coordinate_stats([[0], [2]])
    assert mean.tolist() == [1.0] and std.tolist() == [1.0]
    mean, std = coordinate_stats([[0, 4], [2, 0]])
    assert mean.tolist() == [1.0, 2.0] and std.tolist() == [1.0, 2.0]


def test_coordinate_stats_empty_rejected():
    with pytest.raises(ValueError):
        coordinate_stats([])


@given(
    st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
    st.floats(-100, 100),
)
@settings(max_examples=100, deadline=None)
def test_add_scaled_matches_compensated_sum(xs, alpha):
    ys = [v / 2 for v in xs]
    got = add_scaled(xs, alpha, ys)
    expect = [math.fsum([x, alpha * y]) for x, y in zip(xs, ys)]
    np.testing.assert_allclose(got, expect, rtol=1e-12, atol=1e-12)


def test_rng_stream_reproducible():
    a = RngStream(7).substream("grad", 3, 12).generator().normal(size=10)
    b = RngStream(7).substream("grad", 3, 12).generator().normal(size=10)
    np.testing.assert_array_equal(a, b)


def test_rng_stream_distinct_ids_differ():
    a = RngStream(7).substream("grad", 3, 12).generator().normal(size=10)
    b = RngStream(7).substream("grad", 3, 13).generator().normal(size=10)
    c = RngStream(8).substream("grad", 3, 12).generator().normal(size=10)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_stream_string_and_int_keys_stable():
    s1 = RngStream(0, ("sample", 1))
    s2 = RngStream(0).substream("sample", 1)
    assert s1 == s2
    assert hash(s1) == hash(s2)


def test_rng_stream_substream_does_not_mutate_parent():
    root = RngStream(5)
    child = root.substream(1)
    assert root.stream_id == ()
    assert child.stream_id == (1,)


def test_rng_substreams_statistically_plausible():
    # means of many independent substreams should look standard normal / sqrt(k)
    draws = np.array(
        [RngStream(3).substream("x", i).generator().normal() for i in range(2000)]
    )
    assert abs(draws.mean()) < 5 / math.sqrt(2000)
    assert abs(draws.std() - 1.0) < 0.1
