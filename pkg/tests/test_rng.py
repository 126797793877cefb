"""Named random streams."""

import numpy as np
import pytest

from score_guided_planning.errors import ConfigError
from score_guided_planning.rng import STREAMS, make_rng


def test_same_seed_and_stream_reproduce():
    a = make_rng(3, "batch").standard_normal(5)
    b = make_rng(3, "batch").standard_normal(5)
    np.testing.assert_array_equal(a, b)


def test_streams_are_independent():
    assert not np.array_equal(make_rng(3, "batch").random(4), make_rng(3, "noise").random(4))
    assert not np.array_equal(make_rng(3, "batch").random(4), make_rng(4, "batch").random(4))


def test_numeric_stream_ids_alias_named_ones():
    np.testing.assert_array_equal(
        make_rng(1, STREAMS["cem"]).random(3), make_rng(1, "cem").random(3)
    )


@pytest.mark.parametrize("seed,stream", [(1, "nope"), (-1, "init"), (1, -2)])
def test_invalid_seed_or_stream(seed, stream):
    with pytest.raises(ConfigError):
        make_rng(seed, stream)
