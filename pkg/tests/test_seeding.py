# tests/test_seeding.py
"""
Tests for named random substreams
"""

import numpy as np

from bimmsbm.seeding import substream


class TestSubstream:
    """Named substreams of one seed"""

    def test_reproducible(self):
        assert np.array_equal(substream(7, "init").random(5), substream(7, "init").random(5))

    def test_names_differ(self):
        assert not np.array_equal(substream(7, "init").random(5), substream(7, "svi").random(5))

    def test_extra_keys_differ(self):
        first = substream(7, "se", 1, 0).random(5)
        second = substream(7, "se", 1, 1).random(5)
        assert not np.array_equal(first, second)

    def test_seeds_differ(self):
        assert not np.array_equal(substream(1, "gof").random(5), substream(2, "gof").random(5))
