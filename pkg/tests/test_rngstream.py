import numpy as np
import pytest

from levybigjump.rngstream import CHUNK, RngStream, chunk_ranges, map_chunks


def test_same_coordinates_reproduce_bits():
    a = RngStream(123, 5).generator().random(1000)
    b = RngStream(123, 5).generator().random(1000)
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = RngStream(123, 5).generator().random(1000)
    b = RngStream(123, 6).generator().random(1000)
    c = RngStream(124, 5).generator().random(1000)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_substream_extends_path():
    s = RngStream(7, 1)
    a = s.substream(2).generator().random(10)
    b = s.substream(3).generator().random(10)
    assert not np.array_equal(a, b)
    assert s.substream(2).subpath == (2,)
    assert s.substream(2, 4).subpath == (2, 4)


def test_substream_pairs_independent_of_flattening():
    s = RngStream(7, 1)
    a = s.substream(2).substream(4).generator().random(10)
    b = s.substream(2, 4).generator().random(10)
    assert np.array_equal(a, b)


def test_seed_range_validated():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(1 << 64)


def test_chunk_ranges_cover():
    n = 2 * CHUNK + 37
    ranges = chunk_ranges(n)
    assert ranges[0] == (0, 0, CHUNK)
    assert ranges[-1][2] == n
    total = sum(hi - lo for _, lo, hi in ranges)
    assert total == n


def _square(task):
    return task * task


def test_map_chunks_preserves_order():
    tasks = list(range(17))
    assert map_chunks(_square, tasks, workers=1) == [t * t for t in tasks]
    assert map_chunks(_square, tasks, workers=4) == [t * t for t in tasks]
