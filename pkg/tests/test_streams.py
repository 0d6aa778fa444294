import numpy as np

from branchlab import streams
from branchlab.genealogy import Label


def test_same_key_gives_same_draws():
    a = streams.label_stream(42, Label((0,)), "brownian").next_normal(100)
    b = streams.label_stream(42, Label((0,)), "brownian").next_normal(100)
    assert np.array_equal(a, b)


def test_kinds_are_uncorrelated():
    lab = Label((0,))
    u = streams.label_stream(9, lab, "brownian").next_uniform(10_000)
    v = streams.label_stream(9, lab, "poisson").next_uniform(10_000)
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.05


def test_sibling_labels_get_distinct_streams():
    a = streams.label_stream(1, Label((0,)), "mark").next_uniform(1)
    b = streams.label_stream(1, Label((1,)), "mark").next_uniform(1)
    assert a[0] != b[0]


def test_child_hash_matches_path_hash():
    parent = streams.label_hash((2, 0))
    assert int(streams.child_hash(np.uint64(parent), 3)) == streams.label_hash((2, 0, 3))


def test_uniform_is_in_half_open_unit_interval():
    u = streams.uniform(np.uint64(5), np.arange(50_000, dtype=np.uint64))
    assert u.min() > 0 and u.max() <= 1
    assert abs(u.mean() - 0.5) < 0.01


def test_normal_moments():
    z = streams.normal(np.uint64(77), np.arange(100_000, dtype=np.uint64))
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1) < 0.02


def test_replication_seeds_differ_and_repeat():
    s = streams.replication_seed(3, np.arange(1000))
    assert len(np.unique(s)) == 1000
    assert np.array_equal(s, streams.replication_seed(3, np.arange(1000)))
    assert not np.array_equal(s, streams.replication_seed(4, np.arange(1000)))


def test_unknown_kind_rejected():
    import pytest

    with pytest.raises(ValueError):
        streams.label_stream(0, Label((0,)), "banana")
