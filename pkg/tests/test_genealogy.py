import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from branchlab.genealogy import (
    ROOT,
    AncestorComparison,
    Label,
    child_label,
    compare,
    enumerate_population,
    is_antichain,
    is_strict_ancestor,
)

L = Label.parse


def test_child_of_root():
    assert str(child_label(ROOT, 0)) == "0"


def test_child_of_deep_label():
    assert str(child_label(L("1·2"), 1)) == "1·2·1"


def test_child_index_four():
    assert child_label(L("0"), 4) == L("0·4")


def test_negative_child_index_rejected():
    with pytest.raises(ValueError):
        child_label(ROOT, -1)


def test_root_text_form():
    assert str(ROOT) == "∅"
    assert L("∅") == ROOT


def test_concat_identity_and_associativity():
    a, b, c = L("1·2"), L("0"), L("3·3")
    assert ROOT.concat(a) == a.concat(ROOT) == a
    assert a.concat(b).concat(c) == a.concat(b.concat(c))


def test_strict_ancestor_examples():
    assert is_strict_ancestor(ROOT, L("0"))
    assert not is_strict_ancestor(L("0"), L("0"))
    assert not is_strict_ancestor(L("1"), L("0·1"))


def test_compare_examples():
    assert compare(L("0"), L("1")) == -1
    assert compare(L("1·0·2"), L("1·1")) == -1
    assert compare(L("2"), L("2")) == 0


def test_compare_rejects_ancestors():
    with pytest.raises(AncestorComparison):
        compare(L("1"), L("1·0"))


def _random_antichain(rng, size):
    """Grow a random genealogy by repeatedly replacing a leaf with children."""
    leaves = [(i,) for i in range(rng.randint(1, 3))]
    for _ in range(size):
        j = rng.randrange(len(leaves))
        parent = leaves.pop(j)
        leaves.extend(parent + (k,) for k in range(rng.randint(0, 3)))
        if not leaves:
            leaves = [(0,)]
    return [Label(p) for p in leaves]


@given(st.integers(0, 10_000))
def test_compare_is_strict_total_order_on_antichains(seed):
    rng = random.Random(seed)
    labs = _random_antichain(rng, 8)
    assert is_antichain(labs)
    for a in labs:
        for b in labs:
            assert compare(a, b) == -compare(b, a)
            assert (compare(a, b) == 0) == (a == b)
            for c in labs:
                if compare(a, b) < 0 and compare(b, c) < 0:
                    assert compare(a, c) < 0


@given(st.integers(0, 10_000))
def test_enumeration_is_a_bijection(seed):
    labs = _random_antichain(random.Random(seed), 8)
    phi = enumerate_population(labs)
    assert sorted(phi.values()) == list(range(1, len(labs) + 1))
    inverse = {v: k for k, v in phi.items()}
    assert all(inverse[phi[lab]] == lab for lab in labs)


def test_enumeration_follows_lexicographic_order():
    phi = enumerate_population([L("1·1"), L("0"), L("1·0·2"), L("1·0·0")])
    assert [str(k) for k, _ in sorted(phi.items(), key=lambda kv: kv[1])] == ["0", "1·0·0", "1·0·2", "1·1"]


def test_antichain_detection():
    assert not is_antichain([L("1"), L("1·0")])
    assert is_antichain([L("0·1"), L("1")])
