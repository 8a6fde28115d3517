import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdrec.errors import NewickParseError
from gdrec.gendist import DistanceMatrix
from gdrec.neuralcore import make_rng
from gdrec.phylo import (
    PhyloTree,
    neighbor_joining,
    parse_newick,
    patristic_matrix,
    read_newick,
    to_newick,
    write_newick,
)
from gdrec.repro import random_additive_tree


def _three():
    return DistanceMatrix(("a", "b", "c"), [[0, 0.3, 0.4], [0.3, 0, 0.5], [0.4, 0.5, 0]])


def _pendants(tree):
    return {tree.labels[u] if u < tree.n_leaves else tree.labels[v]: length
            for u, v, length in tree.edges}


def test_three_taxa_pendants():
    tree = neighbor_joining(_three())
    pend = _pendants(tree)
    assert pend["a"] == pytest.approx(0.1, abs=1e-12)
    assert pend["b"] == pytest.approx(0.2, abs=1e-12)
    assert pend["c"] == pytest.approx(0.3, abs=1e-12)
    assert to_newick(tree) == "(a:0.1,b:0.2,c:0.3);"


def test_two_identical_taxa():
    tree = neighbor_joining(DistanceMatrix(("x", "y"), [[0, 0], [0, 0]]))
    assert tree.edges == [(0, 1, 0.0)]


def test_patristic_single_edge():
    tree = PhyloTree(("a", "b"), [(0, 1, 0.3)])
    assert np.array_equal(patristic_matrix(tree).values, [[0, 0.3], [0.3, 0]])


def test_patristic_star():
    tree = PhyloTree(("a", "b", "c"), [(0, 3, 0.1), (1, 3, 0.2), (2, 3, 0.3)])
    assert np.allclose(patristic_matrix(tree).values, _three().values, atol=1e-15)


def test_two_leaf_newick():
    tree = PhyloTree(("A", "B"), [(0, 1, 0.3)])
    assert to_newick(tree) == "(A:0.15,B:0.15);"
    back = parse_newick("(A:0.15,B:0.15);")
    assert back.edges == [(0, 1, 0.3)]


def test_eight_taxa_exact_recovery():
    tree = random_additive_tree(8, make_rng(7))
    dm = patristic_matrix(tree)
    nj = neighbor_joining(dm)
    assert nj.splits() == tree.splits()
    assert np.allclose(patristic_matrix(nj).values, dm.values, atol=1e-9)
    assert not nj.warnings


@pytest.mark.parametrize("text", ["((A:1,B:2);", "(A:1,B:2", "(A:x,B:1);", "(A:1,B:1)C;x", ""])
def test_newick_parse_errors(text):
    with pytest.raises(NewickParseError):
        parse_newick(text)


def test_newick_error_has_position():
    with pytest.raises(NewickParseError) as info:
        parse_newick("((A:1,B:2);")
    assert info.value.position == 10


def test_quoted_labels_round_trip(tmp_path):
    tree = PhyloTree(("a b", "c:d", "e'f"), [(0, 3, 0.1), (1, 3, 0.2), (2, 3, 0.3)])
    path = tmp_path / "t.nwk"
    write_newick(tree, path, precision=None)
    back = read_newick(path)
    assert set(back.labels) == set(tree.labels)
    assert np.allclose(patristic_matrix(back).subset(tree.labels).values,
                       patristic_matrix(tree).values, atol=1e-12)


def test_negative_branch_clamped_and_warned():
    dm = DistanceMatrix(("a", "b", "c", "d"),
                        [[0, 0.1, 1.0, 1.0], [0.1, 0, 1.0, 0.2], [1.0, 1.0, 0, 1.0],
                         [1.0, 0.2, 1.0, 0]])
    tree = neighbor_joining(dm)
    assert all(length >= 0 for _, _, length in tree.edges)
    assert tree.warnings
    assert tree.total_length() >= 0


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 12), st.integers(0, 2**32 - 1))
def test_nj_exact_on_additive(n, seed):
    tree = random_additive_tree(n, make_rng(seed))
    dm = patristic_matrix(tree)
    nj = neighbor_joining(dm)
    assert nj.splits() == tree.splits()
    assert np.allclose(patristic_matrix(nj).values, dm.values, rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 10), st.integers(0, 2**32 - 1))
def test_newick_round_trip(n, seed):
    rng = make_rng(seed)
    tree = random_additive_tree(n, rng)
    back = parse_newick(to_newick(tree, precision=None))
    assert back.splits() == tree.splits()
    assert np.allclose(patristic_matrix(back).subset(tree.labels).values,
                       patristic_matrix(tree).values, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 10), st.integers(0, 2**32 - 1))
def test_nj_permutation_invariant(n, seed):
    rng = make_rng(seed)
    tree = random_additive_tree(n, rng)
    dm = patristic_matrix(tree)
    perm = rng.permutation(n)
    labels = tuple(dm.labels[i] for i in perm)
    nj_perm = neighbor_joining(dm.subset(labels))
    assert nj_perm.splits() == neighbor_joining(dm).splits()
