import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdrec.errors import (
    BootstrapDegenerateError,
    NoComparableSitesError,
    ReadSymmetryError,
    SaturationError,
)
from gdrec.gendist import (
    DistanceMatrix,
    ModelTag,
    PairCounts,
    bootstrap_se,
    complete_deletion_mask,
    distance_matrix,
    jc69,
    jc69_delta_se,
    k2p,
    pair_counts,
    pairwise_distance,
)
from gdrec.seqio import AlignedSet


def test_pair_counts_identity():
    pc = pair_counts("ACGT", "ACGT")
    assert pc.compared_sites == 4
    assert (pc.transitions_AG, pc.transitions_CT, pc.transversions) == (0, 0, 0)
    assert pc.base_counts == (2, 2, 2, 2)


def test_pair_counts_gap_dropped():
    pc = pair_counts("AC-GT", "ACAGA")
    assert pc.compared_sites == 4
    assert pc.transversions == 1
    assert pc.transitions_AG == pc.transitions_CT == 0
    assert pairwise_distance(pc, "P_DIST") == 0.25


def test_pair_counts_classes():
    pc = pair_counts("AGCTAC", "GATCCA")
    assert pc.transitions_AG == 2
    assert pc.transitions_CT == 2
    assert pc.transversions == 2
    assert sum(pc.base_counts) == 2 * pc.compared_sites


def test_pair_counts_n_and_mask():
    assert pair_counts("ANGT", "ACGA").compared_sites == 3
    pc = pair_counts("ACGT", "ACGA", mask=[True, True, True, False])
    assert pc.compared_sites == 3 and pc.differences == 0


def test_no_comparable_sites():
    with pytest.raises(NoComparableSitesError):
        pair_counts("----", "ACGT")


def test_identical_is_zero_for_every_model():
    pc = pair_counts("ACGTACGT", "ACGTACGT")
    for model in ModelTag:
        assert pairwise_distance(pc, model, _uniform_pool()) == 0.0


def _uniform_pool():
    from gdrec.gendist import PooledParams
    return PooledParams((0.25, 0.25, 0.25, 0.25))


def test_jc69_value():
    assert jc69(0.1) == pytest.approx(-0.75 * math.log(1 - 0.4 / 3), abs=1e-12)
    assert jc69(0.1) == pytest.approx(0.107326, abs=1e-6)


def test_k2p_value():
    assert k2p(0.1, 0.05) == pytest.approx(0.170181, abs=1e-6)


def test_saturation_raises():
    with pytest.raises(SaturationError):
        jc69(0.75)
    pc = PairCounts(4, 1, 1, 2, (2, 2, 2, 2))
    with pytest.raises(SaturationError):
        pairwise_distance(pc, ModelTag.K2P)


def _swap_pairs(a: str, pairs: dict[tuple[str, str], int]) -> str:
    """Swap x<->y site pairs so base composition is preserved."""
    b = list(a)
    used = set()
    for (x, y), k in pairs.items():
        xs = [i for i, ch in enumerate(a) if ch == x and i not in used][:k]
        ys = [i for i, ch in enumerate(a) if ch == y and i not in used][:k]
        for i, j in zip(xs, ys):
            b[i], b[j] = y, x
            used.update((i, j))
    return "".join(b)


def test_tn93_collapses_to_jc69():
    # uniform composition, A<->G and C<->T each a sixth of the differences
    a = "ACGT" * 150
    b = _swap_pairs(a, {("A", "G"): 3, ("C", "T"): 3, ("A", "C"): 3, ("G", "T"): 3,
                        ("A", "T"): 3, ("C", "G"): 3})
    aln = AlignedSet(("a", "b"), (a, b))
    pc = pair_counts(a, b)
    assert pc.transitions_AG == pc.transitions_CT == 6
    assert pc.transversions == 24
    tn = distance_matrix(aln, "TN93_MCL").get("a", "b")
    jc = distance_matrix(aln, "JC69").get("a", "b")
    assert tn == pytest.approx(jc, abs=1e-9)
    assert jc == pytest.approx(jc69(36 / 600), abs=1e-15)


def test_distance_matrix_identical_is_zero():
    aln = AlignedSet(("a", "b", "c"), ("ACGTA",) * 3)
    dm = distance_matrix(aln, "JC69")
    assert np.array_equal(dm.values, np.zeros((3, 3)))


def test_saturation_annotated_with_pair():
    aln = AlignedSet(("a", "b"), ("ACGT", "CATG"))
    with pytest.raises(SaturationError) as info:
        distance_matrix(aln, "JC69")
    assert info.value.pair == ("a", "b")


def test_complete_deletion_mask():
    aln = AlignedSet(("a", "b", "c"), ("AC-T", "ACGT", "NCGT"))
    assert complete_deletion_mask(aln).tolist() == [False, True, False, True]


def test_bootstrap_identical_zero_se():
    aln = AlignedSet(("a", "b", "c"), ("ACGTACGTAC",) * 3)
    res = bootstrap_se(aln, "JC69", B=10, seed=1)
    assert np.all(res.matrix.stderr == 0)
    assert np.all(res.matrix.ci_high - res.matrix.ci_low == 0)


def test_bootstrap_default_B():
    aln = AlignedSet(("a", "b"), ("ACGTACGTAC", "ACGTACGTAA"))
    assert bootstrap_se(aln, "P_DIST", seed=0).replicates.shape[0] == 100


def test_bootstrap_matches_independent_trace():
    a, b = "ACGTACGTACGTAAGGTTCC", "ACGAACGTTCGTAAGCTTCA"
    aln = AlignedSet(("a", "b"), (a, b))
    res = bootstrap_se(aln, "JC69", B=5, seed=42)
    expected = []
    for rep in range(5):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([42, rep])))
        cols = rng.integers(0, len(a), size=len(a))
        diffs = sum(a[c] != b[c] for c in cols)
        expected.append(-0.75 * math.log(1 - 4 / 3 * diffs / len(a)))
    assert np.allclose(res.replicates[:, 0, 1], expected, rtol=1e-13, atol=0)
    assert res.matrix.stderr[0, 1] == pytest.approx(np.std(expected, ddof=1), rel=1e-12)


def test_bootstrap_reproducible():
    rng = np.random.default_rng(3)
    seqs = ["".join(rng.choice(list("ACGT"), 80)) for _ in range(2)]
    seqs[1] = seqs[0][:60] + seqs[1][60:]
    aln = AlignedSet(("a", "b"), tuple(seqs))
    r1 = bootstrap_se(aln, "K2P", B=20, seed=9)
    r2 = bootstrap_se(aln, "K2P", B=20, seed=9)
    assert np.array_equal(r1.replicates, r2.replicates)


def test_bootstrap_degenerate():
    aln = AlignedSet(("a", "b"), ("ACGTAC", "CATGCA"))
    with pytest.raises((BootstrapDegenerateError, SaturationError)):
        bootstrap_se(aln, "JC69", B=10, seed=0)


def test_bootstrap_se_near_delta_method():
    from gdrec.repro import jc_pair
    aln = jc_pair(1000, 0.2, 0)
    res = bootstrap_se(aln, "JC69", B=200, seed=0)
    p = pair_counts(*aln.sequences).differences / 1000
    assert res.matrix.stderr[0, 1] == pytest.approx(jc69_delta_se(p, 1000), rel=0.2)


def test_csv_round_trip_and_symmetry_check():
    dm = DistanceMatrix(("a", "b", "c"), [[0, 0.1, 0.2], [0.1, 0, 0.3], [0.2, 0.3, 0]])
    back = DistanceMatrix.from_csv(dm.to_csv())
    assert np.array_equal(back.values, dm.values)
    assert back.labels == dm.labels
    bad = ",a,b\na,0,0.1\nb,0.1000001,0\n"
    with pytest.raises(ReadSymmetryError):
        DistanceMatrix.from_csv(bad)


def test_distance_matrix_invariants():
    with pytest.raises(ValueError):
        DistanceMatrix(("a", "b"), [[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        DistanceMatrix(("a", "b"), [[0, -1], [-1, 0]])


@given(st.floats(0.0, 0.74))
def test_jc69_at_least_p(p):
    # one rounding of slack for p so small that jc69(p) and p share an ulp
    assert jc69(p) >= p * (1 - 4 * np.finfo(float).eps)


@settings(max_examples=200)
@given(st.integers(20, 200), st.data())
def test_distances_monotone_in_counts(n, data):
    ag = data.draw(st.integers(0, n // 8))
    ct = data.draw(st.integers(0, n // 8))
    tv = data.draw(st.integers(0, n // 8))
    which = data.draw(st.sampled_from(["ag", "ct", "tv"]))
    base = PairCounts(n, ag, ct, tv, (n // 2, n // 2, n // 2, 2 * n - 3 * (n // 2)))
    more = PairCounts(n, ag + (which == "ag"), ct + (which == "ct"), tv + (which == "tv"),
                      base.base_counts)
    pool = _uniform_pool()
    for model in ModelTag:
        assert pairwise_distance(more, model, pool) >= pairwise_distance(base, model, pool)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(ModelTag)))
def test_distance_matrix_permutation_equivariant(seed, model):
    rng = np.random.default_rng(seed)
    root = rng.choice(list("ACGT"), 60)
    seqs = []
    for _ in range(5):
        s = root.copy()
        flip = rng.random(60) < 0.1
        s[flip] = rng.choice(list("ACGT"), flip.sum())
        seqs.append("".join(s))
    labels = tuple(f"t{i}" for i in range(5))
    perm = rng.permutation(5)
    dm = distance_matrix(AlignedSet(labels, tuple(seqs)), model)
    dp = distance_matrix(AlignedSet(tuple(labels[i] for i in perm),
                                    tuple(seqs[i] for i in perm)), model)
    assert np.allclose(dp.values, dm.values[np.ix_(perm, perm)], rtol=0, atol=1e-14)
