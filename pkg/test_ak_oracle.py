#!/usr/bin/env python3
"""Test script for the A_k oracle and flat-pair fixtures."""

import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))


def test_ak_distance_examples():
    """Test ak_distance on hand-checked pairs."""
    print("\n" + "=" * 60)
    print("Testing ak_distance...")
    print("=" * 60)

    from histotest.ak_oracle import ak_distance
    from histotest.measures import from_weights, l1_distance

    p = from_weights([0.5, 0.0, 0.5, 0.0])
    q = from_weights([0.0, 0.5, 0.0, 0.5])

    one = ak_distance(p, q, 1)
    assert abs(one.value) < 1e-12
    print(f"✓ k=1 compares total masses: {one.value}")

    two = ak_distance(p, q, 2)
    assert abs(two.value - 1.0) < 1e-12
    assert two.partition.interior_cuts == (1,)
    print(f"✓ k=2 gives 1.0 with the smallest cut {two.partition.interior_cuts}")

    four = ak_distance(p, q, 4)
    assert abs(four.value - 2.0) < 1e-12
    assert abs(ak_distance(p, q, 10).value - l1_distance(p, q)) < 1e-12
    print(f"✓ k >= n recovers l1")

    assert ak_distance(p, p, 3).value == 0.0
    payload = two.to_dict()
    assert payload["intervals"] == [[1, 1], [2, 4]]
    assert payload["k_used"] == 2
    print(f"✓ to_dict lists 1-based intervals")

    try:
        ak_distance(p, q, 0)
        assert False, "k=0 should be rejected"
    except ValueError:
        print(f"✓ k < 1 rejected")

    print("\n✅ ak_distance tests PASSED")
    return True


def test_ak_matches_bruteforce():
    """Cross-check the dynamic program against exhaustive search."""
    print("\n" + "=" * 60)
    print("Testing ak_distance against brute force...")
    print("=" * 60)

    from histotest.ak_oracle import ak_bruteforce, ak_distance
    from histotest.measures import from_weights

    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(1, 11))
        k = int(rng.integers(1, 5))
        p = from_weights(rng.dirichlet(np.ones(n)))
        q = from_weights(rng.dirichlet(np.ones(n)))
        fast = ak_distance(p, q, k)
        assert abs(fast.value - ak_bruteforce(p, q, k)) < 1e-12, (n, k)
        assert fast.k_used <= k
    print(f"✓ 500 random pairs (n <= 10, k <= 4) agree within 1e-12")

    for n in (8, 12):
        p = from_weights(rng.dirichlet(np.ones(n)))
        q = from_weights(rng.dirichlet(np.ones(n)))
        for k in range(1, n + 2):
            assert abs(ak_distance(p, q, k).value - ak_bruteforce(p, q, k)) < 1e-12, (n, k)
    print(f"✓ Every k up to n + 1 agrees at n = 8 and n = 12")

    # long constant runs of p - q collapse without changing the answer
    p = from_weights(np.repeat([0.1, 0.3, 0.1, 0.5], [3, 4, 2, 1]) / 1.7)
    q = from_weights(np.full(10, 0.1))
    for k in (1, 2, 3, 5):
        assert abs(ak_distance(p, q, k).value - ak_bruteforce(p, q, k)) < 1e-12
    print(f"✓ Run compression agrees on piecewise-constant inputs")

    try:
        big = from_weights(np.full(21, 1 / 21))
        ak_bruteforce(big, big, 2)
        assert False, "brute force should refuse large n"
    except ValueError:
        print(f"✓ Brute force limited to small n")

    print("\n✅ Brute-force cross-check PASSED")
    return True


def test_ak_monotone_and_partition():
    """A_k grows with k up to l1, A_1 is the mass gap, and the partition reproduces the value."""
    print("\n" + "=" * 60)
    print("Testing A_k monotonicity and returned partitions...")
    print("=" * 60)

    from histotest.ak_oracle import ak_distance
    from histotest.measures import from_weights, l1_distance, reduce

    rng = np.random.default_rng(77)
    for _ in range(200):
        n = int(rng.integers(1, 41))
        # unequal masses so A_1 is not trivially zero
        p = from_weights(rng.dirichlet(np.ones(n))).scaled(float(rng.uniform(0.5, 1.5)))
        q = from_weights(rng.dirichlet(np.ones(n))).scaled(float(rng.uniform(0.5, 1.5)))
        l1 = l1_distance(p, q)

        assert abs(ak_distance(p, q, 1).value - abs(p.mass - q.mass)) < 1e-12

        previous = 0.0
        for k in range(1, n + 2):
            result = ak_distance(p, q, k)
            assert result.value >= previous - 1e-12, (n, k)
            assert result.value <= l1 + 1e-12
            assert result.partition.size <= k
            assert result.partition.n == n
            recomputed = l1_distance(reduce(p, result.partition), reduce(q, result.partition))
            assert abs(recomputed - result.value) < 1e-12
            previous = result.value
        assert abs(previous - l1) < 1e-12
    print(f"✓ 200 scaled pairs: monotone in k, bounded by l1, A_1 = |mass(p) - mass(q)|")
    print(f"✓ Returned partitions have at most k intervals and reproduce the value")

    print("\n✅ Monotonicity tests PASSED")
    return True


def test_histogram_flatten_and_runs():
    """Test histogram_flatten and count_runs."""
    print("\n" + "=" * 60)
    print("Testing histogram_flatten...")
    print("=" * 60)

    from histotest.ak_oracle import count_runs, histogram_flatten

    assert np.allclose(histogram_flatten([(2, 0.25), (2, 0.25)]).weights, [0.25] * 4)
    flat = histogram_flatten([(1, 0.7), (3, 0.1)])
    assert np.allclose(flat.weights, [0.7, 0.1, 0.1, 0.1])
    assert count_runs(flat) == 2
    print(f"✓ Pieces expand to a measure with {count_runs(flat)} runs")

    for bad in ([], [(0, 0.5)], [(2, -0.1)]):
        try:
            histogram_flatten(bad)
            assert False, f"{bad} should be rejected"
        except ValueError:
            pass
    print(f"✓ Empty, zero-length and negative pieces rejected")

    print("\n✅ histogram_flatten tests PASSED")
    return True


def test_flat_pairs_and_reports():
    """Test random_flat_pair targets and the l1k / dka reports."""
    print("\n" + "=" * 60)
    print("Testing flat-pair fixtures...")
    print("=" * 60)

    from histotest.ak_oracle import ak_distance, count_runs, dka_report, l1k_report, random_flat_pair
    from histotest.measures import l1_distance

    rng = np.random.default_rng(5)
    for _ in range(10):
        p, q = random_flat_pair(1024, 8, rng, l1_target=0.5)
        assert abs(l1_distance(p, q) - 0.5) < 1e-9
        assert abs(q.mass - 1.0) < 1e-9
        assert count_runs(q) <= 8
        # both sides are 8-flat, so A_16 sees the whole l1 distance
        assert abs(ak_distance(p, q, 16).value - 0.5) < 1e-9
    print(f"✓ Targeted pairs hit l1 = 0.5 exactly and stay 8-flat")

    p, q = random_flat_pair(64, 4, rng)
    assert abs(p.mass - 1.0) < 1e-9 and abs(q.mass - 1.0) < 1e-9
    assert count_runs(p) <= 4
    print(f"✓ Untargeted pairs are independent 4-flat distributions")

    report = l1k_report(p, q, 3)
    assert report["value"] <= report["l1"] + 1e-12
    capped = dka_report(p, q, 64, 1.0)
    assert abs(capped["value"] - capped["l1"]) < 1e-12
    assert capped["eligible"] == 64
    print(f"✓ Reports agree with l1 when the cap is inactive")

    print("\n✅ Flat-pair tests PASSED")
    return True


def test_continuous_ak():
    """Test A_k on piecewise-constant measures."""
    print("\n" + "=" * 60)
    print("Testing continuous_ak_distance...")
    print("=" * 60)

    from histotest.ak_oracle import continuous_ak_distance
    from histotest.measures import piecewise_from_pieces

    a = piecewise_from_pieces([(0.0, 1.0, 1.0), (1.0, 2.0, 0.0)])
    b = piecewise_from_pieces([(0.0, 1.0, 0.0), (1.0, 2.0, 1.0)])
    result, breakpoints = continuous_ak_distance(a, b, 2)
    assert abs(result.value - 2.0) < 1e-12
    assert breakpoints[result.partition.cuts[1]] == 1.0
    single, _ = continuous_ak_distance(a, b, 1)
    assert abs(single.value) < 1e-12
    print(f"✓ Cuts land on refinement breakpoints")

    print("\n✅ continuous_ak_distance tests PASSED")
    return True


def test_structural_properties():
    """Merge inequality, split identities and k-flat equivalence on random pairs."""
    print("\n" + "=" * 60)
    print("Testing structural properties...")
    print("=" * 60)

    from histotest.ak_oracle import ak_distance, random_flat_pair
    from histotest.measures import (
        SampleSet,
        from_weights,
        l1_distance,
        merge_pairs,
        pairing_partition,
        reduce,
        split,
        top_k_discrepancy,
    )

    rng = np.random.default_rng(31)
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        k = int(rng.integers(1, 9))
        p = from_weights(rng.dirichlet(np.ones(n)))
        q = from_weights(rng.dirichlet(np.ones(n)))
        merged = ak_distance(merge_pairs(p), merge_pairs(q), k).value
        assert ak_distance(p, q, k).value <= merged + 2 * top_k_discrepancy(p, q, k) + 1e-9
        assert merge_pairs(p) == reduce(p, pairing_partition(n))
    print(f"✓ A_k(p, q) <= A_k(merged) + 2 * top-k discrepancy on 1000 pairs (n <= 64, k <= 8)")

    for _ in range(500):
        n = int(rng.integers(1, 40))
        p = from_weights(rng.dirichlet(np.ones(n)))
        q = from_weights(rng.dirichlet(np.ones(n)))
        markers = SampleSet.from_counts(rng.poisson(1.0, size=n))
        more = SampleSet.from_counts(markers.counts + rng.poisson(1.0, size=n))
        p_s, _ = split(p, markers)
        q_s, _ = split(q, markers)
        assert abs(l1_distance(p_s, q_s) - l1_distance(p, q)) < 1e-12
        assert split(p, more)[0].l2_norm <= p_s.l2_norm + 1e-12
    print(f"✓ Splitting keeps l1 and only shrinks l2 as markers are added (500 draws)")

    p = from_weights(rng.dirichlet(np.ones(50)))
    for m in (10, 100):
        counts = rng.multinomial(m, p.weights, size=10000)
        norms_sq = np.sum(p.weights ** 2 / (1 + counts), axis=1)
        assert norms_sq.mean() <= 1.05 / m
        print(f"✓ m={m}: mean ||p_S||^2 = {norms_sq.mean():.5f} <= 1.05/m")

    for _ in range(200):
        k = int(rng.integers(1, 17))
        n = int(rng.integers(k, 513))
        p, q = random_flat_pair(n, k, rng)
        assert abs(ak_distance(p, q, 2 * k).value - l1_distance(p, q)) < 1e-12
    print(f"✓ A_2k equals l1 on 200 k-flat pairs (k <= 16, n <= 512)")

    print("\n✅ Structural property tests PASSED")
    return True


def main():
    """Run all A_k oracle tests."""
    print("\n" + "=" * 60)
    print("A_K ORACLE - TEST SUITE")
    print("=" * 60)

    all_passed = True
    for test in (
        test_ak_distance_examples,
        test_ak_matches_bruteforce,
        test_ak_monotone_and_partition,
        test_histogram_flatten_and_runs,
        test_flat_pairs_and_reports,
        test_continuous_ak,
        test_structural_properties,
    ):
        try:
            if not test():
                all_passed = False
        except Exception as e:
            print(f"\n❌ {test.__name__} FAILED: {e}")
            import traceback
            traceback.print_exc()
            all_passed = False

    print("\n" + "=" * 60)
    if all_passed:
        print("✅ ALL A_K ORACLE TESTS PASSED!")
    else:
        print("❌ SOME TESTS FAILED")
        print("Please review the errors above.")
    print("=" * 60 + "\n")

    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
