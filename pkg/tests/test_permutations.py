import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfloop_seg.permutations import (
    Permutation,
    PermutationSet,
    enumerate_candidates,
    hamming_distance,
    pairwise_min_distance,
    sample_iteration_permutations,
    select_max_hamming_subset,
)


def perm(mapping, grid=2):
    return Permutation(tuple(mapping), grid)


perms_grid2 = st.permutations(list(range(4))).map(lambda m: perm(m))


def test_permutation_validates_bijection():
    with pytest.raises(ValueError):
        perm([0, 1, 2, 2])
    with pytest.raises(ValueError):
        perm([0, 1, 2])
    with pytest.raises(ValueError):
        Permutation((0,), 1)


def test_hamming_hand_values():
    assert hamming_distance(perm([0, 1, 2, 3]), perm([0, 1, 2, 3])) == 0
    assert hamming_distance(perm([0, 1, 2, 3]), perm([1, 0, 2, 3])) == 2
    assert hamming_distance(perm([0, 1, 2, 3]), perm([3, 0, 1, 2])) == 4


def test_hamming_grid_mismatch():
    with pytest.raises(ValueError):
        hamming_distance(perm([0, 1, 2, 3], grid=2), Permutation(tuple(range(9)), 3))


@given(perms_grid2, perms_grid2, perms_grid2)
def test_hamming_is_a_metric(p, q, r):
    assert hamming_distance(p, q) >= 0
    assert hamming_distance(p, q) == hamming_distance(q, p)
    assert (hamming_distance(p, q) == 0) == (p.mapping == q.mapping)
    assert hamming_distance(p, r) <= hamming_distance(p, q) + hamming_distance(q, r)


def test_enumerate_full_grid2(grid2_candidates):
    assert len(grid2_candidates) == 24
    assert grid2_candidates[0].mapping == (0, 1, 2, 3)
    assert len({c.mapping for c in grid2_candidates}) == 24


def test_enumerate_full_grid3_count():
    cands = enumerate_candidates(3, 10**6)
    assert len(cands) == math.factorial(9)


def test_enumerate_sampled_distinct_bijections():
    cands = enumerate_candidates(2, 5, seed=7)
    assert len(cands) == 5
    assert len({c.mapping for c in cands}) == 5
    for c in cands:
        assert sorted(c.mapping) == [0, 1, 2, 3]


def test_enumerate_rejects_bad_args():
    with pytest.raises(ValueError):
        enumerate_candidates(1, 10)
    with pytest.raises(ValueError):
        enumerate_candidates(2, 0)


def test_select_second_pick_is_max_distance(grid2_candidates):
    # first pick pinned to the identity; the farthest candidate is a derangement
    pset = select_max_hamming_subset(grid2_candidates, 2, first_index=0)
    second = pset.permutations[1]
    assert hamming_distance(grid2_candidates[0], second) == 4
    best = max(hamming_distance(grid2_candidates[0], c) for c in grid2_candidates[1:])
    assert best == 4


def test_select_all_grid2_min_distance_two(grid2_candidates):
    pset = select_max_hamming_subset(grid2_candidates, 24, seed=5)
    assert pset.min_pairwise_distance == 2
    # pigeonhole: no two distinct permutations differ in exactly one slot
    for i, p in enumerate(grid2_candidates):
        for q in grid2_candidates[i + 1 :]:
            assert hamming_distance(p, q) != 1


def test_select_reproducible(grid2_candidates):
    a = select_max_hamming_subset(grid2_candidates, 6, seed=9)
    b = select_max_hamming_subset(grid2_candidates, 6, seed=9)
    assert [p.mapping for p in a.permutations] == [p.mapping for p in b.permutations]
    assert a.min_pairwise_distance == b.min_pairwise_distance


def test_select_min_distance_is_recomputable(grid2_candidates):
    pset = select_max_hamming_subset(grid2_candidates, 7, seed=2)
    assert pset.min_pairwise_distance == pairwise_min_distance(pset.permutations)


def test_select_rejects_k_too_large(grid2_candidates):
    with pytest.raises(ValueError):
        select_max_hamming_subset(grid2_candidates, 25, seed=0)
    with pytest.raises(ValueError):
        select_max_hamming_subset(grid2_candidates, 1, seed=0)


def test_select_skips_duplicate_candidates():
    cands = [perm([0, 1, 2, 3]), perm([0, 1, 2, 3]), perm([1, 0, 3, 2]), perm([2, 3, 0, 1])]
    pset = select_max_hamming_subset(cands, 3, first_index=0)
    assert len({p.mapping for p in pset.permutations}) == 3


def _greedy_oracle(candidates, k, first_index):
    """Independent brute-force reading of the greedy max-min rule."""
    chosen = [first_index]
    while len(chosen) < k:
        best_idx, best_score = None, -1
        for idx, cand in enumerate(candidates):
            if any(candidates[c].mapping == cand.mapping for c in chosen):
                continue
            score = min(
                sum(a != b for a, b in zip(cand.mapping, candidates[c].mapping)) for c in chosen
            )
            if score > best_score:
                best_idx, best_score = idx, score
        chosen.append(best_idx)
    return [candidates[i].mapping for i in chosen]


@pytest.mark.parametrize("k", [2, 5, 10])
def test_select_matches_bruteforce_oracle(grid2_candidates, k):
    for seed in range(8):
        first = int(np.random.default_rng(seed).integers(len(grid2_candidates)))
        pset = select_max_hamming_subset(grid2_candidates, k, seed=seed)
        assert [p.mapping for p in pset.permutations] == _greedy_oracle(
            grid2_candidates, k, first
        )


def test_select_paper_scale_grid3_structure():
    # K=100 from a sampled grid-3 pool: distinct bijections of 9 elements
    cands = enumerate_candidates(3, 5000, seed=1)
    pset = select_max_hamming_subset(cands, 100, seed=1)
    assert pset.k == 100
    assert len({p.mapping for p in pset.permutations}) == 100
    assert all(sorted(p.mapping) == list(range(9)) for p in pset.permutations)
    assert 2 <= pset.min_pairwise_distance <= 9


def test_sample_iteration_permutations_exhaustive(perm_set_grid2):
    idx = sample_iteration_permutations(perm_set_grid2, perm_set_grid2.k, seed=3)
    assert sorted(idx) == list(range(perm_set_grid2.k))


def test_sample_iteration_permutations_deterministic(perm_set_grid2):
    a = sample_iteration_permutations(perm_set_grid2, 4, seed=11)
    b = sample_iteration_permutations(perm_set_grid2, 4, seed=11)
    assert a == b
    assert len(set(a)) == 4


def test_sample_iteration_permutations_bounds(perm_set_grid2):
    with pytest.raises(ValueError):
        sample_iteration_permutations(perm_set_grid2, 1, seed=0)
    with pytest.raises(ValueError):
        sample_iteration_permutations(perm_set_grid2, perm_set_grid2.k + 1, seed=0)


def test_paper_scale_sampling():
    cands = enumerate_candidates(3, 3000, seed=2)
    pset = select_max_hamming_subset(cands, 100, seed=2)
    idx = sample_iteration_permutations(pset, 10, seed=5)
    assert len(idx) == 10 and len(set(idx)) == 10


def test_set_save_load_roundtrip(tmp_path, perm_set_grid2):
    path = tmp_path / "perms.txt"
    perm_set_grid2.save(path)
    loaded = PermutationSet.load(path)
    assert loaded == perm_set_grid2
    header = path.read_text().splitlines()[0]
    assert header.startswith("grid=2 k=8 seed=0 min_dist=")


def test_set_requires_distinct():
    p = perm([0, 1, 2, 3])
    with pytest.raises(ValueError):
        PermutationSet((p, p), 2, 0, 0)
