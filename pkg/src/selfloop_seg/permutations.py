"""Permutation vocabulary for the jigsaw pretext task.

The K-way jigsaw classification task needs a fixed set of tile permutations
that are easy to tell apart. This module enumerates (or samples) a candidate
pool of permutations of the ``grid_side**2`` tile slots and greedily picks a
subset whose pairwise Hamming distances are large, then samples per-iteration
permutations from that subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations as _lex_permutations
from pathlib import Path

import numpy as np


@dataclass(frozen=True, slots=True)
class Permutation:
    """A bijection on tile slots: ``mapping[d]`` is the source tile placed at slot ``d``."""

    mapping: tuple[int, ...]
    grid_side: int

    def __post_init__(self):
        object.__setattr__(self, "mapping", tuple(int(i) for i in self.mapping))
        if self.grid_side < 2:
            raise ValueError(f"grid_side must be >= 2, got {self.grid_side}")
        n = self.grid_side**2
        if len(self.mapping) != n or sorted(self.mapping) != list(range(n)):
            raise ValueError(f"mapping must be a permutation of 0..{n - 1}, got {self.mapping}")

    @classmethod
    def identity(cls, grid_side: int) -> "Permutation":
        return cls(tuple(range(grid_side**2)), grid_side)

    def is_identity(self) -> bool:
        return self.mapping == tuple(range(self.grid_side**2))


@dataclass(frozen=True)
class PermutationSet:
    """Ordered list of K distinct permutations with a recorded minimum pairwise distance."""

    permutations: tuple[Permutation, ...]
    grid_side: int
    seed: int
    min_pairwise_distance: int

    def __post_init__(self):
        object.__setattr__(self, "permutations", tuple(self.permutations))
        if len(self.permutations) < 2:
            raise ValueError("a permutation set needs at least 2 permutations")
        if any(p.grid_side != self.grid_side for p in self.permutations):
            raise ValueError("all permutations must share the set's grid_side")
        if len({p.mapping for p in self.permutations}) != len(self.permutations):
            raise ValueError("permutations in a set must be distinct")

    @property
    def k(self) -> int:
        return len(self.permutations)

    def save(self, path: str | Path) -> None:
        """Write the set as text: a header line, then one permutation per line."""
        lines = [f"grid={self.grid_side} k={self.k} seed={self.seed} min_dist={self.min_pairwise_distance}"]
        lines += [" ".join(str(i) for i in p.mapping) for p in self.permutations]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PermutationSet":
        lines = Path(path).read_text().strip().splitlines()
        header = dict(item.split("=") for item in lines[0].split())
        grid = int(header["grid"])
        perms = tuple(Permutation(tuple(int(v) for v in ln.split()), grid) for ln in lines[1:])
        if len(perms) != int(header["k"]):
            raise ValueError(f"{path}: header says k={header['k']} but found {len(perms)} permutations")
        return cls(perms, grid, int(header["seed"]), int(header["min_dist"]))


def hamming_distance(p: Permutation, q: Permutation) -> int:
    """Number of slots where the two permutations place different source tiles."""
    if p.grid_side != q.grid_side:
        raise ValueError(f"grid_side mismatch: {p.grid_side} vs {q.grid_side}")
    return sum(a != b for a, b in zip(p.mapping, q.mapping))


def pairwise_min_distance(perms) -> int:
    """Minimum Hamming distance over all unordered pairs. O(k^2) brute force."""
    perms = list(perms)
    return min(
        hamming_distance(perms[i], perms[j])
        for i in range(len(perms))
        for j in range(i + 1, len(perms))
    )


def enumerate_candidates(grid_side: int, max_candidates: int, seed: int = 0) -> list[Permutation]:
    """Candidate pool for subset selection.

    Full lexicographic enumeration when the symmetric group fits within
    ``max_candidates``; otherwise ``max_candidates`` distinct permutations
    sampled uniformly without replacement.
    """
    if grid_side < 2:
        raise ValueError(f"grid_side must be >= 2, got {grid_side}")
    if max_candidates < 1:
        raise ValueError(f"max_candidates must be >= 1, got {max_candidates}")
    n = grid_side**2
    if math.factorial(n) <= max_candidates:
        return [Permutation(p, grid_side) for p in _lex_permutations(range(n))]
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, ...]] = set()
    out: list[Permutation] = []
    while len(out) < max_candidates:
        mapping = tuple(int(i) for i in rng.permutation(n))
        if mapping not in seen:
            seen.add(mapping)
            out.append(Permutation(mapping, grid_side))
    return out


def select_max_hamming_subset(
    candidates: list[Permutation],
    k: int,
    seed: int = 0,
    *,
    objective: str = "min",
    first_index: int | None = None,
) -> PermutationSet:
    """Greedy selection of k permutations with large pairwise Hamming distances.

    The first element is a seeded uniform draw from the candidates (or
    ``first_index`` when given). Each following element is the candidate that
    maximizes its minimum (``objective="min"``) or mean (``objective="mean"``)
    Hamming distance to the already-selected set, ties broken by the lowest
    candidate index. Candidates identical to an already-selected permutation
    are never picked.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if objective not in ("min", "mean"):
        raise ValueError(f"objective must be 'min' or 'mean', got {objective!r}")
    if not candidates:
        raise ValueError("candidates must be non-empty")
    grid_side = candidates[0].grid_side
    if any(c.grid_side != grid_side for c in candidates):
        raise ValueError("all candidates must share one grid_side")
    n_distinct = len({c.mapping for c in candidates})
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the {n_distinct} distinct candidates")

    cand = np.array([c.mapping for c in candidates], dtype=np.int16)
    if first_index is None:
        first_index = int(np.random.default_rng(seed).integers(len(candidates)))
    elif not 0 <= first_index < len(candidates):
        raise ValueError(f"first_index {first_index} out of range")

    selected = [first_index]
    min_dist = (cand != cand[first_index]).sum(axis=1)
    sum_dist = min_dist.astype(np.int64).copy()
    for _ in range(k - 1):
        score = min_dist if objective == "min" else sum_dist
        # duplicates of selected permutations (min_dist 0) are ineligible
        score = np.where(min_dist > 0, score, -1)
        nxt = int(np.argmax(score))
        selected.append(nxt)
        d = (cand != cand[nxt]).sum(axis=1)
        min_dist = np.minimum(min_dist, d)
        sum_dist += d

    perms = tuple(candidates[i] for i in selected)
    return PermutationSet(perms, grid_side, seed, pairwise_min_distance(perms))


def sample_iteration_permutations(pset: PermutationSet, q: int, seed: int) -> list[int]:
    """q distinct indices into the set, uniform without replacement, seed-determined."""
    if not 2 <= q <= pset.k:
        raise ValueError(f"q must satisfy 2 <= q <= {pset.k}, got {q}")
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.choice(pset.k, size=q, replace=False)]
