"""Assembled-image jigsaw transform: tile translation plus per-tile right-angle rotation.

A transform moves whole tiles and rotates them by quarter turns, so applying
and inverting it is pure value rearrangement -- no interpolation, and the
round trip is bit-exact. The same code path scrambles input images and
inverse-aligns predicted probability maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .permutations import Permutation, PermutationSet


@dataclass(frozen=True)
class JigsawTransform:
    """Tile permutation plus quarter-turn rotations indexed by destination slot.

    ``rotations[d]`` counts counter-clockwise quarter turns applied to the tile
    after it lands in slot ``d``; the inverse therefore un-rotates before
    un-permuting.
    """

    permutation: Permutation
    rotations: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "rotations", tuple(int(r) for r in self.rotations))
        n = self.permutation.grid_side**2
        if len(self.rotations) != n:
            raise ValueError(f"need {n} rotations, got {len(self.rotations)}")
        if any(r not in (0, 1, 2, 3) for r in self.rotations):
            raise ValueError(f"rotations must be quarter-turn counts in 0..3, got {self.rotations}")

    @property
    def grid_side(self) -> int:
        return self.permutation.grid_side

    def is_identity(self) -> bool:
        return self.permutation.is_identity() and all(r == 0 for r in self.rotations)

    def tag(self, perm_index: int | None = None) -> str:
        """Compact ``perm_index:rotations`` string for run logs."""
        prefix = "id" if perm_index is None else str(perm_index)
        return f"{prefix}:{''.join(str(r) for r in self.rotations)}"


def identity_transform(grid_side: int) -> JigsawTransform:
    return JigsawTransform(Permutation.identity(grid_side), (0,) * grid_side**2)


def random_transform(
    pset: PermutationSet, perm_index: int, seed: int, *, zero_rotations: bool = False
) -> JigsawTransform:
    """Transform with the indexed permutation and seeded uniform tile rotations.

    ``zero_rotations`` forces all rotations to 0 (used by identity/degenerate
    diagnostics).
    """
    if not 0 <= perm_index < pset.k:
        raise ValueError(f"perm_index {perm_index} out of range for k={pset.k}")
    n = pset.grid_side**2
    if zero_rotations:
        rotations = (0,) * n
    else:
        rng = np.random.default_rng(seed)
        rotations = tuple(int(r) for r in rng.integers(0, 4, size=n))
    return JigsawTransform(pset.permutations[perm_index], rotations)


def _tile_shape(t: JigsawTransform, x: np.ndarray) -> tuple[int, int]:
    if x.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C) array, got shape {x.shape}")
    g = t.grid_side
    h, w = x.shape[:2]
    if h % g or w % g:
        raise ValueError(f"image {h}x{w} not divisible into a {g}x{g} tile grid")
    th, tw = h // g, w // g
    if th != tw and any(r % 2 for r in t.rotations):
        raise ValueError(f"tiles of {th}x{tw} need to be square for 90/270 degree rotations")
    return th, tw


def _slice(row: int, col: int, th: int, tw: int) -> tuple[slice, slice]:
    return slice(row * th, (row + 1) * th), slice(col * tw, (col + 1) * tw)


def apply(t: JigsawTransform, x: np.ndarray) -> np.ndarray:
    """Scramble: destination slot d receives source tile ``permutation[d]``, rotated."""
    th, tw = _tile_shape(t, x)
    g = t.grid_side
    out = np.empty_like(x)
    for d in range(g * g):
        sr, sc = divmod(t.permutation.mapping[d], g)
        dr, dc = divmod(d, g)
        tile = x[_slice(sr, sc, th, tw)]
        out[_slice(dr, dc, th, tw)] = np.rot90(tile, k=t.rotations[d], axes=(0, 1))
    return out


def invert(t: JigsawTransform, s: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`apply`: un-rotate each tile, then un-permute."""
    th, tw = _tile_shape(t, s)
    g = t.grid_side
    out = np.empty_like(s)
    for d in range(g * g):
        sr, sc = divmod(t.permutation.mapping[d], g)
        dr, dc = divmod(d, g)
        tile = s[_slice(dr, dc, th, tw)]
        out[_slice(sr, sc, th, tw)] = np.rot90(tile, k=-t.rotations[d], axes=(0, 1))
    return out
