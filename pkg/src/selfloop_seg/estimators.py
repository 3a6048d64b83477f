"""Pseudo-label estimators for unlabeled images.

Four interchangeable sources of a per-pixel foreground map in [0, 1]:

* ``selfloop`` -- run Q jigsaw iterations; each iteration scrambles the batch,
  records the segmentation prediction and the per-image permutation-classification
  cross-entropy, then takes one encoder(+head)-only gradient step on the
  batch-mean cross-entropy. The pseudo-label is the loss-weighted average of the
  inverse-aligned predictions. Encoder updates persist; the decoder is untouched.
* ``softmax`` -- the network's own probability map.
* ``mc_dropout`` -- mean of several stochastic forward passes with dropout on.
* ``ensemble`` -- mean probability map over independently trained networks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import jigsaw
from .losses import NumericError
from .network import SegNetwork, images_to_batch
from .permutations import PermutationSet, sample_iteration_permutations

ESTIMATOR_TAGS = ("selfloop", "softmax", "mc_dropout", "ensemble")


@dataclass
class UncertaintyMap:
    """H x W pseudo-label in [0, 1] with its provenance tag.

    ``per_image_losses`` carries the Q self-supervised losses that weighted the
    map (self-loop only).
    """

    values: np.ndarray
    source: str
    per_image_losses: list[float] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be H x W, got shape {self.values.shape}")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("values must lie in [0, 1]")
        if self.per_image_losses is not None and any(l < 0 for l in self.per_image_losses):
            raise ValueError("per-image losses must be >= 0")


@dataclass
class SelfLoopConfig:
    perm_set: PermutationSet
    q: int = 10
    selfloop_step_size: float = 1e-3
    seed: int = 0
    force_identity: bool = False  # diagnostic: identity permutation, zero rotations

    def __post_init__(self):
        if self.q < 2:
            raise ValueError(f"q must be >= 2, got {self.q}")
        if self.q > self.perm_set.k:
            raise ValueError(f"q={self.q} exceeds the set size k={self.perm_set.k}")
        if self.selfloop_step_size < 0:
            raise ValueError(f"selfloop_step_size must be >= 0, got {self.selfloop_step_size}")


def compute_weights(losses) -> np.ndarray:
    """Confidence weights from self-supervised losses: w_i = norm(1 - l_i / sum(l)).

    Outputs are nonnegative, sum to 1, and decrease in the own loss. All-zero
    losses fall back to the uniform 1/Q (the symmetric limit of the formula).
    """
    arr = np.asarray(losses, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError(f"need a 1-D vector of at least 2 losses, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("losses must be finite")
    if np.any(arr < 0):
        raise ValueError("losses must be >= 0")
    total = arr.sum()
    if total == 0.0:
        return np.full(arr.size, 1.0 / arr.size)
    omega = 1.0 - arr / total
    return omega / omega.sum()


def sample_transforms(
    pset: PermutationSet, q: int, seed: int, *, force_identity: bool = False
) -> tuple[list[int], list[jigsaw.JigsawTransform]]:
    """The Q (permutation index, transform) draws of one self-loop pass.

    Shared by pseudo-label generation and by the joint training step so the
    labeled self-supervised terms reuse exactly the same transforms.
    """
    rng = np.random.default_rng(seed)
    index_seed = int(rng.integers(2**63))
    rotation_seeds = rng.integers(2**63, size=q)
    indices = sample_iteration_permutations(pset, q, index_seed)
    if force_identity:
        transforms = [jigsaw.identity_transform(pset.grid_side)] * q
    else:
        transforms = [
            jigsaw.random_transform(pset, g, int(s)) for g, s in zip(indices, rotation_seeds)
        ]
    return indices, transforms


def _param_dtype(net: SegNetwork) -> torch.dtype:
    return next(net.parameters()).dtype


def _segment_numpy(net: SegNetwork, images) -> np.ndarray:
    """Forward a list of (H, W, C) images, return (B, H, W) float32 probabilities."""
    x = images_to_batch(images, dtype=_param_dtype(net))
    with torch.no_grad():
        probs = net.segment(x)
    return probs[:, 0].cpu().numpy()


def self_loop_uncertainty(
    net: SegNetwork,
    images: list[np.ndarray],
    cfg: SelfLoopConfig,
    *,
    return_transforms: bool = False,
):
    """Generate one pseudo-label per image via Q recurrent jigsaw iterations.

    Returns ``(maps, net)``; the returned network carries the persisted encoder
    (and head) updates, its decoder is byte-identical to the input. With
    ``return_transforms=True`` the per-iteration ``(index, transform)`` pairs
    are appended to the result so callers can reuse them.
    """
    if net.stochastic_mode:
        raise ValueError("self-loop generation requires the network in deterministic mode")
    if not images:
        raise ValueError("need at least one image")
    indices, transforms = sample_transforms(
        cfg.perm_set, cfg.q, cfg.seed, force_identity=cfg.force_identity
    )

    groups = net.parameter_groups()
    update_params = groups["encoder"] + groups["head"]
    dtype = _param_dtype(net)

    preds: list[np.ndarray] = []  # per iteration: (B, H, W)
    losses = np.empty((cfg.q, len(images)), dtype=np.float64)
    for i, (g_i, t_i) in enumerate(zip(indices, transforms)):
        scrambled = [jigsaw.apply(t_i, img) for img in images]
        # single-image forwards so each S_i matches forward_segmentation exactly
        preds.append(np.stack([_segment_numpy(net, [s])[0] for s in scrambled]))
        x = images_to_batch(scrambled, dtype=dtype)
        if cfg.selfloop_step_size > 0:
            logits = net.permutation_logits(x)
        else:
            with torch.no_grad():
                logits = net.permutation_logits(x)
        targets = torch.full((len(images),), g_i, dtype=torch.long)
        per_image_ce = F.cross_entropy(logits, targets, reduction="none")
        if not torch.isfinite(per_image_ce).all():
            raise NumericError("self-supervised loss went non-finite", iteration=i)
        losses[i] = per_image_ce.detach().cpu().numpy()
        if cfg.selfloop_step_size > 0:
            grads = torch.autograd.grad(per_image_ce.mean(), update_params)
            with torch.no_grad():
                for p, g in zip(update_params, grads):
                    p -= cfg.selfloop_step_size * g

    maps = []
    for j in range(len(images)):
        w = compute_weights(losses[:, j])
        acc = np.zeros(images[j].shape[:2], dtype=np.float64)
        for i, t_i in enumerate(transforms):
            acc += w[i] * jigsaw.invert(t_i, preds[i][j]).astype(np.float64)
        maps.append(
            UncertaintyMap(np.clip(acc, 0.0, 1.0), "selfloop", [float(l) for l in losses[:, j]])
        )
    if return_transforms:
        return maps, net, list(zip(indices, transforms))
    return maps, net


def softmax_pseudo_label(net: SegNetwork, image: np.ndarray) -> UncertaintyMap:
    """The network's probability map, verbatim."""
    if net.stochastic_mode:
        raise ValueError("softmax pseudo-label requires the network in deterministic mode")
    return UncertaintyMap(_segment_numpy(net, [image])[0], "softmax")


def mc_dropout_passes(
    net: SegNetwork, image: np.ndarray, passes: int, rate: float, seed: int = 0
) -> list[np.ndarray]:
    """The individual stochastic forward passes behind an MC-dropout estimate."""
    if passes < 1:
        raise ValueError(f"passes must be >= 1, got {passes}")
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"rate must be in [0, 1), got {rate}")
    saved = (net.stochastic_mode, net.dropout_rate, net._stoch_gen.get_state())
    net.stochastic_mode = True
    net.dropout_rate = rate
    net.seed_stochastic(seed)
    try:
        return [_segment_numpy(net, [image])[0] for _ in range(passes)]
    finally:
        net.stochastic_mode, net.dropout_rate = saved[0], saved[1]
        net._stoch_gen.set_state(saved[2])


def mc_dropout_uncertainty(
    net: SegNetwork, image: np.ndarray, passes: int, rate: float, seed: int = 0
) -> UncertaintyMap:
    """Mean of ``passes`` stochastic forward passes with dropout rate ``rate``."""
    stack = np.stack(mc_dropout_passes(net, image, passes, rate, seed)).astype(np.float64)
    return UncertaintyMap(stack.mean(axis=0), "mc_dropout")


def ensemble_uncertainty(nets: list[SegNetwork], image: np.ndarray) -> UncertaintyMap:
    """Unweighted mean probability map over the given networks."""
    if not nets:
        raise ValueError("need at least one network")
    stack = np.stack([_segment_numpy(n, [image])[0] for n in nets]).astype(np.float64)
    return UncertaintyMap(stack.mean(axis=0), "ensemble")


def export_pseudo_label(
    m: UncertaintyMap, path_base: str | Path, *, seed: int | None = None, q: int | None = None
) -> tuple[Path, Path]:
    """Write the map as an 8-bit grayscale PNG plus a sidecar text file."""
    base = Path(path_base)
    png_path = base.with_suffix(".png")
    txt_path = base.with_suffix(".txt")
    img = np.round(255.0 * m.values).astype(np.uint8)
    Image.fromarray(img, mode="L").save(png_path)
    lines = [f"estimator={m.source}"]
    if seed is not None:
        lines.append(f"seed={seed}")
    if q is not None:
        lines.append(f"q={q}")
    if m.per_image_losses is not None:
        lines.append("losses=" + " ".join(f"{l:.10g}" for l in m.per_image_losses))
    txt_path.write_text("\n".join(lines) + "\n")
    return png_path, txt_path
