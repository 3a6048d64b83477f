"""The three training losses: supervised BCE, masked-MSE on pseudo-labels, jigsaw CE."""

from __future__ import annotations

import torch
import torch.nn.functional as F


class NumericError(RuntimeError):
    """A loss or update went non-finite; records where it happened."""

    def __init__(self, message: str, *, iteration: int | None = None, phase: str | None = None,
                 term: str | None = None):
        where = ", ".join(
            f"{k}={v}" for k, v in (("phase", phase), ("term", term), ("iteration", iteration))
            if v is not None
        )
        super().__init__(f"{message}" + (f" ({where})" if where else ""))
        self.iteration = iteration
        self.phase = phase
        self.term = term


def seg_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over all pixels; pred in (0,1), gt in {0,1}."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    return F.binary_cross_entropy(pred, gt.to(pred.dtype))


def uncertainty_guided_loss(s_x: torch.Tensor, y_sl: torch.Tensor, th: float) -> torch.Tensor:
    """Mean squared error restricted to pixels where the pseudo-label exceeds ``th``.

    The pseudo-label is a fixed target: gradients flow into ``s_x`` only.
    An empty mask yields 0 with zero gradient.
    """
    if s_x.shape != y_sl.shape:
        raise ValueError(f"shape mismatch: {tuple(s_x.shape)} vs {tuple(y_sl.shape)}")
    if not 0.0 < th < 1.0:
        raise ValueError(f"th must be in (0, 1), got {th}")
    target = y_sl.detach()
    mask = (target > th).to(s_x.dtype)
    n = mask.sum()
    if n.item() == 0:
        return s_x.sum() * 0.0
    return ((s_x - target) ** 2 * mask).sum() / n


def masked_fraction(y_sl: torch.Tensor, th: float) -> float:
    """Fraction of pixels the uncertainty-guided loss would keep."""
    return float((y_sl > th).to(torch.float64).mean().item())


def self_supervised_loss(logits: torch.Tensor, target_index: int) -> torch.Tensor:
    """Cross-entropy of softmax(logits) against the one-hot permutation index."""
    if logits.ndim != 1:
        raise ValueError(f"expected a 1-D logits vector, got shape {tuple(logits.shape)}")
    if not 0 <= target_index < logits.shape[0]:
        raise ValueError(f"target_index {target_index} out of range for {logits.shape[0]} classes")
    target = torch.tensor([target_index], dtype=torch.long, device=logits.device)
    return F.cross_entropy(logits.unsqueeze(0), target)
