"""Scoring protocols: pseudo-label quality on D_U and segmentation F1 on the test set."""

from __future__ import annotations

import numpy as np

from .data import SplitDataset, balanced_accuracy, f1_score
from .estimators import (
    SelfLoopConfig,
    UncertaintyMap,
    ensemble_uncertainty,
    mc_dropout_uncertainty,
    self_loop_uncertainty,
    softmax_pseudo_label,
)
from .network import SegNetwork, images_to_batch


def predict_maps(net: SegNetwork, samples) -> list[np.ndarray]:
    """Deterministic probability maps for a list of samples."""
    import torch

    x = images_to_batch([s.image for s in samples], dtype=next(net.parameters()).dtype)
    with torch.no_grad():
        probs = net.segment(x)
    return [probs[i, 0].cpu().numpy().astype(np.float64) for i in range(len(samples))]


def evaluate_model(net: SegNetwork, test: list, threshold: float = 0.5) -> float:
    """Mean per-image foreground F1 of deterministic predictions."""
    if not test:
        raise ValueError("test set must be non-empty")
    if any(not s.labeled for s in test):
        raise ValueError("all test samples must be labeled")
    preds = predict_maps(net, test)
    return float(np.mean([f1_score(p, s.mask, threshold) for p, s in zip(preds, test)]))


def segmentation_report(net: SegNetwork, samples: list, threshold: float = 0.5) -> dict:
    """Per-image and mean F1 plus balanced accuracy (both readings of the metric)."""
    preds = predict_maps(net, samples)
    per_image = [
        {
            "id": s.id,
            "f1": f1_score(p, s.mask, threshold),
            "balanced_accuracy": balanced_accuracy(p, s.mask, threshold),
        }
        for p, s in zip(preds, samples)
    ]
    return {
        "mean_f1": float(np.mean([r["f1"] for r in per_image])),
        "balanced_accuracy": float(np.mean([r["balanced_accuracy"] for r in per_image])),
        "per_image": per_image,
    }


def pseudo_label_maps(
    estimator: str,
    net: SegNetwork,
    split: SplitDataset,
    *,
    selfloop_cfg: SelfLoopConfig | None = None,
    mc_passes: int = 10,
    mc_rate: float = 0.2,
    ensemble_nets: list[SegNetwork] | None = None,
    seed: int = 0,
) -> list[UncertaintyMap]:
    """One pseudo-label per unlabeled image. Self-loop runs on a cloned network
    so generating labels never perturbs the weights handed in."""
    if not split.unlabeled:
        raise ValueError("the split has no unlabeled images")
    images = [s.image for s in split.unlabeled]
    if estimator == "selfloop":
        if selfloop_cfg is None:
            raise ValueError("selfloop estimator needs a SelfLoopConfig")
        maps, _ = self_loop_uncertainty(net.clone(), images, selfloop_cfg)
        return maps
    if estimator == "softmax":
        return [softmax_pseudo_label(net, img) for img in images]
    if estimator == "mc_dropout":
        rng = np.random.default_rng(seed)
        seeds = rng.integers(2**63, size=len(images))
        return [
            mc_dropout_uncertainty(net, img, mc_passes, mc_rate, int(s))
            for img, s in zip(images, seeds)
        ]
    if estimator == "ensemble":
        members = ensemble_nets if ensemble_nets else [net]
        return [ensemble_uncertainty(members, img) for img in images]
    if estimator == "oracle":
        # diagnostic upper bound: the hidden ground truth itself
        return [UncertaintyMap(s.mask.astype(np.float64), "oracle") for s in split.unlabeled]
    raise ValueError(f"unknown estimator {estimator!r}")


def evaluate_pseudo_labels(
    estimator: str,
    net: SegNetwork,
    split: SplitDataset,
    threshold: float = 0.5,
    **kwargs,
) -> dict:
    """F1 of the chosen estimator's pseudo-labels against the hidden D_U ground truth."""
    maps = pseudo_label_maps(estimator, net, split, **kwargs)
    per_image = [
        {
            "id": s.id,
            "f1": f1_score(m.values, s.mask, threshold),
            "balanced_accuracy": balanced_accuracy(m.values, s.mask, threshold),
        }
        for m, s in zip(maps, split.unlabeled)
    ]
    return {
        "estimator": estimator,
        "label_fraction": split.label_fraction,
        "mean_f1": float(np.mean([r["f1"] for r in per_image])),
        "balanced_accuracy": float(np.mean([r["balanced_accuracy"] for r in per_image])),
        "per_image": per_image,
    }
