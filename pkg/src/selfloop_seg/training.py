"""Two-phase semi-supervised training.

Phase A (self-loop estimator only): the unlabeled sub-batch drives Q
encoder(+head)-only jigsaw updates with the decoder frozen, producing the
pseudo-labels; the encoder changes persist. Phase B: one full-network
optimizer step on the summed supervised BCE, masked-MSE pseudo-label loss,
and the labeled jigsaw cross-entropy terms computed on the same Q transforms.
Baseline estimators replace Phase A by a read-only pseudo-label computation
and skip the labeled jigsaw terms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F

from .estimators import SelfLoopConfig, sample_transforms, self_loop_uncertainty
from .evaluation import evaluate_model
from .jigsaw import apply as jigsaw_apply
from .losses import NumericError, masked_fraction, seg_loss, uncertainty_guided_loss
from .network import NetworkConfig, SegNetwork, build_network, images_to_batch

ESTIMATOR_CHOICES = ("selfloop", "softmax", "mc_dropout", "ensemble", "none")


@dataclass
class TrainConfig:
    n_labeled: int = 2
    m_unlabeled: int = 2
    th: float = 0.5
    outer_lr: float = 1e-3
    selfloop: SelfLoopConfig | None = None
    epochs: int = 30
    estimator: str = "selfloop"
    seed: int = 0
    # the labeled jigsaw CE term in the joint step (self-loop only); turning it
    # off together with step size 0 gives the plain prediction-averaging variant
    labeled_ss: bool = True
    # include the unlabeled jigsaw CE terms in the joint loss as well, instead
    # of consuming them only through the Phase A encoder updates
    unlabeled_ss_in_joint: bool = False
    mc_passes: int = 10
    mc_rate: float = 0.2
    ensemble_size: int = 3

    def __post_init__(self):
        if self.n_labeled < 1:
            raise ValueError(f"n_labeled must be >= 1, got {self.n_labeled}")
        if self.m_unlabeled < 0:
            raise ValueError(f"m_unlabeled must be >= 0, got {self.m_unlabeled}")
        if not 0.0 < self.th < 1.0:
            raise ValueError(f"th must be in (0, 1), got {self.th}")
        if self.outer_lr <= 0:
            raise ValueError(f"outer_lr must be > 0, got {self.outer_lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.estimator not in ESTIMATOR_CHOICES:
            raise ValueError(f"estimator must be one of {ESTIMATOR_CHOICES}, got {self.estimator!r}")
        if self.estimator == "selfloop" and self.selfloop is None:
            raise ValueError("estimator 'selfloop' needs a SelfLoopConfig")


@dataclass
class StepMetrics:
    l_seg: float
    l_ug: float
    l_ss: float
    masked_pixel_fraction: float

    def __post_init__(self):
        vals = (self.l_seg, self.l_ug, self.l_ss, self.masked_pixel_fraction)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"step metrics must be finite, got {vals}")

    @property
    def total(self) -> float:
        return self.l_seg + self.l_ug + self.l_ss


def _check_finite(value: torch.Tensor, term: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NumericError("loss went non-finite", phase="B", term=term)
    return value


def _batch_ss_loss(net: SegNetwork, images, artifacts, dtype) -> torch.Tensor:
    """Sum over transforms and images of the jigsaw CE on scrambled inputs."""
    total = torch.zeros((), dtype=dtype)
    for g_i, t_i in artifacts:
        scrambled = [jigsaw_apply(t_i, img) for img in images]
        logits = net.permutation_logits(images_to_batch(scrambled, dtype=dtype))
        targets = torch.full((len(images),), g_i, dtype=torch.long)
        total = total + F.cross_entropy(logits, targets, reduction="sum")
    return total


def train_step(
    net: SegNetwork,
    labeled: list[tuple[np.ndarray, np.ndarray]],
    unlabeled: list[np.ndarray],
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    *,
    step_seed: int = 0,
    ensemble_nets: list[SegNetwork] | None = None,
) -> StepMetrics:
    dtype = next(net.parameters()).dtype
    maps = []
    artifacts = []

    # Phase A: pseudo-labels for the unlabeled sub-batch
    if cfg.estimator == "selfloop":
        step_cfg = replace(cfg.selfloop, seed=step_seed)
        if unlabeled:
            try:
                maps, _, artifacts = self_loop_uncertainty(
                    net, unlabeled, step_cfg, return_transforms=True
                )
            except NumericError as e:
                e.phase = "A"
                raise
        else:
            indices, transforms = sample_transforms(
                step_cfg.perm_set, step_cfg.q, step_seed,
                force_identity=step_cfg.force_identity,
            )
            artifacts = list(zip(indices, transforms))
    elif cfg.estimator != "none" and unlabeled:
        from . import estimators as est

        if cfg.estimator == "softmax":
            maps = [est.softmax_pseudo_label(net, img) for img in unlabeled]
        elif cfg.estimator == "mc_dropout":
            seeds = np.random.default_rng(step_seed).integers(2**63, size=len(unlabeled))
            maps = [
                est.mc_dropout_uncertainty(net, img, cfg.mc_passes, cfg.mc_rate, int(s))
                for img, s in zip(unlabeled, seeds)
            ]
        elif cfg.estimator == "ensemble":
            if not ensemble_nets:
                raise ValueError("estimator 'ensemble' needs pre-trained ensemble networks")
            maps = [est.ensemble_uncertainty(ensemble_nets, img) for img in unlabeled]

    # Phase B: one full-network step on the joint objective
    optimizer.zero_grad()
    zero = torch.zeros((), dtype=dtype)

    l_seg_t = zero
    if labeled:
        preds = net.segment(images_to_batch([img for img, _ in labeled], dtype=dtype))
        _check_finite(preds, "l_seg")
        gts = torch.as_tensor(np.stack([m for _, m in labeled])[:, None]).to(dtype)
        l_seg_t = sum(seg_loss(preds[j], gts[j]) for j in range(len(labeled)))
        _check_finite(l_seg_t, "l_seg")

    l_ug_t = zero
    frac = 0.0
    if maps and cfg.estimator != "none":
        s_u = net.segment(images_to_batch(unlabeled, dtype=dtype))
        _check_finite(s_u, "l_ug")
        targets = [torch.as_tensor(m.values[None]).to(dtype) for m in maps]
        l_ug_t = sum(
            uncertainty_guided_loss(s_u[j], targets[j], cfg.th) for j in range(len(unlabeled))
        )
        _check_finite(l_ug_t, "l_ug")
        frac = float(np.mean([masked_fraction(t, cfg.th) for t in targets]))

    l_ss_t = zero
    if artifacts and cfg.labeled_ss and labeled:
        l_ss_t = _batch_ss_loss(net, [img for img, _ in labeled], artifacts, dtype)
    if artifacts and cfg.unlabeled_ss_in_joint and unlabeled:
        l_ss_t = l_ss_t + _batch_ss_loss(net, unlabeled, artifacts, dtype)
    if torch.is_tensor(l_ss_t):
        _check_finite(l_ss_t, "l_ss")

    total = l_seg_t + l_ug_t + l_ss_t
    if torch.is_tensor(total) and total.requires_grad:
        total.backward()
        optimizer.step()

    return StepMetrics(
        float(l_seg_t.detach()), float(l_ug_t.detach()), float(l_ss_t.detach()), frac
    )


def _train_ensemble_members(cfg: TrainConfig, net_cfg: NetworkConfig, split, seeds) -> list[SegNetwork]:
    members = []
    for member_seed in seeds:
        member_cfg = replace(cfg, estimator="none", seed=int(member_seed), selfloop=None)
        member_net_cfg = replace(net_cfg, seed=int(member_seed))
        member, _ = train(member_cfg, member_net_cfg, split)
        members.append(member)
    return members


def train(cfg: TrainConfig, net_cfg: NetworkConfig, split) -> tuple[SegNetwork, list[dict]]:
    """Epoch loop over shuffled batches of N labeled + M unlabeled samples.

    Returns the trained network and one history row per epoch. Fully
    deterministic for a fixed config and seed.
    """
    if not split.labeled:
        raise ValueError("training requires a non-empty labeled set")
    rng = np.random.default_rng(cfg.seed)

    ensemble_nets = None
    if cfg.estimator == "ensemble":
        member_seeds = rng.integers(2**31, size=cfg.ensemble_size)
        ensemble_nets = _train_ensemble_members(cfg, net_cfg, split, member_seeds)

    net = build_network(net_cfg)
    optimizer = torch.optim.RMSprop(net.parameters(), lr=cfg.outer_lr)

    labeled = [(s.image, s.mask) for s in split.labeled]
    unlabeled_pool = (
        [] if cfg.estimator == "none" else [u.image for u in split.unlabeled_images()]
    )
    steps_per_epoch = max(1, len(labeled) // cfg.n_labeled)

    unlabeled_queue: list[int] = []

    def next_unlabeled(m: int) -> list[np.ndarray]:
        nonlocal unlabeled_queue
        if not unlabeled_pool or m == 0:
            return []
        picked = []
        while len(picked) < m:
            if not unlabeled_queue:
                unlabeled_queue = [int(i) for i in rng.permutation(len(unlabeled_pool))]
            picked.append(unlabeled_pool[unlabeled_queue.pop()])
        return picked

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(labeled))
        sums = np.zeros(4)
        for step in range(steps_per_epoch):
            batch_ids = order[step * cfg.n_labeled : (step + 1) * cfg.n_labeled]
            batch_labeled = [labeled[i] for i in batch_ids]
            batch_unlabeled = next_unlabeled(cfg.m_unlabeled)
            step_seed = int(rng.integers(2**63))
            metrics = train_step(
                net, batch_labeled, batch_unlabeled, cfg, optimizer,
                step_seed=step_seed, ensemble_nets=ensemble_nets,
            )
            sums += [metrics.l_seg, metrics.l_ug, metrics.l_ss, metrics.masked_pixel_fraction]
        means = sums / steps_per_epoch
        val_f1 = evaluate_model(net, split.test) if split.test else float("nan")
        history.append(
            {
                "epoch": epoch,
                "l_seg": float(means[0]),
                "l_ug": float(means[1]),
                "l_ss": float(means[2]),
                "masked_fraction": float(means[3]),
                "val_f1": val_f1,
            }
        )
    return net, history
