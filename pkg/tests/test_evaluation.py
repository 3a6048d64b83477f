import numpy as np
import pytest

from selfloop_seg.data import f1_score
from selfloop_seg.estimators import SelfLoopConfig, softmax_pseudo_label
from selfloop_seg.evaluation import (
    evaluate_model,
    evaluate_pseudo_labels,
    pseudo_label_maps,
    segmentation_report,
)
from selfloop_seg.network import NetworkConfig, build_network, parameter_bytes


def fresh_net(seed=0):
    return build_network(NetworkConfig(in_channels=3, base_width=4, depth=2, k_classes=8, seed=seed))


def test_evaluate_model_matches_per_image_mean(tiny_split):
    net = fresh_net()
    expected = np.mean(
        [
            f1_score(softmax_pseudo_label(net, s.image).values, s.mask)
            for s in tiny_split.test
        ]
    )
    assert evaluate_model(net, tiny_split.test) == pytest.approx(expected)


def test_evaluate_model_requires_labels(tiny_split):
    with pytest.raises(ValueError):
        evaluate_model(fresh_net(), [])
    from selfloop_seg.data import Sample

    unlabeled = [Sample(tiny_split.test[0].image, None, "x")]
    with pytest.raises(ValueError):
        evaluate_model(fresh_net(), unlabeled)


def test_untrained_net_near_trivial_baselines(tiny_split):
    # reference band: the all-foreground and all-background baselines
    net = fresh_net()
    trivial = []
    for const in (0.0, 1.0):
        trivial.append(
            np.mean(
                [f1_score(np.full(s.mask.shape, const), s.mask) for s in tiny_split.test]
            )
        )
    f1 = evaluate_model(net, tiny_split.test)
    assert f1 <= max(trivial) + 0.15


def test_segmentation_report_fields(tiny_split):
    report = segmentation_report(fresh_net(), tiny_split.test)
    assert set(report) == {"mean_f1", "balanced_accuracy", "per_image"}
    assert len(report["per_image"]) == len(tiny_split.test)
    assert report["mean_f1"] == pytest.approx(
        np.mean([r["f1"] for r in report["per_image"]])
    )


def test_oracle_estimator_is_upper_bound(tiny_split):
    result = evaluate_pseudo_labels("oracle", fresh_net(), tiny_split)
    assert result["mean_f1"] == 1.0
    assert result["balanced_accuracy"] == 1.0
    assert result["label_fraction"] == tiny_split.label_fraction


def test_selfloop_eval_does_not_perturb_network(tiny_split, perm_set_grid2):
    net = fresh_net()
    before = parameter_bytes(net.parameters())
    cfg = SelfLoopConfig(perm_set=perm_set_grid2, q=3, selfloop_step_size=1e-2, seed=0)
    result = evaluate_pseudo_labels("selfloop", net, tiny_split, selfloop_cfg=cfg)
    assert parameter_bytes(net.parameters()) == before
    assert 0.0 <= result["mean_f1"] <= 1.0


def test_selfloop_eval_requires_config(tiny_split):
    with pytest.raises(ValueError):
        pseudo_label_maps("selfloop", fresh_net(), tiny_split)


def test_unknown_estimator(tiny_split):
    with pytest.raises(ValueError):
        pseudo_label_maps("magic", fresh_net(), tiny_split)


def test_empty_unlabeled_rejected(tiny_split):
    from selfloop_seg.data import SplitDataset

    split = SplitDataset(tiny_split.labeled, [], tiny_split.test, 1.0, 0)
    with pytest.raises(ValueError):
        pseudo_label_maps("softmax", fresh_net(), split)


def test_estimator_results_are_tagged(tiny_split):
    maps = pseudo_label_maps("softmax", fresh_net(), tiny_split)
    assert all(m.source == "softmax" for m in maps)
    assert len(maps) == len(tiny_split.unlabeled)


def test_mc_dropout_eval_seeded(tiny_split):
    a = evaluate_pseudo_labels("mc_dropout", fresh_net(), tiny_split, mc_passes=3, mc_rate=0.3, seed=4)
    b = evaluate_pseudo_labels("mc_dropout", fresh_net(), tiny_split, mc_passes=3, mc_rate=0.3, seed=4)
    assert a == b
