"""Command-line entry points composing the library into runnable experiments.

Commands: ``make-data``, ``train``, ``pseudo-eval``, ``compare``,
``export-pseudolabels``. Every command is driven by a flat JSON config
(defaults apply when omitted) plus ``--out``/``--seed`` overrides, and writes
its resolved config next to its outputs. Exit codes: 0 success, 2 config
error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
from PIL import Image

from . import data as data_mod
from .config import ConfigError, load_config_file, resolve_config, write_effective_config
from .estimators import SelfLoopConfig, export_pseudo_label
from .evaluation import evaluate_pseudo_labels, pseudo_label_maps, segmentation_report
from .losses import NumericError
from .network import NetworkConfig, load_checkpoint, save_checkpoint
from .permutations import enumerate_candidates, select_max_hamming_subset
from .training import TrainConfig, train

COMPARE_METHODS = ("fully_supervised", "softmax", "mc_dropout", "ensemble",
                   "selfloop_wo_ss", "selfloop")
PERM_SET_SEED = 0  # the permutation vocabulary is fixed across run seeds


def build_perm_set(cfg: dict):
    candidates = enumerate_candidates(cfg["grid_side"], cfg["max_candidates"], seed=PERM_SET_SEED)
    return select_max_hamming_subset(
        candidates, cfg["k_permutations"], seed=PERM_SET_SEED,
        objective=cfg["greedy_objective"],
    )


def build_split(cfg: dict, seed: int | None = None, label_fraction: float | None = None):
    seed = cfg["seed"] if seed is None else seed
    label_fraction = cfg["label_fraction"] if label_fraction is None else label_fraction
    if cfg["data_source"] == "synthetic":
        rng = np.random.default_rng(seed)
        train_seed, test_seed, split_seed = (int(s) for s in rng.integers(2**31, size=3))
        pool = data_mod.generate_synthetic_dataset(
            cfg["train_count"], cfg["image_size"], (cfg["blobs_min"], cfg["blobs_max"]),
            cfg["noise_level"], train_seed, cfg["channels"], id_prefix="train",
        )
        test = data_mod.generate_synthetic_dataset(
            cfg["test_count"], cfg["image_size"], (cfg["blobs_min"], cfg["blobs_max"]),
            cfg["noise_level"], test_seed, cfg["channels"], id_prefix="test",
        )
        return data_mod.split_train_pool(pool, test, label_fraction, split_seed)
    samples = data_mod.load_directory_dataset(cfg["data_dir"], cfg["image_size"])
    labeled = [s for s in samples if s.labeled]
    maskless = [s for s in samples if not s.labeled]
    test_named = [s for s in labeled if s.id.startswith("test")]
    if test_named:
        pool = [s for s in labeled if not s.id.startswith("test")]
        split = data_mod.split_train_pool(pool, test_named, label_fraction, seed)
    else:
        split = data_mod.split_labeled_unlabeled(labeled, label_fraction, cfg["test_fraction"], seed)
    split.unlabeled.extend(maskless)
    return split


def make_train_config(cfg: dict, perm_set, *, seed: int | None = None,
                      estimator: str | None = None, label_fraction: float | None = None,
                      step_size: float | None = None, labeled_ss: bool | None = None) -> TrainConfig:
    estimator = cfg["estimator"] if estimator is None else estimator
    selfloop = None
    if estimator == "selfloop":
        selfloop = SelfLoopConfig(
            perm_set=perm_set,
            q=cfg["q"],
            selfloop_step_size=cfg["selfloop_step_size"] if step_size is None else step_size,
            seed=cfg["seed"] if seed is None else seed,
        )
    return TrainConfig(
        n_labeled=cfg["n_labeled"],
        m_unlabeled=cfg["m_unlabeled"],
        th=cfg["th"],
        outer_lr=cfg["outer_lr"],
        selfloop=selfloop,
        epochs=cfg["epochs"],
        estimator=estimator,
        seed=cfg["seed"] if seed is None else seed,
        labeled_ss=cfg["labeled_ss"] if labeled_ss is None else labeled_ss,
        unlabeled_ss_in_joint=cfg["unlabeled_ss_in_joint"],
        mc_passes=cfg["mc_passes"],
        mc_rate=cfg["mc_rate"],
        ensemble_size=cfg["ensemble_size"],
    )


def make_network_config(cfg: dict, *, seed: int | None = None) -> NetworkConfig:
    return NetworkConfig(
        in_channels=cfg["channels"],
        base_width=cfg["base_width"],
        depth=cfg["depth"],
        k_classes=cfg["k_permutations"],
        dropout_rate=cfg["dropout_rate"],
        head_pool=cfg["head_pool"],
        seed=cfg["seed"] if seed is None else seed,
    )


def _to_png(arr: np.ndarray) -> Image.Image:
    if arr.ndim == 2:
        return Image.fromarray((arr * 255).round().astype(np.uint8), mode="L")
    return Image.fromarray((arr * 255).round().astype(np.uint8), mode="RGB")


def _write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "l_seg", "l_ug", "l_ss", "masked_fraction", "val_f1"]
        )
        writer.writeheader()
        writer.writerows(history)


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_make_data(cfg: dict) -> int:
    out = _out_dir(cfg)
    (out / "images").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    split = build_split(cfg)
    samples = split.labeled + split.unlabeled + split.test
    for s in samples:
        _to_png(s.image).save(out / "images" / f"{s.id}.png")
        _to_png(s.mask.astype(np.float64)).save(out / "masks" / f"{s.id}.png")
    write_effective_config(cfg, out / "effective_config.json")
    n_train = sum(1 for s in samples if s.id.startswith("train"))
    n_test = sum(1 for s in samples if s.id.startswith("test"))
    print(f"wrote {len(samples)} image/mask pairs to {out} ({n_train} train, {n_test} test)")
    return 0


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    perm_set = build_perm_set(cfg)
    split = build_split(cfg)
    train_cfg = make_train_config(cfg, perm_set)
    net_cfg = make_network_config(cfg)
    net, history = train(train_cfg, net_cfg, split)

    perm_set.save(out / "permutations.txt")
    _write_history(history, out / "history.csv")
    save_checkpoint(net, out / "checkpoint.pt", train_seed=cfg["seed"])
    report = segmentation_report(net, split.test, cfg["eval_threshold"])
    metrics = {
        "estimator": cfg["estimator"],
        "label_fraction": cfg["label_fraction"],
        "seed": cfg["seed"],
        "epochs": cfg["epochs"],
        "test": report,
        "final_train": history[-1],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    write_effective_config(cfg, out / "effective_config.json")
    print(f"estimator={cfg['estimator']} label_fraction={cfg['label_fraction']} "
          f"test_f1={report['mean_f1']:.4f}")
    print(f"artifacts in {out}")
    return 0


def _pseudo_eval_results(cfg: dict, net, ensemble_nets, split, perm_set) -> dict:
    results = {}
    common = dict(threshold=cfg["eval_threshold"], seed=cfg["seed"])
    results["softmax"] = evaluate_pseudo_labels("softmax", net, split, **common)
    results["mc_dropout"] = evaluate_pseudo_labels(
        "mc_dropout", net, split, mc_passes=cfg["mc_passes"], mc_rate=cfg["mc_rate"], **common
    )
    results["ensemble"] = evaluate_pseudo_labels(
        "ensemble", net, split, ensemble_nets=ensemble_nets, **common
    )
    for q in cfg["pseudo_eval_qs"]:
        slcfg = SelfLoopConfig(
            perm_set=perm_set, q=q,
            selfloop_step_size=cfg["selfloop_step_size"], seed=cfg["seed"],
        )
        results[f"selfloop_q{q}"] = evaluate_pseudo_labels(
            "selfloop", net, split, selfloop_cfg=slcfg, **common
        )
    results["oracle"] = evaluate_pseudo_labels("oracle", net, split, **common)
    return results


def _format_pseudo_table(cfg: dict, results: dict) -> str:
    names = list(results)
    header = f"{'amount_of_DL':>14}" + "".join(f"{n:>16}" for n in names)
    row = f"{cfg['label_fraction'] * 100:>13.0f}%" + "".join(
        f"{100 * results[n]['mean_f1']:>16.2f}" for n in names
    )
    return header + "\n" + row + "\n"


def cmd_pseudo_eval(cfg: dict, checkpoints: list[str]) -> int:
    out = _out_dir(cfg)
    for p in checkpoints:
        if not Path(p).exists():
            raise FileNotFoundError(f"checkpoint not found: {p}")
    net, _ = load_checkpoint(checkpoints[0])
    perm_set = build_perm_set(cfg)
    split = build_split(cfg)
    # pseudo-label quality needs the hidden masks
    eval_split = data_mod.SplitDataset(
        split.labeled, [s for s in split.unlabeled if s.labeled], split.test,
        split.label_fraction, split.seed,
    )
    if len(checkpoints) > 1:
        ensemble_nets = [load_checkpoint(p)[0] for p in checkpoints[1:]]
    else:
        # mirror the ensemble protocol: members trained on D_L from different seeds
        perm = perm_set
        rng = np.random.default_rng(cfg["seed"] + 1)
        ensemble_nets = []
        for _ in range(cfg["ensemble_size"]):
            member_seed = int(rng.integers(2**31))
            member_cfg = make_train_config(cfg, perm, seed=member_seed, estimator="none")
            member_net_cfg = make_network_config(cfg, seed=member_seed)
            member, _ = train(member_cfg, member_net_cfg, eval_split)
            ensemble_nets.append(member)
    results = _pseudo_eval_results(cfg, net, ensemble_nets, eval_split, perm_set)
    payload = {
        "label_fraction": cfg["label_fraction"],
        "threshold": cfg["eval_threshold"],
        "estimators": results,
    }
    (out / "pseudo_eval.json").write_text(json.dumps(payload, indent=2) + "\n")
    table = _format_pseudo_table(cfg, results)
    (out / "pseudo_eval.txt").write_text(table)
    write_effective_config(cfg, out / "effective_config.json")
    print(table, end="")
    return 0


def run_compare_cell(cfg: dict, perm_set, method: str, fraction: float, seed: int) -> float:
    """Train one (method, fraction, seed) cell and return its test F1."""
    split = build_split(cfg, seed=seed, label_fraction=fraction)
    overrides = {
        "fully_supervised": dict(estimator="none"),
        "softmax": dict(estimator="softmax"),
        "mc_dropout": dict(estimator="mc_dropout"),
        "ensemble": dict(estimator="ensemble"),
        "selfloop_wo_ss": dict(estimator="selfloop", step_size=0.0, labeled_ss=False),
        "selfloop": dict(estimator="selfloop"),
    }[method]
    train_cfg = make_train_config(cfg, perm_set, seed=seed, **overrides)
    net_cfg = make_network_config(cfg, seed=seed)
    net, _ = train(train_cfg, net_cfg, split)
    from .evaluation import evaluate_model

    return evaluate_model(net, split.test, cfg["eval_threshold"])


def _compare_plots(summary: dict, fractions: list[float], out: Path) -> None:
    methods = list(summary)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / len(methods)
    xs = np.arange(len(fractions))
    for i, m in enumerate(methods):
        means = [summary[m].get(f"{f:g}", {}).get("mean", np.nan) for f in fractions]
        sds = [summary[m].get(f"{f:g}", {}).get("sd", 0.0) for f in fractions]
        ax.bar(xs + i * width, means, width, yerr=sds, capsize=2, label=m)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels([f"{int(100 * f)}%" for f in fractions])
    ax.set_ylabel("test F1")
    ax.set_xlabel("labeled fraction")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "compare_bar.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for m in methods:
        pts = [(f, summary[m][f"{f:g}"]["mean"]) for f in fractions if f"{f:g}" in summary[m]]
        if pts:
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=m)
    ax.set_xlabel("labeled fraction")
    ax.set_ylabel("test F1")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "compare_line.png", dpi=120)
    plt.close(fig)


def cmd_compare(cfg: dict) -> int:
    out = _out_dir(cfg)
    perm_set = build_perm_set(cfg)
    fractions = sorted(cfg["compare_fractions"])
    seeds = cfg["compare_seeds"]
    summary: dict[str, dict] = {}
    for method in cfg["compare_methods"]:
        if method not in COMPARE_METHODS:
            raise ConfigError(f"unknown compare method {method!r}")
        method_fracs = fractions + [1.0] if method == "fully_supervised" else fractions
        summary[method] = {}
        for fraction in method_fracs:
            scores = []
            for seed in seeds:
                f1 = run_compare_cell(cfg, perm_set, method, fraction, seed)
                scores.append(f1)
                print(f"{method} @ {int(100 * fraction)}% seed={seed}: f1={f1:.4f}", flush=True)
            summary[method][f"{fraction:g}"] = {
                "mean": float(np.mean(scores)),
                "sd": float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0,
                "scores": scores,
            }
    (out / "compare.json").write_text(json.dumps(summary, indent=2) + "\n")
    all_fracs = fractions + [1.0]
    lines = [f"{'method':<18}" + "".join(f"{int(100 * f)}%".rjust(16) for f in all_fracs)]
    for method, cells in summary.items():
        row = f"{method:<18}"
        for f in all_fracs:
            cell = cells.get(f"{f:g}")
            row += (f"{100 * cell['mean']:.2f} ± {100 * cell['sd']:.2f}".rjust(16)
                    if cell else "-".rjust(16))
        lines.append(row)
    table = "\n".join(lines) + "\n"
    (out / "compare.txt").write_text(table)
    _compare_plots(summary, all_fracs, out)
    write_effective_config(cfg, out / "effective_config.json")
    print(table, end="")
    return 0


def _overlay(image: np.ndarray, pred: np.ndarray, gt: np.ndarray, threshold: float) -> np.ndarray:
    gray = image.mean(axis=2) if image.ndim == 3 else image
    canvas = np.repeat((0.35 * gray)[:, :, None], 3, axis=2)
    pred_b = pred > threshold
    gt_b = gt > 0
    canvas[..., 1] = np.where(pred_b, 0.9, canvas[..., 1])  # prediction: green
    canvas[..., 0] = np.where(gt_b, 0.9, canvas[..., 0])  # ground truth: red; overlap: yellow
    return canvas


def cmd_export_pseudolabels(cfg: dict, checkpoint: str) -> int:
    out = _out_dir(cfg)
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    net, _ = load_checkpoint(checkpoint)
    perm_set = build_perm_set(cfg)
    split = build_split(cfg)
    estimator = cfg["estimator"] if cfg["estimator"] != "none" else "selfloop"
    kwargs = {}
    if estimator == "selfloop":
        kwargs["selfloop_cfg"] = SelfLoopConfig(
            perm_set=perm_set, q=cfg["q"],
            selfloop_step_size=cfg["selfloop_step_size"], seed=cfg["seed"],
        )
    elif estimator == "mc_dropout":
        kwargs.update(mc_passes=cfg["mc_passes"], mc_rate=cfg["mc_rate"])
    maps = pseudo_label_maps(estimator, net, split, seed=cfg["seed"], **kwargs)
    for m, s in zip(maps, split.unlabeled):
        export_pseudo_label(m, out / f"pl_{estimator}_{s.id}", seed=cfg["seed"], q=cfg["q"])
        if s.labeled:
            overlay = _overlay(s.image, m.values, s.mask, cfg["eval_threshold"])
            _to_png(overlay).save(out / f"overlay_{estimator}_{s.id}.png")
    write_effective_config(cfg, out / "effective_config.json")
    print(f"wrote {len(maps)} pseudo-labels ({estimator}) to {out}")
    return 0


# ---------------------------------------------------------------- entry point


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="flat JSON config file")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="run seed")
    p.add_argument("--deterministic", action="store_true",
                   help="enforce deterministic torch kernels")


def _resolve(args: argparse.Namespace) -> dict:
    overrides = {"out_dir": args.out, "seed": args.seed}
    if args.deterministic:
        overrides["deterministic"] = True
    cfg = resolve_config(load_config_file(args.config), overrides)
    if cfg["deterministic"]:
        torch.use_deterministic_algorithms(True)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfloop-seg",
        description="semi-supervised blob/nuclei segmentation with self-loop pseudo-labels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="write a synthetic dataset to disk")
    _add_common(p)

    p = sub.add_parser("train", help="train a model per the config")
    _add_common(p)

    p = sub.add_parser("pseudo-eval", help="score all estimators' pseudo-labels on D_U")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, nargs="+", required=True,
                   help="trained checkpoint (extra paths become ensemble members)")

    p = sub.add_parser("compare", help="train the method grid and tabulate test F1")
    _add_common(p)

    p = sub.add_parser("export-pseudolabels", help="write pseudo-label PNGs and overlays")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "make-data":
            return cmd_make_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "pseudo-eval":
            return cmd_pseudo_eval(cfg, args.checkpoint)
        if args.command == "compare":
            return cmd_compare(cfg)
        if args.command == "export-pseudolabels":
            return cmd_export_pseudolabels(cfg, args.checkpoint)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
