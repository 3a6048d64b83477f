import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from selfloop_seg import cli
from selfloop_seg.config import ConfigError, resolve_config
from selfloop_seg.losses import NumericError

TINY = {
    "image_size": 16,
    "grid_side": 2,
    "depth": 2,
    "base_width": 4,
    "k_permutations": 8,
    "q": 3,
    "epochs": 1,
    "train_count": 6,
    "test_count": 2,
    "label_fraction": 0.5,
    "mc_passes": 2,
    "ensemble_size": 2,
    "pseudo_eval_qs": [3, 4],
}


def write_config(tmp_path, **extra):
    doc = dict(TINY)
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestConfig:
    def test_defaults_resolve(self):
        cfg = resolve_config({})
        assert cfg["estimator"] == "selfloop"
        assert cfg["th"] == 0.5

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="definitely_not_a_key"):
            resolve_config({"definitely_not_a_key": 1})

    def test_type_checking(self):
        with pytest.raises(ConfigError):
            resolve_config({"epochs": "ten"})
        with pytest.raises(ConfigError):
            resolve_config({"labeled_ss": 1})
        with pytest.raises(ConfigError):
            resolve_config({"estimator": "magic"})

    def test_cross_validation(self):
        with pytest.raises(ConfigError):
            resolve_config({"image_size": 50, "grid_side": 3})
        with pytest.raises(ConfigError):
            resolve_config({"q": 200, "k_permutations": 100})
        with pytest.raises(ConfigError):
            resolve_config({"data_source": "directory"})

    def test_overrides_win(self):
        cfg = resolve_config({"seed": 1}, {"seed": 9})
        assert cfg["seed"] == 9


class TestMakeData:
    def test_writes_pairs_and_counts(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        rc = cli.main(["make-data", "--config", str(cfg_path), "--out", str(tmp_path / "d")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "8 image/mask pairs" in out and "6 train" in out and "2 test" in out
        images = sorted((tmp_path / "d" / "images").iterdir())
        masks = sorted((tmp_path / "d" / "masks").iterdir())
        assert len(images) == 8 and len(masks) == 8
        mask = np.asarray(Image.open(masks[0]))
        assert set(np.unique(mask)) <= {0, 255}

    def test_rerun_byte_identical(self, tmp_path):
        cfg_path = write_config(tmp_path)
        for d in ("a", "b"):
            assert cli.main(["make-data", "--config", str(cfg_path), "--out", str(tmp_path / d)]) == 0
        for sub in ("images", "masks"):
            for f in sorted((tmp_path / "a" / sub).iterdir()):
                assert f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes()

    def test_zero_count_rejected(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, train_count=0)
        rc = cli.main(["make-data", "--config", str(cfg_path), "--out", str(tmp_path / "d")])
        assert rc == 2

    def test_roundtrip_through_directory_loader(self, tmp_path):
        cfg_path = write_config(tmp_path)
        out = tmp_path / "d"
        cli.main(["make-data", "--config", str(cfg_path), "--out", str(out)])
        from selfloop_seg.data import load_directory_dataset

        samples = load_directory_dataset(out, size=16)
        assert len(samples) == 8
        assert all(s.labeled for s in samples)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("run")
    cfg_path = write_config(tmp_path, epochs=2)
    out = tmp_path / "run"
    rc = cli.main(["train", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    return cfg_path, out


class TestTrain:
    def test_artifacts(self, trained_run):
        _, out = trained_run
        for name in ("checkpoint.pt", "history.csv", "metrics.json",
                     "effective_config.json", "permutations.txt"):
            assert (out / name).exists(), name
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["estimator"] == "selfloop"
        assert 0.0 <= metrics["test"]["mean_f1"] <= 1.0
        header = (out / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,l_seg,l_ug,l_ss,masked_fraction,val_f1"

    def test_effective_config_reproduces_run(self, trained_run, tmp_path):
        _, out = trained_run
        rc = cli.main(["train", "--config", str(out / "effective_config.json"),
                       "--out", str(tmp_path / "again")])
        assert rc == 0
        assert (tmp_path / "again" / "history.csv").read_bytes() == (out / "history.csv").read_bytes()
        assert (tmp_path / "again" / "checkpoint.pt").read_bytes() == (out / "checkpoint.pt").read_bytes()

    def test_fully_supervised_mode(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, estimator="none")
        rc = cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "sup")])
        assert rc == 0
        metrics = json.loads((tmp_path / "sup" / "metrics.json").read_text())
        assert metrics["estimator"] == "none"


class TestPseudoEval:
    def test_table_and_json_agree(self, trained_run, capsys):
        cfg_path, out = trained_run
        rc = cli.main([
            "pseudo-eval", "--config", str(cfg_path), "--out", str(out / "pe"),
            "--checkpoint", str(out / "checkpoint.pt"),
        ])
        assert rc == 0
        payload = json.loads((out / "pe" / "pseudo_eval.json").read_text())
        names = list(payload["estimators"])
        assert names == ["softmax", "mc_dropout", "ensemble", "selfloop_q3", "selfloop_q4", "oracle"]
        assert payload["estimators"]["oracle"]["mean_f1"] == 1.0
        table = (out / "pe" / "pseudo_eval.txt").read_text()
        for name in names:
            assert name in table
        for name, result in payload["estimators"].items():
            assert f"{100 * result['mean_f1']:.2f}" in table

    def test_missing_checkpoint_is_io_error(self, trained_run):
        cfg_path, out = trained_run
        rc = cli.main([
            "pseudo-eval", "--config", str(cfg_path), "--out", str(out / "pe2"),
            "--checkpoint", str(out / "nope.pt"),
        ])
        assert rc == 4


class TestCompare:
    def test_tiny_grid(self, tmp_path):
        cfg_path = write_config(
            tmp_path,
            compare_methods=["fully_supervised", "selfloop"],
            compare_fractions=[0.5],
            compare_seeds=[0, 1],
        )
        out = tmp_path / "cmp"
        rc = cli.main(["compare", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "compare.json").read_text())
        assert set(summary) == {"fully_supervised", "selfloop"}
        assert set(summary["fully_supervised"]) == {"0.5", "1"}  # 100% only for supervised
        assert set(summary["selfloop"]) == {"0.5"}
        assert len(summary["selfloop"]["0.5"]["scores"]) == 2
        assert (out / "compare_bar.png").exists()
        assert (out / "compare_line.png").exists()
        table = (out / "compare.txt").read_text()
        assert "fully_supervised" in table and "selfloop" in table


class TestExportPseudolabels:
    def test_overlays_and_rawmaps(self, trained_run):
        cfg_path, out = trained_run
        export_dir = out / "export"
        rc = cli.main([
            "export-pseudolabels", "--config", str(cfg_path), "--out", str(export_dir),
            "--checkpoint", str(out / "checkpoint.pt"),
        ])
        assert rc == 0
        raws = sorted(export_dir.glob("pl_selfloop_*.png"))
        overlays = sorted(export_dir.glob("overlay_selfloop_*.png"))
        sidecars = sorted(export_dir.glob("pl_selfloop_*.txt"))
        assert len(raws) == 3  # 6 train * 0.5 labeled -> 3 unlabeled
        assert len(overlays) == 3 and len(sidecars) == 3

    def test_raw_png_quantization(self, trained_run):
        cfg_path, out = trained_run
        from selfloop_seg.cli import build_perm_set, build_split
        from selfloop_seg.config import load_config_file

        cfg = resolve_config(load_config_file(cfg_path))
        from selfloop_seg.evaluation import pseudo_label_maps
        from selfloop_seg.network import load_checkpoint

        net, _ = load_checkpoint(out / "checkpoint.pt")
        split = build_split(cfg)
        maps = pseudo_label_maps("softmax", net, split, seed=0)
        raw = np.asarray(Image.open(sorted((out / "export").glob("pl_selfloop_*.png"))[0]))
        assert raw.dtype == np.uint8  # 8-bit grayscale as specified


class TestExitCodes:
    def test_config_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"no_such_key": 1}))
        assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_invalid_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2

    def test_numeric_failure(self, tmp_path, monkeypatch):
        def boom(cfg):
            raise NumericError("diverged", phase="B", term="l_seg")

        monkeypatch.setattr(cli, "cmd_train", boom)
        assert cli.main(["train", "--out", str(tmp_path / "x")]) == 3
