import json

import numpy as np
import pytest

from pfcnet.cli import (DEFAULTS, EXIT_CONFIG, EXIT_IO, build_model_config,
                        load_run_config, main, parse_scales)
from pfcnet.errors import ConfigError
from pfcnet.metrics import load_embeddings


def _write_tiny_cfg(path, extra=None):
    cfg = {
        "scales": [[16, 8], [12, 6]],
        "backbone": {"num_blocks": 2, "factors_per_block": 2,
                     "stage_plan": [[1, 8, 1], [1, 16, 2]], "feature_dim": 8},
        "train": {"epochs": 2, "batch_size": 8},
        "augment": {"crop_padding": 2},
        "synth": {"n_id": 4, "images_per_id_per_camera": 3, "base_hw": [16, 8]},
    }
    for key, sub in (extra or {}).items():
        if isinstance(sub, dict):
            cfg.setdefault(key, {}).update(sub)
        else:
            cfg[key] = sub
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    return _write_tiny_cfg(tmp_path_factory.mktemp("cfg") / "tiny.json")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory, tiny_cfg):
    out = tmp_path_factory.mktemp("data") / "synth"
    code = main(["synth", "--out", str(out), "--seed", "1",
                 "--config", str(tiny_cfg)])
    assert code == 0
    return out


class TestRunConfig:
    def test_defaults_roundtrip(self):
        assert load_run_config() == DEFAULTS

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration key 'lr'"):
            load_run_config(overrides={"lr": 0.1})

    def test_unknown_nested_key_names_path(self):
        with pytest.raises(ConfigError, match="train.momentum"):
            load_run_config(overrides={"train": {"momentum": 0.9}})

    def test_preset_overlay(self):
        cfg = load_run_config(preset="paper-cuhk")
        assert cfg["train"]["lr"] == 0.0005
        assert cfg["scales"] == [[384, 192], [256, 128]]
        assert cfg["backbone"]["num_blocks"] == 16

    def test_paper_market_preset_lr(self):
        assert load_run_config(preset="paper-market")["train"]["lr"] == 0.0003

    def test_bad_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            load_run_config(preset="nope")

    def test_scales_parsing(self):
        assert parse_scales("64x32,48x24") == [[64, 32], [48, 24]]
        with pytest.raises(ConfigError):
            parse_scales("64-32")

    def test_model_config_construction(self):
        cfg = load_run_config()
        mc = build_model_config(cfg, n_id=8)
        assert mc.descriptor_dim == 256
        assert mc.pooling_assignment == ("average", "max")


class TestSynthCommand:
    def test_counts_and_layout(self, synth_dir):
        for sub in ("train", "query", "gallery"):
            assert (synth_dir / sub).is_dir()
        # 4 ids x 2 cameras x 3 images; camera 1 reserved for queries
        assert len(list((synth_dir / "query").glob("*.png"))) == 12
        assert len(list((synth_dir / "train").glob("*.png"))) == 12
        assert len(list((synth_dir / "gallery").glob("*.png"))) == 12

    def test_same_seed_byte_identical(self, tmp_path, tiny_cfg):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--seed", "9",
                         "--config", str(tiny_cfg)]) == 0
        fa = sorted((a / "train").glob("*.png"))
        fb = sorted((b / "train").glob("*.png"))
        assert [f.name for f in fa] == [f.name for f in fb]
        for x, y in zip(fa, fb):
            assert x.read_bytes() == y.read_bytes()

    def test_single_camera_is_config_error(self, tmp_path, capsys):
        bad = _write_tiny_cfg(tmp_path / "one_cam.json",
                              {"synth": {"cameras": 1}})
        code = main(["synth", "--out", str(tmp_path / "x"), "--config", str(bad)])
        assert code == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err


class TestTrainEvalEmbed:
    @pytest.fixture(scope="class")
    def trained(self, synth_dir, tiny_cfg, tmp_path_factory):
        out = tmp_path_factory.mktemp("run")
        code = main(["train", "--data", str(synth_dir), "--out", str(out),
                     "--config", str(tiny_cfg), "--seed", "1"])
        assert code == 0
        return out

    def test_train_writes_checkpoint_and_log(self, trained):
        assert (trained / "epoch_002.ckpt").exists()
        log = (trained / "train_log.csv").read_text().strip().splitlines()
        assert log[0].startswith("epoch,total_loss,branch_loss_1")
        assert len(log) == 3

    def test_eval_prints_rank1_map(self, trained, synth_dir, capsys, tmp_path):
        ap_csv = tmp_path / "ap.csv"
        code = main(["eval", "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--data", str(synth_dir), "--out", str(ap_csv)])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "Rank-1  mAP"
        r1, m = lines[1].split()
        assert 0.0 <= float(r1) <= 1.0 and 0.0 <= float(m) <= 1.0
        assert ap_csv.read_text().startswith("query_index,average_precision")

    def test_eval_train_sanity_flag(self, trained, synth_dir, capsys):
        code = main(["eval", "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--data", str(synth_dir), "--train-sanity"])
        assert code == 0
        assert "Rank-1  mAP" in capsys.readouterr().out

    def test_embed_writes_file(self, trained, synth_dir, tmp_path, capsys):
        out = tmp_path / "emb.bin"
        code = main(["embed", "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--images", str(synth_dir / "query"), "--out", str(out)])
        assert code == 0
        gallery = load_embeddings(out)
        assert len(gallery) == 12
        assert np.allclose(np.linalg.norm(gallery.matrix, axis=1), 1.0, atol=1e-5)

    def test_ablation_mode_flags_select_variants(self, synth_dir, tiny_cfg,
                                                 tmp_path, capsys):
        for mode in ("fusion_only", "resnext", "resnet"):
            out = tmp_path / mode
            code = main(["train", "--data", str(synth_dir), "--out", str(out),
                         "--config", str(tiny_cfg), "--mode", mode,
                         "--scales", "16x8"])
            assert code == 0, mode
            assert (out / "epoch_002.ckpt").exists()

    def test_missing_checkpoint_is_io_error(self, synth_dir, capsys):
        code = main(["eval", "--checkpoint", "/nonexistent/x.ckpt",
                     "--data", str(synth_dir)])
        assert code == EXIT_IO

    def test_missing_data_dir_is_io_error(self, trained, capsys):
        code = main(["eval", "--checkpoint", str(trained / "epoch_002.ckpt"),
                     "--data", "/nonexistent"])
        assert code == EXIT_IO

    def test_unknown_config_key_is_config_error(self, synth_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"optimizer": "sgd"}))
        code = main(["train", "--data", str(synth_dir),
                     "--out", str(tmp_path / "o"), "--config", str(bad)])
        assert code == EXIT_CONFIG


class TestGradcheckCommand:
    def test_small_suite_exits_zero(self, capsys):
        code = main(["gradcheck", "--blocks", "2", "--factors", "2",
                     "--hw", "16x8", "--feature-dim", "8"])
        assert code == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestDeterminismFlag:
    def test_single_thread_runs_are_byte_identical(self, synth_dir, tiny_cfg,
                                                   tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = main(["train", "--data", str(synth_dir), "--out", str(out),
                         "--config", str(tiny_cfg), "--seed", "5",
                         "--single-thread"])
            assert code == 0
            outs.append(out)
        a, b = outs
        assert (a / "epoch_002.ckpt").read_bytes() == (b / "epoch_002.ckpt").read_bytes()
        assert (a / "train_log.csv").read_bytes() == (b / "train_log.csv").read_bytes()
