"""CLI contract: verbs, exit codes, printed output, artifact validity."""

import numpy as np
import pytest

from castnet import cli
from castnet import heatmap as H
from castnet import model as M
from castnet import synth
from castnet.config import load_experiment_config, parse_experiment_text
from castnet.errors import ConfigError
from conftest import tiny_model_cfg


def config_text(**overrides):
    base = {
        "synth": {"n_train": 8, "n_val": 4, "n_test": 4, "frames": 4, "h": 8,
                  "w": 8, "base_seed": 5, "artifact_amplitude": 0.3},
        "model": {"backbone_channels": "4,8", "d": 8, "encoder_layers": 1,
                  "heads": 2, "ffn_dim": 16, "fusion_heads": 2, "clip_len": 4},
        "training": {"max_epochs": 1, "batch_size": 4, "seed": 0},
        "output": {},
    }
    for section, kv in overrides.items():
        base.setdefault(section, {}).update(kv)
    lines = []
    for section, kv in base.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k}={v}" for k, v in kv.items())
    return "\n".join(lines) + "\n"


def write_config(tmp_path, name="exp.cfg", **overrides):
    overrides.setdefault("output", {})["dir"] = str(tmp_path / "out")
    path = tmp_path / name
    path.write_text(config_text(**overrides))
    return path


class TestConfigParsing:
    def test_defaults_fill_missing_sections(self):
        cfg = parse_experiment_text("[output]\ndir=x\n")
        assert cfg.synth.n_train == 400
        assert cfg.model.variant == "full"
        assert cfg.out_dir == "x"

    def test_unknown_key_names_key_and_line(self):
        text = "[synth]\nn_train=4\nwobble=1\n"
        with pytest.raises(ConfigError, match=r":3: unknown key 'wobble'"):
            parse_experiment_text(text)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match=r"unknown section"):
            parse_experiment_text("[sprockets]\nn=1\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match=r":2: bad value for key 'n_train'"):
            parse_experiment_text("[synth]\nn_train=lots\n")

    def test_frames_must_match_clip_len(self):
        text = "[synth]\nframes=8\n[model]\nclip_len=4\n"
        with pytest.raises(ConfigError, match="clip_len"):
            parse_experiment_text(text)

    def test_comments_and_blanks_ignored(self):
        cfg = parse_experiment_text("# top\n\n[synth]\n# inner\nn_train=3\n")
        assert cfg.synth.n_train == 3


class TestCmdGen:
    def test_valid_config_exits_zero(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        assert cli.main(["gen", "--config", str(cfg_path)]) == 0
        manifest = capsys.readouterr().out.strip()
        assert manifest.endswith("manifest.tsv")
        assert (tmp_path / "out" / "data" / "manifest.tsv").exists()

    def test_malformed_key_exits_two(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("[synth]\nbogus_key=1\n")
        assert cli.main(["gen", "--config", str(path)]) == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_missing_config_exits_two(self, tmp_path):
        assert cli.main(["gen", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_rerun_identical_dataset(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        assert cli.main(["gen", "--config", str(cfg_path)]) == 0
        sum1 = synth.dataset_checksum(tmp_path / "out" / "data")
        assert cli.main(["gen", "--config", str(cfg_path)]) == 0
        sum2 = synth.dataset_checksum(tmp_path / "out" / "data")
        assert sum1 == sum2


class TestCmdTrain:
    def test_smoke_run(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        assert cli.main(["gen", "--config", str(cfg_path)]) == 0
        capsys.readouterr()
        assert cli.main(["train", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "best_epoch 1" in out
        assert "best_val_loss" in out
        assert (tmp_path / "out" / "train" / "best.ckpt").exists()
        assert (tmp_path / "out" / "train" / "history.tsv").exists()

    def test_missing_manifest_exits_two(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert cli.main(["train", "--config", str(cfg_path)]) == 2

    def test_one_epoch_smoke_at_32px_under_a_minute(self, tmp_path):
        import time
        cfg_path = write_config(
            tmp_path,
            synth={"n_train": 16, "n_val": 8, "n_test": 4, "frames": 4,
                   "h": 32, "w": 32, "base_seed": 9},
            model={"backbone_channels": "8,16,32", "d": 32, "encoder_layers": 1,
                   "heads": 4, "ffn_dim": 64, "fusion_heads": 4, "clip_len": 4},
            training={"max_epochs": 1, "batch_size": 8, "seed": 0})
        assert cli.main(["gen", "--config", str(cfg_path)]) == 0
        t0 = time.monotonic()
        assert cli.main(["train", "--config", str(cfg_path)]) == 0
        assert time.monotonic() - t0 < 60.0

    def test_repeated_seed_identical_history(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        assert cli.main(["gen", "--config", str(cfg_path)]) == 0
        assert cli.main(["train", "--config", str(cfg_path)]) == 0
        h1 = (tmp_path / "out" / "train" / "history.tsv").read_bytes()
        assert cli.main(["train", "--config", str(cfg_path)]) == 0
        h2 = (tmp_path / "out" / "train" / "history.tsv").read_bytes()
        assert h1 == h2

    def test_divergence_exits_three(self, tmp_path):
        cfg_path = write_config(tmp_path, training={"lr": 1e200, "max_epochs": 3,
                                                    "batch_size": 4, "seed": 0})
        assert cli.main(["gen", "--config", str(cfg_path)]) == 0
        with np.errstate(all="ignore"):
            assert cli.main(["train", "--config", str(cfg_path)]) == 3


@pytest.fixture()
def zero_classifier_ckpt(tmp_path):
    cfg = tiny_model_cfg()
    params = M.init_cast_params(cfg, seed=2)
    params.classifier_w.data[:] = 0.0
    params.classifier_b.data[:] = 0.0
    path = tmp_path / "zero.ckpt"
    M.save_checkpoint(path, cfg, params)
    return path


class TestCmdEval:
    def test_zero_weight_prints_half_auc(self, tiny_dataset, zero_classifier_ckpt,
                                         tmp_path, capsys):
        code = cli.main(["eval", "--checkpoint", str(zero_classifier_ckpt),
                         "--manifest", str(tiny_dataset["manifest"]),
                         "--out", str(tmp_path / "rep")])
        assert code == 0
        out = capsys.readouterr().out
        assert "AUC 0.5000" in out
        assert "ACC " in out

    def test_rerun_byte_identical_reports(self, tiny_dataset, zero_classifier_ckpt,
                                          tmp_path):
        for _ in range(2):
            assert cli.main(["eval", "--checkpoint", str(zero_classifier_ckpt),
                             "--manifest", str(tiny_dataset["manifest"]),
                             "--out", str(tmp_path / "rep")]) == 0
            with open(tmp_path / "rep" / "report.txt", "rb") as f:
                content = f.read()
            with open(tmp_path / "rep" / "roc.tsv", "rb") as f:
                roc = f.read()
        assert cli.main(["eval", "--checkpoint", str(zero_classifier_ckpt),
                         "--manifest", str(tiny_dataset["manifest"]),
                         "--out", str(tmp_path / "rep2")]) == 0
        assert (tmp_path / "rep2" / "report.txt").read_bytes() == content
        assert (tmp_path / "rep2" / "roc.tsv").read_bytes() == roc

    def test_roc_file_endpoints(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=3)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        assert cli.main(["eval", "--checkpoint", str(ckpt),
                         "--manifest", str(tiny_dataset["manifest"]),
                         "--out", str(tmp_path / "rep")]) == 0
        rows = (tmp_path / "rep" / "roc.tsv").read_text().strip().splitlines()
        first = tuple(float(v) for v in rows[0].split("\t"))
        last = tuple(float(v) for v in rows[-1].split("\t"))
        assert first == (0.0, 0.0)
        assert last == (1.0, 1.0)

    def test_incompatible_checkpoint_exits_four(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg(clip_len=8)  # dataset clips have 4 frames
        params = M.init_cast_params(cfg, seed=4)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        assert cli.main(["eval", "--checkpoint", str(ckpt),
                         "--manifest", str(tiny_dataset["manifest"])]) == 4


class TestCmdAblate:
    def test_failing_variant_partial_table_nonzero_exit(self, tmp_path, capsys):
        # d=16 != backbone C=8, so the no_projection variant cannot build;
        # the other five must still train and land in the table
        cfg_path = write_config(
            tmp_path,
            model={"backbone_channels": "4,8", "d": 16, "encoder_layers": 1,
                   "heads": 2, "ffn_dim": 32, "fusion_heads": 2, "clip_len": 4},
            ablation={"seeds": "0", "shift_amplitude_scale": 0.7,
                      "shift_background": "none", "shift_region_jitter": 0.0})
        code = cli.main(["ablate", "--config", str(cfg_path)])
        assert code == 1
        err = capsys.readouterr().err
        assert "FAILED no_projection seed=0" in err
        table = (tmp_path / "out" / "ablate" / "ablation.tsv").read_text()
        body = table.strip().splitlines()[1:]
        assert len(body) == 10  # 5 surviving variants x (seed row + mean row)
        assert not any(r.startswith("no_projection") for r in body)

    def test_all_variants_produce_rows(self, tmp_path, capsys):
        cfg_path = write_config(
            tmp_path,
            ablation={"seeds": "0", "shift_amplitude_scale": 0.7,
                      "shift_background": "blotchy", "shift_region_jitter": 0.05})
        assert cli.main(["ablate", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "dataset seed=0 sha256=" in out
        table = (tmp_path / "out" / "ablate" / "ablation.tsv").read_text()
        rows = table.strip().splitlines()
        assert rows[0] == "variant\tseed\tin_auc\tshifted_auc"
        body = rows[1:]
        assert len(body) == 12  # 6 variants x (1 seed row + 1 mean row)
        variants = [r.split("\t")[0] for r in body]
        assert variants == sorted(variants)
        for r in body:
            fields = r.split("\t")
            assert 0.0 <= float(fields[2]) <= 1.0
            assert 0.0 <= float(fields[3]) <= 1.0


class TestCmdHeatmap:
    def _clip_path(self, tiny_dataset):
        return str(tiny_dataset["dir"] / "test" / "clip_00000.castclip")

    def test_writes_valid_pgm_at_clip_resolution(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=5)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        out = tmp_path / "heat.pgm"
        code = cli.main(["heatmap", "--checkpoint", str(ckpt),
                         "--clip", self._clip_path(tiny_dataset),
                         "--frame", "0", "--out", str(out)])
        assert code == 0
        img = H.read_pgm(out)
        assert img.shape == (8, 8)  # clip resolution
        raw = out.read_bytes()
        header_end = raw.index(b"255\n") + 4
        assert len(raw) - header_end == 64  # exactly H*W payload bytes

    def test_unsupported_variant_exits_five(self, tiny_dataset, tmp_path, capsys):
        cfg = tiny_model_cfg(variant="no_cross_attention")
        params = M.init_cast_params(cfg, seed=6)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        code = cli.main(["heatmap", "--checkpoint", str(ckpt),
                         "--clip", self._clip_path(tiny_dataset),
                         "--frame", "0", "--out", str(tmp_path / "h.pgm")])
        assert code == 5
        assert "no_cross_attention" in capsys.readouterr().err

    def test_frame_out_of_range_exits_two(self, tiny_dataset, tmp_path):
        cfg = tiny_model_cfg()
        params = M.init_cast_params(cfg, seed=7)
        ckpt = tmp_path / "m.ckpt"
        M.save_checkpoint(ckpt, cfg, params)
        code = cli.main(["heatmap", "--checkpoint", str(ckpt),
                         "--clip", self._clip_path(tiny_dataset),
                         "--frame", "99", "--out", str(tmp_path / "h.pgm")])
        assert code == 2


class TestHeatmapRendering:
    def test_uniform_attention_renders_mid_gray(self):
        img = H.grid_to_image(np.full((2, 2), 0.25), 8, 8)
        assert img.shape == (8, 8)
        assert np.all(img == 128)

    def test_one_hot_attention_single_bright_block(self):
        row = np.array([1.0, 0.0, 0.0, 0.0]).reshape(2, 2)
        img = H.grid_to_image(row, 8, 8)
        assert np.all(img[:4, :4] == 255)
        assert np.all(img[:4, 4:] == 0)
        assert np.all(img[4:, :] == 0)

    def test_min_max_normalization_range(self):
        rng = np.random.default_rng(0)
        img = H.grid_to_image(rng.uniform(0, 1, (4, 4)), 16, 16)
        assert img.min() == 0 and img.max() == 255

    def test_pgm_round_trip(self, tmp_path):
        img = (np.arange(48).reshape(6, 8) * 5).astype(np.uint8)
        H.write_pgm(tmp_path / "x.pgm", img)
        np.testing.assert_array_equal(H.read_pgm(tmp_path / "x.pgm"), img)
