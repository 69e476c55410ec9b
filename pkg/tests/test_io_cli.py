import os

import numpy as np
import pytest

from semimatch.cli import main
from semimatch.config import Settings, apply_overrides, load_settings, parse_config_text
from semimatch.evaluate import match_dump_csv, parse_match_dump, read_homography_csv
from semimatch.imageio import ImageFormatError, load_image, save_pgm, save_ppm
from semimatch.pipeline import Matcher, MatcherConfig
from semimatch.weights import (
    WeightFormatError,
    deserialize_weights,
    load_matcher,
    save_matcher,
    serialize_weights,
)

TINY = MatcherConfig(widths=(4, 4, 8, 8), blocks=(1, 1, 1, 1), n_layers=1, n_heads=2, s=2,
                     d_fine=8, fine_patch_width=8)


class TestImageIO:
    def test_pgm_values_scaled(self, tmp_path):
        path = tmp_path / "t.pgm"
        with open(path, "wb") as fh:
            fh.write(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = load_image(str(path))
        np.testing.assert_allclose(img, np.array([[0, 255], [128, 64]]) / 255.0, atol=1e-7)

    def test_ppm_red_luma(self, tmp_path):
        path = tmp_path / "t.ppm"
        with open(path, "wb") as fh:
            fh.write(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        img = load_image(str(path))
        assert np.isclose(img[0, 0], 0.299, atol=1e-6)

    def test_round_trip_bit_identical(self, tmp_path, rng):
        img = rng.integers(0, 256, (9, 13)).astype(np.uint8) / 255.0
        p1 = tmp_path / "a.pgm"
        p2 = tmp_path / "b.pgm"
        save_pgm(str(p1), img)
        save_pgm(str(p2), load_image(str(p1)))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_maxval(self, tmp_path):
        path = tmp_path / "t.pgm"
        with open(path, "wb") as fh:
            fh.write(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ImageFormatError, match="maxval"):
            load_image(str(path))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.pgm"
        with open(path, "wb") as fh:
            fh.write(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(ImageFormatError, match="truncated"):
            load_image(str(path))

    def test_header_comments_allowed(self, tmp_path):
        path = tmp_path / "t.pgm"
        with open(path, "wb") as fh:
            fh.write(b"P5\n# a comment\n2 1\n255\n\x01\x02")
        assert load_image(str(path)).shape == (1, 2)

    def test_ppm_writer(self, tmp_path):
        path = tmp_path / "c.ppm"
        save_ppm(str(path), np.zeros((2, 3, 3)))
        assert load_image(str(path)).shape == (2, 3)


class TestWeightContainer:
    def test_round_trip_bit_identical(self):
        matcher = Matcher(TINY, seed=0)
        blob = serialize_weights(matcher.named_tensors(), matcher.config.to_dict())
        config, tensors = deserialize_weights(blob)
        blob2 = serialize_weights(
            ((name, type("W", (), {"data": arr})) for name, arr in tensors.items()), config
        )
        assert blob == blob2

    def test_missing_tensor_fails_before_compute(self, tmp_path):
        matcher = Matcher(TINY, seed=0)
        names = list(matcher.named_tensors())[1:]  # drop one tensor
        blob = serialize_weights(names, matcher.config.to_dict())
        # rebuild offsets are still contiguous, so the container itself is valid
        path = tmp_path / "w.smw"
        path.write_bytes(blob)
        with pytest.raises(WeightFormatError, match="missing"):
            load_matcher(str(path))

    def test_save_load_preserves_outputs(self, tmp_path, rng):
        matcher = Matcher(TINY, seed=0)
        path = tmp_path / "w.smw"
        save_matcher(str(path), matcher)
        loaded, digest = load_matcher(str(path))
        assert len(digest) == 64
        image = rng.random((32, 32), dtype=np.float64).astype(np.float32)
        r1 = matcher.match_pair(image, image)
        r2 = loaded.match_pair(image, image)
        assert [(m.i, m.j) for m in r1.coarse] == [(m.i, m.j) for m in r2.coarse]

    def test_bad_magic(self):
        with pytest.raises(WeightFormatError, match="magic"):
            deserialize_weights(b"nope")


class TestConfig:
    def test_parse_key_values(self):
        text = "tau = 0.3\n# comment\nn_layers=3\nwidths=4,4,8,8\nlr=0.001\nalpha=0.5\n"
        parsed = parse_config_text(text)
        assert parsed["tau"] == "0.3" and parsed["widths"] == "4,4,8,8"
        settings = apply_overrides(Settings(), parsed)
        assert settings.matcher.tau == 0.3
        assert settings.matcher.n_layers == 3
        assert settings.matcher.widths == (4, 4, 8, 8)
        assert settings.train.lr == 0.001
        assert settings.train.weights.alpha == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(KeyError, match="unknown config key"):
            apply_overrides(Settings(), {"warp_speed": "9"})

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError, match="key=value"):
            parse_config_text("this is not a config\n")

    def test_defaults_without_file(self):
        settings = load_settings(None)
        assert settings.matcher.d_model == 32


class TestMatchDump:
    def test_header_and_rows_round_trip(self, rng):
        matcher = Matcher(TINY, seed=0)
        image = rng.random((32, 40), dtype=np.float64).astype(np.float32)
        result = matcher.match_pair(image, image, mode="optimized")
        text = match_dump_csv(result, model="cafe" * 16)
        header, rows = parse_match_dump(text)
        assert header["mode"] == "optimized"
        assert header["schema"] == "1"
        assert int(header["width_a"]) == 40 and int(header["height_a"]) == 32
        assert rows.shape[1] == 5
        assert len(rows) == len(result.fine)

    def test_coordinates_within_original_bounds_after_padding(self, rng):
        matcher = Matcher(TINY, seed=0)
        image = rng.random((35, 43), dtype=np.float64).astype(np.float32)  # forces padding
        result = matcher.match_pair(image, image, mode="optimized")
        for m in result.fine:
            assert 0 <= m.pt_a[0] < 43 and 0 <= m.pt_a[1] < 35
            assert 0 <= m.pt_b[0] <= 42 and 0 <= m.pt_b[1] <= 34


class TestCli:
    def test_synth_then_train_then_match_then_eval(self, tmp_path, capsys):
        data = tmp_path / "data"
        weights = tmp_path / "toy.smw"
        cfgfile = tmp_path / "cfg.txt"
        cfgfile.write_text(
            "widths=4,4,8,8\nblocks=1,1,1,1\nn_layers=1\nn_heads=2\ns=2\nd_fine=8\n"
            "steps=2\nbatch_size=1\nwarmup_steps=1\nmax_fine_matches=8\n"
        )
        assert main(["synth", "--count", "3", "--size", "32", "--seed", "5", "--out", str(data)]) == 0
        assert sorted(os.listdir(data))[:3] == ["pair0000_A.pgm", "pair0000_B.pgm", "pair0000_H.csv"]
        h = read_homography_csv(str(data / "pair0000_H.csv"))
        assert h.shape == (3, 3)

        curve = tmp_path / "curve.csv"
        code = main([
            "train-toy", "--data", str(data), "--config", str(cfgfile),
            "--out", str(weights), "--steps", "2", "--curve", str(curve),
        ])
        assert code == 0 and weights.exists()
        lines = curve.read_text().splitlines()
        assert lines[0] == "step,l_c,l_f1,l_f2,total"
        assert len(lines) == 3

        out_csv = tmp_path / "matches.csv"
        viz = tmp_path / "viz.ppm"
        code = main([
            "match", "--image-a", str(data / "pair0000_A.pgm"),
            "--image-b", str(data / "pair0000_A.pgm"),
            "--weights", str(weights), "--mode", "optimized",
            "--out", str(out_csv), "--viz", str(viz),
        ])
        assert code == 0 and out_csv.exists() and viz.exists()
        header, rows = parse_match_dump(out_csv.read_text())
        assert header["mode"] == "optimized"
        same = np.abs(rows[:, 0:2] - rows[:, 2:4]).max(axis=1)
        assert (same < 1.0).mean() >= 0.95  # identical-image self matching

        code = main([
            "eval-homography", "--data", str(data), "--weights", str(weights),
            "--mode", "optimized", "--out", str(tmp_path / "eval.csv"),
        ])
        assert code == 0
        summary = capsys.readouterr().out
        assert "AUC@3px" in summary

        code = main([
            "bench", "--image-a", str(data / "pair0000_A.pgm"),
            "--image-b", str(data / "pair0001_B.pgm"),
            "--weights", str(weights), "--repetitions", "2", "--warmup", "1",
            "--out", str(tmp_path / "bench.csv"),
        ])
        assert code == 0
        bench_lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert bench_lines[0] == "stage,mean_ms,median_ms"
        assert len(bench_lines) == 7

    def test_missing_weights_gives_io_exit_and_no_partial_output(self, tmp_path):
        out = tmp_path / "matches.csv"
        img = tmp_path / "img.pgm"
        save_pgm(str(img), np.zeros((16, 16)))
        code = main([
            "match", "--image-a", str(img), "--image-b", str(img),
            "--weights", str(tmp_path / "missing.smw"), "--out", str(out),
        ])
        assert code == 2
        assert not out.exists()

    def test_usage_error_exit_code(self):
        assert main(["match", "--image-a", "x"]) == 1

    def test_nan_weights_give_numeric_exit(self, tmp_path):
        matcher = Matcher(TINY, seed=0)
        matcher.backbone.stages[0][0].conv3x3.kernel.data[:] = np.nan
        weights = tmp_path / "bad.smw"
        save_matcher(str(weights), matcher)
        img = tmp_path / "img.pgm"
        save_pgm(str(img), np.random.default_rng(0).random((16, 16)))
        code = main(["match", "--image-a", str(img), "--image-b", str(img),
                     "--weights", str(weights)])
        assert code == 3

    def test_unknown_mode_rejected_by_parser(self, tmp_path):
        assert main(["match", "--image-a", "a", "--image-b", "b", "--weights", "w",
                     "--mode", "warp"]) == 1

    def test_synth_rejects_indivisible_size(self, tmp_path):
        assert main(["synth", "--count", "1", "--size", "60", "--out", str(tmp_path / "d")]) == 1

    def test_synth_count_zero_creates_empty_dir(self, tmp_path):
        out = tmp_path / "empty"
        assert main(["synth", "--count", "0", "--size", "32", "--out", str(out)]) == 0
        assert out.exists() and os.listdir(out) == []

    def test_synth_deterministic(self, tmp_path):
        d1 = tmp_path / "one"
        d2 = tmp_path / "two"
        for d in (d1, d2):
            assert main(["synth", "--count", "2", "--size", "32", "--seed", "9", "--out", str(d)]) == 0
        for name in os.listdir(d1):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
