import json
import re

import numpy as np
import pytest

from gradsr.cli import ConfigError, load_config, main
from gradsr.imageio import read_image, write_image

import cards


def normalize_times(csv_text: str) -> str:
    return re.sub(r"[^,]*$", "T", csv_text, flags=re.MULTILINE)


@pytest.fixture()
def hr_image(tmp_path):
    path = tmp_path / "truth.pgm"
    write_image(cards.card_blocks(64), path)
    return path


FAST = [
    "--set", "solver.max_outer=3",
    "--set", "solver.pcg_max_iters=40",
    "--set", "solver.pcg_tol=1e-4",
]


class TestConfigFile:
    def test_defaults_and_overrides(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nsolver.alpha = 0.25\nscale=2  # inline\n")
        resolved = load_config(str(cfg), ["solver.beta=0.5"])
        assert resolved["solver.alpha"] == 0.25
        assert resolved["scale"] == 2
        assert resolved["solver.beta"] == 0.5
        assert resolved["gpt.mu"] == 0.9

    def test_unknown_key_suggests(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("solver.alpa = 0.25\n")
        with pytest.raises(ConfigError, match="solver.alpha"):
            load_config(str(cfg), [])

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            load_config(None, ["scale=four"])


class TestSimulate:
    def test_default_protocol(self, hr_image, tmp_path, capsys):
        out = tmp_path / "stack"
        assert main(["simulate", "--input", str(hr_image), "--out", str(out),
                     "--seed", "5"]) == 0
        frames = sorted(out.glob("frame_*.imgf"))
        assert len(frames) == 16
        for f in frames:
            assert read_image(f).shape == (16, 16)
        shifts = (out / "shifts.txt").read_text().splitlines()
        assert len(shifts) == 16
        assert shifts[0].split() == ["0", "0.0", "0.0"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 5
        assert manifest["prng"] == "numpy-pcg64"
        assert str(hr_image) in manifest["inputs"]

    def test_trivial_stack_reproduces_input(self, hr_image, tmp_path):
        out = tmp_path / "stack"
        assert main(["simulate", "--input", str(hr_image), "--out", str(out),
                     "--k", "1", "--scale", "1", "--blur-size", "1",
                     "--noise-var", "0"]) == 0
        frame = read_image(next(out.glob("frame_*.imgf")))
        np.testing.assert_array_equal(frame, read_image(hr_image))

    def test_indivisible_scale_fails(self, hr_image, tmp_path, capsys):
        assert main(["simulate", "--input", str(hr_image),
                     "--out", str(tmp_path / "o"), "--scale", "3"]) == 1
        assert "not divisible" in capsys.readouterr().err


def simulate_stack_dir(hr_image, tmp_path, noise="0"):
    out = tmp_path / "stack"
    assert main(["simulate", "--input", str(hr_image), "--out", str(out),
                 "--seed", "3", "--noise-var", noise]) == 0
    return out


class TestReconstruct:
    def test_smoke_nltv(self, hr_image, tmp_path):
        stack = simulate_stack_dir(hr_image, tmp_path)
        out = tmp_path / "recon.pgm"
        code = main(["reconstruct", "--frames", str(stack),
                     "--shifts", str(stack / "shifts.txt"),
                     "--out", str(out), "--method", "nltv", *FAST])
        assert code == 0
        assert read_image(out).shape == (64, 64)
        log = [json.loads(l) for l in
               (tmp_path / "recon.pgm.log.jsonl").read_text().splitlines()]
        assert all({"iter", "objective", "surrogate", "z_change", "pcg_iters"}
                   <= set(e) for e in log)
        manifest = json.loads((tmp_path / "recon.pgm.manifest.json").read_text())
        assert manifest["method"] == "nltv"
        assert 1.0 <= manifest["selected_p"] <= 2.0
        assert "fidelity_curve" in manifest

    def test_missing_gradient_file_fatal(self, hr_image, tmp_path, capsys):
        stack = simulate_stack_dir(hr_image, tmp_path)
        code = main(["reconstruct", "--frames", str(stack),
                     "--shifts", str(stack / "shifts.txt"),
                     "--out", str(tmp_path / "r.pgm"), "--method", "nltv-lg"])
        assert code == 1
        assert "gradient" in capsys.readouterr().err

    def test_oversized_shift_rejected(self, hr_image, tmp_path, capsys):
        stack = simulate_stack_dir(hr_image, tmp_path)
        shifts = stack / "shifts.txt"
        lines = shifts.read_text().splitlines()
        lines[1] = "1 9.5 0.0"  # beyond the default bound of one scale factor
        shifts.write_text("\n".join(lines) + "\n")
        code = main(["reconstruct", "--frames", str(stack),
                     "--shifts", str(shifts),
                     "--out", str(tmp_path / "r.pgm"), "--method", "nltv", *FAST])
        assert code == 1
        assert "shift.max" in capsys.readouterr().err

    def test_bitwise_determinism(self, hr_image, tmp_path):
        stack = simulate_stack_dir(hr_image, tmp_path)
        outs = []
        for name in ("a.imgf", "b.imgf"):
            out = tmp_path / name
            assert main(["reconstruct", "--frames", str(stack),
                         "--shifts", str(stack / "shifts.txt"),
                         "--out", str(out), "--method", "nltv-gpt", *FAST]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        logs = [(tmp_path / f"{n}.log.jsonl").read_bytes()
                for n in ("a.imgf", "b.imgf")]
        assert logs[0] == logs[1]


class TestEvaluate:
    def test_identical_images(self, hr_image, capsys):
        assert main(["evaluate", "--truth", str(hr_image),
                     "--test", str(hr_image)]) == 0
        out = capsys.readouterr().out
        assert out.strip() == "psnr_db=inf ssim=1.0"

    def test_dimension_mismatch_fatal(self, hr_image, tmp_path, capsys):
        other = tmp_path / "small.pgm"
        write_image(np.zeros((16, 16)), other)
        assert main(["evaluate", "--truth", str(hr_image),
                     "--test", str(other)]) == 1


class TestAblate:
    def test_rows_and_determinism(self, tmp_path, capsys):
        d = tmp_path / "input"
        d.mkdir()
        write_image(cards.card_blocks(32), d / "blocks.pgm")
        csvs = []
        for run in ("o1", "o2"):
            code = main(["ablate", "--input", str(d), "--out", str(tmp_path / run),
                         "--methods", "bicubic,nltv,nltv-gpt,nltv-lgr",
                         "--k", "4", "--seed", "7", *FAST])
            assert code == 0
            csvs.append((tmp_path / run / "results.csv").read_text())
        rows = csvs[0].splitlines()
        assert rows[0] == "image,method,psnr_db,ssim,time_s"
        assert len(rows) == 1 + 4  # four methods, one image
        assert normalize_times(csvs[0]) == normalize_times(csvs[1])
        manifest = json.loads((tmp_path / "o1" / "manifest.json").read_text())
        assert manifest["methods"] == ["bicubic", "nltv", "nltv-gpt", "nltv-lgr"]

    def test_unknown_config_key_fatal(self, tmp_path, capsys):
        d = tmp_path / "input"
        d.mkdir()
        write_image(cards.card_blocks(32), d / "a.pgm")
        code = main(["ablate", "--input", str(d), "--out", str(tmp_path / "o"),
                     "--set", "nltv.neighbours=3"])
        assert code == 1
        assert "did you mean" in capsys.readouterr().err
