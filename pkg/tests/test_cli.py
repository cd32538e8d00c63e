import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glyphdiffuse import container
from glyphdiffuse.cli import main, parse_steps
from glyphdiffuse.config import PRESETS, RunConfig, parse_config, preset
from glyphdiffuse.errors import ParseError, ValidationError
from glyphdiffuse.imageio import parse_pgm

TINY = [
    "--set", "denoiser.base_channels = 8",
    "--set", "denoiser.text_dim = 8",
    "--set", "dataset.words = cool, ink",
    "--set", "dataset.samples_per_pair = 2",
    "--set", "dataset.height = 16",
    "--set", "dataset.width = 32",
    "--set", "schedule.T = 1000",
    "--set", "train.batch_size = 8",
]


# -- config ------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_text_round_trip(name):
    cfg = preset(name)
    assert parse_config(cfg.to_text()) == cfg


def test_full_scale_preset_values():
    cfg = preset("iam-full")
    assert (cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end) == (1000, 1e-4, 0.02)
    assert (cfg.train.learning_rate, cfg.train.batch_size, cfg.train.epochs) == (1e-4, 224, 1000)
    assert (cfg.denoiser.base_channels, cfg.denoiser.attention_heads) == (320, 4)
    assert (cfg.dataset.height, cfg.dataset.width) == (64, 256)


@given(st.integers(1, 10_000), st.floats(1e-6, 1.0), st.booleans(),
       st.lists(st.sampled_from(["ab", "cool", "ink"]), min_size=1, max_size=3))
def test_override_round_trip(epochs, lr, use_pe, words):
    text = (f"train.epochs = {epochs}\ntrain.learning_rate = {lr!r}\n"
            f"denoiser.use_positional_encoding = {str(use_pe).lower()}\ndataset.words = {', '.join(words)}\n")
    cfg = parse_config(text)
    assert cfg.train.epochs == epochs and cfg.train.learning_rate == lr
    assert cfg.dataset.words == tuple(words)
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text", ["train.nope = 1", "bogus.epochs = 1", "epochs = 1", "train.epochs",
                                  "train.epochs = many", "denoiser.use_attention = maybe",
                                  "train.epochs = none"])
def test_strict_parsing(text):
    with pytest.raises(ParseError):
        parse_config(text)


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\ntrain.epochs = 3  # trailing\n")
    assert cfg.train.epochs == 3


def test_validation():
    with pytest.raises(ValidationError):
        parse_config("codec.factor = 3").validate()
    with pytest.raises(ValidationError):
        preset("nope")


def test_parse_steps():
    assert parse_steps("100:1000:100") == list(range(100, 1001, 100))
    for bad in ("1:2", "0:10:1", "5:1:1", "a:b:c"):
        with pytest.raises(ValidationError):
            parse_steps(bad)


# -- command line ------------------------------------------------------------

def test_no_arguments_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_and_flag():
    assert main(["fly"]) == 2
    assert main(["sample", "--bogus"]) == 2


def test_validation_failure_single_line(capsys, tmp_path):
    code = main(["train", "--set", "train.nope=1", "--out", str(tmp_path / "c.gdf")])
    err = capsys.readouterr().err
    assert code == 1 and err.count("\n") == 1 and "unknown key" in err


def test_thread_env_validated(monkeypatch, tmp_path):
    monkeypatch.setenv("GLYPH_DIFFUSE_THREADS", "zero")
    assert main(["gen-toy", "--out", str(tmp_path)]) == 1
    monkeypatch.setenv("GLYPH_DIFFUSE_THREADS", "1")
    assert main(["gen-toy", "--out", str(tmp_path)] + TINY) == 0


def test_gen_toy_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-toy", "--out", str(a)] + TINY) == 0
    assert main(["gen-toy", "--out", str(b)] + TINY) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) == 4 * 2 * 2 + 1
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ckpt = root / "model.gdf"
    assert main(["train", "--epochs", "1", "--out", str(ckpt)] + TINY) == 0
    return root, ckpt


def test_train_reproducible_with_provenance(trained):
    root, ckpt = trained
    first = ckpt.read_bytes()
    # the output path is part of the echoed config, so rerun in place
    assert main(["train", "--epochs", "1", "--out", str(ckpt)] + TINY) == 0
    assert ckpt.read_bytes() == first
    _, meta = container.load(ckpt)
    echoed = parse_config(meta["run_config"])
    assert isinstance(echoed, RunConfig) and echoed.to_text() == meta["run_config"]
    assert echoed.train.epochs == 1 and echoed.dataset.words == ("cool", "ink")


def test_sample_example_reproducible(trained):
    root, ckpt = trained
    outs = []
    for name in ("w1.pgm", "w2.pgm"):
        out = root / name
        argv = ["sample", "--checkpoint", str(ckpt), "--word", "cool", "--writer", "3", "--t-sample", "600",
                "--seed", "1", "--out", str(out)]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert parse_pgm(outs[0]).shape == (16, 32)


def test_sample_rejects_bad_request(trained, capsys):
    root, ckpt = trained
    base = ["sample", "--checkpoint", str(ckpt), "--word", "cool", "--out", str(root / "x.pgm")]
    assert main(base + ["--writer", "9"]) == 1
    assert main(base + ["--writer", "0", "--t-sample", "0"]) == 1
    assert main(base[:3] + ["--word", "zebra", "--writer", "0", "--out", str(root / "x.pgm")]) == 1
    assert all(line.startswith("glyphdiffuse: error:") for line in capsys.readouterr().err.splitlines())


def test_sweep_timesteps(trained):
    root, ckpt = trained
    out = root / "sweep"
    assert main(["sweep-timesteps", "--checkpoint", str(ckpt), "--word", "ink", "--writer", "1",
                 "--steps", "100:1000:100", "--out-dir", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == [f"t_sample_{s:04d}.pgm" for s in range(100, 1001, 100)]


def test_interpolate_endpoint_matches_sample(trained):
    root, ckpt = trained
    out = root / "interp"
    assert main(["interpolate", "--checkpoint", str(ckpt), "--word", "ink", "--writer-a", "0", "--writer-b", "2",
                 "--lambdas", "0,0.5,1", "--t-sample", "50", "--seed", "3", "--out-dir", str(out)]) == 0
    assert main(["sample", "--checkpoint", str(ckpt), "--word", "ink", "--writer", "0", "--t-sample", "50",
                 "--seed", "3", "--out", str(root / "plain.pgm")]) == 0
    assert (out / "lambda_0.000.pgm").read_bytes() == (root / "plain.pgm").read_bytes()
    assert len(list(out.iterdir())) == 3


def test_evaluate_report(trained, capsys):
    root, ckpt = trained
    report = root / "report.json"
    argv = ["evaluate", "--checkpoint", str(ckpt), "--n", "40", "--t-sample", "5", "--out", str(report)] + TINY
    # 16 real images cannot support a 32-D covariance
    assert main(argv) == 1
    assert "need at least 33 samples" in capsys.readouterr().err
    assert main(argv + ["--set", "dataset.samples_per_pair = 5", "--set", "metrics.classifier_epochs = 3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split("=")[0] for ln in lines[:4]] == ["fid", "style_accuracy", "n_real", "n_generated"]
    data = json.loads(report.read_text())
    assert data["n_generated"] == 40 and data["n_real"] == 40
    assert 0.0 <= data["style_accuracy"] <= 1.0 and np.isfinite(data["fid"])
    assert parse_config(data["config"]).metrics.classifier_epochs == 3


def test_train_codec_and_reuse(trained):
    root, _ = trained
    codec = root / "codec.gdf"
    assert main(["train-codec", "--kind", "pooled", "--out", str(codec)] + TINY) == 0
    ck = root / "with_codec.gdf"
    assert main(["train", "--epochs", "1", "--codec", str(codec), "--out", str(ck)] + TINY) == 0
    tensors, _ = container.load(ck)
    assert np.array_equal(tensors["codec.mean"], container.load(codec)[0]["codec.mean"])
