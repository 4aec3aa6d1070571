import numpy as np
import pytest

from stripformer.cli import bench_rows, main
from stripformer.imageio import read_png, to_uint8, write_png
from stripformer.model import StripformerConfig, init_params, save_params

TINY_INI = """[model]
base_channels = 4
blocks_per_scale = 1
heads = 1
mlp_ratio = 2
[train]
steps = 3
batch_size = 1
crop = 16
eval_every = 2
[data]
size = 24
pairs = 2
"""


@pytest.fixture()
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def test_train_writes_artifacts_and_is_repeatable(tmp_path, tiny_ini, capsys):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(tiny_ini), "--synthetic", "--out", str(out), "--save-pair"]) == 0
        assert {p.name for p in out.iterdir()} >= {"checkpoint.spf", "metrics.csv", "config.ini", "pair"}
        runs.append(out)
    assert (runs[0] / "metrics.csv").read_bytes() == (runs[1] / "metrics.csv").read_bytes()
    assert (runs[0] / "checkpoint.spf").read_bytes() == (runs[1] / "checkpoint.spf").read_bytes()
    assert "psnr_val" in capsys.readouterr().out
    # the echoed config reproduces the run
    again = tmp_path / "c"
    assert main(["train", "--config", str(runs[0] / "config.ini"), "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (runs[0] / "metrics.csv").read_bytes()


def test_train_flags_override(tmp_path, tiny_ini):
    out = tmp_path / "o"
    assert main(["train", "--config", str(tiny_ini), "--out", str(out), "--steps", "2",
                 "--lambda2", "0", "--crop", "0", "--seed", "4"]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 3
    assert all(float(line.split(",")[4]) == 0.0 for line in lines[1:])
    echo = (out / "config.ini").read_text()
    assert "crop = none" in echo and "seed = 4" in echo


def test_train_unknown_key(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlearning_rate = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "learning_rate" in err and err.startswith("spf: error [ConfigurationError]")


def test_train_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--synthetic", "--data-dir", "x", "--out", str(tmp_path)])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 2


def test_train_from_folder(tmp_path, tiny_ini):
    out = tmp_path / "o"
    assert main(["train", "--config", str(tiny_ini), "--synthetic", "--save-pair", "--out", str(out)]) == 0
    data = tmp_path / "data"
    for sub, name in (("blur", "blurred"), ("sharp", "sharp")):
        (data / sub).mkdir(parents=True)
        (data / sub / "0.png").write_bytes((out / "pair" / f"{name}.png").read_bytes())
    assert main(["train", "--config", str(tiny_ini), "--data-dir", str(data), "--out", str(tmp_path / "f")]) == 0


def test_infer_zero_final_is_identity_on_odd_size(tmp_path, rng, capsys):
    params = init_params(StripformerConfig(base_channels=4, blocks_per_scale=1, heads=1, mlp_ratio=2),
                         seed=0, zero_final=True)
    save_params(tmp_path / "z.spf", params)
    img = rng.uniform(0, 1, (3, 65, 67))
    write_png(tmp_path / "in.png", img)
    write_png(tmp_path / "ref.png", np.clip(img + 0.05, 0, 1))
    code = main(["infer", "--checkpoint", str(tmp_path / "z.spf"), "--input", str(tmp_path / "in.png"),
                 "--output", str(tmp_path / "out.png"), "--reference", str(tmp_path / "ref.png"), "--runs", "1"])
    assert code == 0
    out = read_png(tmp_path / "out.png")
    assert out.shape == (3, 65, 67)
    np.testing.assert_array_equal(to_uint8(out), to_uint8(img))
    text = capsys.readouterr().out
    assert "inference_ms" in text and "gain 0.000" in text


def test_infer_errors(tmp_path, capsys, tiny_ini):
    assert main(["infer", "--checkpoint", str(tmp_path / "none.spf"), "--input", "x.png",
                 "--output", "y.png"]) == 1
    params = init_params(StripformerConfig(base_channels=4, blocks_per_scale=1, heads=1, mlp_ratio=2))
    save_params(tmp_path / "p.spf", params)
    write_png(tmp_path / "in.png", np.zeros((3, 8, 8)))
    other = tmp_path / "other.ini"
    other.write_text("[model]\nbase_channels = 8\n")
    assert main(["infer", "--checkpoint", str(tmp_path / "p.spf"), "--input", str(tmp_path / "in.png"),
                 "--output", str(tmp_path / "o.png"), "--config", str(other)]) == 1
    assert "CheckpointError" in capsys.readouterr().err
    assert main(["infer", "--checkpoint", str(tmp_path / "p.spf"), "--input", str(tmp_path / "in.png"),
                 "--output", str(tmp_path / "o.png"), "--config", str(tiny_ini), "--runs", "1"]) == 0


@pytest.mark.parametrize("block", ["intra", "inter", "mlp", "resblock", "losses"])
def test_grad_check_passes(block, capsys):
    assert main(["grad-check", block]) == 0
    assert "PASS" in capsys.readouterr().out


def test_grad_check_usage(capsys):
    with pytest.raises(SystemExit) as info:
        main(["grad-check", "decoder"])
    assert info.value.code == 2
    assert main(["grad-check", "intra", "--dims", "1,4,3"]) == 1


def test_bench_output(capsys):
    assert main(["bench", "--hw", "1,3x5,16", "--m", "2"]) == 0
    out = capsys.readouterr().out
    assert "all 9 measured counts equal their closed forms" in out
    rows, notices = bench_rows([(80, 80)], 1, ["intra", "vanilla"])
    assert [r["mechanism"] for r in rows] == ["intra"] and "exceeds cap" in notices[0]
    assert rows[0]["score_entries"] == 80 * 80 * 80 * 2


def test_bench_bad_input(capsys):
    assert main(["bench", "--mechanisms", "linear"]) == 1
    assert main(["bench", "--hw", "0"]) == 1
    assert main(["bench", "--hw", "abc"]) == 1


def test_thread_limit_env(monkeypatch, capsys):
    monkeypatch.setenv("SPF_THREADS", "1")
    assert main(["bench", "--hw", "4"]) == 0
    monkeypatch.setenv("SPF_THREADS", "many")
    assert main(["bench", "--hw", "4"]) == 1
