import json

import numpy as np
import pytest
from PIL import Image

from sanet import cli

TINY = ["--set", "image_height=32", "--set", "image_width=32", "--set", "stages=3", "--set", "base_channels=8",
        "--set", "n_train=4", "--set", "n_test=2", "--set", "epochs=1", "--set", "batch=2"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_documents_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in ("lr0", "use_pinwheel", "synth_sigma_max", "match_radius", "backend"):
        assert key in out


def test_eval_missing_checkpoint_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(tmp_path), *TINY)
    assert code == 3
    assert err.startswith("error[missing-file]:") and err.count("\n") == 1


def test_bad_config_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--set", "epochs=zero", "--out", str(tmp_path))
    assert code == 2 and err.startswith("error[config]:")
    cfg = tmp_path / "c.txt"
    cfg.write_text("mystery = 1\n")
    assert run(capsys, "bench", "--config", str(cfg))[0] == 2
    assert run(capsys, "bench", "--config", str(tmp_path / "absent.txt"))[0] == 3


def test_corrupt_checkpoint_exit_3(capsys, tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"garbage")
    code, _, err = run(capsys, "eval", "--checkpoint", str(p), "--out", str(tmp_path), *TINY)
    assert code == 3 and "bad magic" in err


def test_numerical_failure_exit_4(capsys, tmp_path, monkeypatch):
    import sanet.trainer as tr
    from sanet import tensor as T

    monkeypatch.setattr(tr, "soft_iou_loss", lambda p, y: T.scale(T.sum(p), float("inf")))
    code, _, err = run(capsys, "train", "--out", str(tmp_path), *TINY)
    assert code == 4 and err.startswith("error[numerical]:")


def test_synth_train_eval_infer(capsys, tmp_path):
    data = tmp_path / "data"
    assert run(capsys, "synth", "--out", str(data), *TINY)[0] == 0
    assert len(list((data / "train" / "images").glob("*.pgm"))) == 4
    assert len(list((data / "test" / "masks").glob("*.pgm"))) == 2
    man = json.loads((data / "manifest.json").read_text())
    assert man["command"] == "synth" and "train/images/synth_0_00000.pgm" in man["files"]

    dirs = ["--set", f"train_dir={data / 'train'}", "--set", f"test_dir={data / 'test'}"]
    run_dir = tmp_path / "run"
    code, out, _ = run(capsys, "train", "--out", str(run_dir), *TINY, *dirs)
    assert code == 0 and "epoch    1" in out
    for f in ("checkpoint.ckpt", "history.csv", "config.txt", "report.json", "report.csv", "manifest.json"):
        assert (run_dir / f).is_file(), f
    man = json.loads((run_dir / "manifest.json").read_text())
    assert man["config"]["epochs"] == 1 and "checkpoint.ckpt" in man["files"]

    ev = tmp_path / "eval"
    code, out, _ = run(capsys, "eval", "--checkpoint", str(run_dir / "checkpoint.ckpt"), "--out", str(ev), *TINY, *dirs)
    assert code == 0
    assert (ev / "report.json").read_text() == (run_dir / "report.json").read_text()
    assert json.loads(out)["images"] == 2

    img = data / "test" / "images" / "synth_0_00004.pgm"
    mask = data / "test" / "masks" / "synth_0_00004.pgm"
    inf = tmp_path / "infer"
    code, _, _ = run(capsys, "infer", "--checkpoint", str(run_dir / "checkpoint.ckpt"), "--image", str(img),
                     "--mask", str(mask), "--out", str(inf), *TINY)
    assert code == 0
    m = np.asarray(Image.open(inf / "synth_0_00004_mask.pgm"))
    assert m.shape == (32, 32) and set(np.unique(m)) <= {0, 255}
    ov = Image.open(inf / "synth_0_00004_overlay.png")
    assert ov.mode == "RGB" and ov.size == (32, 32)
    first = (inf / "synth_0_00004_mask.pgm").read_bytes()
    run(capsys, "infer", "--checkpoint", str(run_dir / "checkpoint.ckpt"), "--image", str(img), "--out", str(inf), *TINY)
    assert (inf / "synth_0_00004_mask.pgm").read_bytes() == first


def test_infer_resizes_foreign_sizes(capsys, tmp_path):
    from sanet.checkpoint import save_checkpoint
    from sanet.network import SANetConfig, build

    ck = save_checkpoint(tmp_path / "m.ckpt", build(SANetConfig(base_channels=8, stages=3, input_size=(32, 32))))
    img = tmp_path / "odd.png"
    Image.fromarray((np.random.default_rng(0).random((20, 45)) * 255).astype(np.uint8)).save(img)
    code, _, _ = run(capsys, "infer", "--checkpoint", str(ck), "--image", str(img), "--out", str(tmp_path))
    assert code == 0
    assert np.asarray(Image.open(tmp_path / "odd_mask.pgm")).shape == (20, 45)
    assert run(capsys, "infer", "--checkpoint", str(ck), "--image", str(tmp_path / "no.png"), "--out", str(tmp_path))[0] == 3


def test_bench(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--out", str(tmp_path), *TINY, "--set", "bench_runs=10")
    assert code == 0
    for word in ("params", "flops", "latency", "median of 10"):
        assert word in out
    doc = json.loads((tmp_path / "bench.json").read_text())
    assert doc["params"] > 0 and doc["flops"] > 0


def test_backend_override(capsys, tmp_path):
    from sanet import kernels

    orig = kernels.BACKEND
    try:
        assert run(capsys, "bench", "--out", str(tmp_path), *TINY, "--set", "backend=python")[0] == 0
        assert kernels.BACKEND == "python"
    finally:
        kernels.use_backend(orig)
