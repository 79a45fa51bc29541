"""``sanet`` command-line entry point.

Exit codes: 0 success, 1 unexpected failure, 2 bad configuration,
3 missing or unreadable file, 4 numerical failure. Failures print one
line ``error[<category>]: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import kernels
from . import tensor as T
from .ablation import AblationSpec, run_ablation
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, help_text
from .data import _read_gray, save_sample, synth_dataset
from .gradchecks import SUITE
from .network import build, count_params_flops
from .pipeline import apply_backend, test_set, train_and_evaluate, write_report
from .tensor import Tensor
from .trainer import NumericalError, evaluate, predict

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _write_manifest(out: Path, command: str, files, rc: RunConfig, extra=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    rel = sorted(str(Path(f).relative_to(out)) if Path(f).is_relative_to(out) else str(f) for f in files)
    doc = {"command": command, "files": rel, "config": rc.values}
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _load_model(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint {path} not found")
    return load_checkpoint(path)[0]


# --------------------------------------------------------------------------
# subcommands


def cmd_train(rc: RunConfig, args) -> int:
    out = Path(args.out)

    def show(row):
        tail = "" if "iou" not in row else f" iou {row['iou']:.4f} pd {row['pd']} fa {row['fa']:.3g}"
        print(f"epoch {row['epoch']:4d} lr {row['lr']:.3g} loss {row['loss']:.4f}{tail}", flush=True)

    run = train_and_evaluate(rc, out, on_epoch=None if args.quiet else show)
    _write_manifest(out, "train", run.files, rc)
    if run.report is not None:
        print(json.dumps(run.report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_eval(rc: RunConfig, args) -> int:
    apply_backend(rc)
    model = _load_model(args.checkpoint)
    data = test_set(rc)
    report = evaluate(model, data, rc.threshold, rc.match_radius)
    out = Path(args.out)
    files = write_report(report, out)
    _write_manifest(out, "eval", files, rc, {"checkpoint": str(args.checkpoint)})
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def _overlay(img: np.ndarray, pred: np.ndarray, gt=None) -> np.ndarray:
    g8 = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    rgb = np.stack([g8, g8, g8], axis=-1).astype(np.float32)
    red = np.array([255, 0, 0], dtype=np.float32)
    rgb[pred] = 0.4 * rgb[pred] + 0.6 * red
    if gt is not None:
        edge = gt & ~ndimage.binary_erosion(gt)
        rgb[edge] = (0, 255, 0)
    return rgb.astype(np.uint8)


def cmd_infer(rc: RunConfig, args) -> int:
    apply_backend(rc)
    model = _load_model(args.checkpoint)
    path = Path(args.image)
    if not path.is_file():
        raise FileNotFoundError(f"image {path} not found")
    img = _read_gray(path)
    h, w = model.config.input_size or img.shape
    # bring the image to the trained size, then map the mask back
    from .data import Sample, resize

    s = Sample(img[None], np.zeros((1,) + img.shape, np.uint8), path.stem)
    s_in = resize(s, h, w) if img.shape != (h, w) else s
    prob = predict(model, s_in.image[None])[0]
    mask_in = Sample(prob.astype(np.float32), (prob >= rc.threshold).astype(np.uint8), s.id)
    mask = resize(mask_in, *img.shape).mask[0] > 0 if img.shape != (h, w) else mask_in.mask[0] > 0
    gt = None
    if args.mask:
        gt = _read_gray(Path(args.mask)) > 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mp, op = out / f"{path.stem}_mask.pgm", out / f"{path.stem}_overlay.png"
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(mp)
    Image.fromarray(_overlay(img, mask, gt), mode="RGB").save(op)
    _write_manifest(out, "infer", [mp, op], rc, {"checkpoint": str(args.checkpoint), "image": str(path)})
    print(f"{mp}\n{op}")
    return EXIT_OK


def cmd_synth(rc: RunConfig, args) -> int:
    out = Path(args.out)
    sp = rc.synth()
    files = []
    for split, n, start in (("train", rc.n_train, 0), ("test", rc.n_test, rc.n_train)):
        for s in synth_dataset(sp, n, start):
            files += save_sample(s, out / split)
    _write_manifest(out, "synth", files, rc)
    print(f"wrote {rc.n_train} train and {rc.n_test} test scenes under {out}")
    return EXIT_OK


def cmd_gradcheck(rc: RunConfig, args) -> int:
    apply_backend(rc)
    ok = True
    for name, fn in SUITE.items():
        r = fn(rc.seed)
        ok &= r.passed
        print(f"{name:<20} {'pass' if r.passed else 'FAIL'}  worst rel err {r.worst_rel_error:.3e}  ({r.checked} coords)")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench(rc: RunConfig, args) -> int:
    apply_backend(rc)
    cfg = rc.model()
    model = build(cfg, seed=rc.seed).eval()
    h, w = cfg.input_size
    params, flops = count_params_flops(model, h, w)
    x = Tensor(np.random.default_rng(rc.seed).random((rc.bench_batch, 1, h, w)), dtype=np.float32)
    times = []
    with T.no_grad():
        model(x)
        for _ in range(rc.bench_runs):
            t0 = time.perf_counter()
            model(x)
            times.append(time.perf_counter() - t0)
    med = statistics.median(times)
    print(f"backend   {kernels.BACKEND}")
    print(f"input     {rc.bench_batch}x1x{h}x{w}")
    print(f"params    {params}")
    print(f"flops     {flops} ({flops / 1e9:.3f} G per image)")
    print(f"latency   {med * 1e3:.2f} ms median of {rc.bench_runs}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"backend": kernels.BACKEND, "params": params, "flops": flops, "latency_ms": med * 1e3}
        (out / "bench.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        _write_manifest(out, "bench", [out / "bench.json"], rc)
    return EXIT_OK


def cmd_ablate(rc: RunConfig, args) -> int:
    spec = AblationSpec.load(args.spec) if args.spec else AblationSpec()
    table = run_ablation(spec, rc, Path(args.out))
    print(table.to_text(), end="")
    _write_manifest(Path(args.out), "ablate", [Path(args.out) / "ablation.csv", Path(args.out) / "ablation.txt"], rc)
    return EXIT_OK if all(r.ok for r in table.rows) else EXIT_FAIL


COMMANDS = {
    "train": (cmd_train, "train a model; writes checkpoint, history and report"),
    "eval": (cmd_eval, "evaluate a checkpoint on the held-out set"),
    "infer": (cmd_infer, "predict a mask and an overlay for one image"),
    "synth": (cmd_synth, "write a synthetic dataset (train/ and test/)"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every layer and the tiny network"),
    "bench": (cmd_bench, "parameters, FLOPs and forward latency"),
    "ablate": (cmd_ablate, "run the ablation matrix"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    p = argparse.ArgumentParser(
        prog="sanet",
        description="Infrared small-target detection: training, evaluation and tooling.",
        epilog=help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)
    parsers = {}
    for name, (_, desc) in COMMANDS.items():
        parsers[name] = sub.add_parser(
            name, parents=[common], help=desc, description=desc, epilog=help_text(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
    parsers["train"].add_argument("--quiet", action="store_true", help="no per-epoch lines")
    for name in ("eval", "infer"):
        parsers[name].add_argument("--checkpoint", required=True)
    parsers["infer"].add_argument("--image", required=True)
    parsers["infer"].add_argument("--mask", help="optional ground truth, outlined in the overlay")
    parsers["ablate"].add_argument("--spec", help="ablation spec file (default: the six standard rows)")
    return p


def _fail(category: str, code: int, msg) -> int:
    print(f"error[{category}]: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = RunConfig.load(args.config, args.set)
        return COMMANDS[args.command][0](rc, args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (FileNotFoundError, CheckpointError) as exc:
        return _fail("missing-file", EXIT_MISSING, exc)
    except NumericalError as exc:
        return _fail("numerical", EXIT_NUMERIC, exc)
    except OSError as exc:
        return _fail("io", EXIT_MISSING, exc)
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        return _fail("internal", EXIT_FAIL, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
