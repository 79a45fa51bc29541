"""Data resolution and the train-then-evaluate run shared by the CLI and ablations."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import kernels
from .config import RunConfig
from .data import Sample, load_dataset, optional_resize, split_holdout, synth_dataset
from .metrics import MetricReport
from .network import SANet, build
from .trainer import TrainResult, evaluate, train


def apply_backend(rc: RunConfig) -> None:
    if rc.backend != "auto":
        kernels.use_backend(rc.backend)


def datasets(rc: RunConfig) -> tuple[list[Sample], list[Sample]]:
    size = (rc.image_height, rc.image_width)
    if rc.train_dir:
        tr = optional_resize(load_dataset(rc.train_dir), size)
        if rc.test_dir:
            return tr, optional_resize(load_dataset(rc.test_dir), size)
        return split_holdout(tr, rc.seed)
    sp = rc.synth()
    tr = synth_dataset(sp, rc.n_train)
    if rc.test_dir:
        return tr, optional_resize(load_dataset(rc.test_dir), size)
    return tr, synth_dataset(sp, rc.n_test, start=rc.n_train)


def test_set(rc: RunConfig) -> list[Sample]:
    size = (rc.image_height, rc.image_width)
    if rc.test_dir:
        return optional_resize(load_dataset(rc.test_dir), size)
    return datasets(rc)[1]


def write_report(report: MetricReport, out_dir: Path, stem: str = "report") -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    j, c = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
    j.write_text(report.to_json())
    c.write_text(report.to_csv())
    return [j, c]


@dataclass
class RunOutput:
    model: SANet
    result: TrainResult
    report: Optional[MetricReport]
    files: list


def train_and_evaluate(rc: RunConfig, out_dir=None, on_epoch=None) -> RunOutput:
    apply_backend(rc)
    tr, te = datasets(rc)
    if not tr:
        raise ValueError("training set is empty")
    model = build(rc.model(), seed=rc.seed)
    res = train(model, tr, rc.train(), test_set=te or None, out_dir=out_dir, on_epoch=on_epoch)
    report = res.report
    if report is None and te:
        report = evaluate(model, te, rc.threshold, rc.match_radius)
    files = []
    if out_dir is not None:
        out = Path(out_dir)
        (out / "config.txt").write_text(rc.to_text())
        files = [out / "checkpoint.ckpt", out / "history.csv", out / "config.txt"]
        if report is not None:
            files += write_report(report, out)
    return RunOutput(model, res, report, files)
