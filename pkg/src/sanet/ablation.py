"""Flag-matrix ablation: one fresh train + evaluate per row, compared with the baseline."""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .config import ConfigError, RunConfig, parse_sections
from .metrics import MetricReport
from .network import build, count_params_flops
from .pipeline import train_and_evaluate

METRICS = ("iou", "niou", "pd", "fa")

_OFF = {"dual_path": False, "use_pinwheel": False, "use_cbam": False, "use_safm": False}

DEFAULT_ROWS: tuple[tuple[str, dict], ...] = (
    ("baseline", dict(_OFF)),
    ("+pconv", {**_OFF, "dual_path": True, "use_pinwheel": True}),
    ("+pconv+cbam", {"use_safm": False}),
    ("safm_no_residual", {"safm_residual": False}),
    ("safm_lambda_fixed", {"lambda_learnable": False}),
    ("full", {}),
)


@dataclass
class AblationSpec:
    rows: list = field(default_factory=lambda: [(n, dict(o)) for n, o in DEFAULT_ROWS])
    base: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str, source: str = "<spec>") -> "AblationSpec":
        """Top-level entries override the base config; each ``[name]`` is a row.

        A file without sections runs the default rows on top of its entries.
        """
        top, sections = parse_sections(text, source)
        if not sections:
            return cls(base=top)
        return cls(rows=[(n, o) for n, o in sections], base=top)

    @classmethod
    def load(cls, path) -> "AblationSpec":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"ablation spec {p} not found")
        return cls.parse(p.read_text(), str(p))


@dataclass
class AblationRow:
    name: str
    overrides: dict
    params: Optional[int] = None
    flops: Optional[int] = None
    report: Optional[MetricReport] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.report is not None

    def metric(self, key: str) -> Optional[float]:
        return None if self.report is None else getattr(self.report, key)


@dataclass
class AblationTable:
    rows: list

    def delta(self, row: AblationRow, key: str) -> Optional[float]:
        base = self.rows[0]
        a, b = row.metric(key), base.metric(key)
        return None if a is None or b is None else a - b

    def to_csv(self) -> str:
        cols = ["row", "status", "params", "flops"] + list(METRICS) + [f"d_{m}" for m in METRICS] + ["overrides"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            vals = [r.name, "ok" if r.ok else f"failed: {r.error}", r.params, r.flops]
            vals += [r.metric(m) for m in METRICS] + [self.delta(r, m) for m in METRICS]
            vals.append(" ".join(f"{k}={v}" for k, v in sorted(r.overrides.items())))
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in vals])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'row':<20} {'params':>9} {'IoU':>7} {'nIoU':>7} {'Pd':>7} {'Fa(1e-6)':>10} {'dIoU':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            if not r.ok:
                lines.append(f"{r.name:<20} {r.params or '':>9} FAILED {r.error}")
                continue
            rep = r.report
            pd = float("nan") if rep.pd is None else rep.pd
            d = self.delta(r, "iou")
            lines.append(
                f"{r.name:<20} {r.params:>9} {rep.iou:>7.4f} {rep.niou:>7.4f} {pd:>7.4f} "
                f"{rep.fa_e6:>10.2f} {'' if d is None else f'{d:+.4f}':>8}"
            )
        return "\n".join(lines) + "\n"


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "row"


def run_ablation(spec: AblationSpec, base: RunConfig, out_dir=None, log=print) -> AblationTable:
    base = base.with_values(spec.base) if spec.base else base
    rows = []
    for name, overrides in spec.rows:
        row = AblationRow(name, dict(overrides))
        rows.append(row)
        try:
            rc = base.with_values(overrides)
            cfg = rc.model()
            row.params, row.flops = count_params_flops(build(cfg, seed=rc.seed), *cfg.input_size)
            row_dir = None if out_dir is None else Path(out_dir) / _slug(name)
            row.report = train_and_evaluate(rc, row_dir).report
            if row.report is None:
                row.error = "no held-out set"
        except (ConfigError, ValueError, ArithmeticError, OSError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        if log:
            log(f"ablation row {name}: {'ok' if row.ok else row.error}")
    table = AblationTable(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(table.to_csv())
        (out / "ablation.txt").write_text(table.to_text())
    return table
