"""Run configuration: one flat schema of typed ``key = value`` entries.

The schema below is the single source of truth for parsing, validation,
defaults and the ``--help`` reference. Files may contain comments
starting with ``#``. Ablation spec files may additionally use ``[name]``
section headers; see :func:`parse_sections`.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from .data import SynthParams
from .dsm import CBAM_ORDERS
from .network import SANetConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _choice(*opts: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}, got {s!r}")
        return s

    parse.__name__ = "|".join(opts)
    return parse


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    group: str


_TYPE_NAMES = {int: "int", float: "float", str: "str", _bool: "bool"}

SCHEMA: tuple[Key, ...] = (
    # model
    Key("base_channels", int, 16, "width of the first stage (multiple of 4)", "model"),
    Key("stages", int, 4, "encoder stages; inputs must be divisible by 2^(stages-1)", "model"),
    Key("use_pinwheel", _bool, True, "pinwheel units in the second encoder branch (else 3x3 convs)", "model"),
    Key("use_cbam", _bool, True, "channel and spatial attention after each encoder block", "model"),
    Key("cbam_order", _choice(*CBAM_ORDERS), "channel_first", "order of the two attention gates", "model"),
    Key("dual_path", _bool, True, "second encoder branch and its fusion conv", "model"),
    Key("use_safm", _bool, True, "attention fusion on skips (else plain concatenation)", "model"),
    Key("safm_residual", _bool, True, "residual term in skip fusion", "model"),
    Key("lambda_learnable", _bool, True, "learn the residual scale (else fixed at 1)", "model"),
    # training
    Key("lr0", float, 1e-3, "initial learning rate", "train"),
    Key("eta_min", float, 0.0, "final learning rate of the cosine schedule", "train"),
    Key("epochs", int, 50, "training epochs", "train"),
    Key("batch", int, 8, "mini-batch size", "train"),
    Key("beta1", float, 0.9, "Adam first-moment decay", "train"),
    Key("beta2", float, 0.999, "Adam second-moment decay", "train"),
    Key("adam_eps", float, 1e-8, "Adam denominator epsilon", "train"),
    Key("seed", int, 0, "seed for initialization, shuffling and augmentation", "train"),
    Key("augment", _bool, True, "random horizontal and vertical flips", "train"),
    Key("clip_grad", float, 0.0, "global gradient-norm clip (0 disables)", "train"),
    Key("eval_every", int, 5, "epochs between held-out evaluations (last epoch always)", "train"),
    Key("checkpoint_every", int, 0, "epochs between extra checkpoints (0: final only)", "train"),
    # evaluation
    Key("threshold", float, 0.5, "binarization threshold for predictions", "eval"),
    Key("match_radius", float, 3.0, "max centroid distance in px for a detection", "eval"),
    # data
    Key("train_dir", str, "", "dataset root with images/ and masks/ (empty: synthesize)", "data"),
    Key("test_dir", str, "", "held-out dataset root (empty: synthesize, or 20% split of train_dir)", "data"),
    Key("image_height", int, 64, "image height; loaded images are resized to it", "data"),
    Key("image_width", int, 64, "image width; loaded images are resized to it", "data"),
    Key("n_train", int, 200, "synthetic training scenes", "data"),
    Key("n_test", int, 50, "synthetic held-out scenes", "data"),
    # synthetic scenes
    Key("synth_seed", int, 0, "scene generator seed", "synth"),
    Key("synth_targets_min", int, 1, "fewest targets per scene", "synth"),
    Key("synth_targets_max", int, 3, "most targets per scene", "synth"),
    Key("synth_amplitude_min", float, 0.45, "lowest target peak amplitude, in (0, 1]", "synth"),
    Key("synth_amplitude_max", float, 0.8, "highest target peak amplitude, in (0, 1]", "synth"),
    Key("synth_sigma_min", float, 0.6, "smallest target Gaussian sigma in px", "synth"),
    Key("synth_sigma_max", float, 1.3, "largest target Gaussian sigma in px", "synth"),
    Key("synth_background", float, 0.25, "mean background level", "synth"),
    Key("synth_clutter", float, 0.25, "peak amplitude of the smooth clutter field", "synth"),
    Key("synth_noise", float, 0.02, "white-noise standard deviation", "synth"),
    Key("synth_margin", int, 4, "min distance of target centers from the border in px", "synth"),
    Key("synth_min_separation", float, 8.0, "min distance between target centers in px", "synth"),
    # misc
    Key("backend", _choice("auto", "cython", "python"), "auto", "kernel backend", "runtime"),
    Key("bench_runs", int, 10, "timed forward passes for bench (median reported)", "runtime"),
    Key("bench_batch", int, 1, "batch size for bench", "runtime"),
)

KEYS = {k.name: k for k in SCHEMA}


def type_name(k: Key) -> str:
    return _TYPE_NAMES.get(k.parse, getattr(k.parse, "__name__", "str"))


def defaults() -> dict:
    return {k.name: k.default for k in SCHEMA}


def help_text() -> str:
    lines = ["configuration keys (key = value; --set key=value overrides):"]
    group = None
    for k in SCHEMA:
        if k.group != group:
            group = k.group
            lines.append(f"  [{group}]")
        lines.append(f"    {k.name:<22} {type_name(k):<28} default {k.default!r}")
        lines.append(f"        {k.help}")
    return "\n".join(lines)


def parse_value(key: str, raw: str, where: str = "") -> Any:
    if key not in KEYS:
        raise ConfigError(f"{where}unknown config key {key!r}")
    try:
        return KEYS[key].parse(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}{key}: {exc}") from None


def _split_line(line: str, where: str) -> Optional[tuple[str, str]]:
    s = line.split("#", 1)[0].strip()
    if not s:
        return None
    if "=" not in s:
        raise ConfigError(f"{where}expected 'key = value', got {line.strip()!r}")
    k, v = s.split("=", 1)
    return k.strip(), v.strip()


def parse_sections(text: str, source: str = "<config>") -> tuple[dict, list[tuple[str, dict]]]:
    """Top-level entries plus ordered ``[section]`` blocks of raw overrides."""
    top: dict = {}
    sections: list[tuple[str, dict]] = []
    cur = top
    for n, line in enumerate(text.splitlines(), 1):
        where = f"{source}:{n}: "
        s = line.split("#", 1)[0].strip()
        if s.startswith("[") and s.endswith("]"):
            name = s[1:-1].strip()
            if not name or any(name == nm for nm, _ in sections):
                raise ConfigError(f"{where}empty or duplicate section {name!r}")
            cur = {}
            sections.append((name, cur))
            continue
        kv = _split_line(line, where)
        if kv is None:
            continue
        k, v = kv
        if k in cur:
            raise ConfigError(f"{where}duplicate key {k!r}")
        cur[k] = parse_value(k, v, where)
    return top, sections


def parse_text(text: str, source: str = "<config>") -> dict:
    top, sections = parse_sections(text, source)
    if sections:
        raise ConfigError(f"{source}: sections are only allowed in ablation spec files")
    return top


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(k.strip(), v, "--set: ")
    return out


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        vals = defaults()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise FileNotFoundError(f"config file {p} not found")
            vals.update(parse_text(p.read_text(), str(p)))
        vals.update(parse_overrides(overrides))
        rc = cls(vals)
        rc.validate()
        return rc

    def with_values(self, extra: dict) -> "RunConfig":
        rc = RunConfig({**self.values, **extra})
        rc.validate()
        return rc

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def model(self) -> SANetConfig:
        v = self.values
        return SANetConfig(
            base_channels=v["base_channels"],
            stages=v["stages"],
            use_pinwheel=v["use_pinwheel"],
            use_cbam=v["use_cbam"],
            cbam_order=v["cbam_order"],
            dual_path=v["dual_path"],
            use_safm=v["use_safm"],
            safm_residual=v["safm_residual"],
            lambda_learnable=v["lambda_learnable"],
            input_size=(v["image_height"], v["image_width"]),
        )

    def train(self) -> TrainConfig:
        return TrainConfig.from_dict(self.values)

    def synth(self) -> SynthParams:
        v = self.values
        d = {k[len("synth_") :]: val for k, val in v.items() if k.startswith("synth_")}
        d.update(height=v["image_height"], width=v["image_width"])
        return SynthParams.from_dict(d)

    def validate(self) -> None:
        try:
            self.model().validate()
            self.train().validate()
            self.synth().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        v = self.values
        for k in ("n_train", "n_test", "bench_runs", "bench_batch", "eval_every"):
            if v[k] < 1:
                raise ConfigError(f"{k} must be >= 1, got {v[k]}")
        if v["match_radius"] < 0:
            raise ConfigError("match_radius must be >= 0")

    def to_text(self) -> str:
        lines = []
        for k in SCHEMA:
            val = self.values[k.name]
            s = ("true" if val else "false") if isinstance(val, bool) else str(val)
            lines.append(f"{k.name} = {s}")
        return "\n".join(lines) + "\n"
