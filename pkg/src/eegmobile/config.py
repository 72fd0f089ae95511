"""Plain-text ``key = value`` run configuration and run manifests.

Precedence is command-line flag > config file > built-in default. A run
manifest (JSON) records the resolved configuration, the seed, the tool
version and SHA-256 fingerprints of every input file; it can be passed
back as a config file to reproduce a run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .nn.model import MicroNetConfig
from .spectro import RenderConfig, SpectrogramConfig
from .train import AdamHyper, TrainConfig

__all__ = ["DEFAULTS", "parse_config_text", "load_config", "RunConfig", "file_fingerprint", "write_manifest"]

DEFAULTS: dict[str, str] = {
    "seed": "0",
    "spectro.fs": "100",
    "spectro.nperseg": "30",
    "spectro.noverlap": "16",
    "spectro.nfft": "1024",
    "spectro.window": "tukey:0.25",
    "spectro.detrend": "constant",
    "render.log_power": "true",
    "render.width": "224",
    "render.height": "224",
    "ingest.channel": "EEG Fpz-Cz",
    "ingest.trim_minutes": "30",
    "ingest.workers": "4",
    "model.input_size": "64",
    "train.batch_size": "16",
    "train.epochs": "20",
    "train.phase1_epochs": "5",
    "train.trainable_layers": "5:",
    "train.lr": "0.001",
    "train.beta1": "0.9",
    "train.beta2": "0.999",
    "train.eps": "1e-7",
    "train.prefetch": "2",
    "train.strict": "false",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ValueError(f"line {n}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    """Read a key=value file, or the ``config`` block of a JSON run manifest."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        values = json.loads(text)["config"]
        unknown = set(values) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown keys in manifest: {sorted(unknown)}")
        return {k: str(v) for k, v in values.items()}
    return parse_config_text(text)


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _window(v: str):
    name, _, arg = v.partition(":")
    return (name, float(arg)) if arg else name


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def resolve(cls, config_file=None, overrides: Optional[dict] = None) -> "RunConfig":
        values = dict(DEFAULTS)
        if config_file is not None:
            values.update(load_config(config_file))
        for k, v in (overrides or {}).items():
            if v is None:
                continue
            if k not in DEFAULTS:
                raise ValueError(f"unknown key {k!r}")
            values[k] = str(v)
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def spectro(self) -> SpectrogramConfig:
        v = self.values
        return SpectrogramConfig(
            fs=float(v["spectro.fs"]),
            nperseg=int(v["spectro.nperseg"]),
            noverlap=int(v["spectro.noverlap"]),
            nfft=int(v["spectro.nfft"]),
            window=_window(v["spectro.window"]),
            detrend=v["spectro.detrend"],
        )

    def render(self) -> RenderConfig:
        v = self.values
        return RenderConfig(
            log_power=_bool(v["render.log_power"]),
            out_width=int(v["render.width"]),
            out_height=int(v["render.height"]),
        )

    @property
    def trim_minutes(self) -> Optional[float]:
        t = self.values["ingest.trim_minutes"].strip().lower()
        return None if t in ("none", "off", "") else float(t)

    def model(self) -> MicroNetConfig:
        n = int(self.values["model.input_size"])
        return MicroNetConfig(input_shape=(n, n, 3))

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            batch_size=int(v["train.batch_size"]),
            epochs=int(v["train.epochs"]),
            phase1_epochs=int(v["train.phase1_epochs"]),
            trainable_layers=v["train.trainable_layers"],
            adam=AdamHyper(float(v["train.lr"]), float(v["train.beta1"]), float(v["train.beta2"]),
                           float(v["train.eps"])),
            seed=self.seed,
            prefetch=int(v["train.prefetch"]),
            strict=_bool(v["train.strict"]),
        )


def file_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, cfg: RunConfig, inputs, command: str, extra: Optional[dict] = None) -> dict:
    manifest = {
        "tool": "eegmobile",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": dict(sorted(cfg.values.items())),
        "inputs": {Path(p).name: file_fingerprint(p) for p in sorted(inputs, key=lambda p: Path(p).name)},
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
