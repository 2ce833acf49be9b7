"""Flat ``key=value`` run configuration.

One file covers the model, the optimizer, the data source and the seed::

    # comments and blank lines are ignored
    manifest = data/manifest.tsv
    layout = toy5
    stage_channels = 16,32,32
    total_epochs = 20

Keys not listed in :data:`SCHEMA` are rejected, and paths are resolved
against the config file's directory and checked when the file is parsed.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import Modality
from .errors import ConfigError
from .network import ModelConfig, _parse_field
from .train import OptimConfig

MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig) if f.name != "seed")
OPTIM_KEYS = tuple(f.name for f in dataclasses.fields(OptimConfig))
DATA_KEYS = ("manifest", "data_root", "modality", "train_split", "val_split", "checkpoint_every")
SCHEMA = MODEL_KEYS + OPTIM_KEYS + DATA_KEYS + ("seed",)

_OPTIM_TUPLES = {"step_epochs": int, "step_factors": float}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    manifest: Path | None = None
    data_root: Path | None = None
    modality: Modality = Modality.JOINT
    train_split: str = "train"
    val_split: str = "val"
    checkpoint_every: int = 0
    seed: int = 0

    def to_items(self) -> dict[str, str]:
        items = {k: v for k, v in self.model.to_items().items() if k != "seed"}
        for f in dataclasses.fields(self.optim):
            v = getattr(self.optim, f.name)
            items[f.name] = ",".join(_fmt(x) for x in v) if isinstance(v, tuple) else _fmt(v)
        if self.manifest is not None:
            items["manifest"] = str(self.manifest)
        if self.data_root is not None:
            items["data_root"] = str(self.data_root)
        items["modality"] = self.modality.value
        items["train_split"] = self.train_split
        items["val_split"] = self.val_split
        items["checkpoint_every"] = str(self.checkpoint_every)
        items["seed"] = str(self.seed)
        return items

    def dumps(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_items().items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def parse_text(text: str, base_dir=None, check_paths: bool = True) -> RunConfig:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in items:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return from_items(items, base_dir, check_paths)


def from_items(items: dict[str, str], base_dir=None, check_paths: bool = True) -> RunConfig:
    unknown = set(items) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    seed = _int(items, "seed", 0)
    model = ModelConfig(**{k: _parse_field(k, items[k]) for k in MODEL_KEYS if k in items},
                        seed=seed)
    optim_kwargs = {}
    for k in OPTIM_KEYS:
        if k not in items:
            continue
        raw = items[k]
        try:
            if k in _OPTIM_TUPLES:
                conv = _OPTIM_TUPLES[k]
                optim_kwargs[k] = tuple(conv(x) for x in raw.split(",") if x.strip())
            elif k in ("base_lr", "momentum", "weight_decay", "clip_norm"):
                optim_kwargs[k] = float(raw)
            else:
                optim_kwargs[k] = int(raw)
        except ValueError:
            raise ConfigError(f"bad value for {k}: {raw!r}") from None
    optim = OptimConfig(**optim_kwargs)
    try:
        modality = Modality.parse(items.get("modality", "joint"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    base = (Path(base_dir) if base_dir is not None else Path.cwd()).resolve()
    manifest = _path(items, "manifest", base)
    data_root = _path(items, "data_root", base)
    if check_paths:
        if manifest is not None and not manifest.is_file():
            raise ConfigError(f"manifest not found: {manifest}")
        if data_root is not None and not data_root.is_dir():
            raise ConfigError(f"data_root is not a directory: {data_root}")
    every = _int(items, "checkpoint_every", 0)
    if every < 0:
        raise ConfigError("checkpoint_every must be >= 0")
    return RunConfig(model, optim, manifest, data_root, modality,
                     items.get("train_split", "train"), items.get("val_split", "val"),
                     every, seed)


def _int(items, key, default):
    raw = items.get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _path(items, key, base):
    raw = items.get(key)
    if raw is None or raw == "":
        return None
    p = Path(raw).expanduser()
    return p if p.is_absolute() else base / p


def load_config(path, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_text(text, path.parent, check_paths)
