"""Experiment files: dataset source, training hyperparameters and the model, in one INI file.

Example::

    [dataset]
    source = synth          ; or a directory holding manifest.csv
    classes = 4
    per_class = 60
    resolution = 32,32
    events = 2048
    noise = 0.05
    seed = 0
    split = 0.8333333333333334
    split_seed = 0

    [experiment]
    epochs = 12
    batch_size = 16
    seed = 0

    [loss]
    kind = timestep_ce

    [optim]
    kind = adam
    lr = 0.001
    schedule = cosine

    [model]
    ...                     ; model sections as in smasnn.model

The resolved file written next to every run reproduces it exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .events import AugmentPolicy, load_dataset, split_dataset, synth_gestures
from .model import ModelConfig, model_config_from_parser, model_config_sections
from .trainer import FrameDataset, LossSpec, OptimSpec, TrainConfig


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synth"
    classes: int = 4
    per_class: int = 60
    resolution: tuple[int, int] = (32, 32)
    events: int = 2048
    noise: float = 0.05
    seed: int = 0
    split: float = 5 / 6
    split_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def timesteps(self) -> int:
        return self.model.input_shape[0]

    def with_overrides(self, seed: int | None = None, timesteps: int | None = None,
                       epochs: int | None = None) -> ExperimentConfig:
        cfg = self
        if seed is not None:
            cfg = replace(cfg, train=replace(cfg.train, seed=seed), model=replace(cfg.model, seed=seed))
        if timesteps is not None:
            if timesteps < 1:
                raise ConfigError(f"timesteps must be positive, got {timesteps}")
            cfg = replace(cfg, model=replace(cfg.model, input_shape=(timesteps,) + cfg.model.input_shape[1:]))
        if epochs is not None:
            cfg = replace(cfg, train=replace(cfg.train, epochs=epochs))
        return cfg


def _pair(text: str) -> tuple[int, int]:
    vals = tuple(int(v) for v in text.split(","))
    if len(vals) != 2:
        raise ConfigError(f"expected two comma-separated integers, got {text!r}")
    return vals


def experiment_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    def sec(name):
        return parser[name] if parser.has_section(name) else parser[parser.default_section]

    try:
        d = sec("dataset")
        dataset = DatasetSpec(
            source=d.get("source", "synth"), classes=d.getint("classes", 4), per_class=d.getint("per_class", 60),
            resolution=_pair(d.get("resolution", "32,32")), events=d.getint("events", 2048),
            noise=d.getfloat("noise", 0.05), seed=d.getint("seed", 0), split=d.getfloat("split", 5 / 6),
            split_seed=d.getint("split_seed", 0),
        )
        e, lo, o, a = sec("experiment"), sec("loss"), sec("optim"), sec("augment")
        train = TrainConfig(
            epochs=e.getint("epochs", 12), batch_size=e.getint("batch_size", 16), seed=e.getint("seed", 0),
            eval_train=e.getboolean("eval_train", True),
            loss=LossSpec(lo.get("kind", "timestep_ce"), lo.getfloat("epsilon", 0.1)),
            optim=OptimSpec(
                kind=o.get("kind", "adam"), lr=o.getfloat("lr", 1e-3), momentum=o.getfloat("momentum", 0.9),
                weight_decay=o.getfloat("weight_decay", 0.0),
                betas=(o.getfloat("beta1", 0.9), o.getfloat("beta2", 0.999)), eps=o.getfloat("eps", 1e-8),
                schedule=o.get("schedule", "constant"),
            ),
            augment=AugmentPolicy(a.getfloat("hflip_p", 0.0), _pair(a.get("translate", "0,0"))),
        )
        if train.epochs < 0 or train.batch_size < 1:
            raise ConfigError(f"bad epochs/batch_size: {train.epochs}/{train.batch_size}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad experiment config value: {exc}") from None
    return ExperimentConfig(dataset, train, model_config_from_parser(parser))


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return experiment_from_parser(parser)


def experiment_to_text(cfg: ExperimentConfig) -> str:
    d, t = cfg.dataset, cfg.train
    sections = {
        "dataset": {
            "source": d.source, "classes": str(d.classes), "per_class": str(d.per_class),
            "resolution": f"{d.resolution[0]},{d.resolution[1]}", "events": str(d.events), "noise": repr(d.noise),
            "seed": str(d.seed), "split": repr(d.split), "split_seed": str(d.split_seed),
        },
        "experiment": {"epochs": str(t.epochs), "batch_size": str(t.batch_size), "seed": str(t.seed),
                       "eval_train": str(t.eval_train).lower()},
        "loss": {"kind": t.loss.kind, "epsilon": repr(t.loss.epsilon)},
        "optim": {
            "kind": t.optim.kind, "lr": repr(t.optim.lr), "momentum": repr(t.optim.momentum),
            "weight_decay": repr(t.optim.weight_decay), "beta1": repr(t.optim.betas[0]),
            "beta2": repr(t.optim.betas[1]), "eps": repr(t.optim.eps), "schedule": t.optim.schedule,
        },
        "augment": {"hflip_p": repr(t.augment.hflip_p),
                    "translate": f"{t.augment.translate[0]},{t.augment.translate[1]}"},
    }
    sections.update(model_config_sections(cfg.model))
    parser = configparser.ConfigParser()
    parser.read_dict(sections)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_splits(cfg: ExperimentConfig) -> tuple[FrameDataset, FrameDataset]:
    """Materialize (train, test) frame tensors for the experiment."""
    d = cfg.dataset
    if d.source == "synth":
        streams = synth_gestures(d.classes, d.per_class, d.resolution, d.events, d.noise, d.seed)
    else:
        root = Path(d.source)
        if not root.exists():
            raise FileNotFoundError(f"dataset not found: {root}")
        streams = load_dataset(root)
    train_s, test_s = split_dataset(streams, d.split, d.split_seed)
    t = cfg.timesteps
    train_set, test_set = FrameDataset.from_streams(train_s, t), FrameDataset.from_streams(test_s, t)
    expected = cfg.model.input_shape[1:]
    if train_set.frames.shape[2:] != tuple(expected):
        raise ConfigError(f"dataset frames {train_set.frames.shape[2:]} do not match model input {expected}")
    return train_set, test_set
