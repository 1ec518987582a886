"""Run configuration: flat key-value files, environment and CLI overrides.

Grammar, one assignment per line:

    # comment (also allowed after a value)
    section.key = value

Sections are ``model.*`` (embedding/model), ``train.*`` (optimizer),
``synth.*`` (benchmark generator) and ``paths.*`` (default directories).
Unknown keys are rejected by name. Every key can also be set by an
environment variable ``COMMA_<SECTION>_<KEY>`` (upper case, dots to
underscores). Precedence: CLI ``--set section.key=value`` pairs win over the
config file, which wins over the environment, which wins over built-in
defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .masks import SelfAttentionVariant
from .model import CommaConfig
from .synthetic import SynthConfig
from .training import LossMode, TrainConfig

__all__ = ["RunConfig", "load_run_config", "ENV_PREFIX"]

ENV_PREFIX = "COMMA_"

_INT, _FLOAT, _BOOL, _STR, _OPT_FLOAT, _PATH = "int", "float", "bool", "str", "float?", "path"

_SCHEMA: dict[str, str] = {
    "model.d": _INT,
    "model.d_video_in": _INT,
    "model.d_word_in": _INT,
    "model.sa_variant": _STR,
    "model.seed": _INT,
    "train.learning_rate": _FLOAT,
    "train.batch_size": _INT,
    "train.epochs": _INT,
    "train.warmup_epochs": _INT,
    "train.weight_decay": _FLOAT,
    "train.beta1": _FLOAT,
    "train.beta2": _FLOAT,
    "train.eps": _FLOAT,
    "train.loss_mode": _STR,
    "train.sentence_weight": _FLOAT,
    "train.grad_clip": _OPT_FLOAT,
    "train.seed": _INT,
    "synth.vocab_size": _INT,
    "synth.n_samples": _INT,
    "synth.t": _INT,
    "synth.h": _INT,
    "synth.w": _INT,
    "synth.d_video_in": _INT,
    "synth.d_word_in": _INT,
    "synth.words_per_sample": _INT,
    "synth.noise_std": _FLOAT,
    "synth.distractor_count": _INT,
    "synth.temporal_jitter": _FLOAT,
    "synth.input_t": _INT,
    "synth.input_h": _INT,
    "synth.input_w": _INT,
    "synth.train_fraction": _FLOAT,
    "synth.seed": _INT,
    "paths.data_dir": _PATH,
    "paths.out_dir": _PATH,
}


@dataclass(frozen=True)
class RunConfig:
    model: CommaConfig
    train: TrainConfig
    synth: SynthConfig
    data_dir: Path | None = None
    out_dir: Path | None = None


def _parse_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _env_overrides(environ: Mapping[str, str]) -> dict[str, str]:
    by_env_name = {ENV_PREFIX + key.replace(".", "_").upper(): key for key in _SCHEMA}
    return {
        by_env_name[name]: value for name, value in environ.items() if name in by_env_name
    }


def _coerce(key: str, text: str):
    kind = _SCHEMA[key]
    try:
        if kind == _INT:
            return int(text)
        if kind == _FLOAT:
            return float(text)
        if kind == _OPT_FLOAT:
            return None if text.lower() in ("none", "") else float(text)
        if kind == _BOOL:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == _PATH:
            return Path(text)
        return text
    except ValueError as err:
        raise ValueError(f"config key {key!r}: cannot parse {text!r} as {kind}") from err


def load_run_config(
    path: str | Path | None,
    overrides: Sequence[str] = (),
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge defaults, environment, config file, and ``key=value`` overrides."""
    raw: dict[str, str] = {}
    raw.update(_env_overrides(os.environ if environ is None else environ))
    if path is not None:
        raw.update(_parse_file(path))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _SCHEMA:
            raise ValueError(f"unknown config key {key!r}")
        raw[key] = value
    values = {key: _coerce(key, text) for key, text in raw.items()}

    def section(name: str) -> dict:
        prefix = name + "."
        return {key[len(prefix):]: v for key, v in values.items() if key.startswith(prefix)}

    synth_kwargs = section("synth")
    synth = SynthConfig(**synth_kwargs)

    model_kwargs = section("model")
    if "sa_variant" in model_kwargs:
        model_kwargs["sa_variant"] = SelfAttentionVariant.parse(model_kwargs["sa_variant"])
    # input feature dims default to whatever the generator produces
    model_kwargs.setdefault("d_video_in", synth.d_video_in)
    model_kwargs.setdefault("d_word_in", synth.d_word_in)
    model = CommaConfig(**model_kwargs)

    train_kwargs = section("train")
    if "loss_mode" in train_kwargs:
        train_kwargs["loss_mode"] = LossMode.parse(train_kwargs["loss_mode"])
    train = TrainConfig(**train_kwargs)

    paths = section("paths")
    return RunConfig(
        model=model,
        train=train,
        synth=synth,
        data_dir=paths.get("data_dir"),
        out_dir=paths.get("out_dir"),
    )


def documented_keys() -> list[str]:
    """Every accepted config key, for --help and the README."""
    return sorted(_SCHEMA)
