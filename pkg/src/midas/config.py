"""Experiment configuration: dataclass, INI-style config files, CLI overrides.

Config files are plain ``key = value`` pairs in [data]/[model]/[train]
sections so runs stay diffable and parseable with the standard library.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace

from .data import SyntheticSpec

MODES = ("midas", "joint")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs: data source, model widths, loss and
    optimizer settings, mechanism toggles, seed, and output directory."""

    # data: exactly one of synthetic / feature_file
    synthetic: SyntheticSpec | None = None
    feature_file: str | None = None
    # model
    hidden: tuple[int, ...] = (32,)
    feature_dim: int = 16
    # objective / schedule
    mode: str = "midas"
    lam: float = 1.0
    eta: float = 0.05
    epochs: int = 40
    warmup_epochs: int | None = None  # None -> max(1, round(0.1 * epochs))
    # optimizer
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.5
    lr_decay_epoch: int | None = None  # None -> round(0.7 * epochs)
    # mechanism toggles
    warmup: bool = True
    wm: bool = True
    hs: bool = True
    alpha_reset_per_epoch: bool = False
    # keep the epoch with the best validation top-1 instead of the last
    select_best: bool = True
    # run
    seed: int = 0
    out_dir: str = "runs/run0"
    plots: bool = True

    def resolved(self) -> "ExperimentConfig":
        """Apply toggle/mode forcing rules and fill derived defaults."""
        cfg = self
        if cfg.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
        if cfg.mode == "joint":
            cfg = replace(cfg, lam=0.0, warmup=False, wm=False, hs=False)
        warmup_epochs = cfg.warmup_epochs
        if not cfg.warmup:
            warmup_epochs = 0
        elif warmup_epochs is None:
            warmup_epochs = max(1, round(0.1 * cfg.epochs))
        decay_epoch = cfg.lr_decay_epoch
        if decay_epoch is None:
            decay_epoch = round(0.7 * cfg.epochs)
        cfg = replace(cfg, warmup_epochs=warmup_epochs, lr_decay_epoch=decay_epoch)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if (self.synthetic is None) == (self.feature_file is None):
            raise ConfigError("exactly one of synthetic data or feature_file is required")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.eta <= 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.warmup_epochs is not None and self.warmup_epochs > self.epochs:
            raise ConfigError(
                f"warmup_epochs {self.warmup_epochs} exceeds epochs {self.epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    cfg = ExperimentConfig()
    try:
        if parser.has_section("data"):
            data = parser["data"]
            source = data.get("source", "synthetic")
            if source == "file":
                cfg = replace(cfg, feature_file=data["path"], synthetic=None)
            elif source == "synthetic":
                dims = _parse_ints(data.get("dims", "16 16"))
                spec = SyntheticSpec(
                    num_classes=data.getint("classes", 4),
                    dims=dims,
                    separations=_parse_floats(data.get("separations", "3.0 0.75")),
                    noise_scales=_parse_floats(data.get("noise", " ".join(["0.5"] * len(dims)))),
                    n_train=data.getint("train", 2000),
                    n_val=data.getint("val", 500),
                    n_test=data.getint("test", 500),
                    seed=data.getint("data_seed", parser.getint("train", "seed", fallback=0)),
                )
                cfg = replace(cfg, synthetic=spec, feature_file=None)
            else:
                raise ConfigError(f"unknown data source {source!r}")
        else:
            raise ConfigError("config needs a [data] section")

        if parser.has_section("model"):
            model = parser["model"]
            cfg = replace(
                cfg,
                hidden=_parse_ints(model.get("hidden", "32")),
                feature_dim=model.getint("feature_dim", cfg.feature_dim),
            )

        if parser.has_section("train"):
            train = parser["train"]
            warmup_epochs = train.get("warmup_epochs", "").strip()
            decay_epoch = train.get("lr_decay_epoch", "").strip()
            cfg = replace(
                cfg,
                mode=train.get("mode", cfg.mode),
                lam=train.getfloat("lambda", cfg.lam),
                eta=train.getfloat("eta", cfg.eta),
                epochs=train.getint("epochs", cfg.epochs),
                warmup_epochs=int(warmup_epochs) if warmup_epochs else None,
                batch_size=train.getint("batch_size", cfg.batch_size),
                learning_rate=train.getfloat("learning_rate", cfg.learning_rate),
                momentum=train.getfloat("momentum", cfg.momentum),
                weight_decay=train.getfloat("weight_decay", cfg.weight_decay),
                lr_decay=train.getfloat("lr_decay", cfg.lr_decay),
                lr_decay_epoch=int(decay_epoch) if decay_epoch else None,
                warmup=train.getboolean("warmup", cfg.warmup),
                wm=train.getboolean("wm", cfg.wm),
                hs=train.getboolean("hs", cfg.hs),
                alpha_reset_per_epoch=train.getboolean(
                    "alpha_reset_per_epoch", cfg.alpha_reset_per_epoch),
                select_best=train.getboolean("select_best", cfg.select_best),
                seed=train.getint("seed", cfg.seed),
            )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value in {path}: {exc}") from exc
    return cfg


def save_config_snapshot(cfg: ExperimentConfig, path) -> None:
    """Write the resolved config back out as a reproducible INI snapshot."""
    parser = configparser.ConfigParser()
    if cfg.synthetic is not None:
        spec = cfg.synthetic
        parser["data"] = {
            "source": "synthetic",
            "classes": str(spec.num_classes),
            "dims": " ".join(map(str, spec.dims)),
            "separations": " ".join(repr(s) for s in spec.separations),
            "noise": " ".join(repr(s) for s in spec.noise_scales),
            "train": str(spec.n_train),
            "val": str(spec.n_val),
            "test": str(spec.n_test),
            "data_seed": str(spec.seed),
        }
    else:
        parser["data"] = {"source": "file", "path": cfg.feature_file}
    parser["model"] = {
        "hidden": " ".join(map(str, cfg.hidden)),
        "feature_dim": str(cfg.feature_dim),
    }
    parser["train"] = {
        "mode": cfg.mode,
        "lambda": repr(cfg.lam),
        "eta": repr(cfg.eta),
        "epochs": str(cfg.epochs),
        "warmup_epochs": "" if cfg.warmup_epochs is None else str(cfg.warmup_epochs),
        "batch_size": str(cfg.batch_size),
        "learning_rate": repr(cfg.learning_rate),
        "momentum": repr(cfg.momentum),
        "weight_decay": repr(cfg.weight_decay),
        "lr_decay": repr(cfg.lr_decay),
        "lr_decay_epoch": "" if cfg.lr_decay_epoch is None else str(cfg.lr_decay_epoch),
        "warmup": str(cfg.warmup).lower(),
        "wm": str(cfg.wm).lower(),
        "hs": str(cfg.hs).lower(),
        "alpha_reset_per_epoch": str(cfg.alpha_reset_per_epoch).lower(),
        "select_best": str(cfg.select_best).lower(),
        "seed": str(cfg.seed),
    }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
