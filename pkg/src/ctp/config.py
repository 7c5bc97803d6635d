"""INI-style run configuration with ``[data]``, ``[train]``, ``[router]`` and ``[ablate]`` sections.

Every key is optional; missing keys fall back to the standard desk-scale
protocol. ``[data] dir`` points at existing task CSVs, otherwise the
remaining ``[data]`` keys describe a synthetic suite.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .continual import STANDARD_SEEDS, STANDARD_SPEC, STANDARD_TRAIN
from .data import SyntheticSpec
from .errors import ConfigError
from .nn import TrainConfig
from .router import RouterConfig

SECTIONS = ("data", "train", "router", "ablate")


@dataclass
class RunConfig:
    data_dir: Path | None = None
    synthetic: SyntheticSpec = STANDARD_SPEC
    train: TrainConfig = STANDARD_TRAIN
    seeds: tuple = STANDARD_SEEDS
    router: RouterConfig = field(default_factory=RouterConfig)
    grid_alpha: tuple = (0.15, 0.25, 0.35, 0.45)
    grid_beta: tuple = (0.55, 0.65, 0.75, 0.85)
    grid_continuum: tuple = (5,)


def _get(section, key, conv, name=None):
    raw = section.get(key)
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section.name}] {name or key}: cannot parse {raw!r} ({exc})") from None


def _list(conv):
    def parse(raw):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(conv(s) for s in items)
    return parse


def _apply(section, obj, convs):
    changes = {}
    for f in fields(obj):
        if f.name in section:
            changes[f.name] = _get(section, f.name, convs.get(f.name, type(getattr(obj, f.name))))
    try:
        return replace(obj, **changes)
    except ConfigError as exc:
        raise ConfigError(f"[{section.name}] {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig()
    if cp.has_section("data"):
        s = cp["data"]
        allowed = {f.name for f in fields(SyntheticSpec)} | {"dir"}
        for key in s:
            if key not in allowed:
                raise ConfigError(f"[data] unknown field {key!r}")
        if "dir" in s:
            cfg.data_dir = (path.parent / s["dir"]).resolve()
        cfg.synthetic = _apply(s, cfg.synthetic, {"cluster_separation": float})
    if cp.has_section("train"):
        s = cp["train"]
        allowed = {f.name for f in fields(TrainConfig)} | {"seeds"}
        for key in s:
            if key not in allowed:
                raise ConfigError(f"[train] unknown field {key!r}")
        if "seeds" in s:
            cfg.seeds = _get(s, "seeds", _list(int))
        cfg.train = _apply(s, cfg.train, {"arch": _list(int), "learning_rate": float,
                                          "entropic_scale": float, "loss_kind": str})
    if cp.has_section("router"):
        s = cp["router"]
        conv = {"alpha": float, "beta": float, "continuum_size": int}
        for key in s:
            if key not in {f.name for f in fields(RouterConfig)}:
                raise ConfigError(f"[router] unknown field {key!r}")
        cfg.router = _apply(s, cfg.router, conv)
    if cp.has_section("ablate"):
        s = cp["ablate"]
        for key in s:
            if key not in ("alpha", "beta", "continuum_size"):
                raise ConfigError(f"[ablate] unknown field {key!r}")
        if "alpha" in s:
            cfg.grid_alpha = _get(s, "alpha", _list(float))
        if "beta" in s:
            cfg.grid_beta = _get(s, "beta", _list(float))
        if "continuum_size" in s:
            cfg.grid_continuum = _get(s, "continuum_size", _list(int))
    return cfg
