"""Run configuration: flat ``key = value`` lines, ``#`` comments, dotted keys for sections.

Example::

    epochs = 40
    tau2 = 0.07            # target sharpening
    model.out_dim = 32
    labels.kind = sinkhorn
"""

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .losses import TemperatureConfig


class ConfigError(ValueError):
    """Bad key, bad value or out-of-range setting. The message names the key."""


@dataclass
class DataSpec:
    classes: int = 10
    dim: int = 32
    n_per_class: int = 200
    spread: float = 3.0
    sigma: float = 0.3
    nuisance_dims: int = 8
    nuisance_sigma: float = 2.0
    seed: int = 0
    test_fraction: float = 0.2


@dataclass
class AugSpec:
    noise_sigma: float = 0.3
    mask_fraction: float = 0.2
    scale_jitter: float = 0.0


@dataclass
class ModelSpec:
    hidden: int = 64
    out_dim: int = 32
    predictor_hidden: int = 64
    standardize: bool = True


@dataclass
class OptimSpec:
    kind: str = "sgd_momentum"
    lr: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 1e-6
    warmup_epochs: int = 2


@dataclass
class LabelSpec:
    kind: str = "softmax_sharp"
    sinkhorn_iters: int = 3
    center_momentum: float = 0.9
    normalize_input: bool = True


@dataclass
class EvalSpec:
    k: int = 5
    knn_k: int = 5
    probe_epochs: int = 100
    probe_lr: float = 0.1


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 100
    batch_size: int = 128
    switch_fraction: float = 0.5
    symmetrize: bool = True
    use_momentum_encoder: bool = True
    ema_momentum: float = 0.99
    tau1: float = 0.1
    tau2: float = 0.07
    adaptive_tau1: bool = False
    adaptive_rule: str = "min"
    lambda_r: float = 1.0
    output_dir: str = "runs/default"
    data: DataSpec = field(default_factory=DataSpec)
    aug: AugSpec = field(default_factory=AugSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    labels: LabelSpec = field(default_factory=LabelSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)

    @property
    def temperatures(self):
        return TemperatureConfig(self.tau1, self.tau2, self.adaptive_tau1, self.adaptive_rule)

    def get(self, key):
        obj, name = _resolve(self, key)
        return getattr(obj, name)

    def replace(self, key, value):
        """Copy with one dotted key changed; ``value`` may be a string or a typed value."""
        new = dataclasses.replace(
            self, **{f.name: dataclasses.replace(getattr(self, f.name)) for f in _sections(self)}
        )
        obj, name = _resolve(new, key)
        ftype = _field_types(obj)[name]
        setattr(obj, name, _coerce(key, value, ftype) if isinstance(value, str) else value)
        validate(new)
        return new

    def to_dict(self):
        return dataclasses.asdict(self)


def _sections(cfg):
    return [f for f in dataclasses.fields(cfg) if dataclasses.is_dataclass(f.default_factory)]


def _field_types(obj):
    return {f.name: f.type for f in dataclasses.fields(obj)}


def _resolve(cfg, key):
    parts = key.split(".")
    obj = cfg
    for part in parts[:-1]:
        sub = getattr(obj, part, None) if not part.startswith("_") else None
        if not dataclasses.is_dataclass(sub):
            raise ConfigError(f"unknown key {key!r}")
        obj = sub
    name = parts[-1]
    types = _field_types(obj)
    if name not in types or dataclasses.is_dataclass(getattr(obj, name)):
        raise ConfigError(f"unknown key {key!r}")
    return obj, name


def config_keys(cfg=None):
    cfg = cfg or RunConfig()
    keys = []
    for f in dataclasses.fields(cfg):
        sub = getattr(cfg, f.name)
        if dataclasses.is_dataclass(sub):
            keys.extend(f"{f.name}.{g.name}" for g in dataclasses.fields(sub))
        else:
            keys.append(f.name)
    return keys


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(key, raw, ftype):
    raw = raw.strip()
    if ftype in (bool, "bool"):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if ftype in (int, "int"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if ftype in (float, "float"):
        try:
            v = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
        if not math.isfinite(v):
            raise ConfigError(f"{key}: value must be finite, got {raw!r}")
        return v
    if raw.startswith(('"', "'")) and raw.endswith(raw[0]) and len(raw) >= 2:
        raw = raw[1:-1]
    return raw


def _require(cond, key, msg):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg):
    _require(0 < cfg.tau1 <= 10, "tau1", f"must lie in (0, 10], got {cfg.tau1}")
    _require(0 < cfg.tau2 <= 10, "tau2", f"must lie in (0, 10], got {cfg.tau2}")
    _require(cfg.lambda_r >= 0, "lambda_r", f"must be >= 0, got {cfg.lambda_r}")
    _require(0 <= cfg.switch_fraction <= 1, "switch_fraction", "must lie in [0, 1]")
    _require(cfg.epochs >= 1, "epochs", "must be >= 1")
    _require(cfg.batch_size >= 2, "batch_size", "must be >= 2")
    _require(0 <= cfg.ema_momentum < 1, "ema_momentum", "must lie in [0, 1)")
    _require(cfg.adaptive_rule in ("min", "bare"), "adaptive_rule", "must be 'min' or 'bare'")
    d = cfg.data
    _require(d.classes >= 2, "data.classes", "must be >= 2")
    _require(d.dim >= 2, "data.dim", "must be >= 2")
    _require(d.n_per_class >= 2, "data.n_per_class", "must be >= 2")
    _require(d.spread > 0, "data.spread", "must be > 0")
    _require(d.sigma >= 0, "data.sigma", "must be >= 0")
    _require(0 <= d.nuisance_dims <= d.dim - 2, "data.nuisance_dims", "must lie in [0, dim - 2]")
    _require(d.nuisance_sigma >= 0, "data.nuisance_sigma", "must be >= 0")
    _require(0 < d.test_fraction < 1, "data.test_fraction", "must lie in (0, 1)")
    a = cfg.aug
    _require(a.noise_sigma >= 0, "aug.noise_sigma", "must be >= 0")
    _require(0 <= a.mask_fraction < 1, "aug.mask_fraction", "must lie in [0, 1)")
    _require(a.scale_jitter >= 0, "aug.scale_jitter", "must be >= 0")
    m = cfg.model
    _require(m.hidden >= 1 and m.predictor_hidden >= 1, "model.hidden", "must be >= 1")
    _require(m.out_dim >= 2, "model.out_dim", "must be >= 2")
    o = cfg.optim
    _require(o.kind in ("sgd_momentum", "lars"), "optim.kind", "must be sgd_momentum or lars")
    _require(o.lr > 0, "optim.lr", "must be > 0")
    _require(0 <= o.momentum < 1, "optim.momentum", "must lie in [0, 1)")
    _require(o.weight_decay >= 0, "optim.weight_decay", "must be >= 0")
    _require(o.warmup_epochs >= 0, "optim.warmup_epochs", "must be >= 0")
    lab = cfg.labels
    _require(
        lab.kind in ("softmax_sharp", "sinkhorn", "centering"),
        "labels.kind",
        "must be softmax_sharp, sinkhorn or centering",
    )
    _require(lab.sinkhorn_iters >= 1, "labels.sinkhorn_iters", "must be >= 1")
    _require(0 <= lab.center_momentum < 1, "labels.center_momentum", "must lie in [0, 1)")
    e = cfg.eval
    _require(e.k >= 1, "eval.k", "must be >= 1")
    _require(e.knn_k >= 1, "eval.knn_k", "must be >= 1")
    _require(e.probe_epochs >= 0, "eval.probe_epochs", "must be >= 0")
    _require(e.probe_lr > 0, "eval.probe_lr", "must be > 0")
    return cfg


def parse_config_text(text):
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        if key in seen:
            raise ConfigError(f"{key}: duplicate key (line {lineno})")
        seen.add(key)
        obj, name = _resolve(cfg, key)
        setattr(obj, name, _coerce(key, value, _field_types(obj)[name]))
    return validate(cfg)


def parse_config(path):
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def emit_config(cfg):
    lines = []
    for key in config_keys(cfg):
        v = cfg.get(key)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
