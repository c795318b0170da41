"""Run configuration: YAML in, validated dataclasses out.

Every tunable has the published recipe as its default, so an empty file
is a complete full-scale configuration. Unknown keys are rejected with
their full dotted path; silent typos in a config that drives an 800-epoch
run are not acceptable.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import yaml

from .errors import ConfigError
from .losses import CrConfig, LossWeights
from .negatives import DEFAULT_METHODS, parse_method
from .perception import QaTrainConfig
from .trainer import UieTrainConfig

ENV_PATH_OVERRIDES = {
    "data": "UWENHANCE_DATA",
    "negatives_cache": "UWENHANCE_NEGATIVES_CACHE",
    "perception": "UWENHANCE_PERCEPTION",
    "out": "UWENHANCE_OUT",
}

_BACKBONE_KEYS = {"kind", "seed", "dim", "token_dim", "image_size", "weights_ref", "dtype"}
_EXTRACTOR_KEYS = {"kind", "seed", "widths", "activation", "weights_ref", "dtype"}


@dataclass
class DataConfig:
    kind: str = "paired"
    train_fraction: float = 0.9
    train_count: int | None = None
    mos_scale: float | None = None

    def validate(self):
        if self.kind not in ("paired", "mos", "noref"):
            raise ConfigError("data.kind", f"unknown kind {self.kind!r}")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError("data.train_fraction", f"{self.train_fraction} outside [0, 1]")
        return self


@dataclass
class NegativesConfig:
    methods: list = field(default_factory=lambda: list(DEFAULT_METHODS))
    params: dict = field(default_factory=dict)
    precomputed_dirs: dict = field(default_factory=dict)

    def validate(self):
        labels = set()
        for label in self.methods:
            if label in labels:
                raise ConfigError("negatives.methods", f"duplicate method {label!r}")
            labels.add(label)
            parse_method(label)
        for key in self.params:
            if key not in labels:
                raise ConfigError("negatives.params", f"params for unconfigured method {key!r}")
        return self

    def specs(self, cache_dir=None) -> list:
        out = []
        for label in self.methods:
            spec = parse_method(label)
            spec.params.update(self.params.get(label, {}))
            if spec.method == "precomputed" and spec.params["name"] in self.precomputed_dirs:
                spec.params["dir"] = self.precomputed_dirs[spec.params["name"]]
            spec.cache_dir = cache_dir
            out.append(spec)
        return out


@dataclass
class EvalConfig:
    clip_score: bool = True

    def validate(self):
        return self


@dataclass
class RunConfig:
    seed: int = 0
    paths: dict = field(default_factory=lambda: {key: None for key in ENV_PATH_OVERRIDES})
    data: DataConfig = field(default_factory=DataConfig)
    qa: QaTrainConfig = field(default_factory=QaTrainConfig)
    uie: UieTrainConfig = field(default_factory=UieTrainConfig)
    negatives: NegativesConfig = field(default_factory=NegativesConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _require_mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return dict(value)


def _take(raw: dict, key: str, path: str, kind, default):
    if key not in raw:
        return default
    value = raw.pop(key)
    if value is None:
        return None if default is None else default
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}",
                          f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key}", "expected int, got bool")
    return value


def _reject_unknown(raw: dict, path: str):
    if raw:
        key = sorted(raw)[0]
        raise ConfigError(f"{path}.{key}", "unknown key")


def _descriptor(raw, path: str, allowed: set, default: dict) -> dict:
    raw = _require_mapping(raw, path)
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")
    merged = {**default, **raw}
    return merged


def _build_loss_weights(raw, path: str) -> LossWeights:
    raw = _require_mapping(raw, path)
    lw = LossWeights(
        lambda1=_take(raw, "lambda1", path, float, LossWeights.lambda1),
        lambda2=_take(raw, "lambda2", path, float, LossWeights.lambda2),
        alpha=_take(raw, "alpha", path, float, LossWeights.alpha),
    )
    _reject_unknown(raw, path)
    return lw.validate()


def _build_cr(raw, path: str) -> CrConfig:
    raw = _require_mapping(raw, path)
    base = CrConfig()
    cr = CrConfig(
        layer_ids=list(_take(raw, "layer_ids", path, list, base.layer_ids)),
        xi=[float(x) for x in _take(raw, "xi", path, list, base.xi)],
        gamma=_take(raw, "gamma", path, float, base.gamma),
        z=_take(raw, "z", path, int, base.z),
        epsilon=_take(raw, "epsilon", path, float, base.epsilon),
        flip_hard_comparison=_take(raw, "flip_hard_comparison", path, bool,
                                   base.flip_hard_comparison),
        frozen_per_epoch=_take(raw, "frozen_per_epoch", path, bool, base.frozen_per_epoch),
    )
    _reject_unknown(raw, path)
    return cr.validate()


def _build_qa(raw) -> QaTrainConfig:
    path = "qa"
    raw = _require_mapping(raw, path)
    base = QaTrainConfig()
    qa = QaTrainConfig(
        backbone=_descriptor(raw.pop("backbone", None), "qa.backbone", _BACKBONE_KEYS,
                             base.backbone),
        iterations=_take(raw, "iterations", path, int, base.iterations),
        batch_size=_take(raw, "batch_size", path, int, base.batch_size),
        learning_rate=_take(raw, "learning_rate", path, float, base.learning_rate),
        temperature=_take(raw, "temperature", path, float, base.temperature),
        seed=_take(raw, "seed", path, int, base.seed),
        log_interval=_take(raw, "log_interval", path, int, base.log_interval),
        positive_prompt=_take(raw, "positive_prompt", path, str, base.positive_prompt),
        negative_prompt=_take(raw, "negative_prompt", path, str, base.negative_prompt),
    )
    _reject_unknown(raw, path)
    return qa.validate()


def _build_uie(raw) -> UieTrainConfig:
    path = "uie"
    raw = _require_mapping(raw, path)
    base = UieTrainConfig()
    uie = UieTrainConfig(
        epochs=_take(raw, "epochs", path, int, base.epochs),
        batch_size=_take(raw, "batch_size", path, int, base.batch_size),
        learning_rate=_take(raw, "learning_rate", path, float, base.learning_rate),
        schedule=_take(raw, "schedule", path, str, base.schedule),
        crop=_take(raw, "crop", path, int, base.crop),
        flip_horizontal=_take(raw, "flip_horizontal", path, bool, base.flip_horizontal),
        flip_vertical=_take(raw, "flip_vertical", path, bool, base.flip_vertical),
        loss_weights=_build_loss_weights(raw.pop("loss_weights", None), "uie.loss_weights"),
        cr=_build_cr(raw.pop("cr", None), "uie.cr"),
        seed=_take(raw, "seed", path, int, base.seed),
        architecture=_take(raw, "architecture", path, str, base.architecture),
        arch_kwargs=_require_mapping(raw.pop("arch_kwargs", None), "uie.arch_kwargs"),
        extractor=_descriptor(raw.pop("extractor", None), "uie.extractor", _EXTRACTOR_KEYS,
                              base.extractor),
        checkpoint_interval=_take(raw, "checkpoint_interval", path, int,
                                  base.checkpoint_interval),
    )
    _reject_unknown(raw, path)
    return uie.validate()


def _build_negatives(raw) -> NegativesConfig:
    path = "negatives"
    raw = _require_mapping(raw, path)
    base = NegativesConfig()
    neg = NegativesConfig(
        methods=[str(m) for m in _take(raw, "methods", path, list, base.methods)],
        params=_require_mapping(raw.pop("params", None), "negatives.params"),
        precomputed_dirs=_require_mapping(raw.pop("precomputed_dirs", None),
                                          "negatives.precomputed_dirs"),
    )
    _reject_unknown(raw, path)
    return neg.validate()


def validate_config(raw) -> RunConfig:
    """Build a RunConfig from YAML text or a mapping; rejects unknown keys."""
    if isinstance(raw, str):
        try:
            raw = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML: {exc}")
    raw = _require_mapping(raw, "config")

    paths_raw = _require_mapping(raw.pop("paths", None), "paths")
    paths = {key: None for key in ENV_PATH_OVERRIDES}
    for key, value in paths_raw.items():
        if key not in paths:
            raise ConfigError(f"paths.{key}", "unknown key")
        paths[key] = None if value is None else str(value)

    data_raw = _require_mapping(raw.pop("data", None), "data")
    base_data = DataConfig()
    data = DataConfig(
        kind=_take(data_raw, "kind", "data", str, base_data.kind),
        train_fraction=_take(data_raw, "train_fraction", "data", float, base_data.train_fraction),
        train_count=_take(data_raw, "train_count", "data", int, base_data.train_count),
        mos_scale=_take(data_raw, "mos_scale", "data", float, base_data.mos_scale),
    ).validate()
    _reject_unknown(data_raw, "data")

    eval_raw = _require_mapping(raw.pop("eval", None), "eval")
    eval_cfg = EvalConfig(
        clip_score=_take(eval_raw, "clip_score", "eval", bool, EvalConfig.clip_score),
    ).validate()
    _reject_unknown(eval_raw, "eval")

    cfg = RunConfig(
        seed=_take(raw, "seed", "config", int, RunConfig.seed),
        paths=paths,
        data=data,
        qa=_build_qa(raw.pop("qa", None)),
        uie=_build_uie(raw.pop("uie", None)),
        negatives=_build_negatives(raw.pop("negatives", None)),
        eval=eval_cfg,
    )
    _reject_unknown(raw, "config")
    return cfg


def load_config(path=None, apply_env: bool = True) -> RunConfig:
    """Read and validate a config file (missing path means all defaults);
    environment variables may override the paths section only."""
    if path is None:
        cfg = validate_config({})
    else:
        try:
            with open(path) as fh:
                cfg = validate_config(fh.read())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}")
    if apply_env:
        for key, env_name in ENV_PATH_OVERRIDES.items():
            if os.environ.get(env_name):
                cfg.paths[key] = os.environ[env_name]
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    """Canonical nested-dict form with every field explicit."""
    return {
        "seed": cfg.seed,
        "paths": dict(cfg.paths),
        "data": asdict(cfg.data),
        "qa": asdict(cfg.qa),
        "uie": asdict(cfg.uie),
        "negatives": asdict(cfg.negatives),
        "eval": asdict(cfg.eval),
    }


def config_to_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)
