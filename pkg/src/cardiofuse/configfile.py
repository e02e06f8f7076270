"""Flat key-value run configuration.

Grammar, one entry per line:

    # comment (also allowed after a value)
    section.key = value

Sections: ``generator.*`` (synthetic data), ``model.*`` (architecture),
``train.*`` (optimization).  Every key has a default, so an empty or absent
file resolves to the stock desk-scale setup.  Unknown keys are rejected.

List-valued keys: ``model.conv_blocks`` is comma-separated
``channels:width:stride`` triples; hidden-layer keys are comma-separated
integers; ``train.freeze`` is a comma-separated list of parameter-name
prefixes, or ``default`` (stage policy) or ``none``.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

from .errors import ConfigurationError
from .models import BundleConfig, MlpConfig, SignalEncoderConfig
from .pipeline import TrainConfig
from .synthdata import GeneratorConfig

_GENERATOR_KEYS = {
    "latent_dim": int,
    "lead_count": int,
    "seq_len": int,
    "routine_dim": int,
    "n_diagnoses": int,
    "n_labs": int,
    "noise_signal": float,
    "noise_tabular": float,
    "noise_lab": float,
    "lab_prevalence": float,
    "n_train": int,
    "n_val": int,
    "n_test": int,
    "seed": int,
}

_MODEL_DEFAULTS = {
    "conv_blocks": "8:7:2,16:5:2,32:3:2",
    "feature_dim": "32",
    "embed_dim": "32",
    "tabular_hidden": "32",
    "tabular_out": "32",
    "projector_hidden": "64",
    "head_hidden": "16",
}

def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_TRAIN_KEYS = {
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "redundancy_weight": float,
    "seed": int,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "append_labs_to_tabular": _bool,
}

_TRAIN_DEFAULTS = {
    "lr": "0.001",
    "batch_size": "64",
    "epochs": "30",
    "redundancy_weight": "0.005",
    "seed": "0",
    "beta1": "0.9",
    "beta2": "0.999",
    "eps": "1e-8",
    "append_labs_to_tabular": "false",
    "freeze": "default",
    "stage_order": "cls_first",
}


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse the flat grammar into a raw string map; validate key names."""
    entries: Dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigurationError(f"config line {lineno}: key {key!r} has no section")
        if key in entries:
            raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
        entries[key] = value
    _validate_keys(entries)
    return entries


def _validate_keys(entries: Dict[str, str]) -> None:
    known = (
        {f"generator.{k}" for k in _GENERATOR_KEYS}
        | {f"model.{k}" for k in _MODEL_DEFAULTS}
        | {f"train.{k}" for k in _TRAIN_DEFAULTS}
    )
    unknown = sorted(set(entries) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")


def load_config_file(path: Optional[str]) -> Dict[str, str]:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc


def _typed(value: str, caster, key: str):
    try:
        return caster(value)
    except ValueError as exc:
        raise ConfigurationError(f"config key {key}: bad value {value!r}") from exc


def resolve_generator_config(entries: Dict[str, str]) -> GeneratorConfig:
    kwargs = {}
    for key, caster in _GENERATOR_KEYS.items():
        raw = entries.get(f"generator.{key}")
        if raw is not None:
            kwargs[key] = _typed(raw, caster, f"generator.{key}")
    return GeneratorConfig(**kwargs)


def _int_list(raw: str, key: str) -> Tuple[int, ...]:
    raw = raw.strip()
    if not raw or raw.lower() == "none":
        return ()
    return tuple(_typed(part.strip(), int, key) for part in raw.split(","))


def _conv_blocks(raw: str, key: str) -> Tuple[Tuple[int, int, int], ...]:
    blocks = []
    for part in raw.split(","):
        fields = part.strip().split(":")
        if len(fields) != 3:
            raise ConfigurationError(
                f"config key {key}: block {part.strip()!r} is not channels:width:stride"
            )
        blocks.append(tuple(_typed(f, int, key) for f in fields))
    return tuple(blocks)


def resolve_bundle_config(entries: Dict[str, str], gen: GeneratorConfig) -> BundleConfig:
    get = lambda k: entries.get(f"model.{k}", _MODEL_DEFAULTS[k])
    feature_dim = _typed(get("feature_dim"), int, "model.feature_dim")
    embed_dim = _typed(get("embed_dim"), int, "model.embed_dim")
    tabular_out = _typed(get("tabular_out"), int, "model.tabular_out")
    append_labs = _typed(
        entries.get(
            "train.append_labs_to_tabular", _TRAIN_DEFAULTS["append_labs_to_tabular"]
        ),
        _bool,
        "train.append_labs_to_tabular",
    )
    tabular_in = gen.routine_dim + (gen.n_labs if append_labs else 0)
    return BundleConfig(
        signal_encoder=SignalEncoderConfig(
            lead_count=gen.lead_count,
            seq_len=gen.seq_len,
            conv_blocks=_conv_blocks(get("conv_blocks"), "model.conv_blocks"),
            feature_dim=feature_dim,
        ),
        tabular_encoder=MlpConfig(
            in_dim=tabular_in,
            hidden_dims=_int_list(get("tabular_hidden"), "model.tabular_hidden"),
            out_dim=tabular_out,
        ),
        signal_projector=MlpConfig(
            in_dim=feature_dim,
            hidden_dims=_int_list(get("projector_hidden"), "model.projector_hidden"),
            out_dim=embed_dim,
        ),
        tabular_projector=MlpConfig(
            in_dim=tabular_out,
            hidden_dims=_int_list(get("projector_hidden"), "model.projector_hidden"),
            out_dim=embed_dim,
        ),
        diagnosis_head=MlpConfig(
            in_dim=feature_dim,
            hidden_dims=_int_list(get("head_hidden"), "model.head_hidden"),
            out_dim=gen.n_diagnoses,
        ),
        lab_head=MlpConfig(
            in_dim=feature_dim,
            hidden_dims=_int_list(get("head_hidden"), "model.head_hidden"),
            out_dim=gen.n_labs,
        ),
        embed_dim=embed_dim,
    )


def resolve_train_config(
    entries: Dict[str, str], stage: str, seed_override: Optional[int] = None
) -> TrainConfig:
    kwargs = {"stage": stage}
    for key, caster in _TRAIN_KEYS.items():
        raw = entries.get(f"train.{key}", _TRAIN_DEFAULTS[key])
        kwargs[key] = _typed(raw, caster, f"train.{key}")
    freeze_raw = entries.get("train.freeze", _TRAIN_DEFAULTS["freeze"]).strip()
    if freeze_raw.lower() == "default":
        kwargs["freeze"] = None
    elif freeze_raw.lower() == "none":
        kwargs["freeze"] = ()
    else:
        kwargs["freeze"] = tuple(p.strip() for p in freeze_raw.split(",") if p.strip())
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return TrainConfig(**kwargs)


def stage_order(entries: Dict[str, str]) -> str:
    order = entries.get("train.stage_order", _TRAIN_DEFAULTS["stage_order"])
    if order not in ("cls_first", "recon_first"):
        raise ConfigurationError(f"train.stage_order must be cls_first or recon_first, got {order!r}")
    return order


def resolved_echo(entries: Dict[str, str]) -> Dict[str, object]:
    """Every key with its final (typed where possible) value; self-contained."""
    echo: Dict[str, object] = {}
    for key, caster in _GENERATOR_KEYS.items():
        default = getattr(GeneratorConfig(), key)
        raw = entries.get(f"generator.{key}")
        echo[f"generator.{key}"] = _typed(raw, caster, key) if raw is not None else default
    for key, default in _MODEL_DEFAULTS.items():
        echo[f"model.{key}"] = entries.get(f"model.{key}", default)
    for key, default in _TRAIN_DEFAULTS.items():
        raw = entries.get(f"train.{key}", default)
        caster = _TRAIN_KEYS.get(key)
        echo[f"train.{key}"] = _typed(raw, caster, key) if caster else raw
    return echo
