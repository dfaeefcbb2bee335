"""Experiment configuration: strict YAML parsing with precise errors.

Unknown keys are rejected (naming the offending field path) so a typo in
an experiment file fails loudly instead of silently using a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .model import PRESETS, ModelConfig, preset_config
from .trainer import TrainConfig
from .variants import VARIANTS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerSettings:
    vocab_size: int = 4096
    path: str | None = None  # pre-trained tokenizer model file


@dataclass(frozen=True)
class EvalSettings:
    r_bidir_values: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    suffix_ratio: float = 0.8
    candidate_k: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str
    variant: str
    output_dir: str = "runs/default"
    seed: int = 0
    corpus_format: str = "plain-blankline"
    tokenizer: TokenizerSettings = field(default_factory=TokenizerSettings)
    model: ModelConfig = field(default_factory=lambda: preset_config("tiny"))
    train: TrainConfig | None = None
    eval: EvalSettings = field(default_factory=EvalSettings)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = asdict(self.train) if self.train else None
        return out

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


def _require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(section: dict, allowed: set[str], path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(
                f"{path}.{key}: unknown key (allowed: {', '.join(sorted(allowed))})"
            )


def _typed(section: dict, key: str, types, path: str, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    value = section[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(
            f"{path}.{key}: expected {getattr(types, '__name__', types)}, "
            f"got {type(value).__name__}"
        )
    return value


def parse_config_data(raw: dict, path: str = "config") -> ExperimentConfig:
    raw = _require_mapping(raw, path)
    _check_keys(
        raw,
        {"corpus", "variant", "output_dir", "seed", "corpus_format",
         "tokenizer", "model", "train", "eval"},
        path,
    )
    corpus = _typed(raw, "corpus", str, path, required=True)
    variant = _typed(raw, "variant", str, path, required=True)
    if variant not in VARIANTS:
        raise ConfigError(
            f"{path}.variant: {variant!r} is not a variant "
            f"(legal names: {', '.join(VARIANTS)})"
        )

    tok_raw = _require_mapping(raw.get("tokenizer", {}), f"{path}.tokenizer")
    _check_keys(tok_raw, {"vocab_size", "path"}, f"{path}.tokenizer")
    tokenizer = TokenizerSettings(
        vocab_size=_typed(tok_raw, "vocab_size", int, f"{path}.tokenizer", default=4096),
        path=_typed(tok_raw, "path", str, f"{path}.tokenizer"),
    )

    model_raw = _require_mapping(raw.get("model", {"preset": "tiny"}), f"{path}.model")
    _check_keys(
        model_raw,
        {"preset", "l", "d", "h", "max_positions", "vocab_size", "precision"},
        f"{path}.model",
    )
    preset = _typed(model_raw, "preset", str, f"{path}.model", default=None)
    if preset is not None and preset not in PRESETS:
        raise ConfigError(
            f"{path}.model.preset: {preset!r} unknown (presets: {', '.join(PRESETS)})"
        )
    fields = {
        k: _typed(model_raw, k, int, f"{path}.model")
        for k in ("l", "d", "h", "max_positions", "vocab_size")
        if k in model_raw
    }
    if "precision" in model_raw:
        fields["precision"] = _typed(model_raw, "precision", str, f"{path}.model")
    if preset is None and "vocab_size" not in fields:
        fields.setdefault("vocab_size", tokenizer.vocab_size)
    try:
        model = (
            preset_config(preset, **fields)
            if preset is not None
            else ModelConfig(**{**PRESETS["tiny"], **fields})
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.model: {exc}") from exc

    train = None
    if "train" in raw:
        tr = _require_mapping(raw["train"], f"{path}.train")
        _check_keys(
            tr,
            {"batch_size_tokens", "learning_rate", "warmup_tokens", "total_tokens",
             "max_len", "checkpoint_interval", "log_interval"},
            f"{path}.train",
        )
        try:
            train = TrainConfig(
                variant=variant,
                batch_size_tokens=_typed(tr, "batch_size_tokens", int, f"{path}.train", 4096),
                learning_rate=_typed(tr, "learning_rate", (int, float), f"{path}.train", 1e-3),
                warmup_tokens=_typed(tr, "warmup_tokens", int, f"{path}.train", 10_000),
                total_tokens=_typed(tr, "total_tokens", int, f"{path}.train", 500_000),
                max_len=_typed(tr, "max_len", int, f"{path}.train", 128),
                seed=_typed(raw, "seed", int, path, 0),
                checkpoint_interval=_typed(tr, "checkpoint_interval", int, f"{path}.train", 0),
                log_interval=_typed(tr, "log_interval", int, f"{path}.train", 10),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}.train: {exc}") from exc

    eval_raw = _require_mapping(raw.get("eval", {}), f"{path}.eval")
    _check_keys(eval_raw, {"r_bidir_values", "suffix_ratio", "candidate_k"}, f"{path}.eval")
    r_values = eval_raw.get("r_bidir_values", [0.0, 0.25, 0.5, 0.75, 1.0])
    if not isinstance(r_values, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in r_values
    ):
        raise ConfigError(f"{path}.eval.r_bidir_values: expected a list of numbers")
    evaluation = EvalSettings(
        r_bidir_values=tuple(float(v) for v in r_values),
        suffix_ratio=_typed(eval_raw, "suffix_ratio", (int, float), f"{path}.eval", 0.8),
        candidate_k=_typed(eval_raw, "candidate_k", int, f"{path}.eval", 32),
    )

    fmt = _typed(raw, "corpus_format", str, path, "plain-blankline")
    if fmt not in ("plain-blankline", "jsonl-text"):
        raise ConfigError(f"{path}.corpus_format: unknown format {fmt!r}")

    return ExperimentConfig(
        corpus=corpus,
        variant=variant,
        output_dir=_typed(raw, "output_dir", str, path, "runs/default"),
        seed=_typed(raw, "seed", int, path, 0),
        corpus_format=fmt,
        tokenizer=tokenizer,
        model=model,
        train=train,
        eval=evaluation,
    )


def parse_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if raw is None:
        raise ConfigError(f"{path}: empty config")
    return parse_config_data(raw, path="config")
