"""Paper-scale and desk-scale constants in one place.

Everything a run depends on is carried by a :class:`Preset`; the CLI only
layers ``key=value`` overrides on top of it.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .data import PAPER_GROUPS, DatasetManifest
from .models import GRUConfig, ViTTransformerConfig
from .training import ConfigError, TrainConfig


@dataclass(frozen=True)
class J2Study:
    """Microstructure-free decoder experiments (RET and GRU comparisons)."""

    n_train: int = 9000
    n_test: int = 1000
    seq_len: int = 200
    step_range: float = 1e-3
    eval_lengths: tuple = (100, 200)
    # one sinusoid cycle spans ``period`` steps whatever the path length
    period: int = 100
    # GRU comparison path, scored on its two halves
    extended_len: int = 200
    seed: int = 0


@dataclass(frozen=True)
class Preset:
    name: str
    model: ViTTransformerConfig
    dataset: DatasetManifest
    train: TrainConfig
    study: J2Study
    decoder: ViTTransformerConfig
    gru: GRUConfig = field(default_factory=GRUConfig)


def _paper() -> Preset:
    model = ViTTransformerConfig()
    return Preset(
        name="paper",
        model=model,
        dataset=DatasetManifest(),
        train=TrainConfig(epochs=900, batch_size=20, lr0=1e-5, l_min=20),
        study=J2Study(),
        decoder=model,
    )


def _desk() -> Preset:
    model = ViTTransformerConfig(
        image_side=128, patch_size=16,
        enc_embed=24, enc_heads=2, enc_ff=96, enc_layers=2, enc_out=16,
        dec_embed=36, dec_heads=4, dec_ff=144, dec_layers=2, dec_in=22, out_ffn_dim=144,
    )
    dataset = DatasetManifest(
        groups=PAPER_GROUPS, originals_per_group=12, n_pure_matrix=120, n_pure_fiber=120,
        seq_len=100, n_train=560,
    )
    return Preset(
        name="desk",
        model=model,
        dataset=dataset,
        train=TrainConfig(epochs=120, batch_size=20, lr0=1e-5, l_min=20),
        study=J2Study(n_train=300, n_test=40, seq_len=100, step_range=1e-3, eval_lengths=(50, 100),
                      period=50, extended_len=100),
        decoder=model,
    )


PRESETS = {"paper": _paper, "desk": _desk}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _coerce(current, text: str):
    if isinstance(current, bool):
        low = text.lower()
        if low not in ("1", "0", "true", "false", "on", "off", "yes", "no"):
            raise ConfigError(f"not a boolean: {text!r}")
        return low in ("1", "true", "on", "yes")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(int(x) for x in text.split(","))
    return text


def apply_overrides(preset: Preset, overrides: list[str]) -> Preset:
    """``section.key=value`` pairs, section one of model/dataset/train/study/decoder/gru."""
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, attr = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if section not in {f.name for f in fields(Preset)} or section == "name":
            raise ConfigError(f"unknown override section {section!r}")
        obj = getattr(preset, section)
        if attr not in {f.name for f in fields(obj)} or attr in ("groups", "matrix", "fiber", "scaler"):
            raise ConfigError(f"cannot override {key!r}")
        try:
            new = replace(obj, **{attr: _coerce(getattr(obj, attr), value)})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        preset = replace(preset, **{section: new})
    return preset


def flatten(preset: Preset) -> dict:
    """Fully resolved key=value view of a preset, for run manifests."""
    out = {"preset": preset.name}
    for section in ("model", "decoder", "gru", "train", "study"):
        obj = getattr(preset, section)
        for f in fields(obj):
            v = getattr(obj, f.name)
            out[f"{section}.{f.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else v
    for k, v in preset.dataset.to_entries().items():
        out[f"dataset.{k}"] = v
    return out
