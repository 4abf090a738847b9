"""Run configuration tree with strict JSON round-tripping and presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; carries the schema path of the violation."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class StrategyKind(str, Enum):
    UNIMODAL = "unimodal"
    MULTIMODAL = "multimodal"
    SIAMESE = "siamese"
    SIAMESE_TEMPORAL = "siamese_temporal"
    UNIMODAL_TEMPORAL = "unimodal_temporal"
    MULTIMODAL_TEMPORAL = "multimodal_temporal"
    MULTIMODAL_TEMPORAL_TM = "multimodal_temporal_tm"

    @property
    def temporal(self) -> bool:
        return self.value.endswith(("temporal", "temporal_tm"))

    @property
    def tm_enabled(self) -> bool:
        return self is StrategyKind.MULTIMODAL_TEMPORAL_TM

    @property
    def mode(self) -> str:
        """'joint' (concatenated), 'siamese' (shared weights), or 'unimodal'."""
        if self.value.startswith("multimodal"):
            return "joint"
        if self.value.startswith("siamese"):
            return "siamese"
        return "unimodal"


@dataclass
class GeometryConfig:
    t_seasons: int = 4
    c_opt: int = 4
    c_sar: int = 2
    h_full: int = 64
    w_full: int = 64
    crop_h: int = 32
    crop_w: int = 32
    patch: int = 8
    num_classes: int = 4
    num_scenes: int = 64


@dataclass
class ModelConfig:
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    pos_embed: str = "sinusoidal"  # or "learnable"
    mask_ratio: float = 0.75
    decoder_depth: int = 4
    decoder_dim: int = 64
    decoder_heads: int = 4
    norm_target: bool = True


@dataclass
class CropConfig:
    kind: str = "partial_overlap"
    min_rate: float = 0.5
    max_rate: float = 1.0


@dataclass
class TMBlockConfig:
    variant: str = "fuse"  # fuse | decouple | disabled
    heads: int = 4
    decouple_combine: str = "mean"


@dataclass
class OptimConfig:
    base_lr: float = 2e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    warmup_frac: float = 0.1


@dataclass
class StageConfig:
    epochs: int
    batch_size: int = 8


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    strategy: str = StrategyKind.MULTIMODAL_TEMPORAL_TM.value
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    tm: TMBlockConfig = field(default_factory=TMBlockConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    stage1: StageConfig = field(default_factory=lambda: StageConfig(epochs=5))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(epochs=40))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError("schema_version",
                              f"expected {SCHEMA_VERSION}, got {self.schema_version}")
        try:
            StrategyKind(self.strategy)
        except ValueError:
            raise ConfigError("strategy", f"unknown strategy '{self.strategy}'")
        g, m = self.geometry, self.model
        if g.crop_h % g.patch or g.crop_w % g.patch:
            raise ConfigError("geometry.patch",
                              f"crop {g.crop_h}x{g.crop_w} not divisible by {g.patch}")
        if g.crop_h > g.h_full or g.crop_w > g.w_full:
            raise ConfigError("geometry.crop_h", "crop exceeds full raster")
        if m.embed_dim % m.heads:
            raise ConfigError("model.heads", "heads must divide embed_dim")
        if m.decoder_dim % m.decoder_heads:
            raise ConfigError("model.decoder_heads",
                              "decoder_heads must divide decoder_dim")
        if m.pos_embed not in ("sinusoidal", "learnable"):
            raise ConfigError("model.pos_embed", f"unknown kind '{m.pos_embed}'")
        if not 0 <= m.mask_ratio < 1:
            raise ConfigError("model.mask_ratio", "must be in [0, 1)")
        if self.tm.variant not in ("fuse", "decouple", "disabled"):
            raise ConfigError("tm.variant", f"unknown variant '{self.tm.variant}'")
        if self.crop.kind not in ("same_location", "partial_overlap", "no_overlap"):
            raise ConfigError("crop.kind", f"unknown kind '{self.crop.kind}'")
        if not 0 < self.crop.min_rate <= self.crop.max_rate <= 1:
            raise ConfigError("crop.min_rate", "need 0 < min_rate <= max_rate <= 1")
        if self.stage1.epochs < 0 or self.stage2.epochs < 0:
            raise ConfigError("stage1.epochs", "epochs must be >= 0")
        if not 0 < self.optim.warmup_frac < 1:
            raise ConfigError("optim.warmup_frac", "must be in (0, 1)")


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected object, got {type(data).__name__}")
    import typing
    hints = typing.get_type_hints(cls)
    field_names = [f.name for f in dataclasses.fields(cls)]
    unknown = set(data) - set(field_names)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for name in field_names:
        if name not in data:
            continue
        sub_path = f"{path}.{name}" if path else name
        value = data[name]
        ftype = hints.get(name)
        if dataclasses.is_dataclass(ftype):
            kwargs[name] = _from_dict(ftype, value, sub_path)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    cfg = _from_dict(RunConfig, data, "")
    cfg.validate()
    return cfg


def config_from_json(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<json>", str(e))
    return config_from_dict(data)


def desk_preset(seed: int = 0) -> RunConfig:
    """Test-runnable geometry preserving the source's structural ratios."""
    cfg = RunConfig(seed=seed)
    cfg.validate()
    return cfg


def paper_preset(seed: int = 0) -> RunConfig:
    """Full-scale constants, carried as documentation-bearing config only."""
    cfg = RunConfig(
        seed=seed,
        geometry=GeometryConfig(t_seasons=4, c_opt=12, c_sar=2, h_full=264,
                                w_full=264, crop_h=128, crop_w=128, patch=16,
                                num_classes=4, num_scenes=250000),
        model=ModelConfig(embed_dim=768, depth=12, heads=12, mlp_ratio=4.0,
                          pos_embed="sinusoidal", mask_ratio=0.75,
                          decoder_depth=4, decoder_dim=512, decoder_heads=8,
                          norm_target=True),
        optim=OptimConfig(base_lr=1e-4, weight_decay=0.05, warmup_frac=0.1),
        stage1=StageConfig(epochs=20, batch_size=2048),
        stage2=StageConfig(epochs=200, batch_size=2048),
    )
    cfg.validate()
    return cfg


PRESETS = {"desk": desk_preset, "paper": paper_preset}
