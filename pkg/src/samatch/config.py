"""Model architecture and run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace

SELECTION_MODES = ("selection", "learnable", "random")
GROUPING_MODES = ("full", "no_pre_attention", "no_spatial_mlp", "no_channel_mlp", "soft_attention")
SCORE_MODES = ("multilevel", "point_only")
GUMBEL_MODES = ("per_group", "per_entry")
EXPANSION_MODES = ("assign", "pre_attention")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    layers: int = 3
    heads: int = 2
    descriptor_dim: int = 32
    groups: int = 2
    pos_hidden: tuple[int, int] = (32, 64)
    selection_mode: str = "selection"
    grouping_mode: str = "full"
    score_mode: str = "multilevel"
    gumbel_mode: str = "per_group"
    expansion_weights: str = "assign"
    sinkhorn_iters: int = 100
    theta: float = 0.2

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.groups != 2:
            raise ConfigError("exactly two groups are supported")
        for val, allowed, name in (
            (self.selection_mode, SELECTION_MODES, "selection_mode"),
            (self.grouping_mode, GROUPING_MODES, "grouping_mode"),
            (self.score_mode, SCORE_MODES, "score_mode"),
            (self.gumbel_mode, GUMBEL_MODES, "gumbel_mode"),
            (self.expansion_weights, EXPANSION_MODES, "expansion_weights"),
        ):
            if val not in allowed:
                raise ConfigError(f"{name}={val!r} not in {allowed}")

    def with_(self, **overrides) -> "ModelConfig":
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pos_hidden"] = list(self.pos_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "pos_hidden" in d:
            d["pos_hidden"] = tuple(d["pos_hidden"])
        return cls(**d)


def toy_config(**overrides) -> ModelConfig:
    """Small model for tests and CI (fits gradient checks in minutes)."""
    return ModelConfig(dim=32, layers=3, heads=2, descriptor_dim=32).with_(**overrides)


def full_config(**overrides) -> ModelConfig:
    """Production-scale model: 9 layers, width 256, 4 heads."""
    return ModelConfig(dim=256, layers=9, heads=4, descriptor_dim=256).with_(**overrides)


PRESETS = {"toy": toy_config, "full": full_config}


def preset_config(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**overrides)
