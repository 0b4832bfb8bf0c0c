from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    frame_size: int = 256
    patch_size: int = 4
    window_size: int = 4
    stage_depths: tuple[int, ...] = (1, 1)
    stage_heads: tuple[int, ...] = (2, 4)
    embed_dim: int = 32
    decoder_dim: int = 64
    decoder_layers: int = 2
    decoder_heads: int = 4
    vocab_size: int = 0
    max_seq_len: int = 320
    mlp_ratio: int = 4
    in_chans: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_depths", tuple(self.stage_depths))
        object.__setattr__(self, "stage_heads", tuple(self.stage_heads))
        self.validate()

    def validate(self) -> None:
        if len(self.stage_depths) != len(self.stage_heads) or not self.stage_depths:
            raise ConfigError("stage_depths and stage_heads must be non-empty and of equal length")
        if self.frame_size % self.patch_size:
            raise ConfigError("frame_size must be divisible by patch_size")
        grid = self.frame_size // self.patch_size
        for i, heads in enumerate(self.stage_heads):
            if grid % self.window_size:
                raise ConfigError(f"stage {i} grid {grid} not divisible by window {self.window_size}")
            if self.stage_dim(i) % heads:
                raise ConfigError(f"stage {i} dim {self.stage_dim(i)} not divisible by {heads} heads")
            if i < len(self.stage_heads) - 1:
                if grid % 2:
                    raise ConfigError(f"stage {i} grid {grid} cannot be merged 2x2")
                grid //= 2
        if self.decoder_dim % self.decoder_heads:
            raise ConfigError("decoder_dim must be divisible by decoder_heads")
        if self.decoder_dim % 4:
            raise ConfigError("decoder_dim must be divisible by 4 (grid position code)")

    def stage_dim(self, i: int) -> int:
        return self.embed_dim * 2 ** i

    @property
    def feature_dim(self) -> int:
        return self.stage_dim(len(self.stage_depths) - 1)

    @property
    def final_grid(self) -> int:
        return (self.frame_size // self.patch_size) // 2 ** (len(self.stage_depths) - 1)

    @property
    def num_patches(self) -> int:
        return self.final_grid ** 2

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stage_depths"] = list(self.stage_depths)
        d["stage_heads"] = list(self.stage_heads)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def desk_profile(vocab_size: int, **kw) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, **kw)


def micro_profile(vocab_size: int = 16, **kw) -> ModelConfig:
    base = dict(frame_size=64, patch_size=4, window_size=4, stage_depths=(1,), stage_heads=(2,),
                embed_dim=16, decoder_dim=32, decoder_layers=1, decoder_heads=2)
    base.update(kw)
    return ModelConfig(vocab_size=vocab_size, **base)


def paper_profile(vocab_size: int, **kw) -> ModelConfig:
    # 896 / 4 = 224 patches: 224, 112, 56, 28 are all multiples of the window size 7
    base = dict(frame_size=896, patch_size=4, window_size=7, stage_depths=(2, 2, 14, 2),
                stage_heads=(4, 8, 16, 32), embed_dim=128, decoder_dim=1024, decoder_layers=10,
                decoder_heads=16, max_seq_len=4096)
    base.update(kw)
    return ModelConfig(vocab_size=vocab_size, **base)


PROFILES = {"desk": desk_profile, "micro": micro_profile, "paper": paper_profile}
