"""Scale presets.  Every size constant of a run comes from one of these."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from .backbones import EncoderConfig, FeaturePropagationSpec as FP, SetAbstractionSpec as SA


@dataclass(frozen=True)
class Preset:
    name: str
    n: int  # scene points
    m: int  # acting-object points
    k: int  # heatmap seeds
    t: int  # interpolation neighbours
    f1: int
    f2: int
    f3: int
    fg: int
    scene_encoder: EncoderConfig
    object_encoder: EncoderConfig
    conv_mlp: tuple[int, ...]  # hidden widths of the kernel-convolution MLP (f3 appended)
    critic_hidden: int
    camera_resolution: int
    target_positive: int
    trials_per_scene: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_steps: int = 20_000

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "Preset":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Preset":
        d = dict(d)
        d["scene_encoder"] = EncoderConfig.from_dict(d["scene_encoder"])
        d["object_encoder"] = EncoderConfig.from_dict(d["object_encoder"])
        d["conv_mlp"] = tuple(d["conv_mlp"])
        return cls(**d)


def _desk_scene(f: int) -> EncoderConfig:
    return EncoderConfig(
        sa=(
            SA(256, 0.1, 32, (16, 16, 32)),
            SA(64, 0.2, 32, (32, 32, 64)),
            SA(16, 0.4, 32, (64, 64, 64)),
            SA(4, 0.8, 32, (64, 64, 64)),
        ),
        fp=(FP((64, 64)), FP((64, 64)), FP((64, 64)), FP((64, 64))),
        out_dim=f,
    )


def _desk_object(f: int, fg: int) -> EncoderConfig:
    return EncoderConfig(
        sa=(
            SA(128, 0.2, 32, (32, 32, 64)),
            SA(32, 0.4, 32, (64, 64, 64)),
            SA(1, 1.0, 0, (64, 64, 64)),
        ),
        fp=(FP((64, 64)), FP((64, 64)), FP((64, 64))),
        out_dim=f,
        global_dim=fg,
    )


DESK = Preset(
    name="desk",
    n=2000,
    m=256,
    k=128,
    t=3,
    f1=64,
    f2=64,
    f3=64,
    fg=64,
    scene_encoder=_desk_scene(64),
    object_encoder=_desk_object(64, 64),
    conv_mlp=(64, 64),
    critic_hidden=64,
    camera_resolution=224,
    target_positive=500,
    trials_per_scene=4,
)

# Layer plans transcribed from the published network description; input
# widths are derived from the wiring rather than listed.
PAPER = Preset(
    name="paper",
    n=10_000,
    m=1000,
    k=1000,
    t=3,
    f1=128,
    f2=128,
    f3=128,
    fg=128,
    scene_encoder=EncoderConfig(
        sa=(
            SA(1024, 0.1, 32, (32, 32, 64)),
            SA(256, 0.2, 32, (64, 64, 128)),
            SA(64, 0.4, 32, (128, 128, 256)),
            SA(16, 0.8, 32, (256, 256, 512)),
        ),
        fp=(FP((128, 128, 128)), FP((256, 128)), FP((256, 256)), FP((256, 256))),
        out_dim=128,
    ),
    object_encoder=EncoderConfig(
        sa=(
            SA(512, 0.2, 32, (64, 64, 128)),
            SA(128, 0.4, 32, (128, 128, 256)),
            SA(1, 1.0, 0, (256, 256, 256)),
        ),
        fp=(FP((128, 128, 128)), FP((256, 256)), FP((256, 256))),
        out_dim=128,
        global_dim=128,
    ),
    conv_mlp=(128, 128),
    critic_hidden=128,
    camera_resolution=448,
    target_positive=20_000,
    trials_per_scene=1,
)

# Small enough for finite-difference checks of the whole network.
TINY = Preset(
    name="tiny",
    n=64,
    m=32,
    k=16,
    t=3,
    f1=8,
    f2=8,
    f3=8,
    fg=8,
    scene_encoder=EncoderConfig(
        sa=(SA(16, 0.4, 8, (8, 8)), SA(4, 0.8, 8, (8, 8))),
        fp=(FP((8,)), FP((8,))),
        out_dim=8,
    ),
    object_encoder=EncoderConfig(
        sa=(SA(8, 0.4, 8, (8, 8)), SA(1, 1.0, 0, (8, 8))),
        fp=(FP((8,)), FP((8,))),
        out_dim=8,
        global_dim=8,
    ),
    conv_mlp=(8,),
    critic_hidden=8,
    camera_resolution=96,
    target_positive=10,
    trials_per_scene=4,
    batch_size=8,
)

PRESETS = {"desk": DESK, "paper": PAPER, "tiny": TINY}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
