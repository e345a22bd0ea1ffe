"""Four-stage pyramid backbone, classifier head, and receptive-field probe."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .blocks import BlockParams, a2mamba_block, build_block
from .errors import ConfigError, ResolutionError
from .ops import channel_norm, conv2d, gelu
from .params import Initializer, ParameterStore
from .tensor import Tensor, as_tensor, matmul, narrow


@dataclass
class ModelConfig:
    channels: list[int] = field(default_factory=lambda: [32, 64, 128, 192])
    blocks: list[int] = field(default_factory=lambda: [2, 2, 8, 2])
    heads: list[int] = field(default_factory=lambda: [2, 2, 4, 8])
    window_sizes: list[int] = field(default_factory=lambda: [11, 9, 7, 7])
    num_classes: int = 1000
    ffn_expansion: int = 4
    drop_path: float = 0.0
    in_channels: int = 3
    # ablation toggles (roadmap switches) and harness hyperparameters
    attention_mode: str = "ama"  # ama | sla_only | global
    ssm_mode: str = "a2ssm"  # a2ssm | vanilla | none
    use_gate: bool = True
    batch_size: int = 16

    def validate(self):
        for name in ("channels", "blocks", "heads", "window_sizes"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(name, "expected one entry per stage (4)")
        for i, (c, h) in enumerate(zip(self.channels, self.heads)):
            if self.attention_mode == "global":
                if c % h != 0:
                    raise ConfigError(
                        "channels", f"stage {i}: {c} not divisible by heads {h}"
                    )
            elif c % (2 * h) != 0:
                raise ConfigError(
                    "channels",
                    f"stage {i}: {c} must divide by 2*heads ({2 * h}) for the "
                    "channel and head split",
                )
        for i, k in enumerate(self.window_sizes):
            if k % 2 == 0:
                raise ConfigError("window_sizes", f"stage {i}: {k} must be odd")
        for i, b in enumerate(self.blocks):
            if b < 0:
                raise ConfigError("blocks", f"stage {i}: negative depth {b}")
        if self.num_classes < 1:
            raise ConfigError("num_classes", "must be positive")
        if self.ffn_expansion < 1:
            raise ConfigError("ffn_expansion", "must be >= 1")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigError("drop_path", "must lie in [0, 1)")
        if self.attention_mode not in ("ama", "sla_only", "global"):
            raise ConfigError("attention_mode", f"unknown '{self.attention_mode}'")
        if self.ssm_mode not in ("a2ssm", "vanilla", "none"):
            raise ConfigError("ssm_mode", f"unknown '{self.ssm_mode}'")
        if self.attention_mode == "global" and self.ssm_mode != "none":
            raise ConfigError("ssm_mode", "global attention ablation requires 'none'")
        return self

    @classmethod
    def from_json(cls, path: str) -> "ModelConfig":
        with open(path) as f:
            raw = json.load(f)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        return cls(**known).validate()

    def to_json(self, path: str):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)
            f.write("\n")


VARIANTS = {
    "nano": dict(channels=[32, 64, 128, 192], blocks=[2, 2, 8, 2], heads=[2, 2, 4, 8]),
    "tiny": dict(channels=[48, 96, 256, 448], blocks=[2, 2, 10, 2], heads=[2, 4, 8, 16]),
    "small": dict(channels=[64, 128, 320, 512], blocks=[2, 4, 12, 4], heads=[2, 4, 10, 16]),
    "base": dict(channels=[96, 192, 384, 512], blocks=[4, 6, 12, 6], heads=[4, 8, 12, 16]),
    "large": dict(channels=[112, 224, 512, 720], blocks=[4, 6, 12, 6], heads=[4, 8, 16, 30]),
}

DROP_PATH_RATES = {"nano": 0.05, "tiny": 0.1, "small": 0.2, "base": 0.4, "large": 0.5}


def variant_config(name: str, num_classes: int = 1000) -> ModelConfig:
    if name not in VARIANTS:
        raise ConfigError("variant", f"unknown variant '{name}'")
    cfg = ModelConfig(
        num_classes=num_classes,
        drop_path=DROP_PATH_RATES[name],
        **VARIANTS[name],
    )
    return cfg.validate()


@dataclass
class StemParams:
    conv1_w: Tensor
    conv1_b: Tensor
    norm_g: Tensor
    norm_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor


@dataclass
class TransitionParams:
    conv_w: Tensor
    conv_b: Tensor
    norm_g: Tensor
    norm_b: Tensor


@dataclass
class HeadParams:
    norm_g: Tensor
    norm_b: Tensor
    fc_w: Tensor
    fc_b: Tensor


@dataclass
class Model:
    config: ModelConfig
    stem: StemParams
    stages: list[list[BlockParams]]
    transitions: list[TransitionParams]
    head: HeadParams
    store: ParameterStore


def build_model(cfg: ModelConfig, seed: int) -> Model:
    """Deterministic construction from a seed.

    Stem: two 3x3 stride-2 convolutions with norm and GELU between.
    Transitions: single 3x3 stride-2 convolution plus norm.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    init = Initializer(rng)
    store = ParameterStore()

    c0 = cfg.channels[0]
    mid = max(c0 // 2, 8)
    stem = StemParams(
        conv1_w=store.add("stem.conv1_w", init.trunc_normal(mid, cfg.in_channels, 3, 3)),
        conv1_b=store.add("stem.conv1_b", init.zeros(mid)),
        norm_g=store.add("stem.norm_g", init.ones(mid)),
        norm_b=store.add("stem.norm_b", init.zeros(mid)),
        conv2_w=store.add("stem.conv2_w", init.trunc_normal(c0, mid, 3, 3)),
        conv2_b=store.add("stem.conv2_b", init.zeros(c0)),
    )

    total_blocks = sum(cfg.blocks)
    rates = np.linspace(0.0, cfg.drop_path, max(total_blocks, 1))
    stages = []
    idx = 0
    for s in range(4):
        blocks = []
        for b in range(cfg.blocks[s]):
            blocks.append(
                build_block(
                    store,
                    init,
                    f"stage{s + 1}.block{b}",
                    cfg.channels[s],
                    cfg.ffn_expansion,
                    drop_rate=float(rates[idx]) if total_blocks > 1 else 0.0,
                    global_mixer=(cfg.attention_mode == "global"),
                )
            )
            idx += 1
        stages.append(blocks)

    transitions = []
    for s in range(3):
        cin, cout = cfg.channels[s], cfg.channels[s + 1]
        transitions.append(
            TransitionParams(
                conv_w=store.add(f"transition{s + 1}.conv_w", init.trunc_normal(cout, cin, 3, 3)),
                conv_b=store.add(f"transition{s + 1}.conv_b", init.zeros(cout)),
                norm_g=store.add(f"transition{s + 1}.norm_g", init.ones(cout)),
                norm_b=store.add(f"transition{s + 1}.norm_b", init.zeros(cout)),
            )
        )

    c3 = cfg.channels[3]
    head = HeadParams(
        norm_g=store.add("head.norm_g", init.ones(c3)),
        norm_b=store.add("head.norm_b", init.zeros(c3)),
        fc_w=store.add("head.fc_w", init.trunc_normal(c3, cfg.num_classes)),
        fc_b=store.add("head.fc_b", init.zeros(cfg.num_classes)),
    )
    return Model(cfg, stem, stages, transitions, head, store)


def forward_features(
    model: Model,
    images,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> list[Tensor]:
    """Run stem, stages and transitions; returns the four stage outputs."""
    cfg = model.config
    x = as_tensor(images)
    n, c, h, w = x.shape
    if h % 32 != 0 or w % 32 != 0:
        raise ResolutionError(
            f"input {h}x{w} must be a multiple of 32 along each axis"
        )
    st = model.stem
    x = conv2d(x, st.conv1_w, st.conv1_b, stride=2, padding=1)
    x = gelu(channel_norm(x, st.norm_g, st.norm_b))
    x = conv2d(x, st.conv2_w, st.conv2_b, stride=2, padding=1)

    feats = []
    for s in range(4):
        for bp in model.stages[s]:
            x = a2mamba_block(
                x,
                bp,
                cfg.window_sizes[s],
                cfg.heads[s],
                attention=cfg.attention_mode,
                ssm=cfg.ssm_mode,
                gate=cfg.use_gate,
                expansion=cfg.ffn_expansion,
                training=training,
                rng=rng,
            )
        feats.append(x)
        if s < 3:
            t = model.transitions[s]
            x = conv2d(x, t.conv_w, t.conv_b, stride=2, padding=1)
            x = channel_norm(x, t.norm_g, t.norm_b)
    return feats


def forward_classify(
    model: Model,
    images,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits from the deepest stage: norm, global average pool, linear."""
    feats = forward_features(model, images, training=training, rng=rng)
    x = feats[-1]
    x = channel_norm(x, model.head.norm_g, model.head.norm_b)
    pooled = x.mean(axis=(2, 3))  # [N, C]
    return matmul(pooled, model.head.fc_w) + model.head.fc_b


def param_count(model: Model) -> int:
    return model.store.total_params()


def erf_map(model: Model, images) -> np.ndarray:
    """Gradient footprint of the deepest stage's center position.

    Sums the final feature map over channels at the spatial center, then
    takes the input gradient magnitude averaged over batch and channels and
    normalized to a peak of 1.
    """
    x = Tensor(np.asarray(images), requires_grad=True)
    feats = forward_features(model, x)
    last = feats[-1]
    n, c, h, w = last.shape
    center = narrow(narrow(last, 2, h // 2, 1), 3, w // 2, 1)
    loss = center.sum()
    loss.backward()
    g = np.abs(x.grad).mean(axis=(0, 1))
    peak = g.max()
    if peak > 0:
        g = g / peak
    return g


def erf_support_fraction(erf: np.ndarray, threshold: float = 1e-6) -> float:
    return float((erf > threshold).mean())
