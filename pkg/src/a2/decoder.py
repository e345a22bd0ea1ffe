"""Segmentation decoder: stage fusion, multi-scale refinement, mask head.

The refinement module grinds the fused /8 map down to three /32 context maps
(two convolutional routes and two lossless pixel-unshuffle routes), mixes
them with a global-attention variant of the hybrid token mixer, and adds a
dilated depthwise RepConv shortcut that keeps local detail alive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .a2ssm import a2ssm_forward
from .attention import windowed_attention
from .blocks import FfnParams, MixerParams, build_ffn, build_global_mixer, conv_ffn
from .errors import ConfigError, ContractError, DimensionError
from .ops import (
    bilinear_resize,
    channel_norm,
    conv2d,
    global_avg_pool,
    pixel_unshuffle,
    pointwise,
    silu,
)
from .params import Initializer, ParameterStore
from .tensor import Tensor, as_tensor, concat


@dataclass
class RefineParams:
    b1_reduce_w: Tensor
    b1_reduce_b: Tensor
    b1_down_w: Tensor
    b1_down_b: Tensor
    b2_interim_w: Tensor
    b2_interim_b: Tensor
    b2_down_w: Tensor
    b2_down_b: Tensor
    b3_reduce_w: Tensor
    b3_reduce_b: Tensor
    norm1_g: Tensor
    norm1_b: Tensor
    mixer: MixerParams
    norm2_g: Tensor
    norm2_b: Tensor
    ffn: FfnParams
    out_reduce_w: Tensor
    out_reduce_b: Tensor
    rep5_w: Tensor
    rep5_b: Tensor
    rep5d_w: Tensor
    rep5d_b: Tensor
    rep3_w: Tensor
    rep3_b: Tensor


@dataclass
class DecoderParams:
    c: int
    c_low: int
    heads: int
    expansion: int
    num_classes: int
    proj_w: list[Tensor]  # stage 2..4 projections to c
    proj_b: list[Tensor]
    fuse_w: Tensor
    fuse_b: Tensor
    refine: RefineParams
    ctx_w: Tensor
    ctx_b: Tensor
    low_w: Tensor
    low_b: Tensor
    low_fuse_w: Tensor
    low_fuse_b: Tensor
    cls_w: Tensor
    cls_b: Tensor
    store: ParameterStore


def build_decoder(
    stage_channels: list[int],
    num_classes: int,
    c: int = 128,
    c_low: int = 48,
    heads: int = 4,
    expansion: int = 4,
    seed: int = 0,
    store: ParameterStore | None = None,
    prefix: str = "decoder",
) -> DecoderParams:
    if c % 2 != 0:
        raise ConfigError("decoder_channels", f"must be even, got {c}")
    mix_c = 3 * c // 2
    if mix_c % heads != 0 or (mix_c // 2) % heads != 0:
        raise ConfigError(
            "decoder_heads",
            f"heads ({heads}) must divide both {mix_c} and {mix_c // 2}",
        )
    rng = np.random.default_rng(seed)
    init = Initializer(rng)
    store = store if store is not None else ParameterStore()
    half = c // 2

    proj_w, proj_b = [], []
    for i, cin in enumerate(stage_channels[1:], start=2):
        proj_w.append(store.add(f"{prefix}.proj{i}_w", init.trunc_normal(c, cin, 1, 1)))
        proj_b.append(store.add(f"{prefix}.proj{i}_b", init.zeros(c)))

    rp = f"{prefix}.refine"
    refine = RefineParams(
        b1_reduce_w=store.add(f"{rp}.b1_reduce_w", init.trunc_normal(half, 4 * c, 1, 1)),
        b1_reduce_b=store.add(f"{rp}.b1_reduce_b", init.zeros(half)),
        b1_down_w=store.add(f"{rp}.b1_down_w", init.trunc_normal(half, half, 3, 3)),
        b1_down_b=store.add(f"{rp}.b1_down_b", init.zeros(half)),
        b2_interim_w=store.add(f"{rp}.b2_interim_w", init.trunc_normal(c, c, 3, 3)),
        b2_interim_b=store.add(f"{rp}.b2_interim_b", init.zeros(c)),
        b2_down_w=store.add(f"{rp}.b2_down_w", init.trunc_normal(half, c, 3, 3)),
        b2_down_b=store.add(f"{rp}.b2_down_b", init.zeros(half)),
        b3_reduce_w=store.add(f"{rp}.b3_reduce_w", init.trunc_normal(half, 4 * c, 1, 1)),
        b3_reduce_b=store.add(f"{rp}.b3_reduce_b", init.zeros(half)),
        norm1_g=store.add(f"{rp}.norm1_g", init.ones(mix_c)),
        norm1_b=store.add(f"{rp}.norm1_b", init.zeros(mix_c)),
        mixer=build_global_mixer(store, init, f"{rp}.mixer", mix_c),
        norm2_g=store.add(f"{rp}.norm2_g", init.ones(mix_c)),
        norm2_b=store.add(f"{rp}.norm2_b", init.zeros(mix_c)),
        ffn=build_ffn(store, init, f"{rp}.ffn", mix_c, expansion),
        out_reduce_w=store.add(f"{rp}.out_reduce_w", init.trunc_normal(c, mix_c, 1, 1)),
        out_reduce_b=store.add(f"{rp}.out_reduce_b", init.zeros(c)),
        rep5_w=store.add(f"{rp}.rep5_w", init.trunc_normal(c, 1, 5, 5)),
        rep5_b=store.add(f"{rp}.rep5_b", init.zeros(c)),
        rep5d_w=store.add(f"{rp}.rep5d_w", init.trunc_normal(c, 1, 5, 5)),
        rep5d_b=store.add(f"{rp}.rep5d_b", init.zeros(c)),
        rep3_w=store.add(f"{rp}.rep3_w", init.trunc_normal(c, 1, 3, 3)),
        rep3_b=store.add(f"{rp}.rep3_b", init.zeros(c)),
    )

    return DecoderParams(
        c=c,
        c_low=c_low,
        heads=heads,
        expansion=expansion,
        num_classes=num_classes,
        proj_w=proj_w,
        proj_b=proj_b,
        fuse_w=store.add(f"{prefix}.fuse_w", init.trunc_normal(c, 3 * c, 1, 1)),
        fuse_b=store.add(f"{prefix}.fuse_b", init.zeros(c)),
        refine=refine,
        ctx_w=store.add(f"{prefix}.ctx_w", init.trunc_normal(c, 3 * c, 1, 1)),
        ctx_b=store.add(f"{prefix}.ctx_b", init.zeros(c)),
        low_w=store.add(f"{prefix}.low_w", init.trunc_normal(c_low, stage_channels[0], 1, 1)),
        low_b=store.add(f"{prefix}.low_b", init.zeros(c_low)),
        low_fuse_w=store.add(f"{prefix}.low_fuse_w", init.trunc_normal(c, c + c_low, 1, 1)),
        low_fuse_b=store.add(f"{prefix}.low_fuse_b", init.zeros(c)),
        cls_w=store.add(f"{prefix}.cls_w", init.trunc_normal(num_classes, c, 1, 1)),
        cls_b=store.add(f"{prefix}.cls_b", init.zeros(num_classes)),
        store=store,
    )


def fuse_stages(f1, f2, f3, f4, dp: DecoderParams) -> Tensor:
    """Project stages 2..4 to a common width at stage-2 resolution and fuse."""
    feats = [as_tensor(f) for f in (f1, f2, f3, f4)]
    batches = {f.shape[0] for f in feats}
    if len(batches) != 1:
        raise ContractError(f"stage features disagree on batch size: {batches}")
    h8, w8 = feats[1].shape[2], feats[1].shape[3]
    parts = []
    for i, f in enumerate(feats[1:]):
        p = pointwise(f, dp.proj_w[i], dp.proj_b[i])
        if p.shape[2] != h8 or p.shape[3] != w8:
            p = bilinear_resize(p, h8, w8)
        parts.append(p)
    return pointwise(concat(parts, axis=1), dp.fuse_w, dp.fuse_b)


def dilated_repconv(x: Tensor, rp: RefineParams) -> Tensor:
    """Depthwise 5x5 + dilated 5x5 + 3x3 + identity, summed (unmerged)."""
    c = x.shape[1]
    return (
        conv2d(x, rp.rep5_w, rp.rep5_b, padding=2, groups=c)
        + conv2d(x, rp.rep5d_w, rp.rep5d_b, padding=4, dilation=2, groups=c)
        + conv2d(x, rp.rep3_w, rp.rep3_b, padding=1, groups=c)
        + x
    )


def global_mass_forward(x: Tensor, mp: MixerParams, heads: int) -> Tensor:
    """Single-branch mixer whose attention window covers the whole map.

    The one attention map feeds the state aggregation on both channel
    halves.
    """
    n, c, h, w = x.shape
    k = 2 * max(h, w) + 1
    y, maps = windowed_attention(x, mp.ama.sla, heads, k, (1, 1))
    yp = a2ssm_forward(y, maps, maps, mp.scan)
    z = yp * silu(pointwise(x, mp.gate_w, mp.gate_b))
    return pointwise(z, mp.out_w, mp.out_b)


def mm_refine(f: Tensor, dp: DecoderParams) -> Tensor:
    """Multi-scale context refinement of the fused /8 feature map."""
    f = as_tensor(f)
    n, c, h8, w8 = f.shape
    if h8 % 4 != 0 or w8 % 4 != 0:
        raise DimensionError(
            f"refinement needs /8 maps divisible by 4, got {h8}x{w8}"
        )
    rp = dp.refine

    # route 1: lossless unshuffle to /16, reduce, stride down to /32
    u1 = pixel_unshuffle(f, 2)
    u1 = pointwise(u1, rp.b1_reduce_w, rp.b1_reduce_b)
    f1 = conv2d(u1, rp.b1_down_w, rp.b1_down_b, stride=2, padding=1)

    # route 2: stride to /16, then stride again and unshuffle in parallel
    fi = conv2d(f, rp.b2_interim_w, rp.b2_interim_b, stride=2, padding=1)
    f2 = conv2d(fi, rp.b2_down_w, rp.b2_down_b, stride=2, padding=1)
    f3 = pointwise(pixel_unshuffle(fi, 2), rp.b3_reduce_w, rp.b3_reduce_b)

    assert f1.shape[2:] == f2.shape[2:] == f3.shape[2:], "context maps disagree"
    ctx = concat([f1, f2, f3], axis=1)

    t = ctx + global_mass_forward(
        channel_norm(ctx, rp.norm1_g, rp.norm1_b), rp.mixer, dp.heads
    )
    t = t + conv_ffn(channel_norm(t, rp.norm2_g, rp.norm2_b), rp.ffn, dp.expansion)

    t = pointwise(t, rp.out_reduce_w, rp.out_reduce_b)
    t = bilinear_resize(t, h8, w8)
    return t + dilated_repconv(f, rp)


def segman_v2_decode(f1, f2, f3, f4, dp: DecoderParams) -> Tensor:
    """Mask logits at /4 resolution from the four stage features."""
    fused = fuse_stages(f1, f2, f3, f4, dp)
    n, c, h8, w8 = fused.shape
    gap = global_avg_pool(fused)
    gap_map = gap + Tensor(np.zeros((1, 1, h8, w8), dtype=gap.dtype))
    refined = mm_refine(fused, dp)
    ctx = concat([gap_map, fused, refined], axis=1)
    high = pointwise(ctx, dp.ctx_w, dp.ctx_b)
    high = bilinear_resize(high, 2 * h8, 2 * w8)
    low = pointwise(as_tensor(f1), dp.low_w, dp.low_b)
    joined = pointwise(concat([high, low], axis=1), dp.low_fuse_w, dp.low_fuse_b)
    return pointwise(joined, dp.cls_w, dp.cls_b)
