"""The hybrid token mixer and the residual block around it.

Block layout: a residual 3x3 depthwise convolution for positional detail,
then pre-norm residual mixer and pre-norm residual convolutional FFN, with
optional stochastic depth on the two residual branches during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .a2ssm import a2ssm_forward
from .attention import (
    AmaParams,
    AttnBranchParams,
    ama_forward,
    global_attention,
    windowed_attention,
)
from .errors import ConfigError
from .ops import channel_norm, conv2d, drop_path, gelu, pointwise, silu
from .params import Initializer, ParameterStore
from .scan import ScanProjParams
from .tensor import Tensor, as_tensor, concat, narrow


@dataclass
class MixerParams:
    ama: AmaParams
    scan: ScanProjParams
    gate_w: Tensor
    gate_b: Tensor
    out_w: Tensor
    out_b: Tensor


@dataclass
class FfnParams:
    fc1_w: Tensor
    fc1_b: Tensor
    dw_w: Tensor
    dw_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor


@dataclass
class BlockParams:
    dw_w: Tensor
    dw_b: Tensor
    norm1_g: Tensor
    norm1_b: Tensor
    mixer: MixerParams
    norm2_g: Tensor
    norm2_b: Tensor
    ffn: FfnParams
    drop_rate: float = 0.0


def mass_forward(
    x: Tensor,
    mp: MixerParams,
    k: int,
    heads: int,
    attention: str = "ama",
    ssm: str = "a2ssm",
    gate: bool = True,
) -> Tensor:
    """Token mixer: split attention branches, scan fusion, gated output.

    The two channel halves run sliding and adaptively dilated window
    attention; their concatenation feeds the scan whose hidden states are
    re-aggregated with the same attention maps, gated by the input path.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if attention == "ama":
        y, maps_sla, maps_dla = ama_forward(x, mp.ama, heads, k)
        yp = a2ssm_forward(y, maps_sla, maps_dla, mp.scan, variant=ssm)
    elif attention == "sla_only":
        # dilation pinned to 1 on both branches (receptive-field ablation)
        if c % 2 != 0 or heads % 2 != 0:
            raise ConfigError("channels", "channel split needs even C and heads")
        half = c // 2
        y1, maps_sla = windowed_attention(
            narrow(x, 1, 0, half), mp.ama.sla, heads // 2, k, (1, 1)
        )
        y2, maps_dla = windowed_attention(
            narrow(x, 1, half, half), mp.ama.dla, heads // 2, k, (1, 1)
        )
        y = concat([y1, y2], axis=1)
        yp = a2ssm_forward(y, maps_sla, maps_dla, mp.scan, variant=ssm)
    elif attention == "global":
        if ssm != "none":
            raise ConfigError(
                "ssm_mode", "global attention ablation runs without the scan"
            )
        yp = global_attention(x, mp.ama.sla, heads)
    else:
        raise ConfigError("attention_mode", f"unknown mode '{attention}'")
    if gate:
        z = yp * silu(pointwise(x, mp.gate_w, mp.gate_b))
    else:
        z = yp
    return pointwise(z, mp.out_w, mp.out_b)


def conv_ffn(x: Tensor, fp: FfnParams, expansion: int = 4) -> Tensor:
    """Pointwise expand, 3x3 depthwise, GELU, pointwise reduce."""
    if expansion < 1:
        raise ConfigError("ffn_expansion", f"must be >= 1, got {expansion}")
    h = pointwise(x, fp.fc1_w, fp.fc1_b)
    hidden = fp.dw_w.shape[0]
    h = conv2d(h, fp.dw_w, fp.dw_b, padding=1, groups=hidden)
    h = gelu(h)
    return pointwise(h, fp.fc2_w, fp.fc2_b)


def a2mamba_block(
    x: Tensor,
    bp: BlockParams,
    k: int,
    heads: int,
    attention: str = "ama",
    ssm: str = "a2ssm",
    gate: bool = True,
    expansion: int = 4,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Residual DW conv, then mixer and FFN as pre-norm residual branches."""
    x = as_tensor(x)
    c = x.shape[1]
    x = x + conv2d(x, bp.dw_w, bp.dw_b, padding=1, groups=c)
    mixed = mass_forward(
        channel_norm(x, bp.norm1_g, bp.norm1_b),
        bp.mixer,
        k,
        heads,
        attention=attention,
        ssm=ssm,
        gate=gate,
    )
    x = x + drop_path(mixed, bp.drop_rate, training, rng)
    fed = conv_ffn(channel_norm(x, bp.norm2_g, bp.norm2_b), bp.ffn, expansion)
    return x + drop_path(fed, bp.drop_rate, training, rng)


# -- parameter construction ----------------------------------------------------


def build_attn_branch(
    store: ParameterStore, init: Initializer, prefix: str, c: int
) -> AttnBranchParams:
    return AttnBranchParams(
        wq=store.add(f"{prefix}.wq", init.trunc_normal(c, c, 1, 1)),
        bq=store.add(f"{prefix}.bq", init.zeros(c)),
        wk=store.add(f"{prefix}.wk", init.trunc_normal(c, c, 1, 1)),
        bk=store.add(f"{prefix}.bk", init.zeros(c)),
        wv=store.add(f"{prefix}.wv", init.trunc_normal(c, c, 1, 1)),
        bv=store.add(f"{prefix}.bv", init.zeros(c)),
        wo=store.add(f"{prefix}.wo", init.trunc_normal(c, c, 1, 1)),
        bo=store.add(f"{prefix}.bo", init.zeros(c)),
    )


def build_scan_proj(
    store: ParameterStore, init: Initializer, prefix: str, c: int
) -> ScanProjParams:
    return ScanProjParams(
        delta_w=store.add(f"{prefix}.delta_w", init.trunc_normal(c, c)),
        delta_b=store.add(f"{prefix}.delta_b", init.zeros(c)),
        b_w=store.add(f"{prefix}.b_w", init.trunc_normal(1, c)),
        b_b=store.add(f"{prefix}.b_b", init.zeros(1)),
        c_w=store.add(f"{prefix}.c_w", init.trunc_normal(1, c)),
        c_b=store.add(f"{prefix}.c_b", init.zeros(1)),
        a_log=store.add(f"{prefix}.a_log", init.zeros(c)),
        d=store.add(f"{prefix}.d", init.ones(c)),
    )


def build_mixer(
    store: ParameterStore, init: Initializer, prefix: str, c: int
) -> MixerParams:
    half = c // 2
    return MixerParams(
        ama=AmaParams(
            sla=build_attn_branch(store, init, f"{prefix}.sla", half),
            dla=build_attn_branch(store, init, f"{prefix}.dla", half),
        ),
        scan=build_scan_proj(store, init, f"{prefix}.scan", c),
        gate_w=store.add(f"{prefix}.gate_w", init.trunc_normal(c, c, 1, 1)),
        gate_b=store.add(f"{prefix}.gate_b", init.zeros(c)),
        out_w=store.add(f"{prefix}.out_w", init.trunc_normal(c, c, 1, 1)),
        out_b=store.add(f"{prefix}.out_b", init.zeros(c)),
    )


def build_global_mixer(
    store: ParameterStore, init: Initializer, prefix: str, c: int
) -> MixerParams:
    """Single-branch mixer used where attention covers the whole map."""
    branch = build_attn_branch(store, init, f"{prefix}.attn", c)
    return MixerParams(
        ama=AmaParams(sla=branch, dla=branch),
        scan=build_scan_proj(store, init, f"{prefix}.scan", c),
        gate_w=store.add(f"{prefix}.gate_w", init.trunc_normal(c, c, 1, 1)),
        gate_b=store.add(f"{prefix}.gate_b", init.zeros(c)),
        out_w=store.add(f"{prefix}.out_w", init.trunc_normal(c, c, 1, 1)),
        out_b=store.add(f"{prefix}.out_b", init.zeros(c)),
    )


def build_ffn(
    store: ParameterStore, init: Initializer, prefix: str, c: int, expansion: int
) -> FfnParams:
    hidden = c * expansion
    return FfnParams(
        fc1_w=store.add(f"{prefix}.fc1_w", init.trunc_normal(hidden, c, 1, 1)),
        fc1_b=store.add(f"{prefix}.fc1_b", init.zeros(hidden)),
        dw_w=store.add(f"{prefix}.dw_w", init.trunc_normal(hidden, 1, 3, 3)),
        dw_b=store.add(f"{prefix}.dw_b", init.zeros(hidden)),
        fc2_w=store.add(f"{prefix}.fc2_w", init.trunc_normal(c, hidden, 1, 1)),
        fc2_b=store.add(f"{prefix}.fc2_b", init.zeros(c)),
    )


def build_block(
    store: ParameterStore,
    init: Initializer,
    prefix: str,
    c: int,
    expansion: int,
    drop_rate: float = 0.0,
    global_mixer: bool = False,
) -> BlockParams:
    mixer_builder = build_global_mixer if global_mixer else build_mixer
    return BlockParams(
        dw_w=store.add(f"{prefix}.dw_w", init.trunc_normal(c, 1, 3, 3)),
        dw_b=store.add(f"{prefix}.dw_b", init.zeros(c)),
        norm1_g=store.add(f"{prefix}.norm1_g", init.ones(c)),
        norm1_b=store.add(f"{prefix}.norm1_b", init.zeros(c)),
        mixer=mixer_builder(store, init, f"{prefix}.mixer", c),
        norm2_g=store.add(f"{prefix}.norm2_g", init.ones(c)),
        norm2_b=store.add(f"{prefix}.norm2_b", init.zeros(c)),
        ffn=build_ffn(store, init, f"{prefix}.ffn", c, expansion),
        drop_rate=drop_rate,
    )
