"""Attention-augmented state fusion.

The scan's causal hidden states are treated as values and re-aggregated by
the window attention maps computed upstream, which restores two-dimensional
neighborhood structure that a raster scan alone cannot express. Output
gating and the weighted input residual follow.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .attention import AttentionMaps, build_window_index
from .ops import gather_windows, window_av
from .scan import ScanProjParams, make_scan_params, scan_parallel
from .tensor import Tensor, as_tensor, concat, narrow


def _aggregate_half(s_half: Tensor, maps: AttentionMaps) -> Tensor:
    n, c, h, w = s_half.shape
    heads = maps.heads
    if maps.spatial != (h, w):
        raise ContractError(
            f"attention maps cover {maps.spatial}, states cover {(h, w)}"
        )
    if c % heads != 0:
        raise ContractError(
            f"state channels ({c}) not divisible by map heads ({heads})"
        )
    index = build_window_index(h, w, maps.geometry.k, maps.geometry.dilation)
    if not np.array_equal(index.valid, maps.mask):
        raise ContractError("attention map mask does not match its geometry")
    k2 = maps.geometry.k ** 2
    values = s_half.reshape(n, heads, c // heads, h * w)
    gathered = gather_windows(values, index.flat_safe())
    weights = maps.weights.reshape(n, heads, h * w, k2)
    return window_av(weights, gathered).reshape(n, c, h, w)


def aggregate_states(
    s: Tensor, maps_sla: AttentionMaps, maps_dla: AttentionMaps
) -> Tensor:
    """Window-weighted sums of scan states, one attention map set per half.

    s: [N, C, H, W] hidden states in raster layout. The first C/2 channels
    use the sliding maps, the second half the dilated maps, matching the
    channel split that produced the maps.
    """
    s = as_tensor(s)
    n, c, h, w = s.shape
    if c % 2 != 0:
        raise ContractError(f"state channels must be even, got {c}")
    half = c // 2
    s1 = narrow(s, 1, 0, half)
    s2 = narrow(s, 1, half, half)
    y1 = _aggregate_half(s1, maps_sla)
    y2 = _aggregate_half(s2, maps_dla)
    return concat([y1, y2], axis=1)


def a2ssm_forward(
    y: Tensor,
    maps_sla: AttentionMaps,
    maps_dla: AttentionMaps,
    proj: ScanProjParams,
    variant: str = "a2ssm",
) -> Tensor:
    """Scan, aggregate with the shared attention maps, gate, add residual.

    variant "vanilla" skips the map aggregation (plain selective scan);
    variant "none" is the identity on y (attention-only ablation).
    """
    y = as_tensor(y)
    if variant == "none":
        return y
    n, c, h, w = y.shape
    u = y.reshape(n, c, h * w)
    p = make_scan_params(u, proj)
    s = scan_parallel(u, p).s.reshape(n, c, h, w)
    if variant == "a2ssm":
        s = aggregate_states(s, maps_sla, maps_dla)
    elif variant != "vanilla":
        raise ContractError(f"unknown scan variant '{variant}'")
    gated = s * p.cprime.reshape(n, 1, h, w)
    return gated + p.d.reshape(1, c, 1, 1) * y
