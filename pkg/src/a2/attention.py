"""Sliding and dilated local attention over 2D feature maps.

Each query attends to the K nearest positions per axis within its own
dilation coset, with windows shifted (clamped) at borders so queries keep a
full window whenever the coset is large enough. The dilated branch picks its
rate from the map size so the window spans the whole map.

Attention weights are returned alongside the mixed features so the state
fusion stage can re-aggregate scan states with the same maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ContractError
from .ops import gather_windows, mask_fill, pointwise, softmax_lastaxis, window_av, window_qk
from .tensor import Tensor, as_tensor, concat, narrow


def adaptive_dilation(h: int, w: int, k: int) -> tuple[int, int]:
    """Dilation that stretches a K-wide window across the whole map.

    Integer division of map size by window size, clamped to at least 1 so
    small maps degrade to plain sliding attention.
    """
    return max(1, h // k), max(1, w // k)


def _axis_windows(n: int, k: int, r: int):
    """Per-position window source indices along one axis.

    Returns (src [n, k] int64, ok [n, k] bool). Positions share a coset when
    congruent modulo the dilation r; each query gets the k nearest coset
    members, shifted in-bounds, with surplus slots invalid when the coset is
    shorter than k.
    """
    src = np.zeros((n, k), dtype=np.int64)
    ok = np.zeros((n, k), dtype=bool)
    offsets = np.arange(k)
    for pos in range(n):
        c = pos % r
        coset_len = (n - 1 - c) // r + 1
        qi = (pos - c) // r
        if coset_len >= k:
            start = min(max(qi - (k - 1) // 2, 0), coset_len - k)
            src[pos] = c + (start + offsets) * r
            ok[pos] = True
        else:
            idx = c + offsets[:coset_len] * r
            src[pos, :coset_len] = idx
            ok[pos, :coset_len] = True
    return src, ok


@dataclass(frozen=True)
class WindowGeometry:
    k: int
    dilation: tuple[int, int]
    origin: str = "clamped"


@dataclass(frozen=True)
class WindowIndex:
    """Materialized window source table for an (H, W, K, dilation) geometry."""

    h: int
    w: int
    k: int
    dilation: tuple[int, int]
    src: np.ndarray  # [H, W, K*K] flat raster indices, -1 where invalid
    valid: np.ndarray  # [H, W, K*K] bool

    @property
    def geometry(self) -> WindowGeometry:
        return WindowGeometry(self.k, self.dilation)

    def flat_safe(self) -> np.ndarray:
        """[L, K2] gather table with invalid slots redirected to 0."""
        idx = self.src.reshape(self.h * self.w, -1)
        return np.where(idx < 0, 0, idx)

    def valid_flat(self) -> np.ndarray:
        return self.valid.reshape(self.h * self.w, -1)


@lru_cache(maxsize=64)
def build_window_index(h: int, w: int, k: int, dilation: tuple[int, int]) -> WindowIndex:
    """Window source coordinates for every query position.

    K must be odd so the query can sit at the window center away from
    borders.
    """
    if k % 2 == 0:
        raise ContractError(f"window size must be odd, got {k}")
    rh, rw = dilation
    row_src, row_ok = _axis_windows(h, k, rh)
    col_src, col_ok = _axis_windows(w, k, rw)
    flat = row_src[:, None, :, None] * w + col_src[None, :, None, :]
    valid = row_ok[:, None, :, None] & col_ok[None, :, None, :]
    flat = np.where(valid, flat, -1)
    return WindowIndex(
        h=h,
        w=w,
        k=k,
        dilation=(rh, rw),
        src=flat.reshape(h, w, k * k),
        valid=valid.reshape(h, w, k * k),
    )


@dataclass
class AttentionMaps:
    """Per-head window attention probabilities plus their geometry.

    weights holds [N, heads, H, W, K2]; a single sample matches the
    per-head map laid out as heads x H x W x K2. mask marks the valid window
    slots shared by every head and sample.
    """

    weights: Tensor
    geometry: WindowGeometry
    mask: np.ndarray  # [H, W, K*K] bool

    @property
    def heads(self) -> int:
        return self.weights.shape[1]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


@dataclass
class AttnBranchParams:
    """Separate q/k/v/out projections for one attention branch."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


def _split_heads(t: Tensor, heads: int):
    n, c, h, w = t.shape
    return t.reshape(n, heads, c // heads, h * w)


def windowed_attention(
    x: Tensor,
    params: AttnBranchParams,
    heads: int,
    k: int,
    dilation: tuple[int, int],
) -> tuple[Tensor, AttentionMaps]:
    """Multi-head attention restricted to per-query windows.

    Returns the mixed feature map and the attention maps for reuse.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c % heads != 0:
        raise ConfigError("heads", f"channels ({c}) not divisible by heads ({heads})")
    index = build_window_index(h, w, k, tuple(dilation))
    d = c // heads
    scale = float(d) ** -0.5  # python float: no float32 promotion

    q = _split_heads(pointwise(x, params.wq, params.bq), heads) * scale
    kk = _split_heads(pointwise(x, params.wk, params.bk), heads)
    v = _split_heads(pointwise(x, params.wv, params.bv), heads)

    table = index.flat_safe()
    keep = index.valid_flat()[None, None, :, :]  # broadcast over n, heads
    kg = gather_windows(kk, table)
    logits = mask_fill(window_qk(q, kg), keep)
    weights = softmax_lastaxis(logits)  # [n, heads, L, K2]
    vg = gather_windows(v, table)
    ctx = window_av(weights, vg).reshape(n, c, h, w)
    y = pointwise(ctx, params.wo, params.bo)
    maps = AttentionMaps(
        weights=weights.reshape(n, heads, h, w, k * k),
        geometry=index.geometry,
        mask=index.valid.copy(),
    )
    return y, maps


@dataclass
class AmaParams:
    sla: AttnBranchParams
    dla: AttnBranchParams


def ama_forward(
    x: Tensor,
    params: AmaParams,
    heads_total: int,
    k: int,
) -> tuple[Tensor, AttentionMaps, AttentionMaps]:
    """Dual-branch multi-scale attention with a channel split.

    First half of the channels runs dense sliding attention, second half runs
    the dilated branch with the adaptive rate; outputs are re-concatenated.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c % 2 != 0:
        raise ConfigError("channels", f"channel split needs even C, got {c}")
    if heads_total % 2 != 0:
        raise ConfigError("heads", f"channel split needs even heads, got {heads_total}")
    half = c // 2
    x1 = narrow(x, 1, 0, half)
    x2 = narrow(x, 1, half, half)
    y1, maps_sla = windowed_attention(x1, params.sla, heads_total // 2, k, (1, 1))
    dil = adaptive_dilation(h, w, k)
    y2, maps_dla = windowed_attention(x2, params.dla, heads_total // 2, k, dil)
    return concat([y1, y2], axis=1), maps_sla, maps_dla


def dense_attention_budget() -> int:
    """Byte budget for one dense attention map pair.

    The transient peak per head is two L-by-L buffers (logits plus the
    softmax output). Exceeding the budget raises MemoryError preemptively;
    the kernel's out-of-memory killer cannot be caught after the fact. The
    default derives from total system memory so it is stable per machine;
    A2_MEM_BUDGET_BYTES overrides it.
    """
    import os

    raw = os.environ.get("A2_MEM_BUDGET_BYTES", "")
    if raw:
        return int(raw)
    try:
        import psutil

        return int(psutil.virtual_memory().total * 0.55)
    except ImportError:
        return 2 << 30


def global_attention(x: Tensor, params: AttnBranchParams, heads: int) -> Tensor:
    """Dense all-pairs attention, one head at a time to bound memory.

    Value-equivalent to windowed_attention with a window that covers the
    whole map; used by the benchmark ablation where materializing window
    gathers would be quadratic in memory.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if c % heads != 0:
        raise ConfigError("heads", f"channels ({c}) not divisible by heads ({heads})")
    ell = h * w
    need = 2 * n * ell * ell * x.data.itemsize
    if need > dense_attention_budget():
        raise MemoryError(
            f"dense attention at {h}x{w} needs ~{need / 1e9:.1f} GB transient"
        )
    d = c // heads
    scale = float(d) ** -0.5
    q = _split_heads(pointwise(x, params.wq, params.bq), heads) * scale
    kk = _split_heads(pointwise(x, params.wk, params.bk), heads)
    v = _split_heads(pointwise(x, params.wv, params.bv), heads)
    outs = []
    for hd in range(heads):
        qh = narrow(q, 1, hd, 1).reshape(n, d, ell)
        kh = narrow(kk, 1, hd, 1).reshape(n, d, ell)
        vh = narrow(v, 1, hd, 1).reshape(n, d, ell)
        # logits die as soon as softmax returns; the value product runs on
        # the contiguous weight layout so matmul never copies an L x L view
        weights = softmax_lastaxis(qh.transpose(0, 2, 1) @ kh)
        ctx_t = weights @ vh.transpose(0, 2, 1)  # [n, L, d]
        outs.append(ctx_t.transpose(0, 2, 1))
    ctx = concat(outs, axis=1).reshape(n, c, h, w)
    return pointwise(ctx, params.wo, params.bo)
