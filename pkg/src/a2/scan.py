"""Selective scan with scalar state per channel.

The recurrence per batch item and channel is

    h_t = exp(delta_t * A_c) * h_{t-1} + delta_t * b_t * u_t,   h_{-1} = 0

with A_c = -exp(a_log_c) strictly negative so the decay gain stays in (0, 1).
Two evaluators share the same value contract: a sequential reference loop and
a doubling prefix scan over the associative gain/offset composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .ops import project_channels, softplus
from .tensor import Tensor, _make, as_tensor


@dataclass
class ScanProjParams:
    """Learnables that turn a feature map into per-token scan inputs."""

    delta_w: Tensor  # [C, C]
    delta_b: Tensor  # [C]
    b_w: Tensor  # [1, C]
    b_b: Tensor  # [1]
    c_w: Tensor  # [1, C]
    c_b: Tensor  # [1]
    a_log: Tensor  # [C]
    d: Tensor  # [C]


@dataclass
class ScanParams:
    """Per-token scan inputs plus the per-channel learnables."""

    delta: Tensor  # [N, C, L], positive
    b: Tensor  # [N, 1, L]
    cprime: Tensor  # [N, 1, L]
    a_log: Tensor  # [C]
    d: Tensor  # [C]


@dataclass
class HiddenStateMap:
    """Causal scan states in raster order, [N, C, L] with L = H*W."""

    s: Tensor


def make_scan_params(y: Tensor, proj: ScanProjParams) -> ScanParams:
    """Project a feature map to the input-dependent scan sequences.

    y may be [N, C, H, W] (flattened in raster order) or already [N, C, L].
    delta goes through softplus so every step size is positive.
    """
    y = as_tensor(y)
    if y.ndim == 4:
        n, c, h, w = y.shape
        y = y.reshape(n, c, h * w)
    delta = softplus(project_channels(y, proj.delta_w, proj.delta_b))
    b = project_channels(y, proj.b_w, proj.b_b)
    cprime = project_channels(y, proj.c_w, proj.c_b)
    return ScanParams(delta=delta, b=b, cprime=cprime, a_log=proj.a_log, d=proj.d)


def affine_compose(p, q):
    """Associative composition of (gain, offset) recurrence segments.

    Applying p then q to a state h gives q_g*(p_g*h + p_x) + q_x, hence the
    combined segment (p_g*q_g, p_x*q_g + q_x).
    """
    pg, px = p
    qg, qx = q
    return pg * qg, px * qg + qx


def _scan_grad(gains: np.ndarray, h: np.ndarray, g: np.ndarray):
    """Shared backward for both scan variants.

    lam_t = g_t + gains_{t+1} * lam_{t+1} (a reverse scan); then
    d/d offset_t = lam_t and d/d gain_t = lam_t * h_{t-1}.
    """
    ell = gains.shape[-1]
    lam = np.empty_like(g)
    lam[..., ell - 1] = g[..., ell - 1]
    for t in range(ell - 2, -1, -1):
        lam[..., t] = g[..., t] + gains[..., t + 1] * lam[..., t + 1]
    hprev = np.empty_like(h)
    hprev[..., 0] = 0.0
    hprev[..., 1:] = h[..., :-1]
    return lam, lam * hprev


def linear_scan_naive(gain, offset) -> Tensor:
    """Sequential evaluation of h_t = gain_t * h_{t-1} + offset_t."""
    gain, offset = as_tensor(gain), as_tensor(offset)
    gd, xd = gain.data, offset.data
    ell = gd.shape[-1]
    h = np.empty_like(xd)
    h[..., 0] = xd[..., 0]
    for t in range(1, ell):
        h[..., t] = gd[..., t] * h[..., t - 1] + xd[..., t]

    def bwd(g):
        lam, dgain = _scan_grad(gd, h, g)
        if offset.requires_grad:
            offset._accumulate(lam)
        if gain.requires_grad:
            gain._accumulate(dgain)

    return _make(h, (gain, offset), bwd)


def linear_scan_parallel(gain, offset) -> Tensor:
    """Doubling-step inclusive prefix scan under affine composition."""
    gain, offset = as_tensor(gain), as_tensor(offset)
    gd, xd = gain.data, offset.data
    ell = gd.shape[-1]
    gtot = gd.copy()
    h = xd.copy()
    step = 1
    while step < ell:
        # combine each segment with the one `step` places to its left
        h[..., step:] = h[..., step:] + h[..., :-step] * gtot[..., step:]
        gtot[..., step:] = gtot[..., step:] * gtot[..., :-step]
        step *= 2

    def bwd(g):
        # reverse scan lam_t = g_t + gains_{t+1} lam_{t+1} via the same
        # doubling trick on the flipped sequence
        gains_next = np.ones_like(gd)
        gains_next[..., :-1] = gd[..., 1:]
        rg = gains_next[..., ::-1].copy()
        lam = g[..., ::-1].copy()
        step = 1
        while step < ell:
            lam[..., step:] = lam[..., step:] + lam[..., :-step] * rg[..., step:]
            rg[..., step:] = rg[..., step:] * rg[..., :-step]
            step *= 2
        lam = lam[..., ::-1]
        if offset.requires_grad:
            offset._accumulate(lam.copy())
        if gain.requires_grad:
            hprev = np.empty_like(h)
            hprev[..., 0] = 0.0
            hprev[..., 1:] = h[..., :-1]
            gain._accumulate(lam * hprev)

    return _make(h, (gain, offset), bwd)


def _gain_offset(u: Tensor, p: ScanParams):
    if np.any(p.delta.data <= 0.0):
        raise ContractError("scan requires strictly positive delta")
    a = -(p.a_log.exp())  # [C], strictly negative
    gain = (p.delta * a.reshape(1, -1, 1)).exp()
    offset = p.delta * p.b * u
    return gain, offset


def scan_naive(u: Tensor, p: ScanParams) -> HiddenStateMap:
    """Reference sequential selective scan."""
    gain, offset = _gain_offset(u, p)
    return HiddenStateMap(s=linear_scan_naive(gain, offset))


def scan_parallel(u: Tensor, p: ScanParams) -> HiddenStateMap:
    """Prefix-scan selective scan; same values as scan_naive."""
    gain, offset = _gain_offset(u, p)
    return HiddenStateMap(s=linear_scan_parallel(gain, offset))
