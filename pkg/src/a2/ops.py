"""Neural-network operations built on the tensor tape.

Everything here is a differentiable function of Tensor inputs. Ops that are
awkward or slow to express as compositions (convolution, masked softmax,
window gather, bilinear resize) are primitives with hand-written backward
closures; the rest are compositions.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import special

from .errors import ContractError, DimensionError
from .tensor import Tensor, _make, as_tensor, unbroadcast

NEG_INF = -np.inf


# -- activations --------------------------------------------------------------


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = special.expit(x.data)

    def bwd(g):
        x._accumulate(g * out * (1.0 - out))

    return _make(out, (x,), bwd)


def silu(x) -> Tensor:
    """x * sigmoid(x)."""
    x = as_tensor(x)
    s = special.expit(x.data)
    out = x.data * s

    def bwd(g):
        x._accumulate(g * (s + x.data * s * (1.0 - s)))

    return _make(out, (x,), bwd)


INV_SQRT2 = float(np.sqrt(0.5))
INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x) -> Tensor:
    """Exact Gaussian error linear unit, x * Phi(x).

    Constants stay Python floats so float32 inputs are not promoted.
    """
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data * INV_SQRT2))
    out = x.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * INV_SQRT_2PI
        x._accumulate(g * (cdf + x.data * pdf))

    return _make(out, (x,), bwd)


def softplus(x) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)

    def bwd(g):
        x._accumulate(g * special.expit(x.data))

    return _make(out, (x,), bwd)


# -- softmax ------------------------------------------------------------------


def softmax_lastaxis(x) -> Tensor:
    """Softmax over the last axis with max subtraction.

    Entries equal to -inf act as mask sentinels and map to exactly 0 in the
    output (and receive exactly 0 gradient). A slice that is entirely masked
    produces all zeros.
    """
    x = as_tensor(x)
    from .tensor import check_last_axis

    check_last_axis(x)
    z = x.data
    m = np.max(z, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = z - m
    np.exp(out, out=out)  # in place on the shifted copy, never on x
    denom = out.sum(axis=-1, keepdims=True)
    safe = np.where(denom == 0.0, 1.0, denom)
    np.divide(out, safe, out=out)

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        x._accumulate(out * (g - inner))

    return _make(out, (x,), bwd)


def mask_fill(x, keep: np.ndarray, value=NEG_INF) -> Tensor:
    """Replace entries where ``keep`` is False by a constant.

    The constant positions are not functions of x, so their gradient is
    exactly zero.
    """
    x = as_tensor(x)
    keep = np.asarray(keep, dtype=bool)
    out = np.where(keep, x.data, value)

    def bwd(g):
        x._accumulate(np.where(keep, g, 0.0))

    return _make(out, (x,), bwd)


# -- normalization ------------------------------------------------------------


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.data.shape[-1]
    if c < 1:
        raise DimensionError("layer_norm needs a non-empty last axis")
    if eps <= 0:
        raise DimensionError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate(
                unbroadcast(g * xhat, gamma.data.shape)
            )
        if beta.requires_grad:
            beta._accumulate(unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            gh = g * gamma.data
            term1 = gh.mean(axis=-1, keepdims=True)
            term2 = (gh * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gh - term1 - xhat * term2))

    return _make(out, (x, gamma, beta), bwd)


def channel_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Layer norm over channels of an NCHW map, one position at a time."""
    xt = x.transpose(0, 2, 3, 1)
    yt = layer_norm(xt, gamma, beta, eps)
    return yt.transpose(0, 3, 1, 2)


# -- convolution --------------------------------------------------------------


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1, groups=1) -> Tensor:
    """2D cross-correlation with zero padding, strides, dilation and groups.

    x: [N, Cin, H, W], weight: [Cout, Cin/groups, kh, kw], bias: [Cout].
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if bias is not None:
        bias = as_tensor(bias)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    n, cin, h, w = x.data.shape
    cout, cin_g, kh, kw = weight.data.shape
    if cin % groups != 0:
        raise DimensionError(
            f"input channel axis ({cin}) not divisible by groups ({groups})"
        )
    if cout % groups != 0:
        raise DimensionError(
            f"output channel axis ({cout}) not divisible by groups ({groups})"
        )
    if cin_g != cin // groups:
        raise DimensionError(
            f"weight channel axis expects {cin // groups} per group, got {cin_g}"
        )
    span_h = h + 2 * ph - dh * (kh - 1) - 1
    span_w = w + 2 * pw - dw * (kw - 1) - 1
    if span_h < 0:
        raise DimensionError("kernel does not fit padded input along axis H")
    if span_w < 0:
        raise DimensionError("kernel does not fit padded input along axis W")
    ho = span_h // sh + 1
    wo = span_w // sw + 1

    xp = np.zeros((n, cin, h + 2 * ph, w + 2 * pw), dtype=x.data.dtype)
    xp[:, :, ph : ph + h, pw : pw + w] = x.data
    depthwise = groups == cin == cout
    dense = groups == 1
    if not (depthwise or dense):
        xg = xp.reshape(n, groups, cin_g, h + 2 * ph, w + 2 * pw)
    wg = weight.data.reshape(groups, cout // groups, cin_g, kh, kw)

    slices = []
    for ki in range(kh):
        for kj in range(kw):
            rs = slice(ki * dh, ki * dh + (ho - 1) * sh + 1, sh)
            cs = slice(kj * dw, kj * dw + (wo - 1) * sw + 1, sw)
            slices.append((ki, kj, rs, cs))

    out = np.zeros((n, cout, ho, wo), dtype=x.data.dtype)
    if depthwise:
        wvec = weight.data.reshape(cout, kh, kw)
        for ki, kj, rs, cs in slices:
            out += xp[:, :, rs, cs] * wvec[None, :, ki, kj, None, None]
    elif dense:
        for ki, kj, rs, cs in slices:
            # [cout, cin] x [n, cin, ho, wo] over cin via BLAS
            piece = np.tensordot(weight.data[:, :, ki, kj], xp[:, :, rs, cs], axes=(1, 1))
            out += piece.transpose(1, 0, 2, 3)
    else:
        for ki, kj, rs, cs in slices:
            out += np.einsum(
                "ngihw,goi->ngohw", xg[:, :, :, rs, cs], wg[:, :, :, ki, kj],
                optimize=False,
            ).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def bwd(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            if depthwise:
                wvec = weight.data.reshape(cout, kh, kw)
                for ki, kj, rs, cs in slices:
                    gxp[:, :, rs, cs] += g * wvec[None, :, ki, kj, None, None]
            elif dense:
                for ki, kj, rs, cs in slices:
                    piece = np.tensordot(weight.data[:, :, ki, kj], g, axes=(0, 1))
                    gxp[:, :, rs, cs] += piece.transpose(1, 0, 2, 3)
            else:
                gq = g.reshape(n, groups, cout // groups, ho, wo)
                gxg = gxp.reshape(n, groups, cin_g, h + 2 * ph, w + 2 * pw)
                for ki, kj, rs, cs in slices:
                    gxg[:, :, :, rs, cs] += np.einsum(
                        "ngohw,goi->ngihw", gq, wg[:, :, :, ki, kj], optimize=False
                    )
            x._accumulate(gxp[:, :, ph : ph + h, pw : pw + w])
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            if depthwise:
                for ki, kj, rs, cs in slices:
                    gw[:, 0, ki, kj] = (g * xp[:, :, rs, cs]).sum(axis=(0, 2, 3))
            elif dense:
                for ki, kj, rs, cs in slices:
                    gw[:, :, ki, kj] = np.tensordot(g, xp[:, :, rs, cs], axes=([0, 2, 3], [0, 2, 3]))
            else:
                gq = g.reshape(n, groups, cout // groups, ho, wo)
                gwg = gw.reshape(groups, cout // groups, cin_g, kh, kw)
                for ki, kj, rs, cs in slices:
                    gwg[:, :, :, ki, kj] = np.einsum(
                        "ngohw,ngihw->goi", gq, xg[:, :, :, rs, cs], optimize=False
                    )
            weight._accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bwd)


def pointwise(x, weight, bias=None) -> Tensor:
    """1x1 convolution over an NCHW map (channel projection)."""
    return conv2d(x, weight, bias, stride=1, padding=0)


def project_channels(x, weight, bias=None) -> Tensor:
    """Channel projection of an [N, C, L] sequence via matmul.

    weight: [Cout, Cin], bias: [Cout].
    """
    w = as_tensor(weight)
    y = w @ x  # [Cout,Cin] @ [N,Cin,L] -> [N,Cout,L]
    if bias is not None:
        b = as_tensor(bias)
        y = y + b.reshape(1, -1, 1)
    return y


# -- pixel shuffle ------------------------------------------------------------


def pixel_unshuffle(x, r: int) -> Tensor:
    """Space-to-depth: [N,C,H,W] -> [N,C*r*r,H/r,W/r], raster order per block."""
    x = as_tensor(x)
    n, c, h, w = x.data.shape
    if h % r != 0:
        raise DimensionError(f"H={h} not divisible by unshuffle factor {r}")
    if w % r != 0:
        raise DimensionError(f"W={w} not divisible by unshuffle factor {r}")
    t = x.reshape(n, c, h // r, r, w // r, r)
    t = t.transpose(0, 1, 3, 5, 2, 4)
    return t.reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x, r: int) -> Tensor:
    """Depth-to-space, the exact inverse of pixel_unshuffle."""
    x = as_tensor(x)
    n, c, h, w = x.data.shape
    if c % (r * r) != 0:
        raise DimensionError(f"C={c} not divisible by {r * r}")
    t = x.reshape(n, c // (r * r), r, r, h, w)
    t = t.transpose(0, 1, 4, 2, 5, 3)
    return t.reshape(n, c // (r * r), h * r, w * r)


# -- bilinear resize ----------------------------------------------------------


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-interpolation matrix for align_corners=false resizing."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[o, lo] += 1.0 - frac
        m[o, hi] += frac
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear interpolation of an NCHW map (align_corners=false)."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError("target size must be at least 1x1")
    n, c, h, w = x.data.shape
    rh = _interp_matrix(h, out_h).astype(x.data.dtype)
    rw = _interp_matrix(w, out_w).astype(x.data.dtype)
    out = np.einsum("oh,nchw,pw->ncop", rh, x.data, rw, optimize=True)

    def bwd(g):
        x._accumulate(np.einsum("oh,ncop,pw->nchw", rh, g, rw, optimize=True))

    return _make(out, (x,), bwd)


# -- windowed gather / attention contractions ---------------------------------


def gather_windows(x, idx: np.ndarray) -> Tensor:
    """out[..., l, k] = x[..., idx[l, k]] for an [L, K2] index table.

    The index must be pre-sanitized (no negatives); invalid slots are handled
    by masking downstream. Backward scatters with bincount.
    """
    x = as_tensor(x)
    ell = x.data.shape[-1]
    out = x.data[..., idx]

    def bwd(g):
        lead = int(np.prod(x.data.shape[:-1], dtype=np.int64))
        gflat = g.reshape(lead, -1)
        offsets = np.arange(lead, dtype=np.int64)[:, None] * ell
        flat_idx = (idx.reshape(1, -1) + offsets).ravel()
        weights = np.ascontiguousarray(gflat, dtype=np.float64).ravel()
        acc = np.bincount(flat_idx, weights=weights, minlength=lead * ell)
        if acc.dtype != x.data.dtype:
            acc = acc.astype(x.data.dtype)
        x._accumulate(acc.reshape(x.data.shape))

    return _make(out, (x,), bwd)


def window_qk(q, kg) -> Tensor:
    """logits[n,h,l,k] = sum_d q[n,h,d,l] * kg[n,h,d,l,k]."""
    q, kg = as_tensor(q), as_tensor(kg)
    out = np.einsum("nhdl,nhdlk->nhlk", q.data, kg.data, optimize=False)

    def bwd(g):
        if q.requires_grad:
            q._accumulate(np.einsum("nhlk,nhdlk->nhdl", g, kg.data, optimize=False))
        if kg.requires_grad:
            kg._accumulate(
                np.einsum("nhdl,nhlk->nhdlk", q.data, g, optimize=False)
            )

    return _make(out, (q, kg), bwd)


def window_av(w, vg) -> Tensor:
    """ctx[n,h,d,l] = sum_k w[n,h,l,k] * vg[n,h,d,l,k]."""
    w, vg = as_tensor(w), as_tensor(vg)
    out = np.einsum("nhlk,nhdlk->nhdl", w.data, vg.data, optimize=False)

    def bwd(g):
        if w.requires_grad:
            w._accumulate(np.einsum("nhdl,nhdlk->nhlk", g, vg.data, optimize=False))
        if vg.requires_grad:
            vg._accumulate(np.einsum("nhdl,nhlk->nhdlk", g, w.data, optimize=False))

    return _make(out, (w, vg), bwd)


# -- misc ----------------------------------------------------------------------


def drop_path(x, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Stochastic depth on the batch axis; identity in evaluation mode."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("drop_path in training mode needs a generator")
    x = as_tensor(x)
    n = x.data.shape[0]
    keep = (rng.random(n) >= rate).astype(x.data.dtype) / (1.0 - rate)
    mask = keep.reshape((n,) + (1,) * (x.data.ndim - 1))
    return x * Tensor(mask)


def global_avg_pool(x) -> Tensor:
    """NCHW -> NC11 spatial mean."""
    return x.mean(axis=(2, 3), keepdims=True)
