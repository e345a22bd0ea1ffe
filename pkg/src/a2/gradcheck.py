"""Finite-difference gradient verification for every differentiable op.

Each registered case builds a random instance, projects the op output to a
scalar with a fixed random weighting, and compares tape gradients against
central differences at sampled coordinates. Coordinates where both sides are
below the finite-difference noise floor count as agreement; see REL_TOL and
ABS_FLOOR.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import ops
from .a2ssm import a2ssm_forward, aggregate_states
from .attention import AttentionMaps, ama_forward, build_window_index, windowed_attention
from .blocks import a2mamba_block, build_block, build_ffn, conv_ffn, mass_forward
from .decoder import build_decoder, segman_v2_decode
from .errors import UsageError
from .params import Initializer, ParameterStore
from .scan import ScanParams, scan_naive, scan_parallel
from .tensor import Tensor, no_grad

REL_TOL = 1e-4
ABS_FLOOR = 1e-6
FD_STEP = 1e-5


@dataclass
class GradCase:
    module: str
    op: str
    build: callable  # rng -> (leaves: dict[str, Tensor], forward: () -> Tensor)

    @property
    def name(self) -> str:
        return f"{self.module}.{self.op}"


def check_case(case: GradCase, seed: int, coords_per_leaf: int = 3):
    """Returns (max_rel_err, shape_desc) for one random instance."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    leaves, forward = case.build(rng)
    loss = forward()
    loss.backward()

    def loss_value() -> float:
        with no_grad():
            return float(forward().data)

    max_err = 0.0
    for name, leaf in leaves.items():
        grad = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        flat = leaf.data.reshape(-1)
        n_coords = min(coords_per_leaf, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        for ci in coords:
            keep = flat[ci]
            flat[ci] = keep + FD_STEP
            up = loss_value()
            flat[ci] = keep - FD_STEP
            down = loss_value()
            flat[ci] = keep
            fd = (up - down) / (2.0 * FD_STEP)
            auto = grad.reshape(-1)[ci]
            rel = abs(auto - fd) / max(1e-8, abs(auto), abs(fd))
            if rel > REL_TOL and abs(auto - fd) <= ABS_FLOOR:
                # both sides below what central differences can resolve
                continue
            max_err = max(max_err, rel)
        leaf.grad = None
    shapes = "x".join(str(d) for d in next(iter(leaves.values())).data.shape)
    return max_err, shapes


# -- case builders ---------------------------------------------------------


class _Projection:
    """Fixed random scalarization, drawn once on first use.

    The same weighting must be reused across the finite-difference
    re-evaluations or the loss itself would change between probes.
    """

    def __init__(self, rng):
        self.rng = rng
        self.r = None

    def __call__(self, out: Tensor) -> Tensor:
        if self.r is None:
            self.r = self.rng.normal(size=out.shape)
        return (out * Tensor(self.r)).sum()


def _case_conv2d(rng):
    mode = rng.integers(3)
    if mode == 0:
        x = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.4, requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        kwargs = dict(padding=1)
    elif mode == 1:
        x = Tensor(rng.normal(size=(1, 4, 7, 7)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 1, 3, 3)) * 0.4, requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        kwargs = dict(padding=2, dilation=2, groups=4)
    else:
        x = Tensor(rng.normal(size=(1, 3, 8, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 3, 3, 3)) * 0.4, requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        kwargs = dict(stride=2, padding=1)
    leaves = {"x": x, "w": w, "b": b}
    proj = _Projection(rng)
    return leaves, lambda: proj(ops.conv2d(x, w, b, **kwargs))


def _case_softmax(rng):
    x = Tensor(rng.normal(size=(3, 4, 7)) * 2, requires_grad=True)
    keep = rng.random((3, 4, 7)) > 0.25
    keep[..., 0] = True  # at least one live slot per slice
    proj = _Projection(rng)
    return {"x": x}, lambda: proj(ops.softmax_lastaxis(ops.mask_fill(x, keep)))


def _case_layer_norm(rng):
    x = Tensor(rng.normal(size=(2, 5, 6)), requires_grad=True)
    g = Tensor(rng.normal(size=6), requires_grad=True)
    b = Tensor(rng.normal(size=6), requires_grad=True)
    proj = _Projection(rng)
    return {"x": x, "gamma": g, "beta": b}, lambda: proj(ops.layer_norm(x, g, b, eps=1e-6))


def _case_silu(rng):
    x = Tensor(rng.normal(size=(4, 9)) * 2, requires_grad=True)
    proj = _Projection(rng)
    return {"x": x}, lambda: proj(ops.silu(x))


def _case_pixel_unshuffle(rng):
    x = Tensor(rng.normal(size=(1, 3, 6, 4)), requires_grad=True)
    proj = _Projection(rng)
    return {"x": x}, lambda: proj(ops.pixel_unshuffle(x, 2))


def _case_bilinear(rng):
    x = Tensor(rng.normal(size=(1, 2, 5, 7)), requires_grad=True)
    out_h = int(rng.integers(2, 11))
    out_w = int(rng.integers(2, 11))
    proj = _Projection(rng)
    return {"x": x}, lambda: proj(ops.bilinear_resize(x, out_h, out_w))


def _attn_params(store, init, prefix, c):
    from .blocks import build_attn_branch

    return build_attn_branch(store, init, prefix, c)


def _case_windowed_attention(rng):
    store = ParameterStore()
    init = Initializer(np.random.default_rng(int(rng.integers(1 << 31))), std=0.3)
    c = 4
    params = _attn_params(store, init, "attn", c)
    x = Tensor(rng.normal(size=(1, c, 5, 6)), requires_grad=True)
    dil = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    leaves = {"x": x, "wq": params.wq, "wv": params.wv, "bo": params.bo}

    proj = _Projection(rng)

    def forward():
        y, _ = windowed_attention(x, params, heads=2, k=3, dilation=dil)
        return proj(y)

    return leaves, forward


def _case_ama(rng):
    from .blocks import build_mixer

    store = ParameterStore()
    init = Initializer(np.random.default_rng(int(rng.integers(1 << 31))), std=0.3)
    mixer = build_mixer(store, init, "m", 8)
    x = Tensor(rng.normal(size=(1, 8, 6, 6)), requires_grad=True)
    leaves = {"x": x, "sla.wk": mixer.ama.sla.wk, "dla.wv": mixer.ama.dla.wv}

    proj = _Projection(rng)

    def forward():
        y, _, _ = ama_forward(x, mixer.ama, heads_total=2, k=3)
        return proj(y)

    return leaves, forward


def _scan_leaves(rng, n, c, ell):
    return {
        "u": Tensor(rng.normal(size=(n, c, ell)), requires_grad=True),
        "delta": Tensor(rng.uniform(0.2, 1.2, size=(n, c, ell)), requires_grad=True),
        "b": Tensor(rng.normal(size=(n, 1, ell)), requires_grad=True),
        "a_log": Tensor(rng.normal(size=c) * 0.4, requires_grad=True),
        "d": Tensor(rng.normal(size=c), requires_grad=True),
    }


def _case_scan(which):
    fn = scan_naive if which == "naive" else scan_parallel

    def build(rng):
        n, c, ell = 1, 2, int(rng.integers(3, 12))
        leaves = _scan_leaves(rng, n, c, ell)
        p = ScanParams(
            delta=leaves["delta"], b=leaves["b"],
            cprime=Tensor(rng.normal(size=(n, 1, ell))),
            a_log=leaves["a_log"], d=leaves["d"],
        )
        proj = _Projection(rng)
        return leaves, lambda: proj(fn(leaves["u"], p).s)

    return build


def _random_maps(rng, n, heads, h, w, k, dilation, grad=False):
    index = build_window_index(h, w, k, dilation)
    raw = rng.uniform(0.05, 1.0, size=(n, heads, h, w, k * k)) * index.valid
    weights = raw / raw.sum(axis=-1, keepdims=True)
    return AttentionMaps(
        Tensor(weights, requires_grad=grad), index.geometry, index.valid.copy()
    )


def _case_aggregate(rng):
    n, c, h, w, k = 1, 4, 5, 5, 3
    s = Tensor(rng.normal(size=(n, c, h, w)), requires_grad=True)
    m1 = _random_maps(rng, n, 1, h, w, k, (1, 1), grad=True)
    m2 = _random_maps(rng, n, 1, h, w, k, (1, 1), grad=True)
    leaves = {"s": s, "weights_sla": m1.weights, "weights_dla": m2.weights}
    proj = _Projection(rng)
    return leaves, lambda: proj(aggregate_states(s, m1, m2))


def _case_a2ssm(rng):
    from .blocks import build_scan_proj

    store = ParameterStore()
    init = Initializer(np.random.default_rng(int(rng.integers(1 << 31))), std=0.3)
    c = 4
    proj = build_scan_proj(store, init, "scan", c)
    y = Tensor(rng.normal(size=(1, c, 4, 4)), requires_grad=True)
    m1 = _random_maps(rng, 1, 1, 4, 4, 3, (1, 1))
    m2 = _random_maps(rng, 1, 1, 4, 4, 3, (1, 1))
    leaves = {"y": y, "delta_w": proj.delta_w, "a_log": proj.a_log, "d": proj.d}
    scalarize = _Projection(rng)
    return leaves, lambda: scalarize(a2ssm_forward(y, m1, m2, proj))


def _case_conv_ffn(rng):
    store = ParameterStore()
    init = Initializer(np.random.default_rng(int(rng.integers(1 << 31))), std=0.3)
    fp = build_ffn(store, init, "ffn", 4, 2)
    x = Tensor(rng.normal(size=(1, 4, 5, 5)), requires_grad=True)
    leaves = {"x": x, "fc1_w": fp.fc1_w, "dw_w": fp.dw_w, "fc2_w": fp.fc2_w}
    proj = _Projection(rng)
    return leaves, lambda: proj(conv_ffn(x, fp, 2))


def _case_mass(rng):
    from .blocks import build_mixer

    store = ParameterStore()
    init = Initializer(np.random.default_rng(int(rng.integers(1 << 31))), std=0.25)
    mp = build_mixer(store, init, "m", 8)
    x = Tensor(rng.normal(size=(1, 8, 5, 5)), requires_grad=True)
    leaves = {
        "x": x,
        "gate_w": mp.gate_w,
        "scan.b_w": mp.scan.b_w,
        "out_w": mp.out_w,
    }
    proj = _Projection(rng)
    return leaves, lambda: proj(mass_forward(x, mp, k=3, heads=2))


def _case_block(rng):
    store = ParameterStore()
    init = Initializer(np.random.default_rng(int(rng.integers(1 << 31))), std=0.2)
    bp = build_block(store, init, "blk", 8, expansion=2)
    x = Tensor(rng.normal(size=(1, 8, 10, 10)), requires_grad=True)
    leaves = {
        "x": x,
        "dw_w": bp.dw_w,
        "norm1_g": bp.norm1_g,
        "mixer.scan.delta_w": bp.mixer.scan.delta_w,
        "mixer.sla.wq": bp.mixer.ama.sla.wq,
        "ffn.fc2_w": bp.ffn.fc2_w,
    }
    proj = _Projection(rng)
    return leaves, lambda: proj(a2mamba_block(x, bp, k=3, heads=2, expansion=2))


def _case_decoder(rng):
    dp = build_decoder(
        [8, 16, 32, 64], num_classes=3, c=16, c_low=8, heads=2, expansion=2,
        seed=int(rng.integers(1 << 31)),
    )
    for _, t in dp.store.items():
        t.data = rng.normal(size=t.data.shape) * 0.15
    base = 32
    feats = [
        Tensor(rng.normal(size=(1, ch, base // (4 * 2**i), base // (4 * 2**i))), requires_grad=True)
        for i, ch in enumerate([8, 16, 32, 64])
    ]
    leaves = {
        "f1": feats[0],
        "f4": feats[3],
        "refine.mixer.scan.a_log": dp.store["decoder.refine.mixer.scan.a_log"],
        "refine.rep5_w": dp.store["decoder.refine.rep5_w"],
        "cls_w": dp.store["decoder.cls_w"],
    }
    proj = _Projection(rng)
    return leaves, lambda: proj(segman_v2_decode(*feats, dp))


REGISTRY = [
    GradCase("tensor_core", "conv2d", _case_conv2d),
    GradCase("tensor_core", "softmax_lastaxis", _case_softmax),
    GradCase("tensor_core", "layer_norm", _case_layer_norm),
    GradCase("tensor_core", "silu", _case_silu),
    GradCase("tensor_core", "pixel_unshuffle", _case_pixel_unshuffle),
    GradCase("tensor_core", "bilinear_resize", _case_bilinear),
    GradCase("local_attention", "windowed_attention", _case_windowed_attention),
    GradCase("local_attention", "ama_forward", _case_ama),
    GradCase("selective_scan", "scan_naive", _case_scan("naive")),
    GradCase("selective_scan", "scan_parallel", _case_scan("parallel")),
    GradCase("a2ssm", "aggregate_states", _case_aggregate),
    GradCase("a2ssm", "a2ssm_forward", _case_a2ssm),
    GradCase("mass_block", "conv_ffn", _case_conv_ffn),
    GradCase("mass_block", "mass_forward", _case_mass),
    GradCase("mass_block", "a2mamba_block", _case_block),
    GradCase("mm_refine", "segman_v2_decode", _case_decoder),
]


def select_cases(filter_name: str) -> list[GradCase]:
    if filter_name in ("", "all"):
        return list(REGISTRY)
    picked = [
        c
        for c in REGISTRY
        if filter_name in (c.module, c.op, c.name)
    ]
    if not picked:
        known = sorted({c.module for c in REGISTRY})
        raise UsageError(
            f"unknown gradcheck filter '{filter_name}'; modules: {', '.join(known)}"
        )
    return picked


def run_gradcheck(filter_name: str = "all", seed: int = 0, trials: int = 20):
    """Returns (csv_text, worst_by_op, all_ok)."""
    cases = select_cases(filter_name)
    rows = []
    all_ok = True
    for case in cases:
        worst = 0.0
        shape = ""
        for trial in range(trials):
            err, shape = check_case(case, seed=seed * 100003 + trial)
            worst = max(worst, err)
        ok = worst <= REL_TOL
        all_ok = all_ok and ok
        rows.append((case.name, shape, worst))
    buf = io.StringIO()
    buf.write("op,shape,max_rel_err\n")
    for name, shape, worst in rows:
        buf.write(f"{name},{shape},{worst:.6e}\n")
    return buf.getvalue(), rows, all_ok
