"""Forward-pass scaling benchmark across input resolutions.

Benchmarks the hybrid model and a dense global-attention ablation (window
covering the whole map, scan disabled) at each resolution, recording wall
time and the tensor-payload high-water mark. Least-squares slopes of
log(time) against log(token count) summarize the scaling law.
"""

from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .model import ModelConfig, build_model, forward_classify
from .tensor import meter, no_grad, use_dtype

CSV_SCHEMA = "a2bench,v1"
CSV_HEADER = "model,resolution,tokens,wall_ms_mean,wall_ms_std,peak_bytes"


def token_count(resolution: int) -> int:
    """Total tokens across the /4, /8, /16, /32 stage schedule."""
    return sum((resolution // f) ** 2 for f in (4, 8, 16, 32))


def ablation_config(cfg: ModelConfig) -> ModelConfig:
    return replace(cfg, attention_mode="global", ssm_mode="none")


def _time_forward(model, cfg, res, batch, reps, dtype):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, cfg.in_channels, res, res)).astype(dtype)
    times = []
    meter.reset()
    with no_grad():
        forward_classify(model, x)  # warmup outside the meter window
        meter.active = True
        meter.reset()
        try:
            for _ in range(reps):
                t0 = time.perf_counter()
                forward_classify(model, x)
                times.append((time.perf_counter() - t0) * 1000.0)
        finally:
            meter.active = False
    return times, meter.peak


def run_bench(
    cfg: ModelConfig,
    resolutions: list[int],
    batch: int = 1,
    reps: int = 5,
    dtype=np.float32,
    quiet: bool = False,
):
    """Returns (rows, slopes). Rows OOM-degrade instead of aborting."""
    rows = []
    slopes = {}
    for name, mcfg in (("mass", cfg), ("global_attention", ablation_config(cfg))):
        with use_dtype(dtype):
            model = build_model(mcfg, seed=0)
        pts = []
        for res in resolutions:
            tokens = token_count(res)
            try:
                times, peak = _time_forward(model, mcfg, res, batch, reps, dtype)
                mean = float(np.mean(times))
                std = float(np.std(times))
                rows.append((name, res, tokens, f"{mean:.3f}", f"{std:.3f}", peak))
                pts.append((tokens, mean))
                if not quiet:
                    print(f"{name} @ {res}: {mean:.1f} ms (peak {peak / 1e6:.0f} MB)", flush=True)
            except MemoryError:
                rows.append((name, res, tokens, "oom", "oom", "oom"))
                if not quiet:
                    print(f"{name} @ {res}: oom", flush=True)
        if len(pts) >= 2:
            lx = np.log([p[0] for p in pts])
            ly = np.log([p[1] for p in pts])
            slopes[name] = float(np.polyfit(lx, ly, 1)[0])
    return rows, slopes


def write_csv(path, rows):
    """Append-safe: the schema header is written only to a fresh file."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a") as fh:
        if fresh:
            fh.write(CSV_SCHEMA + "\n")
            fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
