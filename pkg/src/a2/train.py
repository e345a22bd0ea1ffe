"""Adam optimizer, cross-entropy loss, and the toy training loop."""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from .data import GratingTask
from .fixtures import save_checkpoint
from .model import Model, ModelConfig, build_model, forward_classify
from .params import ParameterStore
from .tensor import Tensor, no_grad

LEARNING_RATE = 1e-3
BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class Adam:
    """Adaptive-moment updates with bias correction, no schedule."""

    def __init__(self, store: ParameterStore, lr: float = LEARNING_RATE):
        self.store = store
        self.lr = lr
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self):
        self.step_count += 1
        b1c = 1.0 - BETA1**self.step_count
        b2c = 1.0 - BETA2**self.step_count
        for name, t in self.store.items():
            if t.grad is None:
                continue
            g = t.grad
            m = self.m[name]
            v = self.v[name]
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            t.data = t.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + EPS)
        self.store.zero_grad()


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log likelihood under a softmax over the last axis."""
    n, k = logits.shape
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))  # constant shift
    z = logits - shift
    log_norm = z.exp().sum(axis=-1, keepdims=True).log()
    logp = z - log_norm
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    return -(logp * Tensor(onehot)).sum() / n


def evaluate_accuracy(model: Model, batches) -> float:
    hits = 0
    total = 0
    with no_grad():
        for xs, ys in batches:
            logits = forward_classify(model, xs)
            hits += int((logits.data.argmax(axis=-1) == ys).sum())
            total += len(ys)
    return hits / total


def materialize_batches(task: GratingTask, indices, batch: int = 250):
    return [
        task.batch(indices[lo : lo + batch]) for lo in range(0, len(indices), batch)
    ]


def train_toy(
    cfg: ModelConfig,
    steps: int,
    seed: int,
    out_dir,
    log_every: int = 100,
    quiet: bool = False,
):
    """Train on the grating task; writes metrics.csv and a final checkpoint.

    Returns a summary dict with the initial loss and final test accuracy.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg, seed=seed)
    task = GratingTask(seed=seed)
    opt = Adam(model.store)

    root = np.random.SeedSequence(seed)
    batch_ss, path_ss = root.spawn(2)
    batch_rng = np.random.default_rng(batch_ss)
    path_rng = np.random.default_rng(path_ss)

    train_idx = task.train_indices()
    test_batches = materialize_batches(task, task.test_indices())
    rows = []
    initial_loss = None
    started = time.time()

    def log(step, loss_value):
        acc = evaluate_accuracy(model, test_batches)
        rows.append((step, loss_value, acc))
        if not quiet:
            print(
                f"step {step:>5}  loss {loss_value:.4f}  test_acc {acc:.4f}  "
                f"({time.time() - started:.0f}s)",
                flush=True,
            )
        return acc

    final_acc = None
    for step in range(steps):
        picks = batch_rng.choice(train_idx, size=cfg.batch_size, replace=False)
        xs, ys = task.batch(picks)
        logits = forward_classify(model, xs, training=True, rng=path_rng)
        loss = cross_entropy(logits, ys)
        if initial_loss is None:
            initial_loss = float(loss.data)
        loss.backward()
        opt.step()
        if (step + 1) % log_every == 0:
            final_acc = log(step + 1, float(loss.data))

    if steps == 0 or final_acc is None:
        if initial_loss is None:
            xs, ys = task.batch(train_idx[: max(cfg.batch_size, 2)])
            with no_grad():
                initial_loss = float(cross_entropy(forward_classify(model, xs), ys).data)
        final_acc = log(steps, initial_loss)

    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "test_acc"])
        for step, loss_value, acc in rows:
            writer.writerow([step, f"{loss_value:.6f}", f"{acc:.4f}"])

    save_checkpoint(out_dir / "checkpoint", model.store)
    return {
        "initial_loss": initial_loss,
        "final_test_acc": final_acc,
        "steps": steps,
        "model": model,
    }
