"""Synthetic task determinism and trainer mechanics (short runs only)."""

import numpy as np
import pytest

from a2.data import (
    DISTRACTOR_AMP,
    DOMINANT_AMP,
    NUM_CLASSES,
    TEST_SIZE,
    TRAIN_SIZE,
    GratingTask,
    pattern_bank,
)
from a2.model import ModelConfig
from a2.params import ParameterStore
from a2.tensor import Tensor
from a2.train import Adam, cross_entropy, train_toy


def toy_cfg(**overrides):
    kw = dict(
        channels=[8, 16, 32, 48], blocks=[1, 1, 2, 1], heads=[2, 2, 2, 2],
        window_sizes=[5, 5, 3, 3], num_classes=10, in_channels=1,
        drop_path=0.05, batch_size=8,
    )
    kw.update(overrides)
    return ModelConfig(**kw).validate()


class TestGratingTask:
    def test_deterministic_per_index(self):
        a = GratingTask(seed=3).sample(17)
        b = GratingTask(seed=3).sample(17)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1] == b[1]

    def test_different_seed_different_images(self):
        a = GratingTask(seed=3).sample(17)
        b = GratingTask(seed=4).sample(17)
        assert np.abs(a[0] - b[0]).max() > 0

    def test_split_sizes(self):
        task = GratingTask(seed=0)
        assert len(task.train_indices()) == TRAIN_SIZE
        assert len(task.test_indices()) == TEST_SIZE
        assert TRAIN_SIZE == 8000 and TEST_SIZE == 2000

    def test_labels_roughly_balanced(self):
        task = GratingTask(seed=0)
        _, ys = task.batch(range(500))
        counts = np.bincount(ys, minlength=NUM_CLASSES)
        assert counts.min() > 20

    def test_dominant_pattern_dominates(self):
        # the labeled template carries the largest coefficient by design
        assert DOMINANT_AMP > DISTRACTOR_AMP
        bank = pattern_bank()
        task = GratingTask(seed=1)
        img, label = task.sample(5)
        flat_bank = bank.reshape(NUM_CLASSES, -1)
        coeffs = np.linalg.lstsq(flat_bank.T, img.reshape(-1), rcond=None)[0]
        assert coeffs.argmax() == label

    def test_templates_distinct(self):
        bank = pattern_bank().reshape(NUM_CLASSES, -1)
        gram = bank @ bank.T
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() < 0.7 * gram.diagonal().min()


class TestLossAndOptimizer:
    def test_uniform_logits_give_log_k(self):
        logits = Tensor(np.zeros((4, 10)))
        loss = cross_entropy(logits, np.array([0, 3, 5, 9]))
        assert float(loss.data) == pytest.approx(np.log(10.0), abs=1e-12)

    def test_cross_entropy_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(3, 5))
        labels = np.array([1, 4, 0])
        logits = Tensor(z.copy(), requires_grad=True)
        cross_entropy(logits, labels).backward()
        e = np.exp(z - z.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(3), labels] -= 1.0
        np.testing.assert_allclose(logits.grad, p / 3.0, atol=1e-12)

    def test_adam_first_step_size_is_lr(self):
        store = ParameterStore()
        t = store.add("w", np.zeros(3))
        opt = Adam(store, lr=1e-3)
        t.grad = np.array([1.0, -2.0, 0.5])
        opt.step()
        np.testing.assert_allclose(np.abs(t.data), 1e-3, rtol=1e-6)

    def test_adam_decreases_quadratic(self):
        store = ParameterStore()
        t = store.add("w", np.array([2.0, -3.0]))
        opt = Adam(store, lr=0.05)
        for _ in range(300):
            t.grad = 2.0 * t.data
            opt.step()
        assert np.abs(t.data).max() < 0.2


class TestTrainToy:
    def test_zero_steps_chance_accuracy_and_artifacts(self, tmp_path):
        out = train_toy(toy_cfg(), steps=0, seed=0, out_dir=tmp_path, quiet=True)
        assert abs(out["final_test_acc"] - 0.10) <= 0.03
        assert abs(out["initial_loss"] - np.log(10.0)) <= 0.1
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "checkpoint.a2t").exists()
        assert (tmp_path / "checkpoint.index.json").exists()

    def test_short_run_reduces_loss(self, tmp_path):
        out = train_toy(
            toy_cfg(batch_size=8), steps=30, seed=0, out_dir=tmp_path,
            log_every=30, quiet=True,
        )
        header, *rows = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert header == "step,loss,test_acc"
        assert len(rows) == 1
        assert abs(out["initial_loss"] - np.log(10.0)) <= 0.1
