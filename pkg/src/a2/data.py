"""Synthetic 10-class grating task for the toy trainer.

Each 64x64 image is a dominant oriented sinusoidal grating plus weaker
distractor gratings and pixel noise; the label is the index of the dominant
pattern. Images are generated deterministically per (seed, index) so the
split never needs to be materialized in memory.
"""

from __future__ import annotations

import numpy as np

IMAGE_SIZE = 64
NUM_CLASSES = 10
TRAIN_SIZE = 8000
TEST_SIZE = 2000

DOMINANT_AMP = 1.0
DISTRACTOR_AMP = 0.35
NOISE_STD = 10.0
INPUT_SCALE = 0.1  # keeps network inputs near unit variance


def pattern_bank(size: int = IMAGE_SIZE) -> np.ndarray:
    """The ten class templates: five orientations at two frequencies."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    bank = np.empty((NUM_CLASSES, size, size))
    idx = 0
    for freq in (3.0, 6.0):
        for i in range(5):
            theta = np.pi * i / 5.0
            phase = 2.0 * np.pi * freq * (xs * np.cos(theta) + ys * np.sin(theta)) / size
            bank[idx] = np.sin(phase)
            idx += 1
    return bank


class GratingTask:
    """Deterministic train/test stream over 10k generated images."""

    def __init__(self, seed: int, size: int = IMAGE_SIZE):
        self.seed = seed
        self.size = size
        self.bank = pattern_bank(size)

    def _rng_for(self, index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(index,)))

    def sample(self, index: int) -> tuple[np.ndarray, int]:
        rng = self._rng_for(index)
        label = int(rng.integers(NUM_CLASSES))
        coeffs = rng.uniform(0.0, DISTRACTOR_AMP, size=NUM_CLASSES)
        coeffs[label] = DOMINANT_AMP
        img = np.tensordot(coeffs, self.bank, axes=(0, 0))
        img += rng.normal(0.0, NOISE_STD, size=(self.size, self.size))
        return img * INPUT_SCALE, label

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        xs = np.empty((len(indices), 1, self.size, self.size))
        ys = np.empty(len(indices), dtype=np.int64)
        for row, idx in enumerate(indices):
            img, label = self.sample(int(idx))
            xs[row, 0] = img
            ys[row] = label
        return xs, ys

    def train_indices(self) -> np.ndarray:
        return np.arange(TRAIN_SIZE)

    def test_indices(self) -> np.ndarray:
        return np.arange(TRAIN_SIZE, TRAIN_SIZE + TEST_SIZE)
