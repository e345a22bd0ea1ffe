"""Named parameter storage and initialization helpers."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor, default_dtype


class ParameterStore:
    """Ordered map from dotted-path names to trainable tensors."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._entries:
            raise ContractError(f"duplicate parameter name '{name}'")
        t = Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=True)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self):
        return list(self._entries.keys())

    def items(self):
        return self._entries.items()

    def tensors(self):
        return list(self._entries.values())

    def total_params(self) -> int:
        return sum(t.size for t in self._entries.values())

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def cast_(self, dtype):
        """Convert every payload in place (benchmark float32 path)."""
        for t in self._entries.values():
            t.data = t.data.astype(dtype)


class Initializer:
    """Deterministic weight initialization from one seeded generator."""

    def __init__(self, rng: np.random.Generator, std: float = 0.02):
        self.rng = rng
        self.std = std

    def trunc_normal(self, *shape) -> np.ndarray:
        w = self.rng.normal(0.0, self.std, size=shape)
        return np.clip(w, -2.0 * self.std, 2.0 * self.std)

    def zeros(self, *shape) -> np.ndarray:
        return np.zeros(shape)

    def ones(self, *shape) -> np.ndarray:
        return np.ones(shape)
