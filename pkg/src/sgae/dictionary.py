"""Trainable dictionary memory and its softmax re-encoder."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Module
from .tensor import SeededRng, Tensor


class DictionaryMemory(Module):
    """A d x K matrix whose columns are the atoms.

    Re-encoding a vector ``x`` returns ``D @ softmax(D.T @ x)``, a convex
    combination of atoms. Atoms are never normalised.
    """

    def __init__(self, D: np.ndarray):
        super().__init__()
        D = np.asarray(D)
        if D.ndim != 2 or D.shape[1] < 1:
            raise ValueError(f"dictionary must be d x K with K >= 1, got {D.shape}")
        self.D = self.add_param("D", D)

    @property
    def d(self) -> int:
        return self.D.shape[0]

    @property
    def K(self) -> int:
        return self.D.shape[1]

    def reencode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return reencode(self, x)

    def reencode_rows(self, X: Tensor) -> Tensor:
        """Re-encode every row of an (M, d) matrix at once."""
        if X.data.ndim != 2 or X.shape[1] != self.d:
            raise T.DimensionError(f"expected (M, {self.d}), got {X.shape}")
        alpha = T.softmax(T.matmul(X, self.D))          # (M, K)
        return T.matmul(alpha, T.transpose(self.D))     # (M, d)

    def atom_norm_stats(self) -> dict:
        norms = np.linalg.norm(self.D.data, axis=0)
        return {"min": float(norms.min()), "mean": float(norms.mean()), "max": float(norms.max())}


def reencode(memory: DictionaryMemory, x: Tensor) -> tuple[Tensor, Tensor]:
    """(x_hat, alpha) with alpha = softmax(D^T x) and x_hat = D alpha."""
    if x.shape != (memory.d,):
        raise T.DimensionError(f"dictionary has d={memory.d}, got vector {x.shape}")
    alpha = T.softmax(T.matmul(T.transpose(memory.D), x))
    return T.matmul(memory.D, alpha), alpha


def init_dictionary(rng: SeededRng, d: int, K: int, scale: float | None = None,
                    dtype=np.float64) -> DictionaryMemory:
    if d < 1 or K < 1:
        raise ValueError("dictionary dimensions must be positive")
    if scale is None:
        scale = 1.0 / np.sqrt(d)
    return DictionaryMemory(rng.normal((d, K), std=scale, dtype=dtype))
