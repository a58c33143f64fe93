"""Dense float64 matrix primitives, seeded randomness, and the
finite-difference gradient oracle.

Matrices are plain 2-D C-contiguous ``numpy.float64`` arrays throughout the
package. Every operation here is a pure function: identical inputs give
bitwise-identical outputs, and nothing mutates its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, OracleError, ShapeError


def matrix(data) -> np.ndarray:
    """Coerce ``data`` to a 2-D C-contiguous float64 array."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}", a.shape)
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with explicit shape checking."""
    a = matrix(a)
    b = matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul shape mismatch: {a.shape} @ {b.shape}", a.shape, b.shape
        )
    return a @ b


def relu_clip(a: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    return np.maximum(np.asarray(a, dtype=np.float64), 0.0)


def leaky_relu(a: np.ndarray, slope: float = 0.01) -> np.ndarray:
    """Elementwise x if x >= 0 else slope * x.

    ``slope`` must lie in [0, 1); slope 0 reduces to ``relu_clip``.
    """
    if not 0.0 <= slope < 1.0:
        raise ConfigurationError(f"leaky_relu slope must be in [0, 1), got {slope}")
    a = np.asarray(a, dtype=np.float64)
    return np.where(a >= 0.0, a, slope * a)


def softmax_row(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability."""
    a = np.asarray(a, dtype=np.float64)
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def finite_diff_grad(f, theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``theta``.

    ``f`` receives an array of theta's shape and returns a float. This is
    the ground-truth oracle that every backward pass in the package is
    checked against; it must stay independent of any backprop code.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.ravel()
    gflat = grad.ravel()
    work = theta.copy()
    wflat = work.ravel()
    for i in range(flat.size):
        orig = flat[i]
        wflat[i] = orig + eps
        f_plus = float(f(work))
        wflat[i] = orig - eps
        f_minus = float(f(work))
        wflat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            coord = tuple(int(c) for c in np.unravel_index(i, theta.shape))
            raise OracleError(f"non-finite evaluation at coordinate {coord}")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


class SeededRng:
    """Deterministic random stream: identical seed, identical draws.

    Wraps ``numpy.random.Generator`` over PCG64. Child streams for parallel
    work are derived by ``child(index)``, which maps (seed, stream-index
    path) to an independent stream via ``numpy.random.SeedSequence`` spawn
    keys, so the derivation is documented and reproducible.
    """

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(_spawn_key)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.state = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, index: int) -> "SeededRng":
        """Independent substream number ``index`` of this stream."""
        return SeededRng(self.seed, self.spawn_key + (int(index),))

    def gaussian(self, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ConfigurationError(f"std must be >= 0, got {std}")
        if std == 0.0:
            return np.full((rows, cols), float(mean))
        return self.state.normal(loc=mean, scale=std, size=(rows, cols))

    def integers(self, low: int, high: int, size=None):
        return self.state.integers(low, high, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.state.uniform(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.state.permutation(n)

    def shuffle(self, seq: list) -> None:
        self.state.shuffle(seq)


def seeded_gaussian(
    rng: SeededRng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0
) -> np.ndarray:
    """I.i.d. normal matrix draw from a seeded stream."""
    return rng.gaussian(rows, cols, mean, std)


@dataclass
class GradSlot:
    """A parameter block paired with its gradient accumulator."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape}",
                self.grad.shape,
                self.value.shape,
            )

    def zero_grad(self) -> None:
        self.grad[...] = 0.0
