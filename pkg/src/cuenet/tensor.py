"""Dense n-d arrays used throughout the engine.

Tensors are plain ``numpy.ndarray`` objects held to a stricter contract than
numpy itself enforces: rank 0 is not allowed, binary operations never
broadcast, and coordinate access is bounds-checked. The helpers here are the
only place that contract is checked; hot loops in :mod:`cuenet.layers` work on
the arrays directly once shapes have been validated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when tensor dimensions are invalid or incompatible."""


@dataclass(frozen=True)
class Shape2D:
    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        if min(self.height, self.width, self.channels) <= 0:
            raise ShapeError(f"Shape2D fields must be positive: {self}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def _check_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims:
        raise ShapeError("rank-0 tensors are not allowed; use dims [1] for scalars")
    if any(d <= 0 for d in dims):
        raise ShapeError(f"all dims must be positive, got {list(dims)}")
    return dims


def tensor_new(dims: Sequence[int], fill: float = 0.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Return a tensor of shape ``dims`` with every element equal to ``fill``."""
    return np.full(_check_dims(dims), fill, dtype=dtype)


def as_tensor(data, dtype=None) -> np.ndarray:
    arr = np.array(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    _check_dims(arr.shape)
    return arr


def require_same_dims(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} dims differ: {list(a.shape)} vs {list(b.shape)}")


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two tensors with identical dims."""
    require_same_dims(a, b)
    return a * b


def matvec(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Matrix-vector product ``w @ a`` for ``w`` of dims [j, k] and ``a`` of dims [k]."""
    if w.ndim != 2 or a.ndim != 1:
        raise ShapeError(f"matvec expects rank 2 and rank 1, got {w.ndim} and {a.ndim}")
    if w.shape[1] != a.shape[0]:
        raise ShapeError(f"inner dims differ: {w.shape[1]} vs {a.shape[0]}")
    return w @ a


def transpose2d(w: np.ndarray) -> np.ndarray:
    if w.ndim != 2:
        raise ShapeError(f"transpose2d expects rank 2, got rank {w.ndim}")
    return np.ascontiguousarray(w.T)


def map_elementwise(a: np.ndarray, f: Callable) -> np.ndarray:
    """Apply ``f`` to every element.

    ``f`` may be a numpy ufunc (applied vectorised) or any scalar callable.
    """
    if isinstance(f, np.ufunc):
        return f(a)
    out = np.fromiter((f(v) for v in a.ravel()), dtype=a.dtype, count=a.size)
    return out.reshape(a.shape)


def strides_of(dims: Sequence[int]) -> tuple[int, ...]:
    """Row-major element strides."""
    dims = _check_dims(dims)
    strides = [1] * len(dims)
    for k in range(len(dims) - 2, -1, -1):
        strides[k] = strides[k + 1] * dims[k + 1]
    return tuple(strides)


def flat_index(dims: Sequence[int], coord: Sequence[int]) -> int:
    dims = _check_dims(dims)
    if len(coord) != len(dims):
        raise IndexError(f"coordinate rank {len(coord)} != tensor rank {len(dims)}")
    for i, (c, d) in enumerate(zip(coord, dims)):
        if not 0 <= c < d:
            raise IndexError(f"coordinate {c} out of range for axis {i} of size {d}")
    return sum(c * s for c, s in zip(coord, strides_of(dims)))


def unflat_index(dims: Sequence[int], index: int) -> tuple[int, ...]:
    dims = _check_dims(dims)
    size = int(np.prod(dims))
    if not 0 <= index < size:
        raise IndexError(f"flat index {index} out of range for size {size}")
    coord = []
    for s in strides_of(dims):
        coord.append(index // s)
        index %= s
    return tuple(coord)


def get(a: np.ndarray, coord: Sequence[int]) -> float:
    """Bounds-checked element read; negative coordinates are errors, not wraparound."""
    return a.reshape(-1)[flat_index(a.shape, coord)].item()
