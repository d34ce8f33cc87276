"""Dense float64 arithmetic and a seedable, reproducible random stream.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order;
the helpers here add the shape and finiteness checks the rest of the
package relies on.

Random numbers come from :class:`Rng`, a thin wrapper over the Philox-4x64
counter-based generator. Uniforms take the top 53 bits of one raw 64-bit
word each. Normals use the Box-Muller transform on consecutive uniform
pairs ``(u1, u2)``, emitting ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)``;
``n`` normals therefore consume exactly ``2*ceil(n/2)`` uniforms.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

Tensor = np.ndarray

_TWO_NEG_53 = 2.0**-53


def as_tensor(data, shape=None) -> Tensor:
    t = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != t.size:
            raise DimensionError(f"cannot view {t.size} elements as shape {shape}")
        t = t.reshape(shape)
    return t


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != t.size:
        raise DimensionError(f"cannot reshape {t.shape} to {shape}: element counts differ")
    return t.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def check_finite(t: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t)):
        raise NumericError(f"non-finite values in {what}")


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    check_finite(logits, "softmax input")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Rng:
    """Reproducible random stream identified by ``(seed, path)``.

    ``spawn(i)`` derives an independent child stream deterministically from
    the parent's identity and ``i``; it does not advance the parent. A
    single ``Rng`` must not be shared between concurrent tasks.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(i) for i in path)
        self._bits = np.random.Philox(np.random.SeedSequence([self.seed, *self.path]))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"

    def spawn(self, index: int) -> Rng:
        return Rng(self.seed, self.path + (index,))

    def uniform(self, n: int) -> Tensor:
        """``n`` draws from U[0, 1)."""
        raw = self._bits.random_raw(int(n))
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def normal(self, n: int) -> Tensor:
        """``n`` standard normal draws (Box-Muller)."""
        n = int(n)
        m = (n + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((m, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def rng_normal(rng: Rng, mean: float, std: float, n: int) -> Tensor:
    if std < 0 or not np.isfinite(std):
        raise ParameterError(f"std must be finite and >= 0, got {std}")
    if std == 0:
        return np.full(int(n), float(mean))
    return mean + std * rng.normal(n)
