"""Dense linear algebra, seeded randomness, initializers and combinatorics.

Matrices and vectors are plain float64 numpy arrays; the helpers here add the
shape checks and deterministic behaviour the rest of the package relies on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_U53 = 1.0 / (1 << 53)


class ShapeError(ValueError):
    """Raised when operand shapes are not conformable."""


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("matmul produced non-finite entries")
    return out


def hadamard(u, v) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape} vs {v.shape}")
    return u * v


def _mix(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


class Prng:
    """splitmix64 generator.

    The n-th output only depends on ``seed + n * gamma``, which lets
    :meth:`uniform_array` produce blocks with numpy while staying
    bit-identical to repeated scalar calls.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return _mix(self.state)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * _U53

    def uniform(self, lo: float, hi: float) -> float:
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
        x = lo + (hi - lo) * self.next_float()
        # rounding can land on hi for very narrow ranges
        return x if x < hi else math.nextafter(hi, lo)

    def _block_u64(self, n: int) -> np.ndarray:
        # uint64 arithmetic wraps mod 2**64, matching the scalar path
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GAMMA) & MASK64
        return z

    def uniform_array(self, lo: float, hi: float, shape) -> np.ndarray:
        """Draw ``prod(shape)`` values in row-major order, same stream as :meth:`uniform`."""
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self._block_u64(n) >> np.uint64(11)).astype(np.float64) * _U53
        x = lo + (hi - lo) * u
        x = np.where(x < hi, x, np.nextafter(hi, lo))
        return x.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)`` driven by this stream."""
        idx = np.arange(n)
        if n < 2:
            return idx
        u = self.uniform_array(0.0, 1.0, n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx


INIT_SCHEMES = ("lecun", "siren_first", "siren_hidden")


def init_bound(scheme: str, fan_in: int, omega: float = 30.0) -> float:
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    if scheme == "lecun":
        return math.sqrt(3.0 / fan_in)
    if scheme in ("siren_first", "siren_hidden") and not omega > 0:
        raise ValueError("omega must be positive for siren schemes")
    if scheme == "siren_first":
        return 1.0 / fan_in
    if scheme == "siren_hidden":
        return math.sqrt(6.0 / fan_in) / omega
    raise ValueError(f"unknown init scheme {scheme!r}")


def init_weights(scheme: str, fan_in: int, omega: float, prng: Prng, fan_out: int | None = None) -> np.ndarray:
    """Uniform weight matrix of shape ``(fan_out, fan_in)`` (``fan_out`` defaults to ``fan_in``)."""
    bound = init_bound(scheme, fan_in, omega)
    rows = fan_in if fan_out is None else fan_out
    return prng.uniform_array(-bound, bound, (rows, fan_in))


@dataclass(frozen=True)
class BigCount:
    exact: int | None
    log10: float

    def __int__(self) -> int:
        if self.exact is None:
            raise OverflowError("exact value not retained")
        return self.exact


def _log10_int(n: int) -> float:
    if n <= 0:
        return -math.inf if n == 0 else math.nan
    digits = n.bit_length()
    if digits <= 1000:
        return math.log10(n)
    shift = digits - 64
    return math.log10(n >> shift) + shift * math.log10(2.0)


def binomial(n: int, k: int) -> BigCount:
    if k < 0 or n < 0 or k > n:
        raise ValueError(f"binomial needs 0 <= k <= n, got n={n}, k={k}")
    k = min(k, n - k)
    acc = 1
    for i in range(1, k + 1):
        acc = acc * (n - k + i) // i
    exact = acc if acc.bit_length() <= 512 else None
    return BigCount(exact, _log10_int(acc))


def symmetric_eigenvalues(k, rtol: float = 1e-9, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, descending, by cyclic Jacobi rotations."""
    a = np.array(k, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    n = a.shape[0]
    norm = np.linalg.norm(a)
    if np.max(np.abs(a - a.T), initial=0.0) > rtol * max(norm, 1e-300):
        raise ValueError("matrix is not symmetric within tolerance")
    if n == 0:
        return np.zeros(0)
    a = 0.5 * (a + a.T)
    target = 1e-12 * norm
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if np.linalg.norm(a[offdiag]) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    # theta**2 would overflow; t ~ 1/(2 theta)
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :]
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q]
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = a[q, p] = 0.0
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.sort(np.diag(a))[::-1].copy()
