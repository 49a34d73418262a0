"""Deterministic scalar/vector numerics shared by every other module.

Randomness comes from a self-contained xoshiro256** generator seeded
through the splitmix64 avalanche mixer, so that every stream is a pure
function of its 64-bit seed and is reproducible bit-for-bit across
platforms and versions of this package.  Gaussian variates use the
Box-Muller transform with both variates consumed (the second is cached
on the state).  All floating point work is IEEE double precision.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "MilrError",
    "ValidationError",
    "InvariantError",
    "RngState",
    "derive_seed",
    "rng_uniform",
    "gaussian_sample",
    "gaussian_logpdf",
    "logsumexp",
    "as_vector",
    "as_matrix",
]

LOG_2PI = math.log(2.0 * math.pi)

_MASK64 = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53
# splitmix64 golden-ratio increment and finalizer multipliers.
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_M1 = 0xBF58476D1CE4E5B9
_SM64_M2 = 0x94D049BB133111EB


class MilrError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(MilrError, ValueError):
    """An input violates an operation's contract."""


class InvariantError(MilrError, RuntimeError):
    """An internal invariant was breached (indicates a bug)."""


def _splitmix64(x: int) -> int:
    """One step of the splitmix64 avalanche mixer (finalizer included)."""
    x = (x + _SM64_GAMMA) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * _SM64_M1) & _MASK64
    z = ((z ^ (z >> 27)) * _SM64_M2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, index: int) -> int:
    """Derive an independent child seed from ``base_seed`` and a trial index.

    Used wherever parallel or repeated runs need reproducible,
    schedule-independent streams: child ``index`` always receives the
    same seed for a given base.  Both arguments are reduced mod 2**64.
    """
    mixed = _splitmix64((base_seed & _MASK64) ^ _splitmix64(index & _MASK64))
    # Avoid the degenerate all-zero xoshiro state seed edge case.
    return mixed if mixed != 0 else 0x1


class RngState:
    """xoshiro256** generator state.

    The four 64-bit state words are filled from the seed by four
    successive splitmix64 outputs, which guarantees a non-degenerate
    state for every seed (including 0).  ``draws`` counts raw 64-bit
    words consumed and therefore increases strictly monotonically; it
    is used to assert that online sampling never reuses stream
    positions.

    A single ``RngState`` must not be shared between concurrent
    consumers; derive independent states with :func:`derive_seed`.
    """

    __slots__ = ("seed", "_s0", "_s1", "_s2", "_s3", "_spare_normal", "draws")

    def __init__(self, seed: int):
        seed = int(seed) & _MASK64
        self.seed = seed
        x = seed
        words = []
        for _ in range(4):
            x = (x + _SM64_GAMMA) & _MASK64
            z = x
            z = ((z ^ (z >> 30)) * _SM64_M1) & _MASK64
            z = ((z ^ (z >> 27)) * _SM64_M2) & _MASK64
            words.append(z ^ (z >> 31))
        self._s0, self._s1, self._s2, self._s3 = words
        self._spare_normal: float | None = None
        self.draws = 0

    def next_uint64(self) -> int:
        """Advance the state and return the next 64-bit output word."""
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = s1 * 5 & _MASK64
        result = ((result << 7) | (result >> 57)) & _MASK64
        result = result * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        self.draws += 1
        return result

    def uniform(self) -> float:
        """Next double in [0, 1) with 53 random bits."""
        return (self.next_uint64() >> 11) * _INV_2_53

    def standard_normal(self) -> float:
        """Next N(0, 1) draw via Box-Muller; caches the paired variate."""
        spare = self._spare_normal
        if spare is not None:
            self._spare_normal = None
            return spare
        # u1 in (0, 1] so log never sees zero; u2 in [0, 1).
        u1 = ((self.next_uint64() >> 11) + 1) * _INV_2_53
        u2 = (self.next_uint64() >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def uniform_array(self, count: int) -> np.ndarray:
        """``count`` uniforms in [0, 1), identical to repeated :meth:`uniform`.

        The generator step is inlined here (and in :meth:`normal_array`)
        because these loops dominate dataset generation time.
        """
        out = [0.0] * count
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        mask = _MASK64
        inv = _INV_2_53
        for i in range(count):
            r = s1 * 5 & mask
            r = ((r << 7) | (r >> 57)) & mask
            r = r * 9 & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & mask
            out[i] = (r >> 11) * inv
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        self.draws += count
        return np.array(out, dtype=np.float64)

    def normal_array(self, count: int) -> np.ndarray:
        """``count`` standard normals as a float64 array.

        Produces exactly the stream of ``count`` successive
        :meth:`standard_normal` calls (cache semantics included).
        """
        out = [0.0] * count
        i = 0
        spare = self._spare_normal
        self._spare_normal = None
        if spare is not None and count > 0:
            out[0] = spare
            i = 1
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        consumed = 0
        mask = _MASK64
        inv = _INV_2_53
        sqrt = math.sqrt
        log = math.log
        sin = math.sin
        cos = math.cos
        two_pi = 2.0 * math.pi
        while i < count:
            r1 = s1 * 5 & mask
            r1 = ((r1 << 7) | (r1 >> 57)) & mask
            r1 = r1 * 9 & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & mask
            r2 = s1 * 5 & mask
            r2 = ((r2 << 7) | (r2 >> 57)) & mask
            r2 = r2 * 9 & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & mask
            consumed += 2
            u1 = ((r1 >> 11) + 1) * inv
            theta = two_pi * ((r2 >> 11) * inv)
            rad = sqrt(-2.0 * log(u1))
            out[i] = rad * cos(theta)
            i += 1
            if i < count:
                out[i] = rad * sin(theta)
                i += 1
            else:
                self._spare_normal = rad * sin(theta)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        self.draws += consumed
        return np.array(out, dtype=np.float64)

    def randint_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) without modulo bias (rejection)."""
        if bound <= 0:
            raise ValidationError("randint_below requires a positive bound")
        threshold = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_uint64()
            if r < threshold:
                return r % bound


def rng_uniform(state: RngState) -> float:
    """Advance ``state`` and return the next uniform variate in [0, 1)."""
    return state.uniform()


def gaussian_sample(state: RngState, mu: float, sigma: float) -> float:
    """One draw from N(mu, sigma^2); requires sigma > 0."""
    if not sigma > 0.0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    return mu + sigma * state.standard_normal()


def gaussian_logpdf(y: float, mu: float, sigma: float) -> float:
    """log density of N(mu, sigma^2) at y; requires sigma > 0."""
    if not sigma > 0.0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    z = (y - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - 0.5 * LOG_2PI


def logsumexp(values) -> float:
    """log(sum(exp(v))) with the max-shift trick.

    The shifted exponentials are accumulated with ``math.fsum`` so the
    result is exactly invariant under permutation of the inputs.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("logsumexp requires a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValidationError("logsumexp requires finite inputs")
    m = float(np.max(v))
    return m + math.log(math.fsum(math.exp(x - m) for x in v.tolist()))


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and return a finite 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValidationError(f"{name} must have length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} must contain only finite entries")
    return v


def as_matrix(x, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ValidationError(f"{name} must have {cols} columns, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} must contain only finite entries")
    return m
