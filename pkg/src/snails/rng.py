"""Randomness primitives: seeded streams, Poisson fields, Brownian increments,
exponential clocks, keyed (counter-based) uniforms and the Brownian-bridge
crossing probability used for inter-step contact detection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# substream tags under one (master_seed, stream_id)
_TAG_INIT = 0
_TAG_MOTION = 1
_TAG_KEYS = 2
_TAG_AUX = 3


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (wraps modulo 2**64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def keyed_uniform(key: int, a: int, b: int = 0, c: int = 0) -> float:
    """Uniform on (0, 1) addressed by ``(key, a, b, c)``.

    The value depends only on its address, never on call order, so two
    coupled processes that look up the same address see the same draw.
    The compiled kernel implements the identical function.
    """
    h = mix64(key + ((a * _GOLDEN) & MASK64))
    h = mix64(h ^ ((b + _GOLDEN) & MASK64))
    h = mix64(h ^ ((c * _GOLDEN + 1) & MASK64))
    return ((h >> 12) + 0.5) * (1.0 / 4503599627370496.0)


@dataclass(frozen=True)
class RngStream:
    """One reproducible stream of randomness, addressed by ``(master_seed, stream_id)``.

    Deriving a stream is O(1): numpy's ``SeedSequence`` hashes the pair into
    independent PCG64 states. Each stream owns several substreams so that the
    initial field, the motion increments and the keyed draws (contacts,
    removal clocks) can be shared or separated independently when coupling
    two runs.
    """

    master_seed: int
    stream_id: int = 0
    _gens: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 <= int(self.master_seed) <= MASK64):
            raise InvalidParameterError("master_seed must be a 64-bit unsigned integer")
        if not (0 <= int(self.stream_id) <= MASK64):
            raise InvalidParameterError("stream_id must be a 64-bit unsigned integer")

    def _seq(self, tag: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_id), tag))

    def generator(self, tag: int = _TAG_AUX) -> np.random.Generator:
        gen = self._gens.get(tag)
        if gen is None:
            gen = np.random.Generator(np.random.PCG64(self._seq(tag)))
            self._gens[tag] = gen
        return gen

    @property
    def init(self) -> np.random.Generator:
        return self.generator(_TAG_INIT)

    @property
    def motion(self) -> np.random.Generator:
        return self.generator(_TAG_MOTION)

    @property
    def aux(self) -> np.random.Generator:
        return self.generator(_TAG_AUX)

    @property
    def contact_key(self) -> int:
        return int(self._seq(_TAG_KEYS).generate_state(2, np.uint64)[0])

    @property
    def clock_key(self) -> int:
        return int(self._seq(_TAG_KEYS).generate_state(2, np.uint64)[1])

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]`` in d dimensions."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not lo:
            raise InvalidParameterError("box corners must have the same nonzero dimension")
        if not all(math.isfinite(v) for v in lo + hi):
            raise InvalidParameterError("box corners must be finite")
        if not all(a < b for a, b in zip(lo, hi)):
            raise InvalidParameterError("box requires lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, half_width: float, d: int = 1) -> "Box":
        return cls((-half_width,) * d, (half_width,) * d)

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, x, margin: float = 0.0) -> bool:
        x = np.atleast_1d(x)
        return bool(np.all(x - margin >= self.lo) and np.all(x + margin <= self.hi))


def sample_poisson_points(rng, intensity: float, region: Box) -> np.ndarray:
    """Poisson(intensity) points on ``region``; returns an ``(n, d)`` array.

    ``rng`` is an :class:`RngStream` (its init substream is used) or a numpy
    Generator. numpy draws the count by inversion for small means and by
    PTRS rejection for large ones.
    """
    if not math.isfinite(intensity) or intensity < 0:
        raise InvalidParameterError(f"intensity must be finite and >= 0, got {intensity}")
    gen = rng.init if isinstance(rng, RngStream) else rng
    mean = intensity * region.volume
    n = int(gen.poisson(mean)) if mean > 0 else 0
    lo = np.asarray(region.lo)
    hi = np.asarray(region.hi)
    return lo + (hi - lo) * gen.random((n, region.d))


def sample_gaussian_increment(rng, dt: float, diffusion: float, d: int) -> np.ndarray:
    """Displacement of a d-dimensional Brownian motion over ``dt``."""
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if not diffusion > 0:
        raise InvalidParameterError(f"diffusion must be positive, got {diffusion}")
    gen = rng.motion if isinstance(rng, RngStream) else rng
    return math.sqrt(diffusion * dt) * gen.standard_normal(d)


def sample_exponential(rng, rate: float) -> float:
    if not rate > 0 or not math.isfinite(rate):
        raise InvalidParameterError(f"rate must be positive and finite, got {rate}")
    gen = rng.aux if isinstance(rng, RngStream) else rng
    return float(gen.exponential(1.0 / rate))


def keyed_exponential(key: int, index: int, rate: float) -> float:
    """Exp(rate) variate addressed by ``(key, index)``; used for removal clocks."""
    return -math.log1p(-keyed_uniform(key, index)) / rate


def bridge_crossing_probability(x0: float, x1: float, level: float, dt: float, diffusion: float) -> float:
    """Probability that a Brownian bridge from ``x0`` to ``x1`` over ``dt`` touches ``level``.

    Both endpoints must lie strictly above the level; an endpoint at or
    below it means the crossing is certain and the caller must not ask.
    """
    if not dt > 0 or not diffusion > 0:
        raise InvalidParameterError("dt and diffusion must be positive")
    g0 = x0 - level
    g1 = x1 - level
    if not (g0 > 0 and g1 > 0):
        raise InvalidParameterError("both bridge endpoints must lie strictly above the level")
    return math.exp(-2.0 * g0 * g1 / (diffusion * dt))
