"""Reproducible random streams, scrambled Sobol points and Crank-Nicolson moves.

Every stream is identified by ``(seed, stream_id)``.  The pair is mixed
into the 128-bit key of a Philox4x64 counter-based generator, so two
streams with different ids never share a sequence, and a child stream
can be derived from any parent without touching the parent's state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import special
from scipy.stats import qmc

from emcmc.core import DimensionError, DomainError

_MASK64 = (1 << 64) - 1

# Direction-number table of the backing Sobol engine.
SOBOL_MAX_DIM = 21201
_SOBOL_BITS = 30


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """A seeded, splittable stream of random variates.

    ``counter`` counts the variates emitted so far (one per value,
    whatever its distribution).  Drawing ``n`` values and then ``n``
    more gives exactly the same numbers as drawing ``2n`` at once.
    """

    __slots__ = ("seed", "stream_id", "counter", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = 0
        key = [_splitmix64(self.seed), _splitmix64(self.stream_id ^ 0xD1B54A32D192ED03)]
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def spawn(self, child: int) -> "RngStream":
        """Independent child stream; does not advance this stream."""
        child_id = _splitmix64((self.stream_id * 0x100000001B3) ^ _splitmix64(int(child) & _MASK64))
        return RngStream(self.seed, child_id)

    def normals(self, shape=()) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.counter += int(np.size(out))
        return out

    def uniforms(self, shape=()) -> np.ndarray:
        """Uniform variates on (0, 1]."""
        out = 1.0 - self._gen.random(shape)
        self.counter += int(np.size(out))
        return out

    def exponentials(self, shape=()) -> np.ndarray:
        out = self._gen.standard_exponential(shape)
        self.counter += int(np.size(out))
        return out

    def integer(self, high: int) -> int:
        self.counter += 1
        return int(self._gen.integers(high))


def standard_normals(stream: RngStream, n: int) -> np.ndarray:
    """``n`` iid standard normal draws; advances ``stream.counter`` by ``n``."""
    if n < 0:
        raise DomainError("n must be non-negative")
    return stream.normals(int(n))


# ---------------------------------------------------------------------------
# Auxiliary normal blocks and the Crank-Nicolson proposal
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalBlock:
    """Every standard normal an ensemble Kalman filter run consumes.

    Layout of ``values``: first the initial-state normals, ``(N, n_init)``
    row-major, then for each observation index ``j`` an ``(N, dim_y + m)``
    slab whose first ``dim_y`` columns perturb the pseudo-observations at
    ``j`` and whose last ``m`` columns drive the evolution into ``j``.
    """

    values: np.ndarray
    n_members: int
    n_obs: int
    dim_y: int
    m: int
    n_init: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.shape[0] != self.expected_size(
            self.n_members, self.n_obs, self.dim_y, self.m, self.n_init
        ):
            raise DimensionError("normal block length does not match its layout")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @staticmethod
    def expected_size(n_members, n_obs, dim_y, m, n_init=0) -> int:
        return n_members * (n_init + n_obs * (dim_y + m))

    @classmethod
    def draw(cls, stream: RngStream, n_members, n_obs, dim_y, m, n_init=0) -> "NormalBlock":
        size = cls.expected_size(n_members, n_obs, dim_y, m, n_init)
        return cls(stream.normals(size), n_members, n_obs, dim_y, m, n_init)

    @classmethod
    def for_model(cls, model, n_obs: int, n_members: int, stream: RngStream) -> "NormalBlock":
        if model.normal_draw_count is None:
            raise DimensionError(f"{model.name} does not declare normal_draw_count")
        return cls.draw(stream, n_members, n_obs, model.dim_y, model.normal_draw_count,
                        model.init_normal_count)

    def with_values(self, values: np.ndarray) -> "NormalBlock":
        return NormalBlock(values, self.n_members, self.n_obs, self.dim_y, self.m, self.n_init)

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    def initial(self) -> np.ndarray:
        k = self.n_members * self.n_init
        return self.values[:k].reshape(self.n_members, self.n_init)

    def slab(self, j: int) -> np.ndarray:
        width = self.dim_y + self.m
        start = self.n_members * self.n_init + j * self.n_members * width
        return self.values[start:start + self.n_members * width].reshape(self.n_members, width)

    def shift(self, j: int) -> np.ndarray:
        return self.slab(j)[:, :self.dim_y]

    def evolution(self, j: int) -> np.ndarray:
        return self.slab(j)[:, self.dim_y:]


BlockLike = Union[NormalBlock, np.ndarray]


def crank_nicolson(u: BlockLike, sigma_u: float, stream: RngStream) -> BlockLike:
    """Propose ``sqrt(1 - sigma_u^2) u + sigma_u z`` with fresh ``z ~ N(0, I)``.

    The move leaves ``N(0, I)`` invariant.  The input is not modified.
    """
    if not 0.0 <= sigma_u <= 1.0 or math.isnan(sigma_u):
        raise DomainError(f"sigma_u must lie in [0, 1], got {sigma_u}")
    vals = u.values if isinstance(u, NormalBlock) else np.asarray(u, dtype=float)
    z = stream.normals(vals.shape)
    if sigma_u == 0.0:
        new = vals.copy()
    elif sigma_u == 1.0:
        new = z
    else:
        new = math.sqrt(1.0 - sigma_u * sigma_u) * vals + sigma_u * z
    return u.with_values(new) if isinstance(u, NormalBlock) else new


# ---------------------------------------------------------------------------
# Quasi-Monte Carlo
# ---------------------------------------------------------------------------


class SobolSampler:
    """Sobol sequence in ``(0, 1)^s``, optionally with LMS + digital-shift scrambling.

    Points are the centres of the ``2^-30`` dyadic cells the engine
    produces, which keeps every coordinate strictly inside the unit
    interval without disturbing the net structure.
    """

    def __init__(self, dimension: int, scramble: bool = True, seed: int | None = 0):
        if dimension < 1:
            raise DimensionError("Sobol dimension must be at least 1")
        if dimension > SOBOL_MAX_DIM:
            raise DimensionError(
                f"Sobol dimension {dimension} exceeds the direction-number table ({SOBOL_MAX_DIM})"
            )
        self.dimension = int(dimension)
        self.scramble = bool(scramble)
        self.seed = seed
        self.index = 0
        rng = np.random.default_rng(seed) if scramble else None
        self._engine = qmc.Sobol(self.dimension, scramble=self.scramble, bits=_SOBOL_BITS, seed=rng)

    def next(self, n: int) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            pts = self._engine.random(int(n))
        self.index += int(n)
        cells = np.rint(pts * 2.0**_SOBOL_BITS)
        return (cells + 0.5) * 2.0**-_SOBOL_BITS


def sobol_points(sampler: SobolSampler, n: int) -> np.ndarray:
    """Next ``n`` points of ``sampler`` as an ``(n, s)`` array."""
    return sampler.next(n)


def normals_from_uniforms(u: Sequence[float] | np.ndarray) -> np.ndarray:
    """Standard normal quantiles ``Phi^{-1}(u)`` for ``u`` in the open unit interval."""
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0.0) | ~(u < 1.0)):
        raise DomainError("uniforms must lie strictly inside (0, 1)")
    return special.ndtri(u)
