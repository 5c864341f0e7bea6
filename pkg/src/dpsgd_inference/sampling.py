"""Seeded random streams and batch-index selection rules.

All randomness in the package flows through :class:`RngState`, a thin wrapper
around numpy's ``Generator`` keyed by ``(seed, path)``. Child streams are
derived by extending the path, so any replication or sub-task is reproducible
in isolation, without replaying the draws that preceded it.

The streams here are statistically sound but not cryptographically secure; a
production privacy deployment should swap in a CSPRNG for the noise draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError


class SchemeKind(str, Enum):
    SRSWOR = "srswor"
    POISSON = "poisson"
    WITH_REPLACEMENT = "with_replacement"
    CYCLIC = "cyclic"


#: Schemes whose batches always contain exactly ``m`` indices.
FIXED_SIZE_SCHEMES = (SchemeKind.SRSWOR, SchemeKind.WITH_REPLACEMENT, SchemeKind.CYCLIC)


@dataclass(frozen=True)
class SamplingScheme:
    """Batch-selection rule with (expected) batch size ``m``."""

    kind: SchemeKind
    m: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if self.m < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.m}")


@dataclass
class RngState:
    """Deterministic random stream identified by a seed and a stream path.

    Two states constructed with the same ``(seed, path)`` produce identical
    draw sequences on every platform. Children derived via :meth:`child` or
    :func:`split` depend only on the parent's identity, never on how many
    draws the parent has already made.
    """

    seed: int
    path: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *ids: int) -> "RngState":
        """Derive an independent stream by extending the path."""
        return RngState(self.seed, self.path + tuple(ids))


def split(rng: RngState, k: int) -> list[RngState]:
    """Return ``k`` pairwise-independent child streams of ``rng``.

    The i-th child is ``RngState(seed, path + (i,))``; identical ``(seed, k)``
    always yields identical children.
    """
    if k < 1:
        raise ConfigError(f"split requires k >= 1, got {k}")
    return [rng.child(i) for i in range(k)]


def draw_batch(scheme: SamplingScheme, n: int, t: int, rng: RngState) -> np.ndarray:
    """Draw the index set for iteration ``t`` (1-based) from ``[0, n)``.

    srswor            exactly ``m`` distinct indices, uniform over m-subsets
    poisson           each index independently with probability ``m / n``
                      (the draw may be empty; callers decide how to handle it)
    with_replacement  ``m`` i.i.d. uniform indices
    cyclic            ``m`` consecutive indices starting at ``(t-1)*m mod n``,
                      wrapping around; consumes no randomness
    """
    if n < 1:
        raise ConfigError(f"population size must be >= 1, got {n}")
    if t < 1:
        raise ConfigError(f"iteration index must be >= 1, got {t}")
    m = scheme.m
    if scheme.kind is SchemeKind.SRSWOR:
        if m > n:
            raise ConfigError(f"srswor batch size {m} exceeds population {n}")
        return rng.generator.choice(n, size=m, replace=False).astype(np.int64)
    if scheme.kind is SchemeKind.POISSON:
        return np.flatnonzero(rng.generator.random(n) < m / n).astype(np.int64)
    if scheme.kind is SchemeKind.WITH_REPLACEMENT:
        return rng.generator.integers(0, n, size=m, dtype=np.int64)
    # cyclic
    start = ((t - 1) * m) % n
    return (start + np.arange(m, dtype=np.int64)) % n


def draw_batch_matrix(scheme: SamplingScheme, n: int, T: int, rng: RngState) -> np.ndarray:
    """Pre-draw batches for all ``T`` iterations as a ``(T, m)`` index matrix.

    Only defined for fixed-size schemes; the per-step draws are identical in
    distribution to repeated :func:`draw_batch` calls.
    """
    if scheme.kind not in FIXED_SIZE_SCHEMES:
        raise ConfigError(f"bulk draws undefined for scheme {scheme.kind.value!r}")
    m = scheme.m
    if scheme.kind is SchemeKind.WITH_REPLACEMENT:
        return rng.generator.integers(0, n, size=(T, m), dtype=np.int64)
    if scheme.kind is SchemeKind.CYCLIC:
        starts = (np.arange(T, dtype=np.int64) * m) % n
        return (starts[:, None] + np.arange(m, dtype=np.int64)[None, :]) % n
    # srswor
    if m > n:
        raise ConfigError(f"srswor batch size {m} exceeds population {n}")
    if m == 1:
        return rng.generator.integers(0, n, size=(T, 1), dtype=np.int64)
    gen = rng.generator
    out = np.empty((T, m), dtype=np.int64)
    for t in range(T):
        out[t] = gen.choice(n, size=m, replace=False)
    return out


def gaussian(rng: RngState, dim: int, sd: float) -> np.ndarray:
    """Draw ``dim`` i.i.d. N(0, sd^2) components; ``sd = 0`` gives zeros."""
    if sd < 0:
        raise ConfigError(f"standard deviation must be >= 0, got {sd}")
    if sd == 0.0:
        return np.zeros(dim)
    return sd * rng.generator.standard_normal(dim)


def gaussian_matrix(rng: RngState, shape: tuple[int, ...], sd: float) -> np.ndarray:
    """Matrix of i.i.d. N(0, sd^2) draws; bulk form of :func:`gaussian`."""
    if sd < 0:
        raise ConfigError(f"standard deviation must be >= 0, got {sd}")
    if sd == 0.0:
        return np.zeros(shape)
    return sd * rng.generator.standard_normal(shape)
