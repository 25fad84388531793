"""Sobol sequence generation with Owen-style nested-uniform scrambling.

Direction numbers come from the vendored Joe-Kuo table (``data/new-joe-kuo-6.1111.txt``,
dimensions 2..1111 in the standard ``d s a m_i`` text format; dimension 1 is the
van der Corput sequence). The table path can be overridden with the
``SAABO_SOBOL_TABLE`` environment variable.

Scrambling is a nested-uniform scramble in base 2: the bit at depth ``i`` of each
coordinate is flipped according to a seeded hash of the ``i-1``-bit prefix, so all
points sharing a prefix receive the same flip. This preserves the digital net
structure while randomizing the points.
"""

from __future__ import annotations

import os
from importlib import resources

import numpy as np

MAX_DIMENSION = 1111
_BITS = 32
_SCALE = 1.0 / (1 << _BITS)

_direction_cache: dict[str, np.ndarray] = {}


class DimensionError(ValueError):
    """Requested dimension exceeds the direction-number table."""


def _table_path() -> str:
    override = os.environ.get("SAABO_SOBOL_TABLE")
    if override:
        return override
    return str(resources.files("saabo").joinpath("data/new-joe-kuo-6.1111.txt"))


def _load_direction_numbers(path: str) -> np.ndarray:
    """Build the (max_dim, 32) matrix of direction integers from a Joe-Kuo table."""
    rows = []
    with open(path) as fh:
        header = fh.readline()
        if not header.lower().startswith("d"):
            raise ValueError(f"unrecognized direction-number table header: {header!r}")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            d, s, a = int(parts[0]), int(parts[1]), int(parts[2])
            m = [int(x) for x in parts[3 : 3 + s]]
            rows.append((d, s, a, m))

    max_dim = rows[-1][0] if rows else 1
    V = np.zeros((max_dim, _BITS), dtype=np.uint64)
    # dimension 1: van der Corput, m_k = 1 for all k
    for k in range(_BITS):
        V[0, k] = np.uint64(1) << np.uint64(_BITS - 1 - k)
    for d, s, a, m in rows:
        v = np.zeros(_BITS, dtype=np.uint64)
        for k in range(min(s, _BITS)):
            v[k] = np.uint64(m[k]) << np.uint64(_BITS - 1 - k)
        for k in range(s, _BITS):
            vk = v[k - s] ^ (v[k - s] >> np.uint64(s))
            for j in range(1, s):
                if (a >> (s - 1 - j)) & 1:
                    vk ^= v[k - j]
            v[k] = vk
        V[d - 1] = v
    return V


def direction_numbers() -> np.ndarray:
    path = _table_path()
    if path not in _direction_cache:
        _direction_cache[path] = _load_direction_numbers(path)
    return _direction_cache[path]


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = (z + np.uint64(0x9E3779B97F4A7C15)).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def raw_points(start: int, n: int, dimension: int) -> np.ndarray:
    """Unscrambled Sobol integers for indices ``start .. start+n-1``, shape (n, s).

    Index 0 is the all-zeros point. Uses Gray-code random access so any
    contiguous block can be generated without iterating from the origin.
    """
    if dimension < 1 or dimension > MAX_DIMENSION:
        raise DimensionError(
            f"dimension must be in [1, {MAX_DIMENSION}], got {dimension}"
        )
    table = direction_numbers()
    if dimension > table.shape[0]:
        raise DimensionError(
            f"direction-number table covers {table.shape[0]} dimensions, "
            f"got {dimension}"
        )
    V = table[:dimension]  # (s, 32)
    idx = np.arange(start, start + n, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    out = np.zeros((n, dimension), dtype=np.uint64)
    for k in range(_BITS):
        mask = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        if mask.any():
            out[mask] ^= V[:, k]
    return out


def owen_scramble(x: np.ndarray, seed: int, first_dim: int = 0) -> np.ndarray:
    """Apply the seeded nested-uniform scramble to Sobol integers (n, s)."""
    n, s = x.shape
    y = x.copy()
    dims = np.arange(first_dim, first_dim + s, dtype=np.uint64)
    with np.errstate(over="ignore"):  # uint64 wraparound is intended
        base_keys = _splitmix64(
            np.uint64(seed) * np.uint64(0xD1B54A32D192ED03)
            + dims * np.uint64(0x8CB92BA72F3D8DD7)
        )
        for level in range(_BITS):
            # prefix of the `level` leading bits; the flip is a function of it only
            shift = np.uint64(_BITS - level)
            prefix = (x >> shift) if level > 0 else np.zeros_like(x)
            keys = _splitmix64(base_keys + np.uint64(level) * np.uint64(0x9E6C63D0676A9A99))
            h = _splitmix64(prefix ^ keys[None, :])
            flip = (h & np.uint64(1)) << np.uint64(_BITS - 1 - level)
            y ^= flip
    return y


class SobolEngine:
    """Stateful Sobol stream of fixed dimension.

    ``scramble_seed == 0`` gives the unscrambled sequence with the zero point
    skipped (first point is 0.5 in each coordinate). A nonzero seed applies the
    nested-uniform scramble and the stream starts at index 0, so prefixes of
    length 2^k retain the net balance needed for RQMC.
    """

    def __init__(self, dimension: int, scramble_seed: int = 0):
        if dimension < 1 or dimension > MAX_DIMENSION:
            raise DimensionError(
                f"dimension must be in [1, {MAX_DIMENSION}], got {dimension}"
            )
        self.dimension = dimension
        self.scramble_seed = int(scramble_seed)
        self.index = 0 if self.scramble_seed else 1

    def draw(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        x = raw_points(self.index, n, self.dimension)
        self.index += n
        if self.scramble_seed:
            y = owen_scramble(x, self.scramble_seed)
            # half-ulp centering keeps scrambled values strictly inside (0, 1)
            return (y.astype(np.float64) + 0.5) * _SCALE
        return x.astype(np.float64) * _SCALE


def sobol_draw(engine: SobolEngine, n: int) -> np.ndarray:
    """Draw ``n`` points in [0,1)^s, advancing the engine."""
    return engine.draw(n)
