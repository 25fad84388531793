"""Base-sample management for sample average approximation.

The optimizer freezes a set of standard-normal base samples once per
acquisition optimization; conditioned on the set, every Monte-Carlo
acquisition value is a deterministic function of the candidate set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .sobol import MAX_DIMENSION, SobolEngine

# Acklam's rational approximation for the standard normal quantile
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)

_P_LOW = 0.02425


def _tail_quantile(tail: np.ndarray) -> np.ndarray:
    q = np.sqrt(-2.0 * np.log(tail))
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def _acklam(p: np.ndarray) -> np.ndarray:
    z = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
        den = (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        z[mid] = q * num / den
    if lo.any():
        z[lo] = _tail_quantile(p[lo])
    if hi.any():
        z[hi] = -_tail_quantile(1.0 - p[hi])
    return z


def normal_cdf(z: np.ndarray | float) -> np.ndarray | float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-np.asarray(z) / np.sqrt(2.0))


def normal_pdf(z: np.ndarray | float) -> np.ndarray | float:
    z = np.asarray(z)
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def inverse_normal_cdf(u):
    """Standard normal quantile, accurate to better than 1e-9 on [1e-15, 1-1e-15].

    Acklam's rational approximation refined by one Halley/Newton step.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    scalar = u_arr.ndim == 0
    u_arr = np.atleast_1d(u_arr)
    if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
        raise ValueError("inverse_normal_cdf requires 0 < u < 1")
    # reflect to the lower half so the Newton residual Phi(z) - v is computed
    # where Phi is small and well-conditioned (no cancellation near u ~ 1)
    upper = u_arr > 0.5
    v = np.where(upper, 1.0 - u_arr, u_arr)
    z = _acklam(v)
    err = normal_cdf(z) - v
    z = z - err / np.maximum(normal_pdf(z), 1e-300)
    z = np.where(upper, -z, z)
    return float(z[0]) if scalar else z


@dataclass(frozen=True)
class BaseSampleSet:
    """Frozen standard-normal base samples of shape (N, q*m)."""

    E: np.ndarray
    source: str  # "iid" or "rqmc"
    seed: int

    def __post_init__(self):
        E = np.asarray(self.E, dtype=np.float64)
        E.setflags(write=False)
        object.__setattr__(self, "E", E)

    @property
    def n_samples(self) -> int:
        return self.E.shape[0]


@dataclass(frozen=True)
class BaseSampleSpec:
    """Recipe for base samples; materialized lazily per joint-posterior shape.

    Sequential-greedy and closed-loop paths need base samples for joint sets
    whose size is not known up front; the spec keeps (mode, seed, N) frozen and
    produces one immutable set per requested shape, cached so repeated requests
    within an optimization run are identical.
    """

    mode: str
    seed: int
    n_samples: int
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def materialize(self, q: int, m: int = 1) -> BaseSampleSet:
        key = (q, m)
        if key not in self._cache:
            self._cache[key] = draw_base_samples(
                self.mode, self.seed, self.n_samples, q, m
            )
        return self._cache[key]


def draw_base_samples(mode: str, seed: int, N: int, q: int, m: int = 1) -> BaseSampleSet:
    """Draw an immutable (N, q*m) standard-normal base-sample set.

    ``iid`` uses a counter-based Philox stream; ``rqmc`` maps a scrambled Sobol
    stream of dimension q*m through the inverse normal CDF.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    dim = q * m
    if mode == "iid":
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        E = rng.standard_normal((N, dim))
    elif mode == "rqmc":
        if dim > MAX_DIMENSION:
            raise ValueError(
                f"q*m = {dim} exceeds the Sobol dimension cap {MAX_DIMENSION}; "
                "use mode='iid' instead"
            )
        # seed 0 would disable scrambling; offset keeps the stream randomized
        engine = SobolEngine(dim, scramble_seed=seed + 1)
        u = engine.draw(N)
        E = inverse_normal_cdf(u.ravel()).reshape(N, dim)
    else:
        raise ValueError(f"unknown base-sample mode {mode!r}")
    return BaseSampleSet(E=E, source=mode, seed=seed)


def reparameterize(mean: np.ndarray, root: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Transport base samples through a Gaussian posterior: xi_i = mu + L eps_i.

    ``mean`` is (q,), ``root`` the (q, q) lower Cholesky factor, ``E`` is (N, q).
    Deterministic given its inputs; the differentiability w.r.t. the candidate
    set flows through ``mean`` and ``root``.
    """
    if E.shape[1] != mean.shape[0]:
        raise ValueError(
            f"base-sample dimension {E.shape[1]} does not match posterior "
            f"dimension {mean.shape[0]}"
        )
    return mean[None, :] + E @ root.T


@dataclass(frozen=True)
class SampleSizeSchedule:
    base: int = 2
    M: int = 1
    k_max: int = 0

    def __post_init__(self):
        if self.base < 2 or self.M < 1 or self.k_max < 0:
            raise ValueError("invalid sample-size schedule")


def qmc_sample_sizes(schedule: SampleSizeSchedule) -> list[int]:
    """Unique sorted sizes m * b^k for 1 <= m <= M, 0 <= k <= k_max."""
    sizes = {
        m * schedule.base**k
        for m in range(1, schedule.M + 1)
        for k in range(schedule.k_max + 1)
    }
    return sorted(sizes)
