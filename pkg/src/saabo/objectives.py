"""Sample-level objective transformations g applied to posterior samples.

Each objective maps samples of shape (N, q, m) to scalars of shape (N, q),
returning an elementwise gradient alongside so acquisition gradients can be
propagated through the transformation. Constraint convention: c(x) <= 0 is
feasible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

_VARIANTS = ("identity", "linear", "chebyshev", "feasibility_weighted", "generic")


@dataclass(frozen=True)
class ObjectiveSpec:
    """A scalarization g: R^(q x m) -> R^q; build via the classmethod factories."""

    variant: str
    weights: np.ndarray | None = None
    rho: float = 0.05
    objective_index: int = 0
    constraint_indices: tuple[int, ...] = ()
    tau: float = 1e-3
    callback: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown objective variant {self.variant!r}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            object.__setattr__(self, "weights", w)
        if self.variant == "chebyshev":
            w = self.weights
            if w is None or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
                raise ValueError("chebyshev weights must be nonnegative and sum to 1")
        if self.variant == "feasibility_weighted":
            if self.tau <= 0:
                raise ValueError("tau must be > 0")
            if not self.constraint_indices:
                raise ValueError("feasibility_weighted needs constraint indices")
            if self.objective_index in self.constraint_indices:
                raise ValueError("objective index cannot also be a constraint index")

    @classmethod
    def identity(cls) -> "ObjectiveSpec":
        return cls("identity")

    @classmethod
    def linear(cls, weights: np.ndarray) -> "ObjectiveSpec":
        return cls("linear", weights=np.asarray(weights, dtype=np.float64))

    @classmethod
    def chebyshev(cls, weights: np.ndarray, rho: float = 0.05) -> "ObjectiveSpec":
        return cls("chebyshev", weights=np.asarray(weights, dtype=np.float64), rho=rho)

    @classmethod
    def feasibility_weighted(
        cls,
        objective_index: int,
        constraint_indices: tuple[int, ...],
        tau: float = 1e-3,
    ) -> "ObjectiveSpec":
        return cls(
            "feasibility_weighted",
            objective_index=objective_index,
            constraint_indices=tuple(constraint_indices),
            tau=tau,
        )

    @classmethod
    def generic(cls, callback: Callable) -> "ObjectiveSpec":
        """Custom g; ``callback(xi)`` must return ``(values (N,q), grad (N,q,m))``."""
        return cls("generic", callback=callback)


def apply(obj: ObjectiveSpec, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate g on samples ``xi`` of shape (N, q, m).

    Returns ``(values, grad)`` with shapes (N, q) and (N, q, m); ``grad`` is
    the elementwise derivative d values[n, i] / d xi[n, i, j]. Chebyshev ties
    take the subgradient of the lowest output index.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim != 3:
        raise ValueError("xi must have shape (N, q, m)")
    N, q, m = xi.shape

    if obj.variant == "identity":
        if m != 1:
            raise ValueError("identity objective requires a single output")
        return xi[:, :, 0], np.ones_like(xi)

    if obj.variant == "linear":
        w = obj.weights
        if w.shape[0] != m:
            raise ValueError("linear weights must have length m")
        return xi @ w, np.broadcast_to(w, xi.shape).copy()

    if obj.variant == "chebyshev":
        w = obj.weights
        if w.shape[0] != m:
            raise ValueError("chebyshev weights must have length m")
        u = xi * w
        values = obj.rho * u.sum(axis=2) + u.min(axis=2)
        grad = np.broadcast_to(obj.rho * w, xi.shape).copy()
        amin = np.argmin(u, axis=2)  # first occurrence -> lowest-index tie break
        ii, jj = np.meshgrid(np.arange(N), np.arange(q), indexing="ij")
        grad[ii, jj, amin] += w[amin]
        return values, grad

    if obj.variant == "feasibility_weighted":
        idx = (obj.objective_index, *obj.constraint_indices)
        if any(i < 0 or i >= m for i in idx):
            raise ValueError("objective/constraint index out of range")
        f = xi[:, :, obj.objective_index]
        s = expit(-xi[:, :, list(obj.constraint_indices)] / obj.tau)  # (N,q,c)
        weight = s.prod(axis=2)
        values = f * weight
        grad = np.zeros_like(xi)
        grad[:, :, obj.objective_index] = weight
        for k, c in enumerate(obj.constraint_indices):
            grad[:, :, c] = -values * (1.0 - s[:, :, k]) / obj.tau
        return values, grad

    # generic
    values, grad = obj.callback(xi)
    values = np.asarray(values, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if values.shape != (N, q) or grad.shape != (N, q, m):
        raise ValueError("generic callback returned wrong shapes")
    return values, grad


def draw_chebyshev_weights(num_objectives: int, seed: int) -> np.ndarray:
    """Flat-Dirichlet weight vector on the m-simplex, deterministic per seed."""
    if num_objectives < 2:
        raise ValueError("chebyshev scalarization needs at least 2 objectives")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    g = rng.standard_exponential(num_objectives)
    return g / g.sum()
