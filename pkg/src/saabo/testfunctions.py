"""Synthetic test functions for the benchmark harness.

All functions are stated in their canonical minimization form; the harness
maximizes, so ``objective`` returns the negated value. Constrained variants
expose a constraint callable with the convention c(x) <= 0 feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    name: str
    dim: int
    bounds: np.ndarray  # (d, 2)
    noise_sd: float
    known_optimum: float  # minimization-form optimal value
    optimizers: np.ndarray  # (k, d) known minimizers
    f_min: Callable[[np.ndarray], float]
    constraint: Callable[[np.ndarray], float] | None = None

    def objective(self, x: np.ndarray) -> float:
        """Noiseless value in maximization convention (negated minimization form)."""
        return -float(self.f_min(np.asarray(x, dtype=np.float64)))

    def feasible(self, x: np.ndarray) -> bool:
        return self.constraint is None or self.constraint(np.asarray(x)) <= 0.0

    def regret_value(self, x: np.ndarray) -> float:
        """Feasibility-weighted truth: objective if feasible, else 0."""
        if not self.feasible(x):
            return 0.0
        return self.objective(x)


def _branin(x: np.ndarray) -> float:
    a, b, c = 1.0, 5.1 / (4.0 * np.pi**2), 5.0 / np.pi
    r, s, t = 6.0, 10.0, 1.0 / (8.0 * np.pi)
    return (
        a * (x[1] - b * x[0] ** 2 + c * x[0] - r) ** 2
        + s * (1 - t) * np.cos(x[0])
        + s
    )


def _rosenbrock3(x: np.ndarray) -> float:
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def _ackley5(x: np.ndarray) -> float:
    a, b, c = 20.0, 0.2, 2.0 * np.pi
    d = x.shape[0]
    return (
        -a * np.exp(-b * np.sqrt(np.sum(x**2) / d))
        - np.exp(np.sum(np.cos(c * x)) / d)
        + a
        + np.e
    )


_H6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_H6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)
_H6_XSTAR = np.array([0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])


def _hartmann6(x: np.ndarray) -> float:
    inner = np.sum(_H6_A * (x[None, :] - _H6_P) ** 2, axis=1)
    return -float(np.sum(_H6_ALPHA * np.exp(-inner)))


_REGISTRY: dict[str, TestFunction] = {}


def _register(fn: TestFunction):
    _REGISTRY[fn.name] = fn


_register(
    TestFunction(
        name="branin",
        dim=2,
        bounds=np.array([[-5.0, 10.0], [0.0, 15.0]]),
        noise_sd=0.5,
        known_optimum=0.397887,
        optimizers=np.array(
            [[-np.pi, 12.275], [np.pi, 2.275], [9.42478, 2.475]]
        ),
        f_min=_branin,
    )
)
_register(
    TestFunction(
        name="rosenbrock",
        dim=3,
        bounds=np.tile([-2.048, 2.048], (3, 1)),
        noise_sd=0.5,
        known_optimum=0.0,
        optimizers=np.ones((1, 3)),
        f_min=_rosenbrock3,
    )
)
_register(
    TestFunction(
        name="ackley",
        dim=5,
        bounds=np.tile([-32.768, 32.768], (5, 1)),
        noise_sd=0.5,
        known_optimum=0.0,
        optimizers=np.zeros((1, 5)),
        f_min=_ackley5,
    )
)
_register(
    TestFunction(
        name="hartmann6",
        dim=6,
        bounds=np.tile([0.0, 1.0], (6, 1)),
        noise_sd=0.5,
        known_optimum=-3.32237,
        optimizers=_H6_XSTAR[None, :],
        f_min=_hartmann6,
    )
)
_register(
    TestFunction(
        name="hartmann6_constrained_l1",
        dim=6,
        bounds=np.tile([0.0, 1.0], (6, 1)),
        noise_sd=0.5,
        known_optimum=-3.32237,
        optimizers=_H6_XSTAR[None, :],
        f_min=_hartmann6,
        constraint=lambda x: float(np.sum(np.abs(x)) - 3.0),
    )
)
_register(
    TestFunction(
        name="hartmann6_constrained_l2",
        dim=6,
        bounds=np.tile([0.0, 1.0], (6, 1)),
        noise_sd=0.5,
        known_optimum=-3.32237,
        optimizers=_H6_XSTAR[None, :],
        f_min=_hartmann6,
        constraint=lambda x: float(np.sqrt(np.sum(x**2)) - 1.0),
    )
)


def get_test_function(name: str) -> TestFunction:
    if name not in _REGISTRY:
        raise ValueError(
            f"unknown test function {name!r}; choices: {sorted(_REGISTRY)}"
        )
    return _REGISTRY[name]


def eval_test_function(fn: TestFunction, x: np.ndarray, noisy: bool, rng=None) -> float:
    """Evaluate ``fn`` at ``x`` (maximization convention), optionally with noise."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != fn.dim:
        raise ValueError(f"{fn.name} expects dimension {fn.dim}")
    if np.any(x < fn.bounds[:, 0] - 1e-12) or np.any(x > fn.bounds[:, 1] + 1e-12):
        raise ValueError(f"point outside the bounds of {fn.name}")
    value = fn.objective(x)
    if noisy:
        if rng is None:
            raise ValueError("noisy evaluation requires an rng")
        value += fn.noise_sd * rng.standard_normal()
    return value
