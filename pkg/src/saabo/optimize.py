"""Acquisition-function maximization under the sample-average approximation.

With base samples frozen, the acquisition is an ordinary deterministic
function, so it is maximized by multi-start L-BFGS-B from initial conditions
chosen by a Boltzmann heuristic: Sobol-sample raw q-tuples, evaluate the
acquisition in batch, and sample start tuples without replacement with
probability proportional to exp(eta * standardized value). Flat acquisitions
fall back to uniform selection, and start points with a vanishing gradient
skip the local optimization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .acquisition import (
    AcquisitionContext,
    AcquisitionValue,
    kg_fantasy_mean_table,
    posterior_mean_and_simple_regret,
    q_knowledge_gradient_one_shot,
)
from .gp import ModelList
from .sobol import SobolEngine


@dataclass(frozen=True)
class OptimizeConfig:
    """Search-space bounds and optimizer budget for one acquisition maximization."""

    bounds: np.ndarray  # (d, 2) rows of (lower, upper)
    q: int = 1
    raw_samples: int | None = None  # default 1024 * q
    num_restarts: int = 20
    eta: float = 1.0
    maxiter: int = 200
    grad_tol: float = 1e-6
    mode: str = "joint"

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("bounds must satisfy lower < upper per dimension")
        if self.mode not in ("joint", "sequential_greedy"):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "bounds", b)
        if self.raw_samples is not None and self.num_restarts > self.raw_samples:
            raise ValueError("num_restarts must not exceed raw_samples")

    @property
    def d(self) -> int:
        return self.bounds.shape[0]

    @property
    def n_raw(self) -> int:
        return self.raw_samples if self.raw_samples is not None else 1024 * self.q


@dataclass
class CandidateResult:
    X_star: np.ndarray
    value: float
    restart_values: np.ndarray
    converged: np.ndarray
    X_fantasy: np.ndarray | None = None  # one-shot KG diagnostics


def _boltzmann_select(values: np.ndarray, k: int, eta: float, rng) -> np.ndarray:
    """Indices of k picks without replacement with p ~ exp(eta * standardized v).

    Uses the Gumbel top-k equivalence; a flat value landscape (sd < 1e-12)
    degrades to uniform selection.
    """
    v = np.asarray(values, dtype=np.float64)
    sd = v.std()
    if sd < 1e-12:
        perm = rng.permutation(v.shape[0])
        return perm[:k]
    z = eta * (v - v.mean()) / sd
    gumbel = -np.log(-np.log(rng.random(v.shape[0])))
    return np.argsort(-(z + gumbel), kind="stable")[:k]


def gen_initial_conditions(
    acqf: Callable[[np.ndarray], AcquisitionValue],
    config: OptimizeConfig,
    seed: int,
) -> np.ndarray:
    """Start tuples of shape (num_restarts, q, d) via the Boltzmann heuristic."""
    d, q = config.d, config.q
    engine = SobolEngine(q * d, scramble_seed=2 * seed + 1)
    raw = engine.draw(config.n_raw).reshape(config.n_raw, q, d)
    lo, hi = config.bounds[:, 0], config.bounds[:, 1]
    raw = lo + raw * (hi - lo)
    values = np.array([acqf(raw[i]).value for i in range(raw.shape[0])])
    finite = np.isfinite(values)
    if not finite.any():
        raise ValueError("acquisition returned no finite values on raw samples")
    raw, values = raw[finite], values[finite]
    k = min(config.num_restarts, raw.shape[0])
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    idx = _boltzmann_select(values, k, config.eta, rng)
    return raw[idx]


def bounded_quasi_newton(
    f_with_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    bounds: np.ndarray,
    maxiter: int = 200,
    grad_tol: float = 1e-6,
) -> tuple[np.ndarray, float, bool]:
    """Maximize a deterministic differentiable function over a box.

    L-BFGS-B with history 10; stops when the projected-gradient infinity norm
    drops below ``grad_tol`` or after ``maxiter`` iterations. On a line-search
    failure the best iterate found is returned with ``converged=False``.
    """
    bounds = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)

    def neg(x):
        v, g = f_with_grad(x)
        return -v, -np.asarray(g, dtype=np.float64).ravel()

    res = minimize(
        neg,
        np.clip(np.asarray(x0, dtype=np.float64).ravel(), bounds[:, 0], bounds[:, 1]),
        jac=True,
        method="L-BFGS-B",
        bounds=list(map(tuple, bounds)),
        options={"maxcor": 10, "maxiter": maxiter, "gtol": grad_tol, "ftol": 1e-14},
    )
    x = np.clip(res.x, bounds[:, 0], bounds[:, 1])
    return x, float(-res.fun), bool(res.success)


def _optimize_joint(acqf, config: OptimizeConfig, seed: int) -> CandidateResult:
    d, q = config.d, config.q
    starts = gen_initial_conditions(acqf, config, seed)
    bounds_flat = np.tile(config.bounds, (q, 1))

    def f(x):
        av = acqf(x.reshape(q, d))
        return av.value, av.grad

    best = None
    restart_values = np.full(starts.shape[0], -np.inf)
    converged = np.zeros(starts.shape[0], dtype=bool)
    for i in range(starts.shape[0]):
        x0 = starts[i].ravel()
        v0, g0 = f(x0)
        if np.linalg.norm(g0) < 1e-12:
            # flat start: the quasi-Newton step cannot move, keep the raw point
            x_star, v_star, ok = x0, v0, False
        else:
            x_star, v_star, ok = bounded_quasi_newton(
                f, x0, bounds_flat, config.maxiter, config.grad_tol
            )
        restart_values[i] = v_star
        converged[i] = ok
        if best is None or v_star > best[0]:
            best = (v_star, x_star)
    if best is None:
        raise RuntimeError("all restarts failed")
    return CandidateResult(
        X_star=best[1].reshape(q, d),
        value=best[0],
        restart_values=restart_values,
        converged=converged,
    )


def optimize_acqf(
    acqf: Callable[[np.ndarray], AcquisitionValue],
    config: OptimizeConfig,
    seed: int,
    make_acqf: Callable[[np.ndarray | None], Callable] | None = None,
) -> CandidateResult:
    """Multi-start maximization of an acquisition over q points.

    Joint mode optimizes all q * d coordinates at once. Sequential-greedy mode
    picks one point at a time, treating the points chosen so far as pending;
    it needs ``make_acqf(X_pending)`` returning a single-point acquisition
    with that pending set (``make_acqf(None)`` must agree with ``acqf`` at
    q = 1). Ties between restarts go to the lowest restart index.
    """
    if config.mode == "joint" or config.q == 1 and make_acqf is None:
        return _optimize_joint(acqf, config, seed)
    if make_acqf is None:
        raise ValueError("sequential_greedy requires make_acqf")
    chosen = []
    last = None
    all_values, all_conv = [], []
    for step in range(config.q):
        pending = np.vstack(chosen) if chosen else None
        step_acqf = make_acqf(pending)
        step_config = OptimizeConfig(
            bounds=config.bounds,
            q=1,
            raw_samples=min(config.n_raw, 1024),
            num_restarts=config.num_restarts,
            eta=config.eta,
            maxiter=config.maxiter,
            grad_tol=config.grad_tol,
            mode="joint",
        )
        last = _optimize_joint(step_acqf, step_config, seed + step)
        chosen.append(last.X_star[0])
        all_values.append(last.restart_values)
        all_conv.append(last.converged)
    return CandidateResult(
        X_star=np.vstack(chosen),
        value=last.value,
        restart_values=np.concatenate(all_values),
        converged=np.concatenate(all_conv),
    )


def ensure_mu_star(ctx: AcquisitionContext, bounds: np.ndarray, seed: int) -> float:
    """Cache the current posterior-mean maximum on the context (for KG).

    Found by multi-start maximization of the posterior mean; the subtraction
    does not move KG's argmax, so recomputing once per outer iteration is
    enough.
    """
    if ctx.mu_star is None:
        mean_ctx = AcquisitionContext(
            model=ctx.model,
            objective=ctx.objective,
            base_samples=ctx.base_samples,
            inner_base_samples=ctx.inner_base_samples,
        )
        cfg = OptimizeConfig(bounds=bounds, q=1, raw_samples=512, num_restarts=10)
        res = optimize_acqf(
            lambda X: posterior_mean_and_simple_regret(mean_ctx, X), cfg, seed
        )
        ctx.mu_star = res.value
    return ctx.mu_star


def optimize_one_shot_kg(
    ctx: AcquisitionContext,
    config: OptimizeConfig,
    seed: int,
) -> CandidateResult:
    """Maximize one-shot KG jointly over the q query points and N fantasy points.

    Each fantasy row is initialized at the pool point (Boltzmann picks of
    posterior-mean-promising points plus the best observed point) that
    maximizes that fantasy's own posterior mean, so every inner maximization
    starts near its solution; only the first q rows are returned as the
    candidate, with the optimized fantasy solutions kept for diagnostics.
    """
    d, q = config.d, config.q
    N = ctx.base_samples.n_samples
    ensure_mu_star(ctx, config.bounds, seed)
    model = ctx.model
    lo, hi = config.bounds[:, 0], config.bounds[:, 1]

    # pool of promising single points for fantasy initialization
    mean_ctx = AcquisitionContext(
        model=model,
        objective=ctx.objective,
        base_samples=ctx.base_samples,
        inner_base_samples=ctx.inner_base_samples,
    )
    pool_engine = SobolEngine(d, scramble_seed=2 * seed + 3)
    pool = lo + pool_engine.draw(512) * (hi - lo)
    obj = ctx.objective
    if not isinstance(model, ModelList) and (obj is None or obj.variant == "identity"):
        # identity objective: the pool scores are just the posterior means
        pool_vals = np.array(
            [model.posterior(pool[i : i + 128]).mean for i in range(0, 512, 128)]
        ).ravel()
    else:
        pool_vals = np.array(
            [
                posterior_mean_and_simple_regret(mean_ctx, pool[[i]]).value
                for i in range(512)
            ]
        )
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed + 1)))
    n_pool = config.num_restarts * ((N + 1) // 2)
    picks = pool[_boltzmann_select(pool_vals, min(n_pool, 512), config.eta, rng)]
    ds = model.dataset
    if ds.n:
        x_best = ds.X[int(np.argmax(ds.Y[:, 0]))]
    else:
        x_best = 0.5 * (lo + hi)

    def acqf(X_aug):
        return q_knowledge_gradient_one_shot(ctx, X_aug)

    # candidate locations for fantasy initialization: the promising pool
    # points plus the best observed point
    fant_pool = np.vstack([picks, x_best[None, :]]) if len(picks) else x_best[None, :]

    def init_fantasies(X):
        # seed each fantasy solution at the pool point maximizing that
        # fantasy's own posterior mean
        table = kg_fantasy_mean_table(ctx, X, fant_pool)
        return fant_pool[np.argmax(table, axis=1)]

    # query-point starts via the Boltzmann heuristic on KG with a fixed
    # fantasy template
    template = init_fantasies(np.tile(x_best, (q, 1)))
    x_cfg = OptimizeConfig(
        bounds=config.bounds,
        q=q,
        raw_samples=min(config.n_raw, 256),
        num_restarts=config.num_restarts,
        eta=config.eta,
    )
    x_starts = gen_initial_conditions(
        lambda X: acqf(np.vstack([X, template])), x_cfg, seed
    )

    bounds_flat = np.tile(config.bounds, (q + N, 1))

    def f(x):
        av = acqf(x.reshape(q + N, d))
        return av.value, av.grad

    best = None
    restart_values = np.full(x_starts.shape[0], -np.inf)
    converged = np.zeros(x_starts.shape[0], dtype=bool)
    for i in range(x_starts.shape[0]):
        fant = init_fantasies(x_starts[i])
        x0 = np.vstack([x_starts[i], fant]).ravel()
        v0, g0 = f(x0)
        if np.linalg.norm(g0) < 1e-12:
            x_star, v_star, ok = x0, v0, False
        else:
            x_star, v_star, ok = bounded_quasi_newton(
                f, x0, bounds_flat, config.maxiter, config.grad_tol
            )
        restart_values[i] = v_star
        converged[i] = ok
        if best is None or v_star > best[0]:
            best = (v_star, x_star)
    X_opt = best[1].reshape(q + N, d)
    return CandidateResult(
        X_star=X_opt[:q],
        value=best[0],
        restart_values=restart_values,
        converged=converged,
        X_fantasy=X_opt[q:],
    )
