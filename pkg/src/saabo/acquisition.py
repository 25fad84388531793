"""Monte-Carlo and analytic acquisition functions with exact gradients.

Every MC acquisition follows the same pipeline: transport frozen base samples
through the joint posterior at the candidate set (xi = mu + L eps), apply the
objective, apply the utility, and average. Because the base samples are held
fixed, each function is a deterministic, almost-everywhere differentiable
function of the candidate set; gradients are propagated analytically back
through the utility, the objective, and the posterior mean/root (reverse-mode
Cholesky differentiation), so they match finite differences at smooth points.

Maxima in the utilities are exact (no soft relaxation); at ties the
subgradient of the lowest index is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .gp import GPModel, ModelList, root_decomposition
from .kernels import matern52, matern52_grad_x1
from .objectives import ObjectiveSpec, apply as apply_objective
from .sampling import BaseSampleSet, normal_cdf, normal_pdf


@dataclass
class AcquisitionValue:
    """Acquisition value and its gradient w.r.t. the candidate set."""

    value: float
    grad: np.ndarray


@dataclass
class AcquisitionContext:
    """Everything an acquisition evaluation needs besides the candidate set.

    ``base_samples`` is frozen for the lifetime of one optimization run; its
    shape must match the joint posterior (candidates + pending + baseline as
    applicable) or evaluation raises, since silently redrawing would break the
    sample-average approximation.
    """

    model: GPModel | ModelList
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec.identity)
    base_samples: BaseSampleSet | None = None
    X_pending: np.ndarray | None = None
    best_f: float | None = None
    beta: float = 2.0
    num_fantasies: int = 64
    inner_base_samples: BaseSampleSet | None = None
    mc_points: np.ndarray | None = None
    X_baseline: np.ndarray | None = None
    mu_star: float | None = None

    def __post_init__(self):
        for name in ("X_pending", "mc_points", "X_baseline"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.atleast_2d(np.asarray(v, dtype=np.float64)))


def _single_models(model) -> list[GPModel]:
    return model.models if isinstance(model, ModelList) else [model]


def _chol_rev(L: np.ndarray, Lbar: np.ndarray) -> np.ndarray:
    """Reverse-mode Cholesky: cotangent of Sigma given cotangent of L = chol(Sigma)."""
    P = np.tril(L.T @ Lbar)
    P[np.diag_indices_from(P)] *= 0.5
    X = solve_triangular(L, P, lower=True, trans="T")
    S = solve_triangular(L, X.T, lower=True, trans="T").T
    return 0.5 * (S + S.T)


def _parts(g: GPModel, Xn: np.ndarray, n_free: int):
    """Joint posterior at internal points ``Xn`` plus row derivatives.

    Returns ``(mean, cov, c, dmu, V, T)`` in internal units, where
    ``c[r, k, j] = d cov[r, k] / d Xn[r, j]`` (first-argument part only) and
    ``dmu[r, j] = d mean[r] / d Xn[r, j]`` for the first ``n_free`` rows;
    ``V = Ltr^{-1} K(Xtrain, Xn)`` and ``T[r] = Ltr^{-1} dK(Xn_r, Xtrain)``.
    """
    p = g.params
    Q = Xn.shape[0]
    Kxx = matern52(Xn, Xn, p.lengthscales, p.outputscale)
    D1Kxx = matern52_grad_x1(Xn[:n_free], Xn, p.lengthscales, p.outputscale)
    if g.n == 0:
        mean = np.full(Q, p.mean_const)
        cov = Kxx
        dmu = np.zeros((n_free, Xn.shape[1]))
        return mean, 0.5 * (cov + cov.T), D1Kxx, dmu, None, None
    Kxt = matern52(Xn, g._Xn, p.lengthscales, p.outputscale)
    D1Kxt = matern52_grad_x1(Xn[:n_free], g._Xn, p.lengthscales, p.outputscale)
    V = solve_triangular(g.chol_train, Kxt.T, lower=True)  # (n, Q)
    mean = p.mean_const + Kxt @ g.alpha
    cov = Kxx - V.T @ V
    T = np.stack(
        [solve_triangular(g.chol_train, D1Kxt[r], lower=True) for r in range(n_free)]
    )  # (n_free, n, d)
    c = D1Kxx - np.einsum("rnj,nk->rkj", T, V)
    dmu = np.einsum("rnj,n->rj", D1Kxt, g.alpha)
    return mean, 0.5 * (cov + cov.T), c, dmu, V, T


def _mc_acq(model, objective, base_samples, X_all, n_free, util) -> AcquisitionValue:
    """Shared MC evaluation: value and gradient over the first ``n_free`` rows.

    ``util(vals)`` maps objective values (N, Q) to ``(value, dvals)`` where
    ``dvals`` is the full derivative of the (already averaged) value.
    """
    models = _single_models(model)
    m = len(models)
    X_all = np.atleast_2d(np.asarray(X_all, dtype=np.float64))
    Q, d = X_all.shape
    E = base_samples.E
    N = E.shape[0]
    if E.shape[1] != Q * m:
        raise ValueError(
            f"frozen base samples have dimension {E.shape[1]} but the joint "
            f"posterior needs {Q * m}; redrawing mid-run would break SAA"
        )
    E3 = E.reshape(N, Q, m)

    xi = np.empty((N, Q, m))
    cache = []
    for j, g in enumerate(models):
        tr = g.transform
        mean, cov, c, dmu, _, _ = _parts(g, tr.x_in(X_all), n_free)
        L = root_decomposition(cov)
        xi_int = mean[None, :] + E3[:, :, j] @ L.T
        xi[:, :, j] = tr.y_mean + tr.y_scale * xi_int
        cache.append((tr, mean, L, c, dmu))

    vals, obj_grad = apply_objective(objective, xi)
    value, dvals = util(vals)
    xibar = dvals[:, :, None] * obj_grad  # (N, Q, m), original units

    grad = np.zeros((n_free, d))
    for j, g in enumerate(models):
        tr, mean, L, c, dmu = cache[j]
        xb = tr.y_scale * xibar[:, :, j]  # cotangent w.r.t. internal xi
        mu_bar = xb.sum(axis=0)
        L_bar = np.tril(xb.T @ E3[:, :, j])
        S_bar = _chol_rev(L, L_bar)
        g_int = mu_bar[:n_free, None] * dmu + 2.0 * np.einsum(
            "rk,rkj->rj", S_bar[:n_free, :], c
        )
        grad += g_int / tr.x_scale[None, :]
    return AcquisitionValue(value=float(value), grad=grad)


def _with_pending(X: np.ndarray, ctx: AcquisitionContext) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if ctx.X_pending is None or ctx.X_pending.shape[0] == 0:
        return X
    return np.vstack([X, ctx.X_pending])


def analytic_ei(model: GPModel, x: np.ndarray, best_f: float) -> AcquisitionValue:
    """Closed-form expected improvement at a single point.

    EI = sigma (z Phi(z) + phi(z)) with z = (mu - best_f) / sigma; degenerate
    posteriors (sigma < 1e-12) return max(mu - best_f, 0) with zero gradient.
    """
    if isinstance(model, ModelList):
        raise ValueError("analytic EI requires a single-output model")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] != 1:
        raise ValueError("analytic EI evaluates one point (q = 1)")
    post, dmu, dL = model.posterior_with_grad(x)
    mu = float(post.mean[0])
    sigma = float(np.sqrt(max(post.cov[0, 0], 0.0)))
    if sigma < 1e-12:
        return AcquisitionValue(value=max(mu - best_f, 0.0), grad=np.zeros_like(x))
    z = (mu - best_f) / sigma
    value = sigma * (z * normal_cdf(z) + normal_pdf(z))
    dmu_dx = dmu[0, 0, :]
    dsig_dx = dL[0, 0, 0, :]
    grad = normal_cdf(z) * dmu_dx + normal_pdf(z) * dsig_dx
    return AcquisitionValue(value=float(value), grad=grad[None, :])


def q_expected_improvement(ctx: AcquisitionContext, X: np.ndarray) -> AcquisitionValue:
    """qEI: mean over samples of (max over points of g(xi) - best_f)+."""
    if ctx.best_f is None:
        raise ValueError("qEI requires best_f in the context")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q = X.shape[0]
    X_all = _with_pending(X, ctx)
    best_f = ctx.best_f

    def util(vals):
        N = vals.shape[0]
        best = vals.max(axis=1)
        imp = np.maximum(best - best_f, 0.0)
        dvals = np.zeros_like(vals)
        active = imp > 0
        amax = vals.argmax(axis=1)
        dvals[np.arange(N)[active], amax[active]] = 1.0 / N
        return imp.mean(), dvals

    return _mc_acq(ctx.model, ctx.objective, ctx.base_samples, X_all, q, util)


def q_noisy_expected_improvement(ctx: AcquisitionContext, X: np.ndarray) -> AcquisitionValue:
    """qNEI: improvement of the new-point max over the baseline max, jointly sampled."""
    if ctx.X_baseline is None or ctx.X_baseline.shape[0] == 0:
        raise ValueError("qNEI requires a non-empty X_baseline")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q = X.shape[0]
    X_new = _with_pending(X, ctx)
    q_new = X_new.shape[0]
    X_all = np.vstack([X_new, ctx.X_baseline])

    def util(vals):
        N = vals.shape[0]
        new = vals[:, :q_new]
        obs = vals[:, q_new:]
        imp = np.maximum(new.max(axis=1) - obs.max(axis=1), 0.0)
        dvals = np.zeros_like(vals)
        active = imp > 0
        rows = np.arange(N)[active]
        dvals[rows, new.argmax(axis=1)[active]] = 1.0 / N
        dvals[rows, q_new + obs.argmax(axis=1)[active]] = -1.0 / N
        return imp.mean(), dvals

    return _mc_acq(ctx.model, ctx.objective, ctx.base_samples, X_all, q, util)


def q_upper_confidence_bound(ctx: AcquisitionContext, X: np.ndarray) -> AcquisitionValue:
    """qUCB: mean over samples of max_j [mean_j + beta' |g(xi)_j - mean_j|].

    ``mean_j`` is the per-point MC mean of the objective values and
    beta' = sqrt(beta pi / 2), which makes the q = 1 case agree with the
    classic mu + sqrt(beta) sigma rule in expectation.
    """
    if ctx.beta <= 0:
        raise ValueError("qUCB requires beta > 0")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q = X.shape[0]
    X_all = _with_pending(X, ctx)
    bp = np.sqrt(ctx.beta * np.pi / 2.0)

    def util(vals):
        N = vals.shape[0]
        mean = vals.mean(axis=0)
        dev = vals - mean[None, :]
        s = mean[None, :] + bp * np.abs(dev)
        u = s.max(axis=1)
        M = np.zeros_like(vals)
        M[np.arange(N), s.argmax(axis=1)] = 1.0
        sign = np.sign(dev)
        dvals = (M * bp * sign + (M.sum(axis=0) - bp * (M * sign).sum(axis=0)) / N) / N
        return u.mean(), dvals

    return _mc_acq(ctx.model, ctx.objective, ctx.base_samples, X_all, q, util)


def posterior_mean_and_simple_regret(ctx: AcquisitionContext, X: np.ndarray) -> AcquisitionValue:
    """E[max over points of g(f(x))]: analytic for affine objectives at q = 1."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q = X.shape[0]
    X_all = _with_pending(X, ctx)
    affine = ctx.objective.variant in ("identity", "linear")
    if affine and X_all.shape[0] == 1:
        models = _single_models(ctx.model)
        if ctx.objective.variant == "identity":
            w = np.ones(1)
        else:
            w = ctx.objective.weights
        value = 0.0
        grad = np.zeros_like(X)
        for j, g in enumerate(models):
            post, dmu, _ = g.posterior_with_grad(X_all)
            value += w[j] * float(post.mean[0])
            grad += w[j] * dmu[0, 0, :][None, :]
        return AcquisitionValue(value=value, grad=grad)

    E = ctx.inner_base_samples if ctx.inner_base_samples is not None else ctx.base_samples

    def util(vals):
        N = vals.shape[0]
        dvals = np.zeros_like(vals)
        dvals[np.arange(N), vals.argmax(axis=1)] = 1.0 / N
        return vals.max(axis=1).mean(), dvals

    return _mc_acq(ctx.model, ctx.objective, E, X_all, q, util)


def q_knowledge_gradient_one_shot(ctx: AcquisitionContext, X_aug: np.ndarray) -> AcquisitionValue:
    """One-shot knowledge gradient over the augmented candidate set.

    ``X_aug`` stacks the q query points on top of one fantasy solution per
    fantasy: shape (q + N, d) with N the number of outer base samples. The
    value is the average, over fantasies of observing at the query points, of
    the (inner) expected objective at that fantasy's solution, minus the
    current posterior-mean maximum ``ctx.mu_star`` (x-independent; computed
    and cached once per outer iteration by the caller).

    The fantasy means are linear in the outer base samples, and all fantasies
    share one covariance, so fantasies never need to be materialized as
    models; gradients flow through both the query points (via the fantasy
    update) and the fantasy solutions.
    """
    g = ctx.model
    if isinstance(g, ModelList):
        raise NotImplementedError("one-shot KG supports single-output models")
    E = ctx.base_samples.E
    N = E.shape[0]
    X_aug = np.atleast_2d(np.asarray(X_aug, dtype=np.float64))
    q = X_aug.shape[0] - N
    if q < 1:
        raise ValueError(
            f"X_aug has {X_aug.shape[0]} rows but {N} fantasies need q + {N}"
        )
    X = X_aug[:q]
    Xp = X_aug[q:]  # one solution per fantasy
    Xa = _with_pending(X, ctx)
    qa = Xa.shape[0]
    if E.shape[1] != qa:
        raise ValueError(
            f"outer base samples have dimension {E.shape[1]}, expected {qa}"
        )
    tr = g.transform
    d = X.shape[1]
    Xn = tr.x_in(Xa)
    Pn = tr.x_in(Xp)

    # fantasy-update algebra at the query points (internal units)
    mean_X, covX, cX, _, VX, TX = _parts(g, Xn, qa)
    A = covX + g._new_noise_n * np.eye(qa)
    L_A = root_decomposition(A)
    B = solve_triangular(L_A, E.T, lower=True, trans="T")  # b_i = L_A^{-T} eps_i

    # cross posterior covariance between query and fantasy points, and the
    # posterior at the fantasy points
    p = g.params
    kXP = matern52(Xn, Pn, p.lengthscales, p.outputscale)
    D1kXP = matern52_grad_x1(Xn, Pn, p.lengthscales, p.outputscale)  # (qa,N,d)
    D1kPX = matern52_grad_x1(Pn, Xn, p.lengthscales, p.outputscale)  # (N,qa,d)
    if g.n:
        KPt = matern52(Pn, g._Xn, p.lengthscales, p.outputscale)
        VP = solve_triangular(g.chol_train, KPt.T, lower=True)  # (n, N)
        C = kXP - VX.T @ VP
        mean_p = p.mean_const + KPt @ g.alpha
        D1KPt = matern52_grad_x1(Pn, g._Xn, p.lengthscales, p.outputscale)
        TP = np.stack(
            [solve_triangular(g.chol_train, D1KPt[i], lower=True) for i in range(N)]
        )  # (N, n, d)
        dmu_p = np.einsum("inj,n->ij", D1KPt, g.alpha)
        var_p = p.outputscale - np.einsum("ni,ni->i", VP, VP)
        Cg = D1kXP - np.einsum("rnj,ni->rij", TX, VP)  # d C[r,i] / d Xn[r,j]
        Cg2 = D1kPX - np.einsum("inj,nr->irj", TP, VX)  # d C[r,i] / d Pn[i,j]
        dvar_p = -2.0 * np.einsum("inj,ni->ij", TP, VP)
    else:
        C = kXP
        mean_p = np.full(N, p.mean_const)
        dmu_p = np.zeros((N, d))
        var_p = np.full(N, p.outputscale)
        Cg, Cg2 = D1kXP, D1kPX
        dvar_p = np.zeros((N, d))

    H = solve_triangular(L_A, C, lower=True)  # h_i = L_A^{-1} C_i
    v_mean = mean_p + np.einsum("ri,ri->i", C, B)  # fantasy mean at x'_i

    if ctx.objective.variant == "identity":
        value = tr.y_mean + tr.y_scale * float(v_mean.mean())
        gbar = np.full(N, tr.y_scale / N)
        sbar = None
    else:
        if ctx.inner_base_samples is None:
            raise ValueError("non-affine KG objectives need inner_base_samples")
        EI = ctx.inner_base_samples.E.ravel()  # (N_I,)
        s = var_p - np.einsum("ri,ri->i", H, H)
        sig = np.sqrt(np.maximum(s, 1e-16))
        m_o = tr.y_mean + tr.y_scale * v_mean
        s_o = tr.y_scale * sig
        xi = m_o[None, :, None] + EI[:, None, None] * s_o[None, :, None]
        vals, ograd = apply_objective(ctx.objective, xi)  # (N_I, N)
        value = float(vals.mean())
        gprime = ograd[:, :, 0]
        gbar = tr.y_scale * gprime.mean(axis=0) / N
        omega = (gprime * EI[:, None]).mean(axis=0)
        sbar = tr.y_scale * omega / (2.0 * sig * N)

    # reverse sweep (internal coordinates)
    Lbar = -(B * gbar[None, :]) @ H.T
    Abar = _chol_rev(L_A, np.tril(Lbar))
    U = None
    if sbar is not None:
        U = solve_triangular(L_A, H, lower=True, trans="T")  # u_i = A^{-1} C_i
        Abar = Abar + (U * sbar[None, :]) @ U.T

    grad_X = np.einsum("i,ri,rij->rj", gbar, B, Cg)
    grad_X += 2.0 * np.einsum("rk,rkj->rj", Abar, cX)
    grad_P = gbar[:, None] * (dmu_p + np.einsum("ri,irj->ij", B, Cg2))
    if sbar is not None:
        grad_X += -2.0 * np.einsum("i,ri,rij->rj", sbar, U, Cg)
        grad_P += sbar[:, None] * (dvar_p - 2.0 * np.einsum("ri,irj->ij", U, Cg2))

    grad = np.vstack([grad_X[:q], grad_P]) / tr.x_scale[None, :]
    mu_star = ctx.mu_star if ctx.mu_star is not None else 0.0
    return AcquisitionValue(value=value - mu_star, grad=grad)


def kg_fantasy_mean_table(ctx: AcquisitionContext, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Fantasy posterior means at query grid ``Z`` for each outer base sample.

    Returns an (N, len(Z)) table in original units: row i is the posterior
    mean of fantasy i (observing at ``X``) evaluated across ``Z``. Used to
    seed the one-shot KG fantasy solutions near their per-fantasy optima.
    """
    g = ctx.model
    if isinstance(g, ModelList):
        raise NotImplementedError("one-shot KG supports single-output models")
    E = ctx.base_samples.E
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xa = _with_pending(X, ctx)
    tr, p = g.transform, g.params
    Xn, Zn = tr.x_in(Xa), tr.x_in(np.atleast_2d(Z))
    KXX = matern52(Xn, Xn, p.lengthscales, p.outputscale)
    kXZ = matern52(Xn, Zn, p.lengthscales, p.outputscale)
    if g.n:
        KXt = matern52(Xn, g._Xn, p.lengthscales, p.outputscale)
        VX = solve_triangular(g.chol_train, KXt.T, lower=True)
        covX = KXX - VX.T @ VX
        KZt = matern52(Zn, g._Xn, p.lengthscales, p.outputscale)
        VZ = solve_triangular(g.chol_train, KZt.T, lower=True)
        C = kXZ - VX.T @ VZ
        mean_z = p.mean_const + KZt @ g.alpha
    else:
        covX = KXX
        C = kXZ
        mean_z = np.full(Zn.shape[0], p.mean_const)
    A = 0.5 * (covX + covX.T) + g._new_noise_n * np.eye(Xa.shape[0])
    L_A = root_decomposition(A)
    B = solve_triangular(L_A, E.T, lower=True, trans="T")  # (qa, N)
    table = mean_z[None, :] + B.T @ C
    return tr.y_mean + tr.y_scale * table


def q_neg_integrated_posterior_variance(ctx: AcquisitionContext, X: np.ndarray) -> AcquisitionValue:
    """Negative average posterior variance at ``mc_points`` after observing at X.

    The fantasy covariance does not depend on the simulated outcomes, so no
    fantasy draws are needed; the value is exact.
    """
    g = ctx.model
    if isinstance(g, ModelList):
        raise NotImplementedError("qNIPV supports single-output models")
    if ctx.mc_points is None or ctx.mc_points.shape[0] == 0:
        raise ValueError("qNIPV requires non-empty mc_points")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q = X.shape[0]
    Xa = _with_pending(X, ctx)
    qa = Xa.shape[0]
    tr = g.transform
    Xn = tr.x_in(Xa)
    Zn = tr.x_in(ctx.mc_points)
    r = Zn.shape[0]
    p = g.params

    _, covX, cX, _, VX, TX = _parts(g, Xn, qa)
    A = covX + g._new_noise_n * np.eye(qa)
    L_A = root_decomposition(A)

    kXZ = matern52(Xn, Zn, p.lengthscales, p.outputscale)
    D1kXZ = matern52_grad_x1(Xn, Zn, p.lengthscales, p.outputscale)
    if g.n:
        KZt = matern52(Zn, g._Xn, p.lengthscales, p.outputscale)
        VZ = solve_triangular(g.chol_train, KZt.T, lower=True)
        C = kXZ - VX.T @ VZ
        var_z = p.outputscale - np.einsum("ns,ns->s", VZ, VZ)
        Cg = D1kXZ - np.einsum("rnj,ns->rsj", TX, VZ)
    else:
        C = kXZ
        var_z = np.full(r, p.outputscale)
        Cg = D1kXZ

    U = cho_solve((L_A, True), C)  # (qa, r)
    fant_var = var_z - np.einsum("rs,rs->s", C, U)
    value = -tr.y_scale**2 * float(fant_var.mean())

    Abar = -(U @ U.T) / r
    grad_int = (2.0 / r) * np.einsum("rs,rsj->rj", U, Cg)
    grad_int += 2.0 * np.einsum("rk,rkj->rj", Abar, cX)
    grad = tr.y_scale**2 * grad_int[:q] / tr.x_scale[None, :]
    return AcquisitionValue(value=value, grad=grad)
