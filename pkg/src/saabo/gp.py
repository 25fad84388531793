"""Exact Gaussian-process regression with differentiable posteriors.

Single-output models use a Matérn-5/2 ARD kernel with a constant mean.
Inputs are normalized to the unit cube and outputs standardized internally;
every public method accepts and returns original units. Hyperparameters
(``KernelParams``) are expressed on the internal normalized scale.

Multi-output data is handled by ``ModelList`` as independent per-output GPs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .kernels import matern52, matern52_grad_log_hyper, matern52_grad_x1

_LOG_2PI = np.log(2.0 * np.pi)


class SingularKernelError(np.linalg.LinAlgError):
    """Kernel matrix not positive definite after exhausting jitter escalation."""


class FitError(RuntimeError):
    """All hyperparameter restarts failed; ``best_partial`` holds the best try."""

    def __init__(self, message: str, best_partial=None):
        super().__init__(message)
        self.best_partial = best_partial


@dataclass
class Dataset:
    """Observed inputs and outputs, with optional per-observation noise variances.

    Parameters
    ----------
    X : np.ndarray
        Inputs, shape (n, d).
    Y : np.ndarray
        Observations, shape (n, m); a 1-d array is treated as a single output.
    noise_var : np.ndarray, optional
        Per-observation noise variances, shape (n, m), all >= 0. Absent means
        noise is inferred as a homoskedastic hyperparameter.
    """

    X: np.ndarray
    Y: np.ndarray
    noise_var: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]}"
            )
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X must be (n, d) and Y must be (n, m)")
        if self.noise_var is not None:
            nv = np.asarray(self.noise_var, dtype=np.float64)
            if nv.ndim == 1:
                nv = nv[:, None]
            if nv.shape != Y.shape:
                raise ValueError("noise_var must match Y's shape")
            if np.any(nv < 0):
                raise ValueError("noise variances must be >= 0")
            self.noise_var = nv
        self.X = X
        self.Y = Y

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def output(self, j: int) -> "Dataset":
        """Single-output slice for output column ``j``."""
        nv = None if self.noise_var is None else self.noise_var[:, [j]]
        return Dataset(X=self.X, Y=self.Y[:, [j]], noise_var=nv)

    @classmethod
    def from_csv(cls, path: str) -> "Dataset":
        """Read a dataset from CSV with header ``x1,...,xd,y[,noise_var]``."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = [[float(v) for v in row] for row in reader if row]
        d = sum(1 for h in header if h.startswith("x"))
        expect = [f"x{i + 1}" for i in range(d)] + ["y"]
        has_noise = header[-1] == "noise_var"
        if header != expect + (["noise_var"] if has_noise else []):
            raise ValueError(f"unexpected CSV header {header!r}")
        data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
        X = data[:, :d]
        Y = data[:, d]
        nv = data[:, d + 1] if has_noise else None
        return cls(X=X, Y=Y, noise_var=nv)


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the Matérn-5/2 + constant-mean model (internal scale)."""

    lengthscales: np.ndarray
    outputscale: float
    mean_const: float = 0.0
    noise_var_hom: float = 1e-4

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=np.float64)
        if np.any(ls <= 0) or self.outputscale <= 0 or self.noise_var_hom <= 0:
            raise ValueError("lengthscales, outputscale, noise_var_hom must be > 0")
        object.__setattr__(self, "lengthscales", ls)


@dataclass(frozen=True)
class Transform:
    """Affine maps between original and internal (unit-cube / standardized) units."""

    x_lo: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def identity(cls, d: int) -> "Transform":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    @classmethod
    def from_data(cls, X: np.ndarray, Y: np.ndarray) -> "Transform":
        if X.shape[0] == 0:
            return cls.identity(X.shape[1])
        lo = X.min(axis=0)
        scale = X.max(axis=0) - lo
        scale = np.where(scale > 0, scale, 1.0)
        y_mean = float(Y.mean())
        y_scale = float(Y.std())
        if not y_scale > 0:
            y_scale = 1.0
        return cls(lo, scale, y_mean, y_scale)

    def x_in(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_lo) / self.x_scale

    def y_in(self, Y: np.ndarray) -> np.ndarray:
        return (Y - self.y_mean) / self.y_scale


@dataclass(frozen=True)
class FitConfig:
    n_restarts: int = 8
    seed: int = 0
    maxiter: int = 100
    lengthscale_bounds: tuple[float, float] = (1e-3, 1e3)
    outputscale_bounds: tuple[float, float] = (1e-3, 1e3)
    noise_bounds: tuple[float, float] = (1e-6, 1.0)
    mean_bounds: tuple[float, float] = (-10.0, 10.0)


@dataclass
class GaussianPosterior:
    """Joint Gaussian posterior at a candidate set: mean (q,), cov (q, q)."""

    mean: np.ndarray
    cov: np.ndarray
    includes_observation_noise: bool = False

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.cov = np.asarray(self.cov, dtype=np.float64)
        q = self.mean.shape[0]
        if self.cov.shape != (q, q):
            raise ValueError("cov must be (q, q) matching mean")
        if q >= 1 and np.max(np.abs(self.cov - self.cov.T)) > 1e-12 * max(
            1.0, np.max(np.abs(self.cov))
        ):
            raise ValueError("cov must be symmetric")

    @property
    def q(self) -> int:
        return self.mean.shape[0]

    def root(self) -> np.ndarray:
        return root_decomposition(self.cov)

    def variance(self) -> np.ndarray:
        return np.diag(self.cov).copy()


def kernel_eval(x1: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """Matérn-5/2 ARD covariance between two points."""
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    return float(
        matern52(x1[None, :], x2[None, :], params.lengthscales, params.outputscale)[0, 0]
    )


def root_decomposition(cov: np.ndarray, jitter_floor: float = 1e-8) -> np.ndarray:
    """Lower-triangular L with L L^T = cov, adding jitter only if needed.

    Jitter starts at ``jitter_floor`` times the mean diagonal and escalates by
    decades up to 1e-4 times the mean diagonal before failing.
    """
    cov = np.asarray(cov, dtype=np.float64)
    q = cov.shape[0]
    scale = float(np.mean(np.diag(cov)))
    if scale <= 0:
        scale = 1.0
    try:
        return cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = jitter_floor * scale
    while jitter <= 1e-4 * scale * (1 + 1e-12):
        try:
            return cholesky(cov + jitter * np.eye(q), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise SingularKernelError(
        f"matrix not PSD after jitter escalation to {1e-4 * scale:g}"
    )


def _chol_half(M: np.ndarray) -> np.ndarray:
    """Phi operator of Cholesky differentiation: lower triangle, half diagonal."""
    out = np.tril(M)
    np.fill_diagonal(out, 0.5 * np.diag(M))
    return out


class GPModel:
    """Fitted single-output exact GP. Immutable after construction.

    Construction builds and caches the training Cholesky factor and residual
    solve; ``posterior``, ``fantasize`` and the gradient calls are pure.
    """

    def __init__(
        self,
        dataset: Dataset,
        params: KernelParams,
        transform: Transform | None = None,
    ):
        if dataset.m != 1:
            raise ValueError("GPModel is single-output; use ModelList for m > 1")
        self.dataset = dataset
        self.params = params
        self.transform = (
            transform
            if transform is not None
            else Transform.from_data(dataset.X, dataset.Y)
        )
        self._build_cache()

    def _build_cache(self):
        ds, tr = self.dataset, self.transform
        self._Xn = tr.x_in(ds.X)
        self._yn = tr.y_in(ds.Y[:, 0])
        if ds.noise_var is not None:
            self._noise_n = ds.noise_var[:, 0] / tr.y_scale**2
            # noise model at unseen points: average observed level
            self._new_noise_n = float(self._noise_n.mean()) if ds.n else 0.0
        else:
            self._noise_n = np.full(ds.n, self.params.noise_var_hom)
            self._new_noise_n = self.params.noise_var_hom
        n = ds.n
        if n == 0:
            self.chol_train = np.zeros((0, 0))
            self.alpha = np.zeros(0)
            return
        K = matern52(self._Xn, self._Xn, self.params.lengthscales, self.params.outputscale)
        K[np.diag_indices_from(K)] += self._noise_n
        self.chol_train = root_decomposition(K)
        resid = self._yn - self.params.mean_const
        self.alpha = cho_solve((self.chol_train, True), resid)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.dataset.d

    def _posterior_internal(self, Xn: np.ndarray, observation_noise: bool):
        p = self.params
        q = Xn.shape[0]
        Kxx = matern52(Xn, Xn, p.lengthscales, p.outputscale)
        if self.n == 0:
            mean = np.full(q, p.mean_const)
            cov = Kxx
        else:
            Kxt = matern52(Xn, self._Xn, p.lengthscales, p.outputscale)
            V = solve_triangular(self.chol_train, Kxt.T, lower=True)
            mean = p.mean_const + Kxt @ self.alpha
            cov = Kxx - V.T @ V
        cov = 0.5 * (cov + cov.T)
        if observation_noise:
            cov = cov + self._new_noise_n * np.eye(q)
        return mean, cov

    def posterior(self, X: np.ndarray, observation_noise: bool = False) -> GaussianPosterior:
        """Joint posterior at ``X`` (q, d), in original units.

        ``observation_noise=True`` adds the observation-noise variance to the
        diagonal, i.e. returns the predictive distribution of y rather than f.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        tr = self.transform
        mean_n, cov_n = self._posterior_internal(tr.x_in(X), observation_noise)
        return GaussianPosterior(
            mean=tr.y_mean + tr.y_scale * mean_n,
            cov=tr.y_scale**2 * cov_n,
            includes_observation_noise=observation_noise,
        )

    def posterior_with_grad(self, X: np.ndarray):
        """Posterior plus exact derivatives of its mean and root w.r.t. ``X``.

        Returns ``(post, dmean, droot)`` where ``dmean[i, r, j]`` is
        d mean_i / d X[r, j] (nonzero only for i == r) and
        ``droot[i, k, r, j]`` is d L[i, k] / d X[r, j], with L the lower
        Cholesky root of the noiseless posterior covariance. Original units.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        tr, p = self.transform, self.params
        q, d = X.shape
        Xn = tr.x_in(X)

        mean_n, cov_n = self._posterior_internal(Xn, observation_noise=False)
        D1Kxx = matern52_grad_x1(Xn, Xn, p.lengthscales, p.outputscale)  # (q,q,d)

        dmean = np.zeros((q, q, d))
        # c[i, k, j] = d cov_n[i, k] / d Xn[i, j]
        if self.n == 0:
            c = D1Kxx
        else:
            Kxt = matern52(Xn, self._Xn, p.lengthscales, p.outputscale)
            D1Kxt = matern52_grad_x1(Xn, self._Xn, p.lengthscales, p.outputscale)
            V = solve_triangular(self.chol_train, Kxt.T, lower=True)  # (n,q)
            # T[i] = Ltr^{-1} dKxt[i]/dXn[i], shape (n, d) per candidate
            T = np.stack(
                [solve_triangular(self.chol_train, D1Kxt[i], lower=True) for i in range(q)]
            )
            for i in range(q):
                dmean[i, i, :] = D1Kxt[i].T @ self.alpha
            c = D1Kxx - np.einsum("inj,nk->ikj", T, V)

        L = root_decomposition(cov_n)
        Linv = solve_triangular(L, np.eye(q), lower=True)
        droot = np.zeros((q, q, q, d))
        for r in range(q):
            for j in range(d):
                dS = np.zeros((q, q))
                dS[r, :] += c[r, :, j]
                dS[:, r] += c[r, :, j]
                droot[:, :, r, j] = L @ _chol_half(Linv @ dS @ Linv.T)

        # original units: scale outputs by y_scale, inputs by 1/x_scale
        post = GaussianPosterior(
            mean=tr.y_mean + tr.y_scale * mean_n,
            cov=tr.y_scale**2 * cov_n,
            includes_observation_noise=False,
        )
        dmean = tr.y_scale * dmean / tr.x_scale[None, None, :]
        droot = tr.y_scale * droot / tr.x_scale[None, None, None, :]
        return post, dmean, droot

    def fantasize(self, X: np.ndarray, base_samples: np.ndarray) -> list["GPModel"]:
        """Condition on simulated observations at ``X``: one model per base sample.

        Fantasy i observes y_i = mu(X) + L_sigma eps_i with L_sigma the root of
        the noisy predictive covariance. Hyperparameters and normalization are
        frozen, so all fantasies share an identical posterior covariance and
        differ only in their means.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        E = np.atleast_2d(np.asarray(base_samples, dtype=np.float64))
        q = X.shape[0]
        if E.shape[1] != q:
            raise ValueError(f"base_samples must be (N, {q})")
        post = self.posterior(X, observation_noise=True)
        L = root_decomposition(post.cov)
        ys = post.mean[None, :] + E @ L.T  # (N, q)
        ds, tr = self.dataset, self.transform
        if ds.noise_var is not None:
            new_nv = np.full((q, 1), self._new_noise_n * tr.y_scale**2)
        out = []
        for i in range(E.shape[0]):
            if ds.noise_var is not None:
                aug = Dataset(
                    X=np.vstack([ds.X, X]),
                    Y=np.vstack([ds.Y, ys[i][:, None]]),
                    noise_var=np.vstack([ds.noise_var, new_nv]),
                )
            else:
                aug = Dataset(X=np.vstack([ds.X, X]), Y=np.vstack([ds.Y, ys[i][:, None]]))
            out.append(GPModel(aug, self.params, transform=tr))
        return out

    def to_dict(self) -> dict:
        ds = self.dataset
        doc = {
            "schema": 1,
            "params": {
                "lengthscales": self.params.lengthscales.tolist(),
                "outputscale": self.params.outputscale,
                "mean_const": self.params.mean_const,
                "noise_var_hom": self.params.noise_var_hom,
            },
            "transform": {
                "x_lo": self.transform.x_lo.tolist(),
                "x_scale": self.transform.x_scale.tolist(),
                "y_mean": self.transform.y_mean,
                "y_scale": self.transform.y_scale,
            },
            "data": {
                "X": ds.X.tolist(),
                "Y": ds.Y.tolist(),
                "noise_var": None if ds.noise_var is None else ds.noise_var.tolist(),
            },
        }
        return doc

    def save(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "GPModel":
        if doc.get("schema") != 1:
            raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
        p = doc["params"]
        t = doc["transform"]
        dd = doc["data"]
        nv = dd["noise_var"]
        ds = Dataset(
            X=np.asarray(dd["X"], dtype=np.float64),
            Y=np.asarray(dd["Y"], dtype=np.float64),
            noise_var=None if nv is None else np.asarray(nv, dtype=np.float64),
        )
        params = KernelParams(
            lengthscales=np.asarray(p["lengthscales"], dtype=np.float64),
            outputscale=float(p["outputscale"]),
            mean_const=float(p["mean_const"]),
            noise_var_hom=float(p["noise_var_hom"]),
        )
        tr = Transform(
            x_lo=np.asarray(t["x_lo"], dtype=np.float64),
            x_scale=np.asarray(t["x_scale"], dtype=np.float64),
            y_mean=float(t["y_mean"]),
            y_scale=float(t["y_scale"]),
        )
        return cls(ds, params, transform=tr)

    @classmethod
    def load(cls, path: str) -> "GPModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def log_marginal_likelihood(model: GPModel):
    """Gaussian log evidence of the training data (internal standardized units).

    Returns ``(lml, grad)`` with the gradient taken w.r.t. the packed
    log-hyperparameter vector used by ``fit_mle``:
    ``[log lengthscales (d), log outputscale, (log noise_var_hom), mean_const]``,
    the log-noise entry present only when noise is a fitted hyperparameter.
    """
    if model.n < 1:
        raise ValueError("log marginal likelihood requires n >= 1")
    p = model.params
    n = model.n
    L = model.chol_train
    alpha = model.alpha
    resid = model._yn - p.mean_const
    lml = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * n * _LOG_2PI
    )
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    dK_dlog_ls, K_nonoise = matern52_grad_log_hyper(
        model._Xn, model._Xn, p.lengthscales, p.outputscale
    )
    grad = [0.5 * np.einsum("ij,ijk->k", W, dK_dlog_ls)]
    grad.append(np.array([0.5 * np.sum(W * K_nonoise)]))
    if model.dataset.noise_var is None:
        grad.append(np.array([0.5 * p.noise_var_hom * np.trace(W)]))
    grad.append(np.array([float(np.sum(alpha))]))
    return lml, np.concatenate(grad)


def _unpack(theta: np.ndarray, d: int, fit_noise: bool, default_noise: float) -> KernelParams:
    ls = np.exp(theta[:d])
    os_ = float(np.exp(theta[d]))
    if fit_noise:
        noise = float(np.exp(theta[d + 1]))
        mean = float(theta[d + 2])
    else:
        noise = default_noise
        mean = float(theta[d + 1])
    return KernelParams(
        lengthscales=ls, outputscale=os_, mean_const=mean, noise_var_hom=noise
    )


def fit_mle(dataset: Dataset, config: FitConfig = FitConfig()) -> GPModel:
    """Fit hyperparameters by multi-start L-BFGS-B on the log evidence.

    Deterministic given ``config.seed``; the best restart wins, ties broken by
    lowest restart index. Raises ``FitError`` (carrying the best partial model)
    only if every restart fails.
    """
    if dataset.m != 1:
        raise ValueError("fit_mle handles one output; use fit_model_list for m > 1")
    if dataset.n < 2:
        raise ValueError("hyperparameter inference requires n >= 2")
    transform = Transform.from_data(dataset.X, dataset.Y)
    d = dataset.d
    fit_noise = dataset.noise_var is None

    lb = [np.log(config.lengthscale_bounds[0])] * d + [np.log(config.outputscale_bounds[0])]
    ub = [np.log(config.lengthscale_bounds[1])] * d + [np.log(config.outputscale_bounds[1])]
    if fit_noise:
        lb.append(np.log(config.noise_bounds[0]))
        ub.append(np.log(config.noise_bounds[1]))
    lb.append(config.mean_bounds[0])
    ub.append(config.mean_bounds[1])
    lb, ub = np.asarray(lb), np.asarray(ub)
    bounds = list(zip(lb, ub))

    def objective(theta):
        params = _unpack(theta, d, fit_noise, 1e-6)
        try:
            model = GPModel(dataset, params, transform=transform)
            lml, grad = log_marginal_likelihood(model)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(theta)
        return -lml, -grad

    # default start: moderate lengthscales on the unit cube, unit signal
    x0 = [np.log(0.3)] * d + [0.0]
    if fit_noise:
        x0.append(np.log(1e-2))
    x0.append(0.0)
    starts = [np.clip(np.asarray(x0), lb, ub)]
    rng = np.random.Generator(np.random.Philox(key=np.uint64(config.seed)))
    for _ in range(config.n_restarts - 1):
        starts.append(lb + rng.random(lb.shape[0]) * (ub - lb))

    best = None
    for idx, s in enumerate(starts):
        try:
            res = minimize(
                objective,
                s,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": config.maxiter},
            )
        except (np.linalg.LinAlgError, FloatingPointError):
            continue
        if not np.isfinite(res.fun) or res.fun >= 1e24:
            continue
        if best is None or res.fun < best[0]:
            best = (res.fun, idx, res.x)
    if best is None:
        partial = None
        try:
            partial = GPModel(dataset, _unpack(starts[0], d, fit_noise, 1e-6), transform)
        except np.linalg.LinAlgError:
            pass
        raise FitError("all hyperparameter restarts failed", best_partial=partial)
    params = _unpack(best[2], d, fit_noise, 1e-6)
    return GPModel(dataset, params, transform=transform)


class ModelList:
    """Independent single-output GPs over a shared input set."""

    def __init__(self, models: list[GPModel]):
        if not models:
            raise ValueError("ModelList needs at least one model")
        X0 = models[0].dataset.X
        for m in models[1:]:
            if m.dataset.X.shape != X0.shape or not np.array_equal(m.dataset.X, X0):
                raise ValueError("all models in a ModelList must share training inputs")
        self.models = models

    @property
    def m(self) -> int:
        return len(self.models)

    def posterior(self, X: np.ndarray, observation_noise: bool = False) -> list[GaussianPosterior]:
        return [g.posterior(X, observation_noise) for g in self.models]

    def fantasize(self, X: np.ndarray, base_samples: np.ndarray) -> list["ModelList"]:
        """Joint fantasies from per-output base samples of shape (N, q, m)."""
        E = np.asarray(base_samples, dtype=np.float64)
        if E.ndim != 3 or E.shape[2] != self.m:
            raise ValueError("base_samples must be (N, q, m)")
        per_output = [g.fantasize(X, E[:, :, j]) for j, g in enumerate(self.models)]
        return [ModelList([per_output[j][i] for j in range(self.m)]) for i in range(E.shape[0])]


def fit_model_list(dataset: Dataset, config: FitConfig = FitConfig()) -> ModelList:
    """Fit one independent GP per output column."""
    return ModelList([fit_mle(dataset.output(j), config) for j in range(dataset.m)])
