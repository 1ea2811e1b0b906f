"""Bayesian-optimization baseline over the log-domain weight box.

A Gaussian-process surrogate with an ARD Matern 5/2 kernel is fit by
marginal-likelihood maximization (multi-start Nelder-Mead in log
hyperparameter space); candidates are scored with expected improvement plus
a configurable exploration jitter and the best one is polished locally
before evaluation.  Everything is deterministic given the seed.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import norm

SQRT5 = np.sqrt(5.0)


class IllConditionedError(RuntimeError):
    """Kernel matrix factorization failed at every jitter level."""


def _scaled_sqdist(X1, X2, lengthscales):
    A = X1 / lengthscales
    B = X2 / lengthscales
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def matern52_matrix(X1, X2, lengthscales, signal_var):
    """ARD Matern 5/2 kernel matrix between two sets of rows."""
    r = np.sqrt(_scaled_sqdist(X1, X2, lengthscales))
    return signal_var * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def matern52_ard(x1, x2, lengthscales, signal_var=1.0):
    """Scalar ARD Matern 5/2 covariance between two points."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=np.float64), x1.shape)
    return float(matern52_matrix(x1[None, :], x2[None, :], ls, signal_var)[0, 0])


def _chol_jittered(K):
    jitter = 0.0
    for _ in range(12):
        try:
            factor = cho_factor(
                K if jitter == 0.0 else K + jitter * np.eye(K.shape[0]), lower=True
            )
            return factor, jitter
        except LinAlgError:
            jitter = max(10.0 * jitter, 1e-12 * np.mean(np.diag(K)), 1e-300)
    raise IllConditionedError("kernel matrix is not factorizable at any jitter")


def _nlml(log_theta, X, y):
    """Negative log marginal likelihood; theta = ln(ls_1..ls_d, sv, nv)."""
    d = X.shape[1]
    theta = np.exp(np.clip(log_theta, -30.0, 30.0))
    ls, sv, nv = theta[:d], theta[d], theta[d + 1]
    n = X.shape[0]
    K = matern52_matrix(X, X, ls, sv) + nv * np.eye(n)
    try:
        factor, _ = _chol_jittered(K)
    except IllConditionedError:
        return 1e30
    alpha = cho_solve(factor, y)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(0.5 * y @ alpha + 0.5 * logdet + 0.5 * n * np.log(2.0 * np.pi))


@dataclass
class GpModel:
    """Fitted GP with cached factorization; predictions in original units."""

    X: np.ndarray
    y: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    _factor: tuple = field(repr=False, default=None)
    _alpha: np.ndarray = field(repr=False, default=None)
    _ymean: float = 0.0

    def predict(self, Xq):
        """Posterior mean and latent variance at query rows."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        Ks = matern52_matrix(Xq, self.X, self.lengthscales, self.signal_var)
        mu = self._ymean + Ks @ self._alpha
        V = cho_solve(self._factor, Ks.T)
        var = self.signal_var - np.sum(Ks * V.T, axis=1)
        return mu, np.maximum(var, 0.0)


def gp_fit(X, y, seed=0, n_restarts=8, max_iter=200) -> GpModel:
    """Fit hyperparameters by multi-start Nelder-Mead on the NLML.

    Raises:
        IllConditionedError: no jittered factorization of the final kernel
            matrix succeeds.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("gp_fit needs at least two observations")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    ymean = float(np.mean(y))
    yc = y - ymean
    yscale = float(np.std(yc))
    if yscale == 0.0:
        yscale = 1.0
    ys = yc / yscale

    span = np.maximum(X.max(axis=0) - X.min(axis=0), 1e-6)
    base = np.log(np.concatenate([span / 2.0, [1.0, 1e-4]]))
    lo = np.concatenate([np.log(span * 1e-3), [np.log(1e-6), np.log(1e-9)]])
    hi = np.concatenate([np.log(span * 1e3), [np.log(1e3), np.log(1e1)]])
    rng = np.random.default_rng(seed)
    starts = [base]
    for _ in range(n_restarts - 1):
        starts.append(np.clip(base + rng.normal(scale=1.5, size=d + 2), lo, hi))

    best = None
    for s in starts:
        res = minimize(
            _nlml,
            s,
            args=(X, ys),
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options=dict(maxiter=max_iter, xatol=1e-4, fatol=1e-6),
        )
        if best is None or res.fun < best.fun:
            best = res
    theta = np.exp(best.x)
    ls = theta[:d]
    sv = float(theta[d] * yscale * yscale)
    nv = float(theta[d + 1] * yscale * yscale)

    K = matern52_matrix(X, X, ls, sv) + nv * np.eye(n)
    factor, jitter = _chol_jittered(K)
    model = GpModel(
        X=X,
        y=y,
        lengthscales=ls,
        signal_var=sv,
        noise_var=nv + jitter,
        _factor=factor,
        _alpha=cho_solve(factor, yc),
        _ymean=ymean,
    )
    return model


def expected_improvement(model: GpModel, x, best_y, jitter=0.0):
    """EI for minimization with an exploration margin ``jitter``.

    Zero wherever the posterior deviation vanishes.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    mu, var = model.predict(np.atleast_2d(x))
    sigma = np.sqrt(var)
    imp = best_y - mu - jitter
    ei = np.zeros(len(mu))
    ok = sigma > 0.0
    z = imp[ok] / sigma[ok]
    ei[ok] = imp[ok] * norm.cdf(z) + sigma[ok] * norm.pdf(z)
    out = np.maximum(ei, 0.0)
    return float(out[0]) if single else out


def latin_hypercube(n, bounds, rng):
    """n seeded Latin-hypercube samples inside (d, 2) bounds."""
    bounds = np.asarray(bounds, dtype=np.float64)
    d = bounds.shape[0]
    u = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.uniform(size=(n, d))) / n
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])


@dataclass
class BoConfig:
    """Search box (log domain), evaluation budget, and acquisition knobs."""

    bounds: np.ndarray
    budget: int = 100
    init_design: int = 10
    jitter: float = 0.01
    seed: int = 0
    candidates: int = 2048
    incumbent_var_floor: float = 1e-6

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=np.float64))
        if self.bounds.shape[1] != 2 or np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError("bounds must be (d, 2) with lo < hi")
        if not (self.budget >= self.init_design >= 2):
            raise ValueError("need budget >= init_design >= 2")


@dataclass
class BoEvaluation:
    index: int
    x: np.ndarray
    objective: float
    best_so_far: float
    wall_s: float


@dataclass
class BoResult:
    best_x: np.ndarray
    best_y: float
    X: np.ndarray
    y: np.ndarray
    evaluations: list
    failures: int


def bo_minimize(objective, cfg: BoConfig) -> BoResult:
    """Minimize a scalar objective over the bounded box.

    Failures of the objective enter the history as +inf (and are replaced by
    a large finite penalty when fitting the surrogate).
    """
    rng = np.random.default_rng(cfg.seed)
    d = cfg.bounds.shape[0]
    lo, hi = cfg.bounds[:, 0], cfg.bounds[:, 1]
    X = list(latin_hypercube(cfg.init_design, cfg.bounds, rng))
    evals = []
    ys = []
    failures = 0

    def run(x, idx):
        nonlocal failures
        t0 = time.perf_counter()
        try:
            val = float(objective(x))
        except Exception as err:  # propagate failures as +inf observations
            warnings.warn(f"objective evaluation {idx} failed: {err}", stacklevel=2)
            val = np.inf
        if not np.isfinite(val):
            failures += 1
            val = np.inf
        ys.append(val)
        best = float(np.min(ys))
        evals.append(
            BoEvaluation(
                index=idx,
                x=np.asarray(x, dtype=np.float64).copy(),
                objective=val,
                best_so_far=best,
                wall_s=time.perf_counter() - t0,
            )
        )

    for i, x in enumerate(X):
        run(x, i)

    for i in range(cfg.init_design, cfg.budget):
        yarr = np.asarray(ys)
        finite = np.isfinite(yarr)
        if not np.any(finite):
            x_next = rng.uniform(lo, hi)
            X.append(x_next)
            run(x_next, i)
            continue
        penalty = yarr[finite].max() + 3.0 * max(np.ptp(yarr[finite]), 1.0)
        yfit = np.where(finite, yarr, penalty)
        model = gp_fit(np.asarray(X), yfit, seed=cfg.seed)
        best_y = float(yarr[finite].min())
        incumbent = np.asarray(X)[int(np.argmin(yfit))]
        jitter = cfg.jitter * abs(best_y)  # exploration margin, incumbent-relative

        cand = rng.uniform(lo, hi, size=(cfg.candidates, d))
        local = incumbent + rng.normal(size=(64, d)) * 0.05 * (hi - lo)
        tight = incumbent + rng.normal(size=(64, d)) * 0.005 * (hi - lo)
        cand = np.clip(np.vstack([cand, local, tight]), lo, hi)

        def propose(margin):
            ei = expected_improvement(model, cand, best_y, margin)
            x0 = cand[int(np.argmax(ei))]
            polish = minimize(
                lambda x: -expected_improvement(model, x, best_y, margin),
                x0,
                method="Nelder-Mead",
                bounds=list(zip(lo, hi)),
                options=dict(maxiter=100 * d, xatol=1e-6, fatol=1e-12),
            )
            return np.clip(polish.x, lo, hi)

        x_next = propose(jitter)
        # over-exploitation escape: proposing an effective duplicate of a
        # known sample (vanishing posterior variance) gains nothing on a
        # deterministic objective, so the acquisition re-runs with an
        # escalated exploration margin
        _, next_var = model.predict(x_next[None, :])
        dup = np.min(np.linalg.norm(np.asarray(X) - x_next, axis=1)) < 1e-6 * np.max(hi - lo)
        if dup and next_var[0] < cfg.incumbent_var_floor:
            jitter = max(10.0 * jitter, 0.1 * float(np.std(yfit)))
            x_next = propose(jitter)
        X.append(x_next)
        run(x_next, i)

    yarr = np.asarray(ys)
    best_idx = int(np.argmin(yarr))
    return BoResult(
        best_x=np.asarray(X)[best_idx].copy(),
        best_y=float(yarr[best_idx]),
        X=np.asarray(X),
        y=yarr,
        evaluations=evals,
        failures=failures,
    )
