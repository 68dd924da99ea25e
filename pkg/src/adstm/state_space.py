"""
Bias-augmented dynamic linear model: Kalman filter, FFBS and Gibbs sampler.

State ``theta_t = (alpha_t, gamma_t)`` where ``alpha`` are the retained
Fourier coefficients and ``gamma`` the random-walk bias correction:

    y_t     = F_t theta_t + v_t,          v_t ~ N(0, V_t)
    theta_t = G_t theta_{t-1} + w_{t-1},  w   ~ N(0, W)

with ``G_t = [[exp(P_t), I], [0, I]]``, ``F_t = [K_t F, 0]`` and ``V_t``
diagonal with one variance per source.  ``W ~ IW(Phi, nu)`` and
``sigma2_m ~ IG(a_m, b_m)`` are updated by their conjugate conditionals.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.stats import invwishart

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The sampled state trajectory became non-finite."""


@dataclass
class FilterState:
    m_pred: np.ndarray
    c_pred: np.ndarray
    m_filt: np.ndarray
    c_filt: np.ndarray


def build_G(exp_p: np.ndarray) -> np.ndarray:
    """Transition of the bias-augmented state, ``[[exp_p, I], [0, I]]``."""
    exp_p = np.atleast_2d(np.asarray(exp_p, dtype=float))
    q = exp_p.shape[0]
    if exp_p.shape != (q, q):
        raise ValueError("exp_p must be square")
    eye = np.eye(q)
    return np.block([[exp_p, eye], [np.zeros((q, q)), eye]])


def _sym(a):
    return 0.5 * (a + a.T)


def _cho(S, what="innovation covariance"):
    try:
        return sla.cho_factor(S, lower=True, check_finite=False)
    except sla.LinAlgError:
        jitter = 1e-8 * np.trace(S) / len(S)
        log.warning("%s not positive definite; adding jitter %.3g", what, jitter)
        return sla.cho_factor(S + jitter * np.eye(len(S)), lower=True, check_finite=False)


def kalman_step(m_prev, c_prev, G, F, y, V, W, form: str = "auto") -> FilterState:
    """One predict/update cycle.

    Parameters
    ----------
    m_prev, c_prev : previous filtered mean and covariance.
    G, F : transition and observation matrices.
    y : observation vector, possibly empty.
    V : observation covariance, either a full matrix or the 1-D diagonal.
    W : state noise covariance.
    form : ``"innovation"`` inverts the ``len(y)``-sized innovation
        covariance; ``"information"`` works in state dimension and needs a
        diagonal ``V``.  The two agree algebraically; ``"auto"`` takes
        whichever is smaller.
    """
    m_pred = G @ m_prev
    c_pred = _sym(G @ c_prev @ G.T + W)
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        return FilterState(m_pred, c_pred, m_pred.copy(), c_pred.copy())

    F = np.asarray(F, dtype=float)
    V = np.asarray(V, dtype=float)
    diag = V.ndim == 1
    d = len(m_pred)
    if form == "auto":
        form = "information" if (diag and y.size > d) else "innovation"

    resid = y - F @ m_pred
    if form == "innovation":
        Vm = np.diag(V) if diag else V
        S = _sym(F @ c_pred @ F.T + Vm)
        PHt = c_pred @ F.T
        cf = _cho(S)
        K = sla.cho_solve(cf, PHt.T, check_finite=False).T
        m_filt = m_pred + K @ resid
        c_filt = c_pred - K @ PHt.T
    elif form == "information":
        if not diag:
            raise ValueError("information form needs a diagonal V")
        Fw = F / V[:, None]
        J = F.T @ Fw
        c_filt = sla.solve(np.eye(d) + c_pred @ J, c_pred, check_finite=False)
        c_filt = _sym(c_filt)
        m_filt = m_pred + c_filt @ (Fw.T @ resid)
    else:
        raise ValueError(f"unknown form {form!r}")
    return FilterState(m_pred, c_pred, m_filt, _sym(c_filt))


def sample_mvn(mean, cov, rng):
    """Draw from N(mean, cov), tolerating a positive semi-definite ``cov``."""
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(_sym(cov))
        L = U * np.sqrt(np.clip(w, 0.0, None))
    return mean + L @ rng.standard_normal(len(mean))


@dataclass
class StateSpaceModel:
    """Observations plus everything except the unknowns ``W`` and ``sigma2``.

    ``obs_matrix[t]`` maps the state to ``y[t]`` (``t = 1..T`` stored at
    index ``t - 1``); ``row_source[t]`` gives each row's source position,
    indexing ``sigma2``.  Observation matrices may be given lazily as
    callables to save memory on large grids.
    """

    y: list
    obs_matrix: list
    row_source: list
    m0: np.ndarray
    C0: np.ndarray
    n_sources: int

    @property
    def T(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return len(self.m0)

    def H(self, t: int) -> np.ndarray:
        h = self.obs_matrix[t]
        return h() if callable(h) else h


def forward_filter(model: StateSpaceModel, Gs, W, sigma2) -> list:
    """Kalman filter over ``t = 1..T``; ``Gs[t-1]`` maps ``theta_{t-1}`` to ``theta_t``."""
    sigma2 = np.asarray(sigma2, dtype=float)
    m, C = model.m0, model.C0
    out = []
    for t in range(model.T):
        y = model.y[t]
        v = sigma2[model.row_source[t]] if y.size else np.zeros(0)
        H = model.H(t) if y.size else np.zeros((0, model.dim))
        fs = kalman_step(m, C, Gs[t], H, y, v, W)
        out.append(fs)
        m, C = fs.m_filt, fs.c_filt
    return out


def backward_sample(filtered, Gs, m0, C0, rng) -> np.ndarray:
    """Backward pass of FFBS; returns ``theta_{0:T}`` as a ``(T+1, d)`` array."""
    T = len(filtered)
    d = len(m0)
    theta = np.empty((T + 1, d))
    theta[T] = sample_mvn(filtered[-1].m_filt, filtered[-1].c_filt, rng)
    for t in range(T - 1, -1, -1):
        m, C = (m0, C0) if t == 0 else (filtered[t - 1].m_filt, filtered[t - 1].c_filt)
        nxt = filtered[t]  # holds m_{t+1|t}, C_{t+1|t}
        G = Gs[t]
        GC = G @ C
        A = sla.cho_solve(_cho(nxt.c_pred, "predictive covariance"), GC, check_finite=False)
        h = m + A.T @ (theta[t + 1] - nxt.m_pred)
        Hc = _sym(C - GC.T @ A)
        theta[t] = sample_mvn(h, Hc, rng)
    return theta


def ffbs(model: StateSpaceModel, Gs, W, sigma2, rng) -> np.ndarray:
    filtered = forward_filter(model, Gs, W, sigma2)
    theta = backward_sample(filtered, Gs, model.m0, model.C0, rng)
    if not np.all(np.isfinite(theta)):
        raise DivergenceError("FFBS produced a non-finite state trajectory")
    return theta


def w_posterior(theta, Gs, phi, nu):
    """Conjugate inverse-Wishart parameters ``(scale, df)`` given ``theta_{0:T}``."""
    theta = np.asarray(theta, dtype=float)
    scale = np.array(phi, dtype=float, copy=True)
    T = len(theta) - 1
    for t in range(1, T + 1):
        r = theta[t] - Gs[t - 1] @ theta[t - 1]
        scale += np.outer(r, r)
    return _sym(scale), nu + T


def gibbs_update_W(theta, Gs, phi, nu, rng):
    scale, df = w_posterior(theta, Gs, phi, nu)
    try:
        np.linalg.cholesky(scale)
    except np.linalg.LinAlgError as exc:
        raise ValueError("inverse-Wishart scale is not positive definite") from exc
    W = invwishart.rvs(df=df, scale=scale, random_state=rng)
    return _sym(np.atleast_2d(W))


def sigma2_posterior(residuals, a, b):
    """Conjugate inverse-gamma ``(shape, rate)`` from a source's residuals."""
    r = np.concatenate([np.ravel(x) for x in residuals]) if len(residuals) else np.zeros(0)
    return a + r.size / 2.0, b + 0.5 * float(r @ r)


def gibbs_update_sigma2(residuals, a, b, rng):
    shape, rate = sigma2_posterior(residuals, a, b)
    return rate / rng.gamma(shape)


def fit_data_driven_G(theta, W, rng=None):
    """Least-squares transition ``(Theta_1 - w) Theta_2^+`` from one trajectory.

    ``theta`` holds ``theta_1..theta_T`` as rows (pass ``theta[1:]`` for a
    trajectory that starts at ``theta_0``).  With ``rng`` given, the noise
    columns ``w_j ~ N(0, W)`` are drawn and subtracted; the pseudo-inverse
    then drops singular directions of ``Theta_2`` weaker than the spectral
    norm of the drawn noise, which are not identifiable and would otherwise
    amplify ``w`` without bound.  Without ``rng``, ``w = 0`` and the plain
    minimum-norm solution is returned.
    """
    theta = np.asarray(theta, dtype=float)
    T, K = theta.shape
    if T < 2:
        raise ValueError("need at least two states")
    theta1 = theta[1:].T
    theta2 = theta[:-1].T
    if T - 1 < K:
        warnings.warn(f"data-driven G: {T - 1} transitions for {K} states; using the minimum-norm solution",
                      RuntimeWarning, stacklevel=2)
    if rng is None:
        return theta1 @ np.linalg.pinv(theta2)
    L = np.linalg.cholesky(_sym(W) + 1e-12 * np.eye(K))
    w = L @ rng.standard_normal((K, T - 1))
    U, s, Vt = np.linalg.svd(theta2, full_matrices=False)
    keep = s > max(np.linalg.norm(w, 2), s[0] * 1e-12)
    return (theta1 - w) @ (Vt[keep].T / s[keep]) @ U[:, keep].T


@dataclass
class Priors:
    phi: np.ndarray
    nu: float
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def default(cls, dim, n_sources, phi_scale=0.01, ab=0.01):
        return cls(phi_scale * np.eye(dim), dim + 2, np.full(n_sources, ab), np.full(n_sources, ab))


@dataclass
class GibbsConfig:
    seed: int
    iters: int = 500
    burn_in: int = 200
    store_w: bool | None = None  # None: keep W draws only when dim <= 256

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required")
        if not (self.iters > self.burn_in >= 0):
            raise ValueError("need iters > burn_in >= 0")


@dataclass
class PosteriorDraws:
    theta: np.ndarray  # (n_keep, T+1, d)
    sigma2: np.ndarray  # (n_keep, M)
    w_mean: np.ndarray
    w: np.ndarray | None = None  # (n_keep, d, d)
    G: np.ndarray | None = None  # (n_keep, d, d), data-driven chains only
    burn_in: int = 0
    seed: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.theta)

    @property
    def theta_mean(self):
        return self.theta.mean(axis=0)

    @property
    def sigma2_mean(self):
        return self.sigma2.mean(axis=0)

    @property
    def G_mean(self):
        return None if self.G is None else self.G.mean(axis=0)


def _initial_sigma2(model):
    out = np.ones(model.n_sources)
    for m in range(model.n_sources):
        vals = [y[rs == m] for y, rs in zip(model.y, model.row_source) if y.size]
        vals = np.concatenate(vals) if vals else np.zeros(0)
        if vals.size > 1 and np.var(vals) > 0:
            out[m] = 0.1 * np.var(vals)
    return out


def _source_residuals(model, theta):
    res = [[] for _ in range(model.n_sources)]
    for t in range(model.T):
        y = model.y[t]
        if not y.size:
            continue
        e = y - model.H(t) @ theta[t + 1]
        rs = model.row_source[t]
        for m in range(model.n_sources):
            res[m].append(e[rs == m])
    return res


def run_gibbs(model: StateSpaceModel, config: GibbsConfig, priors: Priors, Gs=None, learn_G: bool = False,
              G_init=None, callback=None) -> PosteriorDraws:
    """Gibbs sampler alternating FFBS with the ``W`` and ``sigma2`` conditionals.

    With ``learn_G`` the transition is re-estimated after every FFBS draw
    by :func:`fit_data_driven_G` (time-invariant ``G``) instead of being
    supplied through ``Gs``.
    """
    rng = np.random.default_rng(config.seed)
    d, T = model.dim, model.T
    if learn_G:
        G = np.eye(d) if G_init is None else np.asarray(G_init, dtype=float)
        Gs = [G] * T
    elif Gs is None:
        raise ValueError("Gs is required unless learn_G is set")
    elif len(Gs) != T:
        raise ValueError(f"expected {T} transition matrices, got {len(Gs)}")

    W = priors.phi / (priors.nu - d - 1) if priors.nu > d + 1 else priors.phi.copy()
    sigma2 = _initial_sigma2(model)
    store_w = config.store_w if config.store_w is not None else d <= 256
    n_keep = config.iters - config.burn_in
    thetas = np.empty((n_keep, T + 1, d))
    s2s = np.empty((n_keep, model.n_sources))
    ws = np.empty((n_keep, d, d)) if store_w else None
    gs = np.empty((n_keep, d, d)) if learn_G else None
    w_sum = np.zeros((d, d))

    for it in range(config.iters):
        try:
            theta = ffbs(model, Gs, W, sigma2, rng)
        except DivergenceError as exc:
            raise DivergenceError(f"iteration {it}: {exc}") from exc
        if learn_G:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                G = fit_data_driven_G(theta[1:], W, rng)
            if not np.all(np.isfinite(G)):
                raise DivergenceError(f"iteration {it}: non-finite transition estimate")
            Gs = [G] * T
        W = gibbs_update_W(theta, Gs, priors.phi, priors.nu, rng)
        res = _source_residuals(model, theta)
        sigma2 = np.array([gibbs_update_sigma2(res[m], priors.a[m], priors.b[m], rng)
                           for m in range(model.n_sources)])
        if it >= config.burn_in:
            k = it - config.burn_in
            thetas[k] = theta
            s2s[k] = sigma2
            w_sum += W
            if store_w:
                ws[k] = W
            if learn_G:
                gs[k] = G
        if callback is not None:
            callback(it, theta, W, sigma2)
    if learn_G and T - 1 < d:
        warnings.warn(f"data-driven G: {T - 1} transitions for {d} states; minimum-norm solutions used",
                      RuntimeWarning, stacklevel=2)
    return PosteriorDraws(thetas, s2s, w_sum / n_keep, ws, gs, config.burn_in, config.seed)


def predict(theta_hat, G_supplier, k: int) -> list:
    """Iterate ``theta_{T+j} = G_{T+j} theta_{T+j-1}`` for ``j = 1..k``.

    ``G_supplier`` is a matrix (held constant) or a callable ``j -> G``.
    Returns the list ``[theta_T, theta_{T+1}, ..., theta_{T+k}]``.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    out = [np.asarray(theta_hat, dtype=float)]
    for j in range(1, k + 1):
        G = G_supplier(j) if callable(G_supplier) else G_supplier
        out.append(G @ out[-1])
    return out


def compute_mse(predicted, reference) -> float:
    """Mean squared difference over the pixels observed in ``reference``."""
    predicted = np.asarray(predicted, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if predicted.shape != reference.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {reference.shape}")
    ok = np.isfinite(reference) & np.isfinite(predicted)
    if not ok.any():
        raise ValueError("no overlapping observed pixels")
    return float(np.mean((predicted[ok] - reference[ok]) ** 2))
