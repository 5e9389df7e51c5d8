"""
ARIMA(p, 0, q) baseline: exact Gaussian maximum likelihood, AIC order
selection and multi-step forecasts.

The model for the demeaned series x_t = y_t - mu is

    x_t - phi_1 x_{t-1} - ... - phi_p x_{t-p} = e_t + theta_1 e_{t-1} + ... + theta_q e_{t-q}

with e_t ~ N(0, sigma^2). The exact likelihood comes from the innovations
algorithm applied to the transformed process of Ansley (1979), as laid out in
Brockwell & Davis, "Time Series: Theory and Methods", sec. 5.3 and 8.7.
Coefficients are optimized through partial-autocorrelation parameters, so
every candidate model is causal and invertible.
"""

from __future__ import annotations

import configparser
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from .errors import ContractError, FitError

__all__ = [
    "ArimaModel",
    "ConstraintError",
    "arma_acovf",
    "psi_weights",
    "exact_loglik",
    "fit",
    "aic",
    "select_order",
    "forecast",
]

MAX_ITER = 200
_PACF_BOUND = 8.0
_PENALTY = 1e10


class ConstraintError(FitError):
    """Fitted polynomial has a root on or inside the unit circle."""


@dataclass
class ArimaModel:
    p: int
    q: int
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    innovation_var: float
    n_obs: int
    loglik: float
    d: int = 0
    std_errors: np.ndarray | None = field(default=None, repr=False)
    iterations: int = 0

    def __post_init__(self):
        self.ar = np.asarray(self.ar, dtype=float)
        self.ma = np.asarray(self.ma, dtype=float)
        if len(self.ar) != self.p or len(self.ma) != self.q:
            raise ContractError("coefficient lengths do not match the orders")
        if self.d != 0:
            raise ContractError("only d = 0 is supported")
        if not self.innovation_var > 0:
            raise ContractError("innovation variance must be positive")

    @property
    def order(self):
        return (self.p, self.d, self.q)

    def save(self, path) -> Path:
        cfg = configparser.ConfigParser()
        cfg["order"] = {"p": str(self.p), "d": str(self.d), "q": str(self.q)}
        cfg["parameters"] = {
            "ar": ", ".join(repr(float(v)) for v in self.ar),
            "ma": ", ".join(repr(float(v)) for v in self.ma),
            "intercept": repr(self.intercept),
            "innovation_var": repr(self.innovation_var),
        }
        cfg["fit"] = {"n_obs": str(self.n_obs), "loglik": repr(self.loglik), "aic": repr(aic(self))}
        path = Path(path)
        with path.open("w") as fh:
            cfg.write(fh)
        return path

    @classmethod
    def load(cls, path) -> "ArimaModel":
        cfg = configparser.ConfigParser()
        cfg.read(path)

        def floats(text):
            return [float(v) for v in text.split(",") if v.strip()]

        par = cfg["parameters"]
        return cls(cfg["order"].getint("p"), cfg["order"].getint("q"), floats(par["ar"]),
                   floats(par["ma"]), par.getfloat("intercept"), par.getfloat("innovation_var"),
                   cfg["fit"].getint("n_obs"), cfg["fit"].getfloat("loglik"))


def _pacf_to_coeffs(r):
    """Durbin-Levinson map from partial autocorrelations to AR coefficients."""
    phi = np.zeros(0)
    for rk in r:
        phi = np.r_[phi - rk * phi[::-1], rk]
    return phi


def _coeffs_to_pacf(phi):
    """Inverse of ``_pacf_to_coeffs`` for a causal coefficient vector."""
    phi = np.array(phi, dtype=float)
    r = np.zeros(len(phi))
    for k in range(len(phi), 0, -1):
        rk = phi[k - 1]
        r[k - 1] = rk
        if k > 1:
            phi = (phi[:k - 1] + rk * phi[:k - 1][::-1]) / (1.0 - rk * rk)
    return r


def _unpack(x, p, q):
    ar = _pacf_to_coeffs(np.tanh(x[:p]))
    ma = -_pacf_to_coeffs(np.tanh(x[p:p + q]))
    return ar, ma


def psi_weights(ar, ma, n) -> np.ndarray:
    """First ``n`` coefficients of the causal MA(infinity) representation."""
    ar, ma = np.asarray(ar, dtype=float), np.asarray(ma, dtype=float)
    psi = np.zeros(n)
    for j in range(n):
        v = 1.0 if j == 0 else (ma[j - 1] if j <= len(ma) else 0.0)
        for i in range(1, min(j, len(ar)) + 1):
            v += ar[i - 1] * psi[j - i]
        psi[j] = v
    return psi


def arma_acovf(ar, ma, nlags, sigma2=1.0) -> np.ndarray:
    """Autocovariances gamma(0..nlags-1) of a causal ARMA process."""
    ar, ma = np.asarray(ar, dtype=float), np.asarray(ma, dtype=float)
    p, q = len(ar), len(ma)
    theta = np.r_[1.0, ma]
    psi = psi_weights(ar, ma, q + 1)
    rhs = np.array([sum(theta[j] * psi[j - k] for j in range(k, q + 1)) for k in range(max(p, q) + 1)])
    n = max(nlags, p + 1)
    gamma = np.zeros(n)
    if p:
        # gamma(k) - sum_i phi_i gamma(|k - i|) = rhs_k for k = 0..p
        a = np.eye(p + 1)
        for k in range(p + 1):
            for i in range(1, p + 1):
                a[k, abs(k - i)] -= ar[i - 1]
        gamma[:p + 1] = np.linalg.solve(a, rhs[:p + 1])
    else:
        gamma[0] = rhs[0]
    for k in range(p + 1, n):
        gamma[k] = ar @ gamma[k - 1:k - p - 1:-1] if p else 0.0
        if k <= q:
            gamma[k] += rhs[k]
    if not p:
        gamma[:q + 1] = rhs[:q + 1]
    return sigma2 * gamma[:nlags]


class _Innovations:
    """Innovations-algorithm coefficients for the Ansley-transformed process.

    The covariance matrix kappa of the transformed process is banded with
    half-bandwidth u = max(m - 1, q), m = max(p, q). Its factorization
    kappa = L V L^T (L unit lower) is the innovations algorithm:
    theta_{n,j} = L[n, n-j] and r_n = V[n]. LAPACK's banded Cholesky does it
    in O(n u^2).
    """

    def __init__(self, ar, ma, n_rows):
        self.ar = np.asarray(ar, dtype=float)
        self.ma = np.asarray(ma, dtype=float)
        p, q = len(self.ar), len(self.ma)
        m = self.m = max(p, q)
        u = self.u = max(m - 1, q, 0)
        gamma = arma_acovf(self.ar, self.ma, u + p + 1)
        theta0 = np.r_[1.0, self.ma]
        ma_acov = np.array([theta0[:q + 1 - h] @ theta0[h:] for h in range(q + 1)])

        col = np.arange(1, n_rows + 1)
        band = np.zeros((u + 1, n_rows))
        for h in range(u + 1):
            lo, hi = col, col + h
            corrected = gamma[h] - sum(self.ar[r - 1] * gamma[abs(r - h)] for r in range(1, p + 1))
            vals = np.where(hi <= m, gamma[h], 0.0)
            vals = np.where((lo <= m) & (hi > m) & (hi <= 2 * m), corrected, vals)
            if h <= q:
                vals = np.where(lo > m, ma_acov[h], vals)
            band[h] = vals
        for h in range(1, u + 1):
            band[h, n_rows - h:] = 0.0
        try:
            self.chol = linalg.cholesky_banded(band, lower=True)
        except linalg.LinAlgError:
            raise FitError("transformed covariance is not positive definite") from None
        diag = self.chol[0]
        self.v = diag ** 2

    def row(self, n):
        """theta_{n,1..w} with w = min(n, u)."""
        w = min(n, self.u)
        j = np.arange(1, w + 1)
        return self.chol[j, n - j] / self.chol[0, n - j]

    def whiten(self, z):
        """G^{-1} z for the Cholesky factor G = L V^{1/2}."""
        return linalg.solve_banded((self.u, 0), self.chol[:, :len(z)], z)


def _transform(x, ar, m):
    """Ansley transform: x_t for t < m, phi(B) x_t afterwards."""
    z = x.copy()
    for i in range(1, len(ar) + 1):
        z[m:] -= ar[i - 1] * x[m - i:len(x) - i]
    return z


def _innovations_residuals(x, ar, ma, inn):
    """One-step prediction errors x_t - xhat_t and their scaled variances r_t."""
    w = inn.whiten(_transform(x, ar, inn.m))
    return w * np.sqrt(inn.v[:len(x)]), inn.v[:len(x)].copy()


def _predict(ext, err, t, ar, inn, first_known):
    """Best linear predictor of ext[t]; errors are known for indices < first_known."""
    row = inn.row(t)
    p = len(ar)
    pred = 0.0
    if t >= inn.m and p:
        pred = ar @ ext[t - 1:t - p - 1 if t - p - 1 >= 0 else None:-1]
    for j in range(max(1, t - first_known + 1), len(row) + 1):
        pred += row[j - 1] * err[t - j]
    return pred


def exact_loglik(x, ar, ma, sigma2=None):
    """Exact Gaussian log-likelihood of the zero-mean series ``x``.

    With ``sigma2=None`` the innovation variance is concentrated out; returns
    (loglik, sigma2).
    """
    x = np.asarray(x, dtype=float)
    ar, ma = np.asarray(ar, dtype=float), np.asarray(ma, dtype=float)
    n = len(x)
    inn = _Innovations(ar, ma, n)
    err, r = _innovations_residuals(x, ar, ma, inn)
    s = float(np.sum(err ** 2 / r))
    if sigma2 is None:
        sigma2 = s / n
    ll = -0.5 * (n * math.log(2.0 * math.pi * sigma2) + np.sum(np.log(r)) + s / sigma2)
    return float(ll), float(sigma2)


def residuals(model: ArimaModel, series) -> np.ndarray:
    """Standardized one-step in-sample prediction errors."""
    x = np.asarray(series, dtype=float) - model.intercept
    inn = _Innovations(model.ar, model.ma, len(x))
    err, r = _innovations_residuals(x, model.ar, model.ma, inn)
    return err / np.sqrt(r * model.innovation_var)


def _sample_pacf(x, nlags):
    n = len(x)
    acov = np.array([x[:n - k] @ x[k:] / n for k in range(nlags + 1)])
    if acov[0] <= 0:
        return np.zeros(nlags)
    rho = acov / acov[0]
    pacf = np.zeros(nlags)
    phi = np.zeros(0)
    for k in range(1, nlags + 1):
        num = rho[k] - (phi @ rho[k - 1:0:-1] if k > 1 else 0.0)
        den = 1.0 - (phi @ rho[1:k] if k > 1 else 0.0)
        rk = num / den if den > 0 else 0.0
        rk = float(np.clip(rk, -0.95, 0.95))
        phi = np.r_[phi - rk * phi[::-1], rk]
        pacf[k - 1] = rk
    return pacf


def _check_roots(ar, ma):
    for name, poly in (("AR", np.r_[1.0, -ar]), ("MA", np.r_[1.0, ma])):
        if len(poly) > 1 and np.any(poly[1:] != 0):
            roots = np.roots(poly[::-1])
            if roots.size and np.min(np.abs(roots)) <= 1.0 + 1e-8:
                raise ConstraintError(f"{name} polynomial has a root inside or on the unit circle")


def _std_errors(x, ar, ma):
    """Standard errors of (ar, ma) from a central-difference Hessian."""
    p = len(ar)
    theta = np.r_[ar, ma]
    k = len(theta)
    if k == 0:
        return np.zeros(0)

    def nll(c):
        return -exact_loglik(x, c[:p], c[p:])[0]

    step = 1e-4
    hess = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            ei, ej = np.eye(k)[i] * step, np.eye(k)[j] * step
            val = (nll(theta + ei + ej) - nll(theta + ei - ej)
                   - nll(theta - ei + ej) + nll(theta - ei - ej)) / (4 * step * step)
            hess[i, j] = hess[j, i] = val
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        return np.full(k, np.nan)
    return np.sqrt(np.abs(np.diag(cov)))


def fit(series, p: int, q: int, with_std_errors: bool = False) -> ArimaModel:
    """Maximum-likelihood ARMA(p, q) fit to a uniformly sampled series."""
    y = np.asarray(series, dtype=float)
    if p < 0 or q < 0:
        raise ContractError("orders must be non-negative")
    if y.ndim != 1 or len(y) < 10 * (p + q + 1):
        raise ContractError(f"series length {len(y)} is below 10*(p+q+1) = {10 * (p + q + 1)}")
    if not np.all(np.isfinite(y)):
        raise ContractError("series must be finite")
    mu = float(np.mean(y))
    x = y - mu
    n = len(x)

    if p + q == 0:
        ll, s2 = exact_loglik(x, [], [])
        return ArimaModel(0, 0, [], [], mu, s2, n, ll)

    def objective(z):
        # degenerate iterates (sigma^2 -> 0, NaN steps) get a flat penalty
        if not np.all(np.isfinite(z)):
            return _PENALTY
        ar, ma = _unpack(z, p, q)
        try:
            ll, _ = exact_loglik(x, ar, ma)
        except (FitError, np.linalg.LinAlgError):
            return _PENALTY
        return -ll / n if np.isfinite(ll) else _PENALTY

    x0 = np.r_[np.arctanh(_sample_pacf(x, p)) if p else np.zeros(0), np.zeros(q)]
    bounds = [(-_PACF_BOUND, _PACF_BOUND)] * (p + q)
    res = optimize.minimize(objective, x0, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": MAX_ITER})
    if res.status == 1 or res.nit >= MAX_ITER:
        raise FitError(f"ARMA({p},{q}) did not converge in {MAX_ITER} iterations")
    if not np.isfinite(res.fun):
        raise FitError(f"ARMA({p},{q}) likelihood is not finite")
    if res.fun >= _PENALTY:
        raise FitError(f"ARMA({p},{q}) likelihood is degenerate")
    ar, ma = _unpack(res.x, p, q)
    _check_roots(ar, ma)
    try:
        ll, s2 = exact_loglik(x, ar, ma)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"ARMA({p},{q}): {exc}") from None
    if not (np.isfinite(ll) and s2 > 0):
        raise FitError(f"ARMA({p},{q}) likelihood is degenerate")
    se = _std_errors(x, ar, ma) if with_std_errors else None
    return ArimaModel(p, q, ar, ma, mu, s2, n, ll, std_errors=se, iterations=int(res.nit))


def aic(model: ArimaModel) -> float:
    """-2 loglik + 2 (p + q + 2); the 2 counts intercept and innovation variance."""
    return -2.0 * model.loglik + 2.0 * (model.p + model.q + 2)


def select_order(series, p_max: int, q_max: int, threads: int = 1) -> ArimaModel:
    """Minimum-AIC model over 0 <= p <= p_max, 0 <= q <= q_max.

    Orders whose parameter count is too large for the series length are skipped.
    Ties go to the smaller p + q, then the smaller p.
    """
    if p_max < 0 or q_max < 0:
        raise ContractError("p_max and q_max must be non-negative")
    n = len(series)
    grid = [(p, q) for p in range(p_max + 1) for q in range(q_max + 1) if n >= 10 * (p + q + 1)]

    def run(order):
        try:
            return fit(series, *order)
        except FitError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            models = list(pool.map(run, grid))
    else:
        models = [run(o) for o in grid]
    candidates = [m for m in models if m is not None]
    if not candidates:
        raise FitError("no ARMA order could be fitted")
    return min(candidates, key=lambda m: (aic(m), m.p + m.q, m.p))


def forecast(model: ArimaModel, history, horizon_steps: int):
    """Mean and variance of the 1..horizon_steps-ahead forecasts.

    Future innovations are set to zero; the variance uses the psi weights,
    var_h = sigma^2 * sum_{j<h} psi_j^2.
    """
    y = np.asarray(history, dtype=float)
    x = y - model.intercept
    n = len(x)
    ar, ma = model.ar, model.ma
    inn = _Innovations(ar, ma, n + horizon_steps)
    err, _ = _innovations_residuals(x, ar, ma, inn)

    ext = np.r_[x, np.zeros(horizon_steps)]
    for t in range(n, n + horizon_steps):
        ext[t] = _predict(ext, err, t, ar, inn, n)
    psi = psi_weights(ar, ma, horizon_steps)
    var = model.innovation_var * np.cumsum(psi ** 2)
    return ext[n:] + model.intercept, var
