"""
Data-driven GPR baseline for a single observed channel.

The covariance is the sum of a squared-exponential, a rational-quadratic, a
periodic (angular factor pi/24) and a Kronecker-delta noise term::

    k(t, s) = g1^2 exp(-d^2 / (2 g2^2))
            + g3^2 (1 + d^2 / (2 g4 g5^2))^(-g4)
            + g6^2 exp(-2 sin^2(pi d / 24) / g7^2)
            + g8^2 [d == 0]

with d = t - s. Hyperparameters are fitted, together with a constant mean, by
maximizing the log marginal likelihood in log-hyperparameter space.
"""

from __future__ import annotations

import configparser
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from .errors import ContractError, FitError, IllConditionedError
from .gpr import GpPosterior, ObservationSet, condition
from .prior_stats import JointGp

__all__ = [
    "KernelSpec",
    "kernel_eval",
    "gram",
    "log_marginal_likelihood",
    "lml_gradient",
    "fit",
    "forecast",
]

N_GAMMA = 8
MIN_STARTS = 8
LOG_BOUND = 10.0
DELTA_TOL = 1e-12
_OMEGA = math.pi / 24.0


@dataclass(frozen=True)
class KernelSpec:
    gamma: tuple
    const_mean: float = 0.0
    objective: float | None = None
    start_index: int | None = None

    def __post_init__(self):
        g = tuple(float(v) for v in self.gamma)
        if len(g) != N_GAMMA:
            raise ContractError(f"need {N_GAMMA} hyperparameters, got {len(g)}")
        if any(v < 0 for v in g) or any(g[i] <= 0 for i in (1, 3, 4, 6)):
            raise ContractError("length-scales and shape must be positive, amplitudes non-negative")
        object.__setattr__(self, "gamma", g)

    @classmethod
    def from_vector(cls, x, **kw) -> "KernelSpec":
        """From [log g1..log g8, mean]."""
        return cls(tuple(np.exp(x[:N_GAMMA])), float(x[N_GAMMA]), **kw)

    def to_vector(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.r_[np.log(self.gamma), self.const_mean]

    def save(self, path) -> Path:
        cfg = configparser.ConfigParser()
        cfg["kernel"] = {f"gamma{i + 1}": repr(v) for i, v in enumerate(self.gamma)}
        cfg["kernel"]["const_mean"] = repr(self.const_mean)
        cfg["fit"] = {"objective": repr(self.objective), "start_index": str(self.start_index)}
        path = Path(path)
        with path.open("w") as fh:
            cfg.write(fh)
        return path

    @classmethod
    def load(cls, path) -> "KernelSpec":
        cfg = configparser.ConfigParser()
        cfg.read(path)
        k = cfg["kernel"]
        gamma = tuple(k.getfloat(f"gamma{i + 1}") for i in range(N_GAMMA))
        fit_sec = cfg["fit"] if cfg.has_section("fit") else {}
        obj = fit_sec.get("objective", "None")
        start = fit_sec.get("start_index", "None")
        return cls(gamma, k.getfloat("const_mean"),
                   None if obj == "None" else float(obj), None if start == "None" else int(start))


def _parts(gamma, d, with_grad, delta=None):
    """Kernel value on lag array ``d`` and its derivatives wrt log(gamma_i).

    ``delta`` is the indicator for the noise term; by default zero lag, while
    self-Gram matrices pass the identity so repeated times stay separate draws.
    """
    g1, g2, g3, g4, g5, g6, g7, g8 = gamma
    d2 = d * d
    se = g1 * g1 * np.exp(-d2 / (2.0 * g2 * g2))
    u = 1.0 + d2 / (2.0 * g4 * g5 * g5)
    rq = g3 * g3 * u ** (-g4)
    s2 = np.sin(_OMEGA * d) ** 2
    per = g6 * g6 * np.exp(-2.0 * s2 / (g7 * g7))
    if delta is None:
        delta = (np.abs(d) <= DELTA_TOL).astype(float)
    noise = g8 * g8 * delta
    k = se + rq + per + noise
    if not with_grad:
        return k, None
    grads = [
        2.0 * se,
        se * d2 / (g2 * g2),
        2.0 * rq,
        rq * g4 * ((u - 1.0) / u - np.log(u)),
        2.0 * g4 * rq * (u - 1.0) / u,
        2.0 * per,
        per * 4.0 * s2 / (g7 * g7),
        2.0 * noise,
    ]
    return k, grads


def kernel_eval(spec: KernelSpec, t, tau):
    """Covariance k(t, tau); broadcasts over array arguments."""
    d = np.asarray(t, dtype=float) - np.asarray(tau, dtype=float)
    k, _ = _parts(spec.gamma, d, False)
    return k if k.ndim else float(k)


def gram(spec: KernelSpec, t, s=None, noise=True) -> np.ndarray:
    """Gram matrix; ``noise=False`` drops the Kronecker-delta term."""
    t = np.asarray(t, dtype=float)
    s = t if s is None else np.asarray(s, dtype=float)
    gamma = spec.gamma if noise else spec.gamma[:7] + (0.0,)
    k, _ = _parts(gamma, t[:, None] - s[None, :], False, np.eye(len(t)) if s is t else None)
    return k


def _prepare(times, values):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or times.shape != values.shape:
        raise ContractError("times and values must be 1-D arrays of equal length")
    if len(times) < 1:
        raise ContractError("need at least one observation")
    return times, values


def _factor(k):
    try:
        return linalg.cholesky(k, lower=True)
    except linalg.LinAlgError:
        raise IllConditionedError("kernel gram matrix is not positive definite") from None


def _lml_and_grad(x, times, values, with_grad=True):
    gamma = np.exp(x[:N_GAMMA])
    k, dks = _parts(gamma, times[:, None] - times[None, :], with_grad, np.eye(len(times)))
    chol = _factor(k)
    r = values - x[N_GAMMA]
    alpha = linalg.cho_solve((chol, True), r)
    n = len(times)
    lml = -0.5 * r @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2.0 * math.pi)
    if not with_grad:
        return lml, None
    kinv = linalg.cho_solve((chol, True), np.eye(n))
    w = np.outer(alpha, alpha) - kinv
    grad = np.empty(N_GAMMA + 1)
    for i, dk in enumerate(dks):
        grad[i] = 0.5 * np.sum(w * dk)
    grad[N_GAMMA] = np.sum(alpha)
    return lml, grad


def log_marginal_likelihood(spec: KernelSpec, times, values) -> float:
    times, values = _prepare(times, values)
    lml, _ = _lml_and_grad(spec.to_vector(), times, values, with_grad=False)
    return float(lml)


def lml_gradient(spec: KernelSpec, times, values) -> np.ndarray:
    """Gradient wrt [log g1, ..., log g8, const_mean]."""
    times, values = _prepare(times, values)
    if min(spec.gamma) <= 0:
        raise ContractError("log-space gradient needs strictly positive hyperparameters")
    _, grad = _lml_and_grad(spec.to_vector(), times, values)
    return grad


def _starts(times, values, n_starts, seed):
    rng = np.random.default_rng(seed)
    span = max(float(np.ptp(times)), 1e-3)
    scale = max(float(np.std(values)), 1e-6)
    starts = []
    for _ in range(n_starts):
        amp = math.log(scale) + rng.normal(0.0, 1.0, size=4)
        x = np.array([
            amp[0],
            math.log(span * rng.uniform(0.02, 0.5)),
            amp[1],
            rng.uniform(-1.0, 1.0),
            math.log(span * rng.uniform(0.02, 0.5)),
            amp[2] - 1.0,
            math.log(rng.uniform(0.5, 2.0)),
            math.log(scale) + rng.uniform(-4.0, -1.0),
            float(np.mean(values)),
        ])
        lo, hi = zip(*_log_bounds(times))
        x[:N_GAMMA] = np.clip(x[:N_GAMMA], lo, hi)
        starts.append(x)
    return starts


def _log_bounds(times):
    """Box for the log-hyperparameters.

    Length-scales are kept long enough that each smooth term still correlates at
    least e^-2 across the smallest observation spacing. Without this an SE, RQ or
    periodic term with a tiny length-scale is indistinguishable from the delta term.
    """
    gaps = np.diff(np.unique(times))
    dt = float(gaps.min()) if len(gaps) else 1.0
    length_lo = max(math.log(dt / 2.0), -LOG_BOUND)
    per_lo = max(math.log(max(abs(math.sin(_OMEGA * dt)), 1e-300)), -LOG_BOUND)
    free = (-LOG_BOUND, LOG_BOUND)
    return [free, (length_lo, LOG_BOUND), free, free, (length_lo, LOG_BOUND),
            free, (per_lo, LOG_BOUND), free]


def _local_fit(x0, times, values, max_iter):
    def objective(x):
        try:
            lml, grad = _lml_and_grad(x, times, values)
        except IllConditionedError:
            return 1e25, np.zeros_like(x)
        return -lml, -grad

    try:
        _lml_and_grad(x0, times, values, with_grad=False)
    except IllConditionedError:
        return None
    bounds = _log_bounds(times) + [(None, None)]
    res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": max_iter, "gtol": 1e-6, "ftol": 1e-12})
    if not np.isfinite(res.fun) or res.fun >= 1e25:
        return None
    return res


def fit(times, values, n_starts: int = 8, seed: int = 0, max_iter: int = 500,
        threads: int = 1) -> KernelSpec:
    """Multi-start maximum-marginal-likelihood fit; returns the best local optimum."""
    times, values = _prepare(times, values)
    if len(times) < 10:
        raise ContractError("fit needs at least 10 observations")
    if n_starts < MIN_STARTS:
        raise ContractError(f"need at least {MIN_STARTS} starts")
    starts = _starts(times, values, n_starts, seed)

    def run(x0):
        return _local_fit(x0, times, values, max_iter)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(x0) for x0 in starts]

    best, best_i = None, None
    for i, res in enumerate(results):
        if res is not None and (best is None or res.fun < best.fun):
            best, best_i = res, i
    if best is None:
        raise FitError("every start failed to factorize the kernel matrix")
    return KernelSpec.from_vector(best.x, objective=float(best.fun), start_index=best_i)


def joint_prior(spec: KernelSpec, times, target_times, label="y") -> JointGp:
    """Prior blocks for the latent process; the delta term acts as noise on observations."""
    times = np.asarray(times, dtype=float)
    target_times = np.asarray(target_times, dtype=float)
    noise_var = spec.gamma[7] ** 2
    k_oo = gram(spec, times, noise=False)
    k_oo[np.diag_indices_from(k_oo)] += noise_var
    return JointGp(
        mean_obs=np.full(len(times), spec.const_mean),
        mean_target=np.full(len(target_times), spec.const_mean),
        k_oo=k_oo,
        k_ot=gram(spec, times, target_times, noise=False),
        k_tt=gram(spec, target_times, noise=False),
        obs_layout=[(label, float(t)) for t in times],
        target_layout=[(label, float(t)) for t in target_times],
        noise_var=np.full(len(times), noise_var),
    )


def forecast(spec: KernelSpec, times, values, target_times, label="y") -> GpPosterior:
    times, values = _prepare(times, values)
    prior = joint_prior(spec, times, target_times, label)
    return condition(prior, ObservationSet(values, noise_std=spec.gamma[7]))
