"""Estimators built on replica ensembles: occupation-time variance, return
probability, Laplace transforms, and scaling-model fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulate import CoupledEnsemble, ExclusionEnsemble


class TooFewReplicas(ValueError):
    pass


class GridTooCoarse(ValueError):
    pass


class TruncationTooSevere(ValueError):
    pass


class DegenerateWindow(ValueError):
    pass


MIN_REPLICAS = 100


@dataclass
class TimeSeries:
    """Per-time estimator mean with its sampling uncertainty."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray  # per-replica variance of the estimated quantity
    n_replicas: int
    extra: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n_replicas)


def make_time_grid(horizon: float, prefix_end: float = 1.0,
                   prefix_step: float = 0.1, ratio: float = 1.25) -> np.ndarray:
    """Fine linear prefix followed by a geometric tail up to the horizon."""
    prefix_end = min(prefix_end, horizon)
    grid = list(np.arange(prefix_step, prefix_end + prefix_step / 2, prefix_step))
    t = grid[-1] if grid else prefix_step
    while t * ratio < horizon * (1 - 1e-12):
        t *= ratio
        grid.append(t)
    grid.append(horizon)
    return np.unique(np.round(np.asarray(grid), 12))


def estimate_variance(ensemble: ExclusionEnsemble, rho: float) -> TimeSeries:
    """Occupation-time variance curve, mean of the squared centered integral.

    The centered integral has exact zero mean in equilibrium, so the plain
    second moment is the estimator; the mean-corrected version is reported
    alongside.  The uncertainty comes from the empirical fourth moment, since
    squared integrals are too heavy-tailed for a naive spread estimate.
    """
    A = ensemble.occupation_integral
    n = A.shape[0]
    if n < MIN_REPLICAS:
        raise TooFewReplicas(f"{n} replicas < {MIN_REPLICAS}")
    sq = A ** 2
    m2 = sq.mean(axis=0)
    m4 = (sq ** 2).mean(axis=0)
    var = np.maximum(m4 - m2 ** 2, 0.0)
    centered = m2 - A.mean(axis=0) ** 2
    return TimeSeries(times=ensemble.times, mean=m2, variance=var, n_replicas=n,
                      extra={"centered": centered, "rho": rho})


def estimate_return_probability(ensemble: CoupledEnsemble) -> TimeSeries:
    """Fraction of replicas whose discrepancy sits at the origin, with
    binomial uncertainty."""
    ind = ensemble.at_origin
    n = ind.shape[0]
    if n < MIN_REPLICAS:
        raise TooFewReplicas(f"{n} replicas < {MIN_REPLICAS}")
    p = ind.mean(axis=0, dtype=np.float64)
    return TimeSeries(times=ensemble.times, mean=p, variance=p * (1.0 - p),
                      n_replicas=n)


def variance_via_kernel(p_series: TimeSeries, rho: float, t: float
                        ) -> tuple[float, float]:
    """Variance curve reconstructed from the return probability:
    ``2 rho(1-rho) t int_0^t (1 - s/t) p(s) ds`` by trapezoid quadrature.

    Returns the value and a conservative uncertainty (fully correlated sum of
    the per-point uncertainties, an upper bound for positively correlated
    replicas).  The series must start at 0 and resolve the first tenth of
    [0, t] with spacing at most t/100.
    """
    s = p_series.times
    if s[0] != 0.0:
        s = np.concatenate([[0.0], s])
        p = np.concatenate([[1.0], p_series.mean])
        se = np.concatenate([[0.0], p_series.se])
    else:
        p, se = p_series.mean, p_series.se
    m = s <= t * (1 + 1e-12)
    if not np.any(s[m] >= t * (1 - 1e-9)):
        raise GridTooCoarse(f"series does not reach t = {t}")
    s, p, se = s[m], p[m], se[m]
    head = s <= t / 10 + 1e-12
    if np.sum(head) < 2 or np.max(np.diff(s[head])) > t / 100 + 1e-12:
        raise GridTooCoarse("grid spacing near 0 exceeds t/100")
    w = np.zeros_like(s)
    ds = np.diff(s)
    w[:-1] += 0.5 * ds
    w[1:] += 0.5 * ds
    c = 2.0 * rho * (1.0 - rho) * t * (1.0 - s / t)
    value = float(np.sum(w * c * p))
    err = float(np.sum(w * c * se))
    return value, err


def laplace_transform(times: np.ndarray, values: np.ndarray, lams,
                      tail: str = "constant", min_lam_t: float = 5.0
                      ) -> list[tuple[float, float, float]]:
    """Trapezoid quadrature of ``int_0^T exp(-lam t) y(t) dt`` with an
    explicit bound on the discarded tail beyond the horizon.

    ``tail`` is 'constant' (y bounded by its observed maximum) or 'quadratic'
    (y grows at most like its endpoint value times (t/T)^2, the a-priori
    growth of an occupation-time variance).
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if times[0] > 0.0:
        times = np.concatenate([[0.0], times])
        values = np.concatenate([[values[0]], values])
    horizon = times[-1]
    out = []
    ymax = float(np.max(np.abs(values)))
    for lam in np.asarray(lams, dtype=np.float64):
        if lam * horizon < min_lam_t:
            raise TruncationTooSevere(
                f"lam * horizon = {lam * horizon:.2f} < {min_lam_t}")
        integrand = np.exp(-lam * times) * values
        val = float(np.trapezoid(integrand, times))
        if tail == "constant":
            bound = ymax * math.exp(-lam * horizon) / lam
        elif tail == "quadratic":
            T = horizon
            bound = (ymax / T ** 2) * math.exp(-lam * T) * (
                T ** 2 / lam + 2 * T / lam ** 2 + 2 / lam ** 3)
        else:
            raise ValueError(f"unknown tail model {tail!r}")
        out.append((float(lam), val, bound))
    return out


# ---------------------------------------------------------------------------
# scaling fits


@dataclass
class ScalingFit:
    model: str
    params: dict
    halfwidths: dict  # 95% confidence half-widths
    window: tuple[float, float]
    residual_norm: float  # RMS residual of log(fit) - log(data) on the window
    n_points: int

    def report(self) -> str:
        pars = "  ".join(f"{k} = {v:.6g} +/- {self.halfwidths[k]:.2g}"
                         for k, v in self.params.items())
        return (f"model {self.model} on t in [{self.window[0]:g}, {self.window[1]:g}] "
                f"({self.n_points} pts): {pars}  log-rms {self.residual_norm:.3g}")


_MODELS = ("power", "t_log_t", "t_log_log_t", "t_log_power")


def _linear_fit(x, y, weights=None):
    X = np.column_stack([np.ones_like(x), x])
    if weights is None:
        weights = np.ones_like(y)
    W = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(X * W[:, None], y * W, rcond=None)
    resid = y - X @ coef
    dof = max(len(y) - 2, 1)
    s2 = float((weights * resid ** 2).sum() / weights.sum()) * len(y) / dof
    cov = s2 * np.linalg.inv((X * weights[:, None]).T @ X)
    return coef, np.sqrt(np.clip(np.diag(cov), 0.0, None))


def fit_scaling(times, values, model: str, window: tuple[float, float],
                se=None, min_points: int = 8) -> ScalingFit:
    """Least squares in the coordinates that linearize the chosen growth law.

    Models: ``power`` (c t^alpha), ``t_log_t`` (t (c0 + c1 log t)),
    ``t_log_log_t`` (t (c0 + c1 log log t)), ``t_log_power`` (c t (log t)^beta).
    The residual norm is always reported in log coordinates so models can be
    compared on one scale.
    """
    if model not in _MODELS:
        raise ValueError(f"unknown model {model!r}")
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    lo, hi = window
    m = (times >= lo) & (times <= hi) & (values > 0)
    if model in ("t_log_log_t", "t_log_power"):
        m &= times > 1.0
    t, y = times[m], values[m]
    if len(t) < min_points:
        raise DegenerateWindow(f"{len(t)} points in window, need {min_points}")
    w = None
    if se is not None:
        s = np.asarray(se, dtype=np.float64)[m]
        s = np.where(s > 0, s, np.min(s[s > 0]) if np.any(s > 0) else 1.0)

    if model == "power":
        if se is not None:
            w = (y / s) ** 2  # log-coordinate weights
        coef, err = _linear_fit(np.log(t), np.log(y), w)
        params = {"prefactor": math.exp(coef[0]), "exponent": coef[1]}
        halfw = {"prefactor": 1.96 * err[0] * math.exp(coef[0]),
                 "exponent": 1.96 * err[1]}
        fitted = params["prefactor"] * t ** params["exponent"]
    elif model == "t_log_t":
        if se is not None:
            w = (t / s) ** 2
        coef, err = _linear_fit(np.log(t), y / t, w)
        params = {"offset": coef[0], "slope": coef[1]}
        halfw = {"offset": 1.96 * err[0], "slope": 1.96 * err[1]}
        fitted = t * (coef[0] + coef[1] * np.log(t))
    elif model == "t_log_log_t":
        if se is not None:
            w = (t / s) ** 2
        coef, err = _linear_fit(np.log(np.log(t)), y / t, w)
        params = {"offset": coef[0], "slope": coef[1]}
        halfw = {"offset": 1.96 * err[0], "slope": 1.96 * err[1]}
        fitted = t * (coef[0] + coef[1] * np.log(np.log(t)))
    else:  # t_log_power
        if se is not None:
            w = (y / s) ** 2
        coef, err = _linear_fit(np.log(np.log(t)), np.log(y / t), w)
        params = {"prefactor": math.exp(coef[0]), "exponent": coef[1]}
        halfw = {"prefactor": 1.96 * err[0] * math.exp(coef[0]),
                 "exponent": 1.96 * err[1]}
        fitted = params["prefactor"] * t * np.log(t) ** params["exponent"]

    good = fitted > 0
    resid = np.log(fitted[good]) - np.log(y[good])
    return ScalingFit(model=model, params=params, halfwidths=halfw,
                      window=(float(lo), float(hi)),
                      residual_norm=float(np.sqrt(np.mean(resid ** 2))),
                      n_points=int(len(t)))
