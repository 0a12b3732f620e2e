"""Gaussian QMLE and minimum density power divergence fits of GARCH(1,1)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .model import GarchParams, as_series

PERSISTENCE_CAP = 0.9999
MIN_FIT_LENGTH = 20

# Multi-start grid as (omega / v, alpha, beta), v = sample second moment.
START_GRID: Tuple[Tuple[float, float, float], ...] = (
    (0.5, 0.05, 0.90),
    (0.5, 0.10, 0.80),
    (1.0 / 3.0, 0.30, 0.40),
    (1.0, 0.05, 0.05),
)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    tol: float = 1e-6  # projected-gradient max-norm
    ftol: float = 1e-10  # relative objective change
    omega_bounds: Tuple[float, float] = (1e-6, 10.0)  # in units of v
    starts: Tuple[Tuple[float, float, float], ...] = START_GRID


@dataclass
class FitResult:
    params: GarchParams
    objective: float
    iterations: int
    converged: bool
    gamma: float
    init: float = float("nan")
    grad_norm: float = float("nan")
    message: str = ""
    history: List[float] = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "omega": self.params.omega,
            "alpha": self.params.alpha,
            "beta": self.params.beta,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "gamma": self.gamma,
            "init": self.init,
            "grad_norm": self.grad_norm,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            params=GarchParams(d["omega"], d["alpha"], d["beta"]),
            objective=d["objective"],
            iterations=d["iterations"],
            converged=d["converged"],
            gamma=d["gamma"],
            init=d.get("init", float("nan")),
            grad_norm=d.get("grad_norm", float("nan")),
            message=d.get("message", ""),
        )


def second_moment(series) -> float:
    x = as_series(series)
    v = float(np.mean(x * x))
    if v <= 0:
        raise ValueError("degenerate series: all observations are zero")
    return v


def residuals_squared(series, params: GarchParams, init: Optional[float] = None) -> np.ndarray:
    """Squared residuals x_t^2 / s_t(params).

    The variance recursion starts at the sample second moment unless ``init``
    is given.
    """
    x = as_series(series)
    x2 = x * x
    if init is None:
        init = second_moment(x)
    s2 = kernels.garch_variance(x2, params.omega, params.alpha, params.beta, float(init))
    return x2 / s2


def _loss(series, params: GarchParams, gamma: float, init: Optional[float]):
    x = as_series(series)
    x2 = x * x
    if init is None:
        init = second_moment(x)
    return kernels.garch_loss_grad(x2, params.omega, params.alpha, params.beta, float(init), gamma)


def qmle_objective(series, params: GarchParams, init: Optional[float] = None) -> float:
    """Mean Gaussian quasi-likelihood loss (1/n) sum [log s_t + x_t^2 / s_t]."""
    return float(_loss(series, params, 0.0, init)[0])


def qmle_gradient(series, params: GarchParams, init: Optional[float] = None) -> np.ndarray:
    return _loss(series, params, 0.0, init)[1]


def dpd_objective(series, params: GarchParams, gamma: float, init: Optional[float] = None) -> float:
    """Density power divergence criterion with a Gaussian kernel.

    Mean over t of (2 pi)^(-gamma/2) s_t^(-gamma/2)
    [(1 + gamma)^(-1/2) - (1 + 1/gamma) exp(-gamma x_t^2 / (2 s_t))].
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive; use qmle_objective for the gamma -> 0 limit")
    return float(_loss(series, params, float(gamma), init)[0])


def dpd_gradient(series, params: GarchParams, gamma: float, init: Optional[float] = None) -> np.ndarray:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return _loss(series, params, float(gamma), init)[1]


class _Criterion:
    """Criterion over y = (omega / v, a, p) with alpha = a p, beta = (1 - a) p.

    Writing the persistence p = alpha + beta as a coordinate turns the
    stationarity cap into a plain box bound. The QMLE loss is shifted by
    -log v and the DPD loss multiplied by v^(gamma/2); with these
    normalisations the criterion surface of c * x is identical to that of x,
    so minimisers are exactly scale equivariant.
    """

    def __init__(self, x2: np.ndarray, v: float, gamma: float):
        self.x2 = x2
        self.v = v
        self.gamma = gamma
        self.factor = v ** (0.5 * gamma) if gamma > 0 else 1.0
        self.shift = 0.0 if gamma > 0 else -math.log(v)

    def __call__(self, y):
        w, a, p = y
        f, g = kernels.garch_loss_grad(self.x2, self.v * w, a * p, (1.0 - a) * p, self.v,
                                       self.gamma)
        f = self.factor * f + self.shift
        g = self.factor * g
        ga = p * (g[1] - g[2])
        gp = a * g[1] + (1.0 - a) * g[2]
        return f, np.array([g[0] * self.v, ga, gp])


def _to_internal(start) -> np.ndarray:
    w, alpha, beta = start
    p = alpha + beta
    return np.array([w, alpha / p if p > 0 else 0.5, p], dtype=float)


def _projected_grad_norm(y, g, bounds) -> float:
    pg = np.array(g, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if y[i] <= lo and pg[i] > 0:
            pg[i] = 0.0
        elif y[i] >= hi and pg[i] < 0:
            pg[i] = 0.0
    return float(np.max(np.abs(pg)))


def _to_params(y, v) -> GarchParams:
    w, a, p = (float(t) for t in y)
    a = min(max(a, 0.0), 1.0)
    p = min(max(p, 0.0), PERSISTENCE_CAP)
    return GarchParams(v * w, a * p, (1.0 - a) * p)


def fit(series, gamma: float = 0.0, opts: Optional[FitOptions] = None) -> FitResult:
    """Fit GARCH(1,1) by QMLE (gamma = 0) or MDPDE (gamma > 0).

    Runs L-BFGS-B from every point of the start grid and keeps the lowest
    criterion value. Non-convergence is reported through ``converged``.
    """
    opts = opts or FitOptions()
    x = as_series(series)
    if x.shape[0] < MIN_FIT_LENGTH:
        raise ValueError(f"need at least {MIN_FIT_LENGTH} observations to fit, got {x.shape[0]}")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    x2 = x * x
    v = second_moment(x)
    crit = _Criterion(x2, v, float(gamma))
    bounds = [opts.omega_bounds, (0.0, 1.0), (0.0, PERSISTENCE_CAP)]

    best = None
    for start in opts.starts:
        history: List[float] = []

        def record(intermediate_result):
            history.append(float(intermediate_result.fun))

        res = minimize(
            crit,
            _to_internal(start),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=record,
            options={"maxiter": opts.max_iter, "gtol": opts.tol, "ftol": opts.ftol,
                     "maxcor": 10},
        )
        if best is None or res.fun < best[0].fun:
            best = (res, history)

    res, history = best
    y = res.x
    _, g = crit(y)
    pg = _projected_grad_norm(y, g, bounds)
    params = _to_params(y, v)
    raw = float(kernels.garch_loss_grad(x2, params.omega, params.alpha, params.beta, v, float(gamma))[0])
    return FitResult(
        params=params,
        objective=raw,
        iterations=int(res.nit),
        converged=bool(res.success) or pg <= opts.tol,
        gamma=float(gamma),
        init=v,
        grad_norm=pg,
        message=str(res.message),
        history=history,
    )
