"""GARCH(1,1) data-generating process and outlier contamination."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import kernels


class ContaminationKind(str, enum.Enum):
    NONE = "none"
    IO = "io"  # innovation outliers, fed back through the variance recursion
    AO = "ao"  # additive outliers, added to the clean path afterwards


class Innovation(str, enum.Enum):
    """Innovation law. Only the standard normal is supported."""

    NORMAL = "normal"


@dataclass(frozen=True)
class GarchParams:
    omega: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("omega", "alpha", "beta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.omega, self.alpha, self.beta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite GARCH parameters {vals}")
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be nonnegative, got {self.alpha}, {self.beta}")
        if self.alpha + self.beta >= 1:
            raise ValueError(
                f"alpha + beta must be < 1 for finite variance, got {self.alpha + self.beta}")

    def as_array(self) -> np.ndarray:
        return np.array([self.omega, self.alpha, self.beta])

    @classmethod
    def from_sequence(cls, seq) -> "GarchParams":
        omega, alpha, beta = (float(v) for v in seq)
        return cls(omega, alpha, beta)

    def __iter__(self):
        return iter((self.omega, self.alpha, self.beta))


@dataclass(frozen=True)
class ContaminationSpec:
    kind: ContaminationKind = ContaminationKind.NONE
    p: float = 0.0
    s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ContaminationKind(self.kind))
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"contamination probability must lie in [0, 1], got {self.p}")
        if self.s < 0:
            raise ValueError(f"outlier magnitude must be nonnegative, got {self.s}")

    @classmethod
    def clean(cls) -> "ContaminationSpec":
        return cls()


def unconditional_sd(params: GarchParams) -> float:
    """sqrt(omega / (1 - alpha - beta))."""
    persistence = params.alpha + params.beta
    if persistence >= 1:
        raise ValueError("unconditional variance is infinite for alpha + beta >= 1")
    return math.sqrt(params.omega / (1.0 - persistence))


def sign(x: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1."""
    return np.where(x >= 0, 1.0, -1.0)


def as_series(values, min_len: int = 1) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"series must be one-dimensional, got shape {x.shape}")
    if x.shape[0] < min_len:
        raise ValueError(f"series needs at least {min_len} observations, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


def variance_path(series, params: GarchParams, init: float) -> np.ndarray:
    """Conditional-variance proxy started at ``init``.

    Returns s_1 = init and s_t = omega + alpha x_{t-1}^2 + beta s_{t-1}.
    """
    x = as_series(series)
    if not (init > 0 and math.isfinite(init)):
        raise ValueError(f"initial variance must be positive and finite, got {init}")
    return kernels.garch_variance(x * x, params.omega, params.alpha, params.beta, float(init))


@dataclass
class SimulationTrace:
    """Internals of one simulated path, exposed for debugging and tests."""

    x: np.ndarray  # observed (possibly contaminated) series
    clean: np.ndarray  # path before additive outliers (equals x unless AO)
    sigma2: np.ndarray  # conditional variances driving the recursion
    outliers: np.ndarray  # Bernoulli indicators P_t
    scale: np.ndarray  # s * unconditional sd of the base (pre-change) parameters


def simulate_trace(
    params: GarchParams,
    n: int,
    burn_in: int = 1000,
    contamination: Optional[ContaminationSpec] = None,
    change: Optional[Tuple[int, GarchParams]] = None,
    seed: int = 0,
    innovation: Innovation = Innovation.NORMAL,
) -> SimulationTrace:
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if burn_in < 0:
        raise ValueError(f"burn_in must be nonnegative, got {burn_in}")
    contamination = contamination or ContaminationSpec.clean()
    Innovation(innovation)

    total = burn_in + n
    rng = np.random.default_rng(seed)
    # Both streams are always drawn so the clean path never depends on the
    # contamination settings.
    eps = rng.standard_normal(total)
    hits = rng.random(total) < contamination.p

    omega_t = np.full(total, params.omega, dtype=float)
    alpha_t = np.full(total, params.alpha, dtype=float)
    beta_t = np.full(total, params.beta, dtype=float)
    if change is not None:
        k, post = change
        if not isinstance(post, GarchParams):
            post = GarchParams.from_sequence(post)
        if not 1 <= k < n:
            raise ValueError(f"change index must satisfy 1 <= k < n, got {k}")
        start = burn_in + k  # 0-based position of observation k + 1
        omega_t[start:] = post.omega
        alpha_t[start:] = post.alpha
        beta_t[start:] = post.beta

    active = contamination.kind is not ContaminationKind.NONE
    # Outlier size is tied to the base parameters, so a change does not also
    # rescale the contamination.
    scale = np.full(total, contamination.s * unconditional_sd(params) if active else 0.0)
    pulses = np.where(hits, 1.0, 0.0) if active else np.zeros(total)

    drive = eps
    if contamination.kind is ContaminationKind.IO:
        drive = eps + scale * sign(eps) * pulses

    init = params.omega / (1.0 - params.alpha - params.beta)
    x, sigma2 = kernels.garch_simulate(drive, omega_t, alpha_t, beta_t, init)
    clean = x
    if contamination.kind is ContaminationKind.AO:
        x = clean + scale * sign(clean) * pulses

    keep = slice(burn_in, total)
    return SimulationTrace(
        x=np.array(x[keep]),
        clean=np.array(clean[keep]),
        sigma2=sigma2[keep],
        outliers=pulses[keep],
        scale=scale[keep],
    )


def simulate(
    params: GarchParams,
    n: int,
    burn_in: int = 1000,
    contamination: Optional[ContaminationSpec] = None,
    change: Optional[Tuple[int, GarchParams]] = None,
    seed: int = 0,
) -> np.ndarray:
    """Simulate n observations of a (possibly contaminated) GARCH(1,1) path.

    The recursion starts at the unconditional variance of ``params`` and the
    first ``burn_in`` values are discarded. With ``change=(k, post)`` the
    parameters switch to ``post`` from observation k + 1 on; the outlier
    magnitude s * sqrt(omega / (1 - alpha - beta)) keeps using ``params``. Identical
    arguments give bitwise-identical output.
    """
    return simulate_trace(params, n, burn_in, contamination, change, seed).x
