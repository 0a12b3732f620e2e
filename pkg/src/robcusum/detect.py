"""Truncation, residual CUSUM / self-normalised tests and change-point search."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import kernels
from .estimate import FitOptions, FitResult, fit, residuals_squared
from .limits import LimitKind, critical_value
from .model import as_series

log = logging.getLogger(__name__)

DEFAULT_M = 9.0
DEFAULT_MIN_SEGMENT = 250


class TestKind(str, enum.Enum):
    CUSUM_NAIVE = "cusum_naive"
    CUSUM_ROBUST = "cusum_robust"
    SN_NAIVE = "sn_naive"
    SN_ROBUST = "sn_robust"

    __test__ = False  # not a pytest class

    @property
    def robust(self) -> bool:
        return self in (TestKind.CUSUM_ROBUST, TestKind.SN_ROBUST)

    @property
    def self_normalized(self) -> bool:
        return self in (TestKind.SN_NAIVE, TestKind.SN_ROBUST)

    @classmethod
    def from_family(cls, family: str, robust: bool) -> "TestKind":
        family = family.lower()
        if family not in ("cusum", "sn"):
            raise ValueError(f"unknown test family {family!r}")
        return cls(f"{family}_{'robust' if robust else 'naive'}")


@dataclass(frozen=True)
class TruncationSpec:
    M: float = DEFAULT_M
    delta: float = 0.0

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError(f"truncation threshold must be positive, got {self.M}")
        if not 0 <= self.delta < self.M:
            raise ValueError(f"smoothing width must satisfy 0 <= delta < M, got {self.delta}")


def truncate(x, spec: TruncationSpec):
    """Apply the truncation f_{M,delta} elementwise.

    Identity on [0, M - delta), a quadratic blend on [M - delta, M + delta)
    and the constant M beyond; ``delta = 0`` is the hard cap min(x, M).
    Accepts scalars or arrays of nonnegative values.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("truncation is defined for nonnegative inputs only")
    M, delta = spec.M, spec.delta
    if delta == 0:
        out = np.minimum(arr, M)
    else:
        with np.errstate(over="ignore"):
            blend = M - (arr - M - delta) ** 2 / (4.0 * delta)
        out = np.where(arr < M - delta, arr, np.where(arr < M + delta, blend, M))
    return float(out) if out.ndim == 0 else out


def truncate_derivative(x, spec: TruncationSpec):
    arr = np.asarray(x, dtype=float)
    M, delta = spec.M, spec.delta
    if delta == 0:
        out = np.where(arr <= M, 1.0, 0.0)
    else:
        out = np.where(arr < M - delta, 1.0,
                       np.where(arr < M + delta, -(arr - M - delta) / (2.0 * delta), 0.0))
    return float(out) if out.ndim == 0 else out


def _values(values, min_len: int = 2) -> np.ndarray:
    return as_series(values, min_len=min_len)


def cusum_process(values) -> np.ndarray:
    """D_k = |S_k - (k/n) S_n| for k = 1..n (index k - 1 in the result)."""
    return kernels.cusum_abs(_values(values))


def locate_change(values) -> int:
    """1-based argmax of the CUSUM process; the smallest k wins ties."""
    return int(np.argmax(cusum_process(values))) + 1


def self_normalizer(values) -> np.ndarray:
    """V_{n,k} for k = 1..n-1 (index k - 1 in the result), in O(n)."""
    return kernels.self_normalizer(_values(values))


@dataclass
class TestResult:
    kind: TestKind
    statistic: float
    critical_value: float
    alpha: float
    reject: bool
    k_hat: int
    n: int
    tau_hat_sq: Optional[float] = None
    M_used: Optional[float] = None
    gamma: Optional[float] = None
    fit: Optional[FitResult] = None

    __test__ = False

    @property
    def label(self) -> str:
        return test_label(self.kind, self.M_used, self.gamma)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "label": self.label,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "k_hat": self.k_hat,
            "n": self.n,
            "tau_hat_sq": self.tau_hat_sq,
            "M_used": self.M_used,
            "gamma": self.gamma,
        }
        if self.fit is not None:
            d.update({f"fit_{k}": v for k, v in self.fit.to_dict().items()})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestResult":
        fit_keys = {k[4:]: v for k, v in d.items() if k.startswith("fit_")}
        return cls(
            kind=TestKind(d["kind"]),
            statistic=d["statistic"],
            critical_value=d["critical_value"],
            alpha=d["alpha"],
            reject=d["reject"],
            k_hat=d["k_hat"],
            n=d["n"],
            tau_hat_sq=d.get("tau_hat_sq"),
            M_used=d.get("M_used"),
            gamma=d.get("gamma"),
            fit=FitResult.from_dict(fit_keys) if fit_keys else None,
        )


def test_label(kind: TestKind, M: Optional[float] = None, gamma: Optional[float] = None) -> str:
    """Short human label, e.g. ``T_n``, ``SN_n^9(R)``; (Q) marks a QMLE fit."""
    base = "SN_n" if kind.self_normalized else "T_n"
    if not kind.robust:
        return base
    m = f"{M:g}" if M is not None else "?"
    est = "R" if gamma else "Q"
    return f"{base}^{m}({est})"


test_label.__test__ = False


def cusum_test(values, alpha: float = 0.05, *, kind: TestKind = TestKind.CUSUM_NAIVE,
               M_used: Optional[float] = None) -> TestResult:
    """max_k D_k / (sqrt(n) tau), tau^2 the divide-by-n variance of ``values``."""
    v = _values(values)
    n = v.shape[0]
    tau2 = float(np.mean((v - v.mean()) ** 2))
    if not tau2 > 0 or np.ptp(v) == 0:
        raise ValueError("degenerate residuals: zero variance")
    d = kernels.cusum_abs(v)
    k = int(np.argmax(d))
    stat = float(d[k] / (math.sqrt(n) * math.sqrt(tau2)))
    cv = critical_value(LimitKind.SUP_BRIDGE, alpha)
    return TestResult(kind=kind, statistic=stat, critical_value=cv, alpha=alpha,
                      reject=stat > cv, k_hat=k + 1, n=n, tau_hat_sq=tau2, M_used=M_used)


def sn_test(values, alpha: float = 0.05, *, kind: TestKind = TestKind.SN_NAIVE,
            M_used: Optional[float] = None) -> TestResult:
    """max_k (1/n) D_k^2 / ((1/n^2) V_{n,k}); k_hat is the argmax of D_k."""
    v = _values(values, min_len=4)
    n = v.shape[0]
    if np.ptp(v) == 0:
        raise ValueError("degenerate residuals: constant input")
    stat, _ = kernels.sn_max(v)
    if not math.isfinite(stat):
        raise ValueError("degenerate residuals: every self-normaliser vanishes")
    k = int(np.argmax(kernels.cusum_abs(v))) + 1
    cv = critical_value(LimitKind.SN_FUNCTIONAL, alpha)
    return TestResult(kind=kind, statistic=float(stat), critical_value=cv, alpha=alpha,
                      reject=stat > cv, k_hat=k, n=n, M_used=M_used)


def _check_config(kind: TestKind, trunc: Optional[TruncationSpec]) -> None:
    if kind.robust and trunc is None:
        raise ValueError(f"{kind.value} requires a truncation spec")
    if not kind.robust and trunc is not None:
        raise ValueError(f"{kind.value} does not take a truncation spec")


def test_residuals(r2, kind: TestKind, trunc: Optional[TruncationSpec] = None,
                   alpha: float = 0.05) -> TestResult:
    """Apply the requested test to squared residuals (truncating first if robust)."""
    kind = TestKind(kind)
    _check_config(kind, trunc)
    values = truncate(r2, trunc) if kind.robust else np.asarray(r2, dtype=float)
    M_used = trunc.M if trunc is not None else None
    if kind.self_normalized:
        return sn_test(values, alpha, kind=kind, M_used=M_used)
    return cusum_test(values, alpha, kind=kind, M_used=M_used)


test_residuals.__test__ = False


def run_test(series, kind: TestKind, gamma: float = 0.0, trunc: Optional[TruncationSpec] = None,
             alpha: float = 0.05, opts: Optional[FitOptions] = None,
             fit_result: Optional[FitResult] = None) -> TestResult:
    """Fit, compute squared residuals, optionally truncate, and test.

    ``gamma = 0`` uses the QMLE, ``gamma > 0`` the MDPDE. A precomputed
    ``fit_result`` (same series, same gamma) skips the fit.
    """
    kind = TestKind(kind)
    _check_config(kind, trunc)
    x = as_series(series, min_len=2)
    if fit_result is None:
        fit_result = fit(x, gamma, opts)
    r2 = residuals_squared(x, fit_result.params, init=fit_result.init)
    res = test_residuals(r2, kind, trunc, alpha)
    res.gamma = float(gamma)
    res.fit = fit_result
    if not fit_result.converged:
        log.warning("fit did not converge (%s); test result may be unreliable", fit_result.message)
    return res


run_test.__test__ = False


@dataclass
class Segment:
    start: int  # 1-based first index
    end: int  # 1-based last index, inclusive
    fit: Optional[FitResult] = None
    warning: str = ""

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end,
                "fit": self.fit.to_dict() if self.fit is not None else None,
                "warning": self.warning}

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        return cls(start=d["start"], end=d["end"],
                   fit=FitResult.from_dict(d["fit"]) if d.get("fit") else None,
                   warning=d.get("warning", ""))


@dataclass
class SegmentationResult:
    change_points: List[int]
    segments: List[Segment]
    tests: List[Tuple[int, int, TestResult]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "change_points": list(self.change_points),
            "segments": [s.to_dict() for s in self.segments],
            "tests": [{"start": a, "end": b, **r.to_dict()} for a, b, r in self.tests],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentationResult":
        tests = []
        for t in d.get("tests", []):
            t = dict(t)
            a, b = t.pop("start"), t.pop("end")
            tests.append((a, b, TestResult.from_dict(t)))
        return cls(change_points=list(d["change_points"]),
                   segments=[Segment.from_dict(s) for s in d["segments"]], tests=tests)


@dataclass(frozen=True)
class SegmentationConfig:
    kind: TestKind = TestKind.SN_ROBUST
    gamma: float = 0.1
    trunc: Optional[TruncationSpec] = TruncationSpec(DEFAULT_M)
    alpha: float = 0.05
    min_segment: int = DEFAULT_MIN_SEGMENT

    def __post_init__(self):
        object.__setattr__(self, "kind", TestKind(self.kind))
        _check_config(self.kind, self.trunc)
        if self.min_segment < 50:
            raise ValueError(f"min_segment must be at least 50, got {self.min_segment}")


def binary_segmentation(series, config: SegmentationConfig = SegmentationConfig(),
                        opts: Optional[FitOptions] = None) -> SegmentationResult:
    """Recursive test-and-split.

    A segment is tested only if it holds at least ``2 * min_segment``
    observations; on rejection it is split after the located change point,
    provided both pieces keep ``min_segment`` observations. Every final
    segment is refitted with ``config.gamma``.
    """
    x = as_series(series, min_len=2)
    ms = config.min_segment
    change_points: List[int] = []
    tests: List[Tuple[int, int, TestResult]] = []
    warnings = {}

    if x.shape[0] < 2 * ms:
        warnings[0] = f"series shorter than 2 * min_segment = {2 * ms}; no test attempted"
        log.warning(warnings[0])
    stack = [(0, x.shape[0])]  # half-open, 0-based
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2 * ms:
            continue
        seg = x[lo:hi]
        try:
            res = run_test(seg, config.kind, config.gamma, config.trunc, config.alpha, opts)
        except ValueError as exc:
            warnings[lo] = f"test failed: {exc}"
            continue
        tests.append((lo + 1, hi, res))
        if res.fit is not None and not res.fit.converged:
            warnings[lo] = "fit did not converge; segment left unsplit"
            continue
        if not res.reject:
            continue
        k = res.k_hat
        if not ms < k < (hi - lo) - ms:
            warnings[lo] = f"change located at {lo + k} too close to a segment edge; not split"
            continue
        change_points.append(lo + k)
        stack.append((lo + k, hi))
        stack.append((lo, lo + k))

    change_points.sort()
    bounds = [0] + change_points + [x.shape[0]]
    segments = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        seg_fit = None
        note = warnings.get(a, "")
        try:
            seg_fit = fit(x[a:b], config.gamma, opts)
            if not seg_fit.converged:
                note = note or "segment fit did not converge"
        except ValueError as exc:
            note = note or f"segment fit failed: {exc}"
        segments.append(Segment(start=a + 1, end=b, fit=seg_fit, warning=note))
    tests.sort(key=lambda t: (t[0], t[1]))
    return SegmentationResult(change_points=change_points, segments=segments, tests=tests)
