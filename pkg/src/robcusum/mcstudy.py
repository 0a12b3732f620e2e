"""Monte Carlo size/power experiments.

Replication i of a scenario always draws from the generator seeded with
``replication_seed(scenario.seed, i)``; results are gathered by replication
index, so tables do not depend on how many worker processes were used.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .detect import TestKind, TruncationSpec, test_label, test_residuals, truncate
from .estimate import FitOptions, fit, residuals_squared
from .limits import LimitKind, critical_value
from .model import ContaminationKind, ContaminationSpec, GarchParams, simulate, sign

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
MAX_FAILURE_RATE = 0.05
DESK_REPS = 500
FULL_REPS = 2000
MIN_REPS = 100

# replication outcome codes
FAIL = -1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 mixer on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replication_seed(seed: int, index: int) -> int:
    return splitmix64(splitmix64(seed & MASK64) ^ (index & MASK64))


@dataclass(frozen=True)
class TestConfig:
    kind: TestKind
    gamma: float = 0.0
    M: Optional[float] = None

    __test__ = False

    def __post_init__(self):
        object.__setattr__(self, "kind", TestKind(self.kind))
        if self.kind.robust and self.M is None:
            raise ValueError(f"{self.kind.value} needs a truncation threshold M")
        if not self.kind.robust and self.M is not None:
            raise ValueError(f"{self.kind.value} takes no truncation threshold")

    @property
    def trunc(self) -> Optional[TruncationSpec]:
        return TruncationSpec(self.M) if self.M is not None else None

    @property
    def label(self) -> str:
        return test_label(self.kind, self.M, self.gamma)


@dataclass(frozen=True)
class ChangeSpec:
    fraction: float
    post_params: GarchParams

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ValueError(f"change fraction must lie in (0, 1), got {self.fraction}")


@dataclass(frozen=True)
class McScenario:
    base_params: GarchParams
    n: int
    tests: Tuple[TestConfig, ...]
    change: Optional[ChangeSpec] = None
    contamination: ContaminationSpec = ContaminationSpec()
    reps: int = DESK_REPS
    alpha: float = 0.05
    burn_in: int = 1000
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))
        if self.change is not None and not 1 <= self.change_index < self.n:
            raise ValueError(f"change fraction {self.change.fraction} leaves no change in n={self.n}")
        if not self.tests:
            raise ValueError("scenario has an empty test list")
        if self.reps < MIN_REPS:
            raise ValueError(f"reps must be at least {MIN_REPS}, got {self.reps}")
        if self.n < 20:
            raise ValueError(f"n must be at least 20, got {self.n}")

    @property
    def change_index(self) -> Optional[int]:
        if self.change is None:
            return None
        return int(math.floor(self.n * self.change.fraction))

    def simulate(self, rep: int) -> np.ndarray:
        change = None
        if self.change is not None:
            change = (self.change_index, self.change.post_params)
        return simulate(self.base_params, self.n, self.burn_in, self.contamination, change,
                        seed=replication_seed(self.seed, rep))


@dataclass
class CellResult:
    scenario: str
    test: str
    n: int
    reps: int
    rejections: int
    failures: int
    status: str = "ok"

    @property
    def valid(self) -> int:
        return self.reps - self.failures

    @property
    def rate(self) -> float:
        if self.status != "ok" or self.valid == 0:
            return float("nan")
        return self.rejections / self.valid

    @property
    def se(self) -> float:
        r = self.rate
        if math.isnan(r):
            return float("nan")
        return math.sqrt(r * (1.0 - r) / self.valid)

    def as_row(self) -> dict:
        return {"scenario": self.scenario, "test": self.test, "n": self.n,
                "rate": _fmt(self.rate), "se": _fmt(self.se), "failures": self.failures,
                "reps": self.reps, "status": self.status}


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.4f}"


class CellAborted(RuntimeError):
    pass


@dataclass
class McTable:
    rows: List[CellResult] = field(default_factory=list)

    def get(self, scenario: str, test: str, n: Optional[int] = None) -> CellResult:
        for r in self.rows:
            if r.scenario == scenario and r.test == test and (n is None or r.n == n):
                return r
        raise KeyError((scenario, test, n))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(CellResult("", "", 0, 0, 0, 0).as_row()))
            w.writeheader()
            for r in self.rows:
                w.writerow(r.as_row())

    def wide(self) -> List[List[str]]:
        """Tests as rows, (scenario, n) as columns, like the published tables."""
        cols: List[Tuple[str, int]] = []
        tests: List[str] = []
        for r in self.rows:
            if (r.scenario, r.n) not in cols:
                cols.append((r.scenario, r.n))
            if r.test not in tests:
                tests.append(r.test)
        lookup = {(r.scenario, r.n, r.test): r for r in self.rows}
        out = [["test"] + [f"{s} n={n}" for s, n in cols]]
        for t in tests:
            row = [t]
            for s, n in cols:
                c = lookup.get((s, n, t))
                row.append("" if c is None else (_fmt(c.rate) if c.status == "ok" else c.status))
            out.append(row)
        return out

    def render(self) -> str:
        grid = self.wide()
        widths = [max(len(r[i]) for r in grid) for i in range(len(grid[0]))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in grid)


def _replicate(scenario: McScenario, rep: int, opts: Optional[FitOptions]) -> List[int]:
    x = scenario.simulate(rep)
    out = [FAIL] * len(scenario.tests)
    for gamma in sorted({t.gamma for t in scenario.tests}):
        try:
            fr = fit(x, gamma, opts)
        except ValueError:
            continue
        if not fr.converged:
            continue
        r2 = residuals_squared(x, fr.params, init=fr.init)
        for i, t in enumerate(scenario.tests):
            if t.gamma != gamma:
                continue
            try:
                res = test_residuals(r2, t.kind, t.trunc, scenario.alpha)
            except ValueError:
                continue
            out[i] = int(res.reject)
    return out


def _replicate_range(args) -> np.ndarray:
    scenario, lo, hi, opts = args
    return np.array([_replicate(scenario, r, opts) for r in range(lo, hi)], dtype=int).reshape(
        hi - lo, len(scenario.tests))


def replicate(scenario: McScenario, parallelism: int = 1,
              opts: Optional[FitOptions] = None) -> np.ndarray:
    """Outcome matrix (reps x tests): 1 reject, 0 accept, -1 failed fit/test."""
    reps = scenario.reps
    if parallelism <= 1 or reps < 2:
        return _replicate_range((scenario, 0, reps, opts))
    edges = np.linspace(0, reps, parallelism + 1).astype(int)
    jobs = [(scenario, int(a), int(b), opts) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        parts = list(pool.map(_replicate_range, jobs))
    return np.concatenate(parts, axis=0)


def _cells(scenario: McScenario, outcomes: np.ndarray) -> List[CellResult]:
    cells = []
    for i, t in enumerate(scenario.tests):
        col = outcomes[:, i]
        failures = int(np.sum(col == FAIL))
        status = "ok" if failures <= MAX_FAILURE_RATE * scenario.reps else "aborted"
        cells.append(CellResult(scenario=scenario.name, test=t.label, n=scenario.n,
                                reps=scenario.reps, rejections=int(np.sum(col == 1)),
                                failures=failures, status=status))
    return cells


def run_scenario(scenario: McScenario, parallelism: int = 1,
                 opts: Optional[FitOptions] = None) -> List[CellResult]:
    """Every test of a scenario on shared replications (one fit per gamma)."""
    return _cells(scenario, replicate(scenario, parallelism, opts))


def run_cell(scenario: McScenario, test_config: TestConfig, parallelism: int = 1,
             opts: Optional[FitOptions] = None) -> Tuple[float, float, int]:
    """Rejection rate, its standard error and the failure count of one test."""
    cell = run_scenario(replace(scenario, tests=(test_config,)), parallelism, opts)[0]
    if cell.status != "ok":
        raise CellAborted(
            f"{cell.failures} of {cell.reps} replications failed in {scenario.name or 'cell'} "
            f"({cell.test})")
    return cell.rate, cell.se, cell.failures


def run_study(scenarios: Sequence[McScenario], parallelism: int = 1,
              opts: Optional[FitOptions] = None) -> McTable:
    if not scenarios:
        raise ValueError("no scenarios to run")
    table = McTable()
    for sc in scenarios:
        cells = run_scenario(sc, parallelism, opts)
        for c in cells:
            if c.status != "ok":
                log.warning("cell %s / %s n=%d aborted: %d failures", c.scenario, c.test, c.n,
                            c.failures)
        table.rows.extend(cells)
    return table


# --------------------------------------------------------------------------
# i.i.d. variance-change example


def _intro_statistics(n: int, p: float, s: float, ratio: Optional[float], M: float,
                      seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n)
    hits = rng.random(n) < p
    sd = np.ones(n)
    if ratio is not None:
        sd[n // 2:] = math.sqrt(ratio)
    clean = sd * eps
    x = clean + s * sign(clean) * hits
    x2 = x * x
    return x2, truncate(x2, TruncationSpec(M))


def intro_example(n: int, reps: int, contamination: Tuple[float, float] = (0.0, 0.0),
                  change: Optional[float] = None, M: float = 9.0, seed: int = 0,
                  alpha: float = 0.05) -> Tuple[float, float]:
    """Rejection rates of the naive and truncated CUSUM-of-squares tests on i.i.d. data.

    X_t = X0_t + s sign(X0_t) P_t with X0_t ~ N(0, 1), switching to variance
    ``change`` after the midpoint when given. Both statistics use the sample
    variance of their own inputs and the sup-bridge critical value.
    """
    if n < 50:
        raise ValueError(f"n must be at least 50, got {n}")
    p, s = contamination
    cv = critical_value(LimitKind.SUP_BRIDGE, alpha)
    naive = robust = 0
    from .detect import cusum_test

    for i in range(reps):
        x2, f2 = _intro_statistics(n, p, s, change, M, replication_seed(seed, i))
        naive += cusum_test(x2, alpha).statistic > cv
        robust += cusum_test(f2, alpha).statistic > cv
    return naive / reps, robust / reps


@dataclass(frozen=True)
class IntroCell:
    name: str
    p: float = 0.0
    s: float = 0.0
    ratio: Optional[float] = None


def run_intro_study(ns: Sequence[int], cells: Sequence[IntroCell], reps: int, M: float,
                    seed: int, alpha: float = 0.05) -> McTable:
    table = McTable()
    for j, cell in enumerate(cells):
        for i, n in enumerate(ns):
            sd = replication_seed(seed, 1000 * j + i)
            naive, robust = intro_example(n, reps, (cell.p, cell.s), cell.ratio, M, sd, alpha)
            for label, rate in (("T_n", naive), (f"T_n^R(M={M:g})", robust)):
                table.rows.append(CellResult(cell.name, label, n, reps, round(rate * reps), 0))
    return table


# --------------------------------------------------------------------------
# Config files (JSON)


class ConfigError(ValueError):
    pass


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}: required field missing")
    return d[key]


def _params(v, where: str) -> GarchParams:
    try:
        return GarchParams.from_sequence(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _tests(v, where: str) -> Tuple[TestConfig, ...]:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a nonempty list of tests")
    out = []
    for i, t in enumerate(v):
        try:
            out.append(TestConfig(TestKind(_need(t, "kind", f"{where}[{i}]")),
                                  float(t.get("gamma", 0.0)),
                                  None if t.get("M") is None else float(t["M"])))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}[{i}]: {exc}") from None
    return tuple(out)


def _contamination(v, where: str) -> ContaminationSpec:
    if v is None:
        return ContaminationSpec()
    try:
        return ContaminationSpec(ContaminationKind(str(v.get("kind", "none")).lower()),
                                 float(v.get("p", 0.0)), float(v.get("s", 0.0)))
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path, reps: Optional[int] = None) -> dict:
    """Parse a study config into ``{"kind": ..., ...}`` ready to run.

    ``kind == "garch"`` yields a list of McScenario under ``scenarios``;
    ``kind == "intro"`` yields the arguments of :func:`run_intro_study`.
    ``reps`` overrides the file value.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    kind = raw.get("type", "garch")
    defaults = raw.get("defaults", {})
    base_seed = int(defaults.get("seed", 0))
    nreps = int(reps or defaults.get("reps", DESK_REPS))
    alpha = float(defaults.get("alpha", 0.05))

    if kind == "intro":
        ns = [int(n) for n in _need(raw, "n", "config")]
        cells = []
        for i, c in enumerate(_need(raw, "cells", "config")):
            where = f"cells[{i}]"
            cells.append(IntroCell(str(_need(c, "name", where)), float(c.get("p", 0.0)),
                                   float(c.get("s", 0.0)),
                                   None if c.get("ratio") is None else float(c["ratio"])))
        return {"kind": "intro", "name": raw.get("name", path.stem), "ns": ns, "cells": cells,
                "reps": nreps, "M": float(defaults.get("M", 9.0)), "seed": base_seed,
                "alpha": alpha}
    if kind != "garch":
        raise ConfigError(f"type: unknown study type {kind!r}")

    default_tests = defaults.get("tests")
    scenarios = []
    specs = _need(raw, "scenarios", "config")
    if not isinstance(specs, list) or not specs:
        raise ConfigError("scenarios: expected a nonempty list")
    idx = 0
    for i, sc in enumerate(specs):
        where = f"scenarios[{i}]"
        params = _params(_need(sc, "params", where), f"{where}.params")
        tests = _tests(sc.get("tests", default_tests), f"{where}.tests")
        change = None
        if sc.get("change") is not None:
            ch = sc["change"]
            post = _params(_need(ch, "params", f"{where}.change"), f"{where}.change.params")
            try:
                change = ChangeSpec(float(ch.get("fraction", 0.5)), post)
            except ValueError as exc:
                raise ConfigError(f"{where}.change.fraction: {exc}") from None
        contamination = _contamination(sc.get("contamination", defaults.get("contamination")),
                                       f"{where}.contamination")
        ns = _need(sc, "n", where)
        for n in ns if isinstance(ns, list) else [ns]:
            scenarios.append(McScenario(
                base_params=params, n=int(n), tests=tests, change=change,
                contamination=contamination, reps=nreps,
                alpha=float(sc.get("alpha", alpha)),
                burn_in=int(sc.get("burn_in", defaults.get("burn_in", 1000))),
                seed=int(sc["seed"]) if "seed" in sc else replication_seed(base_seed, idx),
                name=str(sc.get("name", f"scenario{i}"))))
            idx += 1
    return {"kind": "garch", "name": raw.get("name", path.stem), "scenarios": scenarios}
