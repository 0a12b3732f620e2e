"""Limiting null laws of the CUSUM and self-normalised statistics.

``SUP_BRIDGE`` is sup |B(t) - t B(1)| (the Kolmogorov law); ``SN_FUNCTIONAL``
is sup (B(t) - t B(1))^2 / V(t). Critical values come from a table that is
simulated once and shipped with the package (``data/critical_values.csv``).
"""

from __future__ import annotations

import csv
import enum
import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import kernels

DEFAULT_LEVELS = (0.90, 0.95, 0.99)
TABLE_GRID_N = 10_000
TABLE_REPS = 100_000
TABLE_SEED = 20240101
CSV_HEADER = ["kind", "level", "quantile", "grid_n", "reps", "seed"]


class LimitKind(str, enum.Enum):
    SUP_BRIDGE = "sup_bridge"
    SN_FUNCTIONAL = "sn_functional"

    @classmethod
    def parse(cls, name) -> "LimitKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"sn": cls.SN_FUNCTIONAL, "bridge": cls.SUP_BRIDGE, "cusum": cls.SUP_BRIDGE}
        return aliases.get(key) or cls(key)


@dataclass
class QuantileTable:
    kind: LimitKind
    grid_n: int
    reps: int
    seed: int
    quantiles: Dict[float, float] = field(default_factory=dict)

    def quantile(self, level: float) -> float:
        for lv, q in self.quantiles.items():
            if abs(lv - level) < 1e-9:
                return q
        raise KeyError(level)

    def interpolate(self, level: float) -> float:
        lv = np.array(sorted(self.quantiles))
        if not lv[0] <= level <= lv[-1]:
            raise ValueError(f"level {level} outside tabulated range [{lv[0]}, {lv[-1]}]")
        return float(np.interp(level, lv, [self.quantiles[v] for v in lv]))

    def rows(self) -> List[dict]:
        return [{"kind": self.kind.value, "level": lv, "quantile": q, "grid_n": self.grid_n,
                 "reps": self.reps, "seed": self.seed}
                for lv, q in sorted(self.quantiles.items())]


def _draw(kind: LimitKind, grid_n: int, seed: int, rep: int, exact_extrema: bool) -> float:
    rng = np.random.default_rng([seed, rep])
    z = rng.standard_normal(grid_n)
    if kind is LimitKind.SUP_BRIDGE:
        if exact_extrema:
            u_hi = 1.0 - rng.random(grid_n)
            u_lo = 1.0 - rng.random(grid_n)
        else:
            u_hi = u_lo = z  # unused
        return kernels.bridge_sup(z, u_hi, u_lo, exact_extrema)
    stat, _ = kernels.sn_max(z)
    return stat


def _draw_range(args) -> np.ndarray:
    kind, grid_n, seed, lo, hi, exact = args
    return np.array([_draw(kind, grid_n, seed, r, exact) for r in range(lo, hi)])


def simulate_limit_samples(kind, grid_n: int, reps: int, seed: int, *,
                           exact_extrema: bool = True, parallelism: int = 1) -> np.ndarray:
    """Draw ``reps`` values of the discretised limit functional.

    Replication r always uses the stream seeded by (seed, r), so the output
    does not depend on ``parallelism``. For the bridge the supremum between
    grid points is sampled exactly when ``exact_extrema`` is set; the
    self-normalised functional is evaluated on interior grid points with
    left-endpoint Riemann sums for V(t).
    """
    kind = LimitKind.parse(kind)
    if grid_n < 1000:
        raise ValueError(f"grid_n must be at least 1000, got {grid_n}")
    if reps < 1:
        raise ValueError("reps must be positive")
    if parallelism <= 1:
        return _draw_range((kind, grid_n, seed, 0, reps, exact_extrema))
    edges = np.linspace(0, reps, parallelism + 1).astype(int)
    jobs = [(kind, grid_n, seed, int(a), int(b), exact_extrema)
            for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        parts = list(pool.map(_draw_range, jobs))
    return np.concatenate(parts)


def simulate_limit(kind, grid_n: int = TABLE_GRID_N, reps: int = TABLE_REPS,
                   seed: int = TABLE_SEED, levels: Iterable[float] = (), *,
                   exact_extrema: bool = True, parallelism: int = 1) -> QuantileTable:
    """Tabulate empirical quantiles of a limit law at 0.90, 0.95, 0.99 and ``levels``."""
    kind = LimitKind.parse(kind)
    if reps < 10_000:
        raise ValueError(f"reps must be at least 10000, got {reps}")
    samples = simulate_limit_samples(kind, grid_n, reps, seed,
                                     exact_extrema=exact_extrema, parallelism=parallelism)
    lv = sorted(set(DEFAULT_LEVELS) | {float(v) for v in levels})
    qs = np.quantile(samples, lv)
    return QuantileTable(kind, grid_n, reps, seed, {float(a): float(b) for a, b in zip(lv, qs)})


def kolmogorov_cdf(x: float) -> float:
    """P(sup |B(t) - t B(1)| <= x).

    Uses 1 - 2 sum (-1)^(j-1) exp(-2 j^2 x^2) for x >= 1 and the equivalent
    theta-function form sqrt(2 pi)/x sum exp(-(2j-1)^2 pi^2 / (8 x^2)) below,
    where the alternating series converges slowly.
    """
    if x <= 0:
        return 0.0
    total = 0.0
    j = 1
    if x >= 1.0:
        while True:
            term = math.exp(-2.0 * j * j * x * x)
            total += term if j % 2 == 1 else -term
            if term < 1e-12:
                break
            j += 1
        return 1.0 - 2.0 * total
    c = math.pi * math.pi / (8.0 * x * x)
    while True:
        term = math.exp(-(2 * j - 1) ** 2 * c)
        total += term
        if term < 1e-12 * max(total, 1e-300) or j > 10_000:
            break
        j += 1
    return math.sqrt(2.0 * math.pi) / x * total


def write_tables(path, tables: Sequence[QuantileTable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        w.writeheader()
        for t in tables:
            for row in t.rows():
                w.writerow({**row, "level": f"{row['level']:.6g}", "quantile": f"{row['quantile']:.6f}"})


def read_tables(path) -> Dict[LimitKind, QuantileTable]:
    tables: Dict[LimitKind, QuantileTable] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            try:
                kind = LimitKind.parse(row["kind"])
                level, q = float(row["level"]), float(row["quantile"])
                meta = (int(row["grid_n"]), int(row["reps"]), int(row["seed"]))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{i}: {exc}") from exc
            t = tables.setdefault(kind, QuantileTable(kind, *meta))
            t.quantiles[level] = q
    for t in tables.values():
        lv = sorted(t.quantiles)
        if any(t.quantiles[a] > t.quantiles[b] for a, b in zip(lv[:-1], lv[1:])):
            raise ValueError(f"{path}: quantiles of {t.kind.value} are not monotone in level")
    return tables


def embedded_table_path() -> Path:
    return Path(str(resources.files("robcusum") / "data" / "critical_values.csv"))


@functools.lru_cache(maxsize=None)
def embedded_tables() -> Dict[LimitKind, QuantileTable]:
    return read_tables(embedded_table_path())


def regenerate_embedded(parallelism: int = 1, path=None) -> List[QuantileTable]:
    """Rebuild the shipped table (build-time step, not run by tests)."""
    tables = [simulate_limit(k, TABLE_GRID_N, TABLE_REPS, TABLE_SEED, parallelism=parallelism)
              for k in LimitKind]
    write_tables(path or embedded_table_path(), tables)
    embedded_tables.cache_clear()
    return tables


def critical_value(kind, alpha: float, table: Optional[QuantileTable] = None,
                   interpolate: bool = False) -> float:
    """(1 - alpha) quantile of the limit law.

    The embedded table serves alpha in {0.10, 0.05, 0.01}; other levels need
    a user table (or ``interpolate=True`` for linear interpolation between
    tabulated levels). alpha = 1 returns 0, the lower end of the support.
    """
    kind = LimitKind.parse(kind)
    if not 0 < alpha <= 1:
        raise ValueError(f"significance level must lie in (0, 1], got {alpha}")
    if alpha == 1:
        return 0.0
    if table is None:
        table = embedded_tables()[kind]
    elif table.kind is not kind:
        raise ValueError(f"table holds {table.kind.value}, not {kind.value}")
    level = 1.0 - alpha
    try:
        return table.quantile(level)
    except KeyError:
        if interpolate:
            return table.interpolate(level)
        raise ValueError(
            f"no tabulated {kind.value} quantile for alpha={alpha}; supply a table "
            f"or enable interpolation") from None
