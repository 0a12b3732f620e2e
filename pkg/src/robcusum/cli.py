"""Command-line entry point.

Subcommands: ``test``, ``segment``, ``mc``, ``limits`` and ``simulate``.
Exit status is 0 when no test rejects, 2 when at least one does and 1 on
any failure (bad input, bad config, numerical breakdown).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from ._accel import backend
from .detect import (SegmentationConfig, SegmentationResult, TestKind, TestResult,
                     TruncationSpec, binary_segmentation, cusum_process, run_test, truncate)
from .estimate import FitOptions, FitResult, fit, residuals_squared
from .limits import (LimitKind, critical_value, regenerate_embedded, simulate_limit,
                     write_tables)
from .mcstudy import FULL_REPS, ConfigError, load_config, run_intro_study, run_study
from .model import ContaminationKind, ContaminationSpec, GarchParams, simulate

log = logging.getLogger("robcusum")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_REJECT = 2

SIGNIFICANCE_LEVELS = (0.01, 0.05, 0.10)
DEFAULT_GAMMA = 0.1
DEFAULT_THRESHOLDS = (9.0, 16.0)


class InputError(ValueError):
    pass


# --------------------------------------------------------------------------
# data ingestion


@dataclass
class PriceSeries:
    dates: List[str]
    prices: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if len(self.dates) != self.prices.shape[0]:
            raise ValueError("dates and prices differ in length")
        if np.any(~(self.prices > 0)):
            raise ValueError("prices must be positive")
        if any(a >= b for a, b in zip(self.dates[:-1], self.dates[1:])):
            raise ValueError("dates must be strictly increasing")

    def __len__(self) -> int:
        return self.prices.shape[0]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _open_rows(path, required: Sequence[str]):
    path = Path(path)
    if not path.exists():
        raise InputError(f"data file not found: {path}")
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        fh.close()
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}; "
                         f"found {', '.join(reader.fieldnames or [])}")
    return fh, reader


def load_csv(path, date_col: str = "date", price_col: str = "price") -> PriceSeries:
    """Read a ``date,price`` file; every problem is reported with its line number."""
    fh, reader = _open_rows(path, (date_col, price_col))
    dates: List[str] = []
    prices: List[float] = []
    errors: List[str] = []
    seen: Dict[str, int] = {}
    with fh:
        for line, row in enumerate(reader, start=2):
            raw_d = (row.get(date_col) or "").strip()
            raw_p = (row.get(price_col) or "").strip()
            try:
                day = dt.date.fromisoformat(raw_d).isoformat()
            except ValueError:
                errors.append(f"line {line}: malformed date {raw_d!r}")
                continue
            if raw_p == "":
                errors.append(f"line {line}: missing price")
                continue
            try:
                price = float(raw_p)
            except ValueError:
                errors.append(f"line {line}: malformed price {raw_p!r}")
                continue
            if not (price > 0 and math.isfinite(price)):
                errors.append(f"line {line}: nonpositive price {raw_p}")
                continue
            if day in seen:
                errors.append(f"line {line}: duplicate date {day} (first on line {seen[day]})")
                continue
            if dates and day < dates[-1]:
                errors.append(f"line {line}: date {day} out of order")
                continue
            seen[day] = line
            dates.append(day)
            prices.append(price)
    if errors:
        raise InputError(f"{path}: " + "; ".join(errors))
    if not prices:
        raise InputError(f"{path}: no data rows")
    return PriceSeries(dates, np.array(prices))


def load_returns(path, column: str) -> np.ndarray:
    fh, reader = _open_rows(path, (column,))
    values, errors = [], []
    with fh:
        for line, row in enumerate(reader, start=2):
            try:
                v = float(row[column])
                if not math.isfinite(v):
                    raise ValueError
                values.append(v)
            except (TypeError, ValueError):
                errors.append(f"line {line}: malformed value {row.get(column)!r}")
    if errors:
        raise InputError(f"{path}: " + "; ".join(errors))
    return np.array(values)


def log_returns(prices: PriceSeries) -> np.ndarray:
    """r_t = 100 (log S_t - log S_{t-1})."""
    p = prices.prices if isinstance(prices, PriceSeries) else np.asarray(prices, dtype=float)
    if p.shape[0] < 2:
        raise ValueError("need at least two prices for a return")
    return 100.0 * np.diff(np.log(p))


# --------------------------------------------------------------------------
# reports


@dataclass
class Report:
    command: str
    input: dict
    config: dict
    fits: Dict[str, FitResult] = field(default_factory=dict)
    tests: List[TestResult] = field(default_factory=list)
    segmentation: Optional[SegmentationResult] = None
    version: str = __version__

    @property
    def rejected(self) -> bool:
        if self.segmentation is not None:
            return bool(self.segmentation.change_points)
        return any(t.reject for t in self.tests)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "input": self.input,
            "config": self.config,
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "tests": [{"label": t.label, "significance": significance(t), **t.to_dict()}
                      for t in self.tests],
            "segmentation": self.segmentation.to_dict() if self.segmentation else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        tests = []
        for t in d.get("tests", []):
            t = {k: v for k, v in t.items() if k not in ("label", "significance")}
            tests.append(TestResult.from_dict(t))
        seg = d.get("segmentation")
        return cls(command=d["command"], input=d["input"], config=d["config"],
                   fits={k: FitResult.from_dict(v) for k, v in d.get("fits", {}).items()},
                   tests=tests,
                   segmentation=SegmentationResult.from_dict(seg) if seg else None,
                   version=d.get("version", __version__))

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))


def significance(res: TestResult) -> Optional[float]:
    """Smallest tabulated level at which the statistic rejects, or None."""
    kind = LimitKind.SN_FUNCTIONAL if res.kind.self_normalized else LimitKind.SUP_BRIDGE
    for a in SIGNIFICANCE_LEVELS:
        if res.statistic > critical_value(kind, a):
            return a
    return None


# --------------------------------------------------------------------------
# helpers


def _fit_options(args) -> FitOptions:
    return FitOptions(max_iter=args.max_iter, tol=args.tol)


def _read_series(args):
    """Returns (values, dates-or-None, provenance dict)."""
    prov = {"path": str(args.data), "sha256": file_sha256(args.data)} if Path(
        args.data).exists() else None
    if args.returns_col:
        x = load_returns(args.data, args.returns_col)
        dates = None
        prov.update(kind="returns", column=args.returns_col, n_obs=int(x.shape[0]))
    else:
        prices = load_csv(args.data, args.date_col, args.price_col)
        x = log_returns(prices)
        dates = prices.dates[1:]
        prov.update(kind="prices", n_prices=len(prices), n_obs=int(x.shape[0]),
                    first_date=prices.dates[0], last_date=prices.dates[-1])
    return x, dates, prov


@dataclass(frozen=True)
class _Planned:
    kind: TestKind
    gamma: float
    M: Optional[float]


def _battery(args) -> List[_Planned]:
    thresholds = args.M or list(DEFAULT_THRESHOLDS)
    families = ["cusum", "sn"] if args.test in (None, "all") else [args.test]
    want_naive = args.naive or not args.robust
    want_robust = args.robust or not args.naive
    plan = []
    for fam in families:
        if want_naive:
            plan.append(_Planned(TestKind.from_family(fam, False), 0.0, None))
    for fam in families:
        if want_robust:
            for m in thresholds:
                plan.append(_Planned(TestKind.from_family(fam, True), args.gamma, float(m)))
    return plan


def _fit_key(gamma: float) -> str:
    return "qmle" if gamma == 0 else f"mdpde_{gamma:g}"


def _write_plot_csv(path, x, dates, tests: List[TestResult]) -> None:
    cols = {}
    for t in tests:
        r2 = residuals_squared(x, t.fit.params, init=t.fit.init)
        vals = truncate(r2, TruncationSpec(t.M_used)) if t.kind.robust else r2
        cols[t.label] = cusum_process(vals)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + (["date"] if dates else []) + list(cols))
        for k in range(x.shape[0]):
            row = [k + 1] + ([dates[k]] if dates else [])
            w.writerow(row + [f"{c[k]:.10g}" for c in cols.values()])


def _emit(report: Report, args) -> None:
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
        log.info("report written to %s", args.report)


def _print_tests(tests: List[TestResult], dates) -> None:
    print(f"{'test':<14}{'statistic':>11}{'crit':>10}  {'decision':<10}{'k_hat':>7}")
    for t in tests:
        sig = significance(t)
        mark = "**" if sig == 0.01 else "*" if sig == 0.05 else ""
        where = ""
        if t.reject:
            where = str(t.k_hat) + (f" ({dates[t.k_hat - 1]})" if dates else "")
        decision = ("reject" if t.reject else "accept") + mark
        print(f"{t.label:<14}{t.statistic:>11.4g}{t.critical_value:>10.4g}  {decision:<10}{where:>7}")


# --------------------------------------------------------------------------
# subcommands


def cmd_test(args) -> Report:
    x, dates, prov = _read_series(args)
    opts = _fit_options(args)
    fits: Dict[str, FitResult] = {}
    results = []
    for p in _battery(args):
        key = _fit_key(p.gamma)
        if key not in fits:
            fits[key] = fit(x, p.gamma, opts)
        trunc = TruncationSpec(p.M) if p.M is not None else None
        results.append(run_test(x, p.kind, p.gamma, trunc, args.alpha, opts, fits[key]))
    config = {"alpha": args.alpha, "gamma": args.gamma, "tests": [r.label for r in results],
              "max_iter": args.max_iter, "tol": args.tol}
    report = Report("test", prov, config, fits, results)
    _print_tests(results, dates)
    if args.plot_csv:
        _write_plot_csv(args.plot_csv, x, dates, results)
    _emit(report, args)
    return report


def cmd_segment(args) -> Report:
    x, dates, prov = _read_series(args)
    opts = _fit_options(args)
    family = args.test or "sn"
    robust = not args.naive
    kind = TestKind.from_family(family, robust)
    trunc = TruncationSpec(args.M[0] if args.M else DEFAULT_THRESHOLDS[0]) if robust else None
    gamma = args.gamma if robust else 0.0
    cfg = SegmentationConfig(kind, gamma, trunc, args.alpha, args.min_segment)
    seg = binary_segmentation(x, cfg, opts)
    for s in seg.segments:
        if s.warning:
            log.warning("segment %d-%d: %s", s.start, s.end, s.warning)
    fits = {_fit_key(gamma): fit(x, gamma, opts)}
    config = {"alpha": args.alpha, "gamma": gamma, "kind": kind.value,
              "M": trunc.M if trunc else None, "min_segment": args.min_segment,
              "max_iter": args.max_iter, "tol": args.tol}
    report = Report("segment", prov, config, fits, [t for _, _, t in seg.tests], seg)
    print(f"change points: {seg.change_points or 'none'}")
    for s in seg.segments:
        span = f"{s.start}-{s.end}"
        if dates:
            span += f" ({dates[s.start - 1]} .. {dates[s.end - 1]})"
        est = "" if s.fit is None else "omega={:.3f} alpha={:.3f} beta={:.3f}".format(*s.fit.params)
        print(f"  {span}: {est}")
    if args.plot_csv and seg.tests:
        _write_plot_csv(args.plot_csv, x, dates, [seg.tests[0][2]])
    _emit(report, args)
    return report


def cmd_mc(args) -> int:
    reps = FULL_REPS if args.full_scale else args.reps
    cfg = load_config(args.config, reps)
    if cfg["kind"] == "intro":
        table = run_intro_study(cfg["ns"], cfg["cells"], cfg["reps"], cfg["M"], cfg["seed"],
                                cfg["alpha"])
    else:
        table = run_study(cfg["scenarios"], args.parallelism, _fit_options(args))
    out = args.out or f"{cfg['name']}.csv"
    table.to_csv(out)
    print(table.render())
    print(f"wrote {out}")
    aborted = [r for r in table.rows if r.status != "ok"]
    if aborted:
        log.warning("%d cell(s) aborted after too many failed fits", len(aborted))
    return EXIT_OK


def cmd_limits(args) -> int:
    kind = LimitKind.parse(args.kind)
    if args.regenerate:
        for t in regenerate_embedded(args.parallelism):
            print(t.kind.value, {k: round(v, 6) for k, v in t.quantiles.items()})
        return EXIT_OK
    if args.simulate:
        table = simulate_limit(kind, args.grid_n, args.reps, args.seed, args.levels,
                               parallelism=args.parallelism)
        for lv, q in sorted(table.quantiles.items()):
            print(f"{lv:.4g}\t{q:.6f}")
        if args.out:
            write_tables(args.out, [table])
        return EXIT_OK
    print(f"{critical_value(kind, args.alpha, interpolate=args.interpolate):.6f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    params = GarchParams.from_sequence(args.params)
    change = None
    if args.change_at is not None:
        if args.post is None:
            raise InputError("--change-at needs --post OMEGA ALPHA BETA")
        change = (args.change_at, GarchParams.from_sequence(args.post))
    cont = ContaminationSpec(ContaminationKind(args.contamination), args.p, args.s)
    x = simulate(params, args.n, args.burn_in, cont, change, args.seed)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["t", "x"])
        for t, v in enumerate(x, start=1):
            w.writerow([t, repr(float(v))])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="CSV file with prices (date,price) or returns")
    p.add_argument("--date-col", default="date")
    p.add_argument("--price-col", default="price")
    p.add_argument("--returns-col", default=None,
                   help="read this column as returns instead of converting prices")
    p.add_argument("--test", choices=["cusum", "sn", "all"], default=None)
    grp = p.add_mutually_exclusive_group()
    grp.add_argument("--naive", action="store_true", help="only naive tests")
    grp.add_argument("--robust", action="store_true", help="only robust tests")
    p.add_argument("--M", type=float, action="append", default=None,
                   help="truncation threshold (repeatable; default 9 and 16)")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA,
                   help="MDPDE tuning constant for robust tests (0 selects the QMLE)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--plot-csv", default=None, help="write the CUSUM paths D_k here")


def _add_fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robcusum", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version",
                    version=f"%(prog)s {__version__} ({backend()} kernels)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run change-point tests on a return series")
    _add_data_args(p)
    _add_fit_args(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("segment", help="binary segmentation with one test")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--min-segment", type=int, default=250)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("mc", help="Monte Carlo size/power study from a JSON config")
    p.add_argument("config")
    p.add_argument("--reps", type=int, default=None, help="override the config's reps")
    p.add_argument("--full-scale", action="store_true", help=f"use {FULL_REPS} replications")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", default=None, help="output CSV (default <name>.csv)")
    _add_fit_args(p)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("limits", help="critical values of the limit laws")
    p.add_argument("--kind", default="sup-bridge", help="sup-bridge or sn-functional")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--interpolate", action="store_true")
    p.add_argument("--simulate", action="store_true", help="simulate instead of table lookup")
    p.add_argument("--regenerate", action="store_true", help="rebuild the embedded table")
    p.add_argument("--grid-n", type=int, default=10_000)
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--levels", type=float, nargs="*", default=())
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("simulate", help="simulate a (contaminated) GARCH(1,1) series")
    p.add_argument("--params", type=float, nargs=3, default=(1.0, 0.3, 0.4),
                   metavar=("OMEGA", "ALPHA", "BETA"))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--change-at", type=int, default=None)
    p.add_argument("--post", type=float, nargs=3, default=None,
                   metavar=("OMEGA", "ALPHA", "BETA"))
    p.add_argument("--contamination", choices=[k.value for k in ContaminationKind],
                   default="none")
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        out = args.func(args)
    except (InputError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if isinstance(out, Report):
        return EXIT_REJECT if out.rejected else EXIT_OK
    return int(out)


if __name__ == "__main__":
    sys.exit(main())
