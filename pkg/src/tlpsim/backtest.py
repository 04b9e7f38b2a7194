"""Historical replay of close-to-open gaps through the model.

Feeds a real (or synthetic) series of closes and next opens through the
premium model and a collateral policy: each night the trailing realized
close-to-open volatility implies a model premium, the policy supplies a
loan-to-value ratio, and the realized gap decides whether that night
would have defaulted. The premium reported here is model-implied (there
is no historical stablecoin market to observe).

The replay is pure and deterministic: same input rows, same report,
byte for byte. Percentiles use the nearest-rank rule
(``sorted[ceil(p / 100 * n) - 1]``), the median being the 50th
percentile under the same rule.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .gap_model import LogMixtureGap, MixtureComponent, sample_gaps
from .ltv_controller import ControllerConfig, initial_state, step
from .pricing import TRADING_DAYS_PER_YEAR, tlp_exact

CSV_HEADER = ("date", "close", "next_open")

#: Nights in the bundled synthetic dataset that are actually scored
#: (the file carries this many rows plus the volatility warm-up window).
BUNDLED_SCORED_NIGHTS = 1250

_BUNDLED_SEED = 90210
_BUNDLED_WARMUP = 60
_PRICE_FMT = "%.6f"


@dataclass(frozen=True)
class OhlcRecord:
    date: dt.date
    close: float
    next_open: float


@dataclass(frozen=True)
class StaticPolicy:
    ltv: float

    def __post_init__(self) -> None:
        if not 0.0 < self.ltv <= 1.0:
            raise ParameterError(f"static ltv must be in (0, 1], got {self.ltv}")


@dataclass(frozen=True)
class DynamicPolicy:
    config: ControllerConfig
    initial_ltv: float | None = None  # defaults to the controller ceiling


Policy = StaticPolicy | DynamicPolicy


@dataclass(frozen=True)
class BacktestReport:
    """Aggregates for one replayed policy.

    ``tlp_series`` is the raw nightly model premium backing the summary
    statistics and the histogram; ``supply_series`` is the LTV in force
    each night (minted notional per unit collateral value).
    """

    policy_label: str
    n_nights: int
    mean_tlp: float
    median_tlp: float
    p95_tlp: float
    p99_tlp: float
    default_count_static: dict[float, int]
    default_count_dynamic: int | None
    default_dates: list[dt.date]
    histogram_bins: list[tuple[float, float, int]]
    supply_series: list[float]
    tlp_series: list[float]


def load_series(path) -> list[OhlcRecord]:
    """Read and validate a ``date,close,next_open`` CSV.

    Rows must carry strictly positive prices and unique ISO dates;
    out-of-order rows are sorted with a warning. Errors name the
    offending line.
    """
    path = Path(path)
    records: list[OhlcRecord] = []
    seen: set[dt.date] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}, "
                            f"got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0].strip())
                close = float(row[1])
                next_open = float(row[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not close > 0.0 or not next_open > 0.0:
                raise DataError(f"{path}:{lineno}: prices must be > 0 "
                                f"(close={row[1]}, next_open={row[2]})")
            if date in seen:
                raise DataError(f"{path}:{lineno}: duplicate date {date}")
            seen.add(date)
            records.append(OhlcRecord(date=date, close=close, next_open=next_open))

    if any(records[i].date > records[i + 1].date for i in range(len(records) - 1)):
        warnings.warn(f"{path}: rows were not sorted by date; sorting", stacklevel=2)
        records.sort(key=lambda r: r.date)
    return records


def write_series(records: list[OhlcRecord], path) -> None:
    """Write a series in the documented CSV schema with fixed formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([r.date.isoformat(), _PRICE_FMT % r.close,
                             _PRICE_FMT % r.next_open])


def percentile_nearest_rank(sorted_values: list[float], p: float) -> float:
    """Nearest-rank percentile of an ascending list, ``p`` in (0, 100]."""
    if not sorted_values:
        raise ParameterError("percentile of empty series")
    if not 0.0 < p <= 100.0:
        raise ParameterError(f"percentile must be in (0, 100], got {p}")
    rank = max(1, math.ceil(p / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def _histogram(values: list[float], n_bins: int) -> list[tuple[float, float, int]]:
    lo, hi = min(values), max(values)
    width = (hi - lo) / n_bins
    if width == 0.0:
        width = 1e-12
    counts = [0] * n_bins
    for v in values:
        idx = min(n_bins - 1, int((v - lo) / width))
        counts[idx] += 1
    return [(lo + i * width, lo + (i + 1) * width, counts[i]) for i in range(n_bins)]


def replay(records: list[OhlcRecord], policy: Policy, vol_estimator_window: int = 60,
           fee_rate: float = 0.0, n_bins: int = 40,
           trading_days_per_year: int = TRADING_DAYS_PER_YEAR) -> BacktestReport:
    """Replay one policy over the series.

    Nights before the volatility window are warm-up only. Each scored
    night estimates sigma from the trailing ``vol_estimator_window``
    close-to-open log gaps (sample standard deviation, annualized by
    ``sqrt(trading_days_per_year)``), prices the model premium, and
    records a default when ``next_open < ltv * close``. A dynamic policy
    evaluates the night at the LTV in force, then steps the controller
    on that night's model premium.
    """
    if vol_estimator_window < 2:
        raise ParameterError("vol_estimator_window must be >= 2")
    if len(records) < vol_estimator_window + 1:
        raise DataError(f"need at least {vol_estimator_window + 1} records, "
                        f"got {len(records)}")
    if fee_rate < 0.0:
        raise ParameterError("fee_rate must be >= 0")

    log_gaps = [math.log(r.next_open / r.close) for r in records]
    tau = 1.0 / trading_days_per_year
    root_n = math.sqrt(trading_days_per_year)

    if isinstance(policy, StaticPolicy):
        label = f"static_{policy.ltv:g}"
        state = None
        ltv = policy.ltv
    else:
        label = "dynamic"
        start = policy.initial_ltv if policy.initial_ltv is not None \
            else policy.config.ltv_ceiling
        state = initial_state(policy.config, start)
        ltv = state.current_ltv

    tlp_series: list[float] = []
    supply_series: list[float] = []
    default_dates: list[dt.date] = []
    for i in range(vol_estimator_window, len(records)):
        window = log_gaps[i - vol_estimator_window:i]
        sigma_night = float(np.std(window, ddof=1))
        tlp_model = tlp_exact(sigma_night * root_n, tau)

        if state is not None:
            ltv = state.current_ltv
        night = records[i]
        if night.next_open < ltv * night.close:
            default_dates.append(night.date)
        tlp_series.append(tlp_model)
        supply_series.append(ltv)

        if state is not None:
            state = step(state, policy.config, tlp_model)

    ordered = sorted(tlp_series)
    n = len(ordered)
    defaults = len(default_dates)
    return BacktestReport(
        policy_label=label,
        n_nights=n,
        mean_tlp=math.fsum(ordered) / n,
        median_tlp=percentile_nearest_rank(ordered, 50.0),
        p95_tlp=percentile_nearest_rank(ordered, 95.0),
        p99_tlp=percentile_nearest_rank(ordered, 99.0),
        default_count_static={policy.ltv: defaults} if isinstance(policy, StaticPolicy) else {},
        default_count_dynamic=defaults if isinstance(policy, DynamicPolicy) else None,
        default_dates=default_dates,
        histogram_bins=_histogram(tlp_series, n_bins),
        supply_series=supply_series,
        tlp_series=tlp_series,
    )


def compare_policies(records: list[OhlcRecord], static_ltvs: list[float],
                     dynamic_config: ControllerConfig,
                     vol_estimator_window: int = 60, fee_rate: float = 0.0,
                     ) -> list[dict[str, object]]:
    """One summary row per policy: defaults, mean supply, mean premium."""
    policies: list[Policy] = [StaticPolicy(ltv) for ltv in static_ltvs]
    policies.append(DynamicPolicy(dynamic_config))
    rows = []
    for policy in policies:
        report = replay(records, policy, vol_estimator_window=vol_estimator_window,
                        fee_rate=fee_rate)
        if isinstance(policy, StaticPolicy):
            defaults = report.default_count_static[policy.ltv]
        else:
            defaults = report.default_count_dynamic
        rows.append({
            "policy": report.policy_label,
            "defaults": defaults,
            "mean_supply": math.fsum(report.supply_series) / report.n_nights,
            "mean_tlp": report.mean_tlp,
        })
    return rows


# -- bundled synthetic dataset -----------------------------------------------

_BUNDLED_MIXTURE = LogMixtureGap((
    MixtureComponent(weight=0.90, mean_log=0.0002, sd_log=0.007),
    MixtureComponent(weight=0.07, mean_log=-0.002, sd_log=0.022),
    MixtureComponent(weight=0.025, mean_log=0.0, sd_log=0.045),
    MixtureComponent(weight=0.005, mean_log=-0.045, sd_log=0.04),
))
_BUNDLED_SIGMA_DAY = 0.011


def generate_synthetic_series(n_nights: int = BUNDLED_SCORED_NIGHTS + _BUNDLED_WARMUP,
                              seed: int = _BUNDLED_SEED,
                              initial_price: float = 100.0) -> list[OhlcRecord]:
    """Regenerate the bundled dataset (or variants of it).

    Overnight gaps come from a four-component mixture (quiet nights,
    routine news, occasional events, rare crashes) and intraday sessions
    from a mean-one lognormal at 1.1% daily volatility. Dates are
    business days from 2018-01-02. ``generate_synthetic_series()`` with
    the defaults reproduces ``data/synthetic_nightly.csv`` exactly.
    """
    gaps = sample_gaps(_BUNDLED_MIXTURE, seed, n_nights)
    intraday_rng = np.random.Generator(np.random.Philox(key=seed).jumped(10 ** 6))
    z = intraday_rng.standard_normal(n_nights)
    intraday = np.exp(_BUNDLED_SIGMA_DAY * z - 0.5 * _BUNDLED_SIGMA_DAY ** 2)

    date = dt.date(2018, 1, 2)
    records = []
    close = initial_price
    for i in range(n_nights):
        next_open = close * float(gaps[i])
        records.append(OhlcRecord(date=date, close=close, next_open=next_open))
        close = next_open * float(intraday[i])
        date += dt.timedelta(days=1)
        while date.weekday() >= 5:
            date += dt.timedelta(days=1)
    return records


def bundled_series_path() -> Path:
    return Path(str(files("tlpsim").joinpath("data/synthetic_nightly.csv")))


def load_bundled_series() -> list[OhlcRecord]:
    """The packaged synthetic series: 60 warm-up nights plus 1,250 scored."""
    return load_series(bundled_series_path())
