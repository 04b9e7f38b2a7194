"""Empirical premium proxies from cross-listed and off-hours markets.

Where no stablecoin market exists, the price of off-hours immediacy
shows up in adjacent instruments: a depositary receipt trading away from
the stale home close, index futures drifting from the prior cash close,
and large overnight moves that partially reverse once full liquidity
returns. These helpers compute the proxy values and aggregate them into
buckets (by closure length or volatility regime, or by event/non-event
after tagging).
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, replace
from enum import Enum

from .errors import ParameterError


class ProxyKind(Enum):
    ADR_PREMIUM = "adr_premium"
    FUTURES_BASIS = "futures_basis"
    PREMARKET_GAP = "premarket_gap"
    OVERNIGHT_REVERSAL = "overnight_reversal"


@dataclass(frozen=True)
class ProxyObservation:
    """One measured proxy value, tagged for bucketing."""

    instrument: str
    timestamp: str
    proxy_kind: ProxyKind
    value: float
    closure_hours: float
    vol_bucket: str = ""

    def __post_init__(self) -> None:
        if self.closure_hours < 0.0:
            raise ParameterError(f"closure_hours must be >= 0, got {self.closure_hours}")
        if not math.isfinite(self.value):
            raise ParameterError(f"proxy value must be finite, got {self.value}")


def adr_premium(adr_price_usd: float, fx_rate_usd_per_local: float,
                local_close_local_ccy: float) -> float:
    """Depositary-receipt premium over the stale home-market close.

    ``adr_price_usd * fx_rate / local_close - 1``; positive means the
    receipt is rich versus the last local close. Homogeneous of degree
    zero in the price pair. Evaluated in the subtractive form
    ``(adr * fx - local) / local``, which rounds once near parity.
    """
    if adr_price_usd <= 0.0 or fx_rate_usd_per_local <= 0.0 or local_close_local_ccy <= 0.0:
        raise ParameterError("adr_premium inputs must all be > 0")
    return ((adr_price_usd * fx_rate_usd_per_local - local_close_local_ccy)
            / local_close_local_ccy)


def futures_basis(futures_price: float, carry_adjustment: float,
                  prior_cash_close: float) -> float:
    """Carry-adjusted futures deviation from the prior cash close."""
    if futures_price <= 0.0 or carry_adjustment <= 0.0 or prior_cash_close <= 0.0:
        raise ParameterError("futures_basis inputs must all be > 0")
    return ((futures_price * carry_adjustment - prior_cash_close)
            / prior_cash_close)


def carry_factor(rate_annual: float, dividend_yield_annual: float,
                 tau_years: float) -> float:
    """Multiplicative cost-of-carry adjustment ``exp((r - q) * tau)``."""
    if not tau_years >= 0.0:
        raise ParameterError(f"tau_years must be >= 0, got {tau_years}")
    return math.exp((rate_annual - dividend_yield_annual) * tau_years)


def overnight_reversal(prev_close: float, open_price: float,
                       intraday_reference_close: float,
                       reversal_threshold: float = 0.02,
                       ) -> tuple[float, float, bool]:
    """Overnight and intraday returns, plus a reversal flag.

    ``overnight = open / prev_close - 1`` and
    ``intraday = reference_close / open - 1`` compose exactly to the
    full-period return. The flag marks a large overnight move (beyond
    the threshold) that the session partially gave back (opposite
    signs): the give-back is the implied cost paid for off-hours
    immediacy.
    """
    if prev_close <= 0.0 or open_price <= 0.0 or intraday_reference_close <= 0.0:
        raise ParameterError("overnight_reversal prices must all be > 0")
    if reversal_threshold < 0.0:
        raise ParameterError("reversal_threshold must be >= 0")
    overnight_ret = open_price / prev_close - 1.0
    intraday_ret = intraday_reference_close / open_price - 1.0
    flag = (overnight_ret * intraday_ret < 0.0
            and abs(overnight_ret) > reversal_threshold)
    return overnight_ret, intraday_ret, flag


def label_events(observations: list[ProxyObservation],
                 event_dates: set[str]) -> list[ProxyObservation]:
    """Tag each observation's ``vol_bucket`` as event or non_event.

    An observation is an event when the date portion of its timestamp
    (first 10 characters, ISO) is in ``event_dates``. Use with
    ``aggregate_proxies(..., bucket_by="vol_bucket")`` for event
    studies.
    """
    return [replace(o, vol_bucket="event" if o.timestamp[:10] in event_dates
                    else "non_event")
            for o in observations]


def aggregate_proxies(observations: list[ProxyObservation],
                      bucket_by: str = "closure_hours") -> list[dict[str, object]]:
    """Per-bucket mean/median/count, in deterministic bucket order.

    ``bucket_by`` is ``"closure_hours"`` or ``"vol_bucket"``. The result
    is independent of the observation order.
    """
    if not observations:
        raise ParameterError("aggregate_proxies needs at least one observation")
    if bucket_by not in ("closure_hours", "vol_bucket"):
        raise ParameterError(f"bucket_by must be closure_hours or vol_bucket, "
                             f"got {bucket_by!r}")
    buckets: dict[object, list[float]] = {}
    for obs in observations:
        buckets.setdefault(getattr(obs, bucket_by), []).append(obs.value)
    rows = []
    for key in sorted(buckets, key=lambda k: (str(type(k)), k)):
        values = sorted(buckets[key])
        rows.append({
            "bucket": key,
            "mean": math.fsum(values) / len(values),
            "median": statistics.median(values),
            "count": len(values),
        })
    return rows
