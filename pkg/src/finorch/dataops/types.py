"""Domain types for market data.

Prices travel as decimal strings and become floats only at computation
boundaries (see :meth:`PriceSeries.closes`); this keeps fixture round-trips
byte-stable.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Sequence


def parse_date(value: str | dt.date) -> dt.date:
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(value)


def parse_price(value: str) -> float:
    """Decimal string -> float. The single conversion boundary for prices."""
    price = float(value)
    return price


@dataclass(frozen=True)
class PriceObservation:
    date: dt.date
    close: str  # decimal string

    def close_value(self) -> float:
        return parse_price(self.close)


@dataclass(frozen=True)
class PriceSeries:
    """Ordered close prices for one symbol; dates strictly increasing."""

    symbol: str
    observations: tuple[PriceObservation, ...]

    def __post_init__(self) -> None:
        dates = [obs.date for obs in self.observations]
        for earlier, later in zip(dates, dates[1:]):
            if later <= earlier:
                raise ValueError(
                    f"price series {self.symbol!r}: dates must be strictly "
                    f"increasing, got {earlier} then {later}"
                )

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self) -> Iterator[PriceObservation]:
        return iter(self.observations)

    def dates(self) -> list[dt.date]:
        return [obs.date for obs in self.observations]

    def closes(self) -> list[float]:
        return [obs.close_value() for obs in self.observations]

    def window(self, start: dt.date, end: dt.date) -> "PriceSeries":
        """Observations with start <= date <= end."""
        kept = tuple(o for o in self.observations if start <= o.date <= end)
        return PriceSeries(symbol=self.symbol, observations=kept)

    def before(self, cutoff: dt.date) -> "PriceSeries":
        """Observations strictly before ``cutoff``."""
        kept = tuple(o for o in self.observations if o.date < cutoff)
        return PriceSeries(symbol=self.symbol, observations=kept)

    @classmethod
    def from_pairs(
        cls, symbol: str, pairs: Sequence[tuple[str | dt.date, str]]
    ) -> "PriceSeries":
        obs = tuple(
            PriceObservation(date=parse_date(d), close=str(c)) for d, c in pairs
        )
        return cls(symbol=symbol, observations=obs)


@dataclass(frozen=True)
class CompanyProfile:
    name: str
    exchange: str
    industry: str
    market_cap: float
    description: str = ""


@dataclass(frozen=True)
class NewsItem:
    headline: str
    summary: str
    dated: dt.date
    source_id: str


@dataclass(frozen=True)
class FinancialSnapshot:
    """Basic-financials ratios for one statement period."""

    period: str
    metrics: Mapping[str, float] = field(default_factory=dict)

    def items(self) -> list[tuple[str, float]]:
        return sorted(self.metrics.items())


@dataclass(frozen=True)
class CompanyBundle:
    """Everything the perception stage knows about one company.

    Invariant: every dated item is at or before ``cutoff``.
    """

    symbol: str
    cutoff: dt.date
    profile: CompanyProfile
    prices: PriceSeries
    news: tuple[NewsItem, ...]
    financials: FinancialSnapshot

    def __post_init__(self) -> None:
        for item in self.news:
            if item.dated > self.cutoff:
                raise ValueError(
                    f"bundle {self.symbol!r}: news item dated {item.dated} is "
                    f"after cutoff {self.cutoff}"
                )
        for obs in self.prices.observations:
            if obs.date > self.cutoff:
                raise ValueError(
                    f"bundle {self.symbol!r}: price dated {obs.date} is after "
                    f"cutoff {self.cutoff}"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "symbol": self.symbol,
            "cutoff": self.cutoff.isoformat(),
            "profile": {
                "name": self.profile.name,
                "exchange": self.profile.exchange,
                "industry": self.profile.industry,
                "market_cap": self.profile.market_cap,
                "description": self.profile.description,
            },
            "prices": [
                {"date": o.date.isoformat(), "close": o.close}
                for o in self.prices.observations
            ],
            "news": [
                {
                    "headline": n.headline,
                    "summary": n.summary,
                    "dated": n.dated.isoformat(),
                    "source_id": n.source_id,
                }
                for n in self.news
            ],
            "financials": {
                "period": self.financials.period,
                "metrics": dict(self.financials.metrics),
            },
        }
