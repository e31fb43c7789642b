"""Market Forecaster app.

Builds the four-block forecasting prompt from a strictly pre-cutoff company
bundle, sends it through the routed backend, and parses the structured answer
(positive developments, potential concerns, tagged evidence, and a banded
prediction) back into data. Rendering and parsing are inverses, so stored
forecasts round-trip losslessly.
"""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any

from finorch.clock import Clock, SystemClock, isoformat
from finorch.dataops.providers import MarketData
from finorch.dataops.types import CompanyBundle
from finorch.errors import (
    ConfigError,
    EngineError,
    IncompleteBundle,
    MissingSection,
    UnparseablePrediction,
)
from finorch.gateway import ChatExchange, ChatMessage, Gateway
from finorch.prompts import PromptStore
from finorch.scheduler import Scheduler, WorkflowEvaluation
from finorch.workflow import (
    ROLE_ASSISTANT,
    ROLE_DIRECTOR,
    ROLE_FINANCIAL_ANALYST,
    Task,
    _TraceWriter,
    basic_financials_text,
    company_introduction_text,
    perceive,
    recent_news_text,
    stock_price_changes_text,
)

EVIDENCE_TAGS = ("News", "Stock Price", "Basic Financials")

_SECTION_KEYS = ("positive", "concerns", "prediction")


@lru_cache(maxsize=1)
def _headers() -> dict[str, Any]:
    path = Path(__file__).parent.parent / "resources" / "forecast_headers.json"
    return json.loads(path.read_text(encoding="utf-8"))


# ── result dataclasses ───────────────────────────────────────────────────


@dataclass(frozen=True)
class FactorItem:
    """One numbered development or concern, with its evidence tag."""

    text: str
    evidence_tag: str | None = None
    other_tag: str = ""

    def __post_init__(self) -> None:
        if self.evidence_tag is not None:
            if self.evidence_tag not in EVIDENCE_TAGS:
                raise ValueError(f"unknown evidence tag {self.evidence_tag!r}")
            if self.other_tag:
                raise ValueError("a tagged item cannot also carry other_tag")
        if not self.text:
            raise ValueError("item text must be non-empty")


@dataclass(frozen=True)
class ForecastResult:
    """Parsed model forecast: factors, banded prediction, and analysis."""

    positives: tuple[FactorItem, ...]
    concerns: tuple[FactorItem, ...]
    direction: str
    low: float
    high: float
    analysis: str
    language: str = "en"

    def __post_init__(self) -> None:
        if self.direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")
        if self.low < 0 or self.high < self.low:
            raise ValueError(
                f"prediction band [{self.low}, {self.high}] is not ordered"
            )

    def band_text(self) -> str:
        return f"{self.low:g}-{self.high:g}%"


# ── horizon arithmetic ───────────────────────────────────────────────────


def horizon_window(cutoff: dt.date, horizon_days: int) -> tuple[dt.date, dt.date]:
    """The forecast window: first weekday strictly after the cutoff through
    the cutoff plus the horizon (rolled back off weekends).
    """
    if horizon_days < 1:
        raise ValueError(f"horizon must be at least 1 day, got {horizon_days}")
    start = cutoff + dt.timedelta(days=1)
    while start.weekday() >= 5:
        start += dt.timedelta(days=1)
    end = cutoff + dt.timedelta(days=horizon_days)
    while end.weekday() >= 5:
        end -= dt.timedelta(days=1)
    if end < start:
        raise ValueError(
            f"horizon of {horizon_days} day(s) from {cutoff} spans no weekday"
        )
    return start, end


# ── prompt construction ──────────────────────────────────────────────────


def build_forecast_prompt(
    bundle: CompanyBundle,
    cutoff: dt.date,
    horizon: int,
    language: str,
    store: PromptStore,
) -> list[ChatMessage]:
    """System + user messages for one forecast call.

    Every information block must be non-empty; the first missing one is
    reported by name.
    """
    blocks = {
        "company_introduction": company_introduction_text(bundle, language),
        "stock_price_changes": stock_price_changes_text(bundle, language),
        "recent_news": recent_news_text(bundle, language),
        "basic_financials": basic_financials_text(bundle, language),
    }
    for name in (
        "company_introduction",
        "stock_price_changes",
        "recent_news",
        "basic_financials",
    ):
        if not blocks[name]:
            raise IncompleteBundle(name)
    start, end = horizon_window(cutoff, horizon)
    bindings = {
        **blocks,
        "symbol": bundle.symbol,
        "cutoff": cutoff.isoformat(),
        "horizon_start": start.isoformat(),
        "horizon_end": end.isoformat(),
    }
    return [
        ChatMessage(
            role="system", content=store.render("forecaster_system", bindings, language)
        ),
        ChatMessage(
            role="user", content=store.render("forecaster_user", bindings, language)
        ),
    ]


# ── parsing ──────────────────────────────────────────────────────────────


def _match_header(line: str, language: str) -> str | None:
    s = line.strip()
    if not s:
        return None
    while s and s[-1] in ":：":
        s = s[:-1].rstrip()
    if s.startswith("[") and s.endswith("]"):
        s = s[1:-1].strip()
    folded = s.casefold()
    for key, aliases in _headers()["sections"][language].items():
        if folded in (a.casefold() for a in aliases):
            return key
    return None


def _tag_for(raw: str) -> str | None:
    folded = raw.strip().casefold()
    for canonical, aliases in _headers()["tags"].items():
        if folded in (a.casefold() for a in aliases):
            return canonical
    return None


_ITEM_START = re.compile(r"^\s*\d+\s*[.、)]\s*(.+)$")
_TRAILING_TAG = re.compile(r"[(（]([^()（）]*)[)）]\s*$")


def _parse_items(lines: list[str]) -> tuple[FactorItem, ...]:
    texts: list[str] = []
    for line in lines:
        if not line.strip():
            continue
        started = _ITEM_START.match(line)
        if started:
            texts.append(started.group(1).strip())
        elif texts:
            texts[-1] = f"{texts[-1]} {line.strip()}"
        else:
            texts.append(line.strip())
    items: list[FactorItem] = []
    for text in texts:
        evidence: str | None = None
        other = ""
        tag_match = _TRAILING_TAG.search(text)
        if tag_match:
            evidence = _tag_for(tag_match.group(1))
            if evidence is None:
                other = tag_match.group(1).strip()
            text = text[: tag_match.start()].rstrip()
        if text:
            items.append(
                FactorItem(text=text, evidence_tag=evidence, other_tag=other)
            )
    return tuple(items)


def _prediction_pattern(language: str) -> re.Pattern[str]:
    line = _headers()["prediction_line"][language]
    prefix = re.escape(line["prefix"].rstrip(":："))
    up = re.escape(line["up"])
    down = re.escape(line["down"])
    return re.compile(
        rf"{prefix}\s*[:：]\s*({up}|{down})\s*(?:by\s+)?"
        rf"(\d+(?:\.\d+)?)\s*[-–~]\s*(\d+(?:\.\d+)?)\s*%?",
        re.IGNORECASE,
    )


def parse_forecast(model_text: str, language: str = "en") -> ForecastResult:
    """Parse a forecast reply into structured data.

    Raises MissingSection (by canonical section name) when a required block
    is absent and UnparseablePrediction when the band line cannot be read.
    """
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in model_text.splitlines():
        key = _match_header(line, language)
        if key is not None:
            sections[key] = []
            current = key
        elif current is not None:
            sections[current].append(line)
    names = _headers()["section_names"]
    for key in _SECTION_KEYS:
        if key not in sections:
            raise MissingSection(names[key])

    positives = _parse_items(sections["positive"])
    concerns = _parse_items(sections["concerns"])

    body = "\n".join(sections["prediction"])
    found = _prediction_pattern(language).search(body)
    if not found:
        raise UnparseablePrediction(body.strip())
    line_cfg = _headers()["prediction_line"][language]
    direction = (
        "up" if found.group(1).casefold() == line_cfg["up"].casefold() else "down"
    )
    low, high = float(found.group(2)), float(found.group(3))
    if high < low:
        raise UnparseablePrediction(body.strip())

    after = body[found.end():].strip("\n")
    analysis_lines = [ln for ln in after.splitlines() if ln.strip()]
    analysis = "\n".join(ln.strip() for ln in analysis_lines)
    prefix = _headers()["analysis_prefix"][language]
    if analysis.startswith(prefix):
        analysis = analysis[len(prefix):].strip()
    return ForecastResult(
        positives=positives,
        concerns=concerns,
        direction=direction,
        low=low,
        high=high,
        analysis=analysis,
        language=language,
    )


def render_forecast(result: ForecastResult) -> str:
    """Serialize a result back to the canonical forecast layout.

    parse_forecast(render_forecast(r), r.language) == r.
    """
    cfg = _headers()
    headers = cfg["canonical_headers"][result.language]
    line_cfg = cfg["prediction_line"][result.language]
    out: list[str] = [headers["positive"]]

    def emit(items: tuple[FactorItem, ...]) -> None:
        for i, item in enumerate(items, start=1):
            tag = item.evidence_tag or item.other_tag
            suffix = f" ({tag})" if tag else ""
            out.append(f"{i}. {item.text}{suffix}")

    emit(result.positives)
    out.append("")
    out.append(headers["concerns"])
    emit(result.concerns)
    out.append("")
    out.append(headers["prediction"])
    word = line_cfg["up"] if result.direction == "up" else line_cfg["down"]
    joiner = " by " if result.language == "en" else ""
    out.append(f"{line_cfg['prefix']} {word}{joiner}{result.band_text()}")
    if result.analysis:
        prefix = cfg["analysis_prefix"][result.language]
        sep = "" if prefix.endswith("：") else " "
        out.append(f"{prefix}{sep}{result.analysis}")
    return "\n".join(out) + "\n"


# ── pipeline ─────────────────────────────────────────────────────────────


def forecast_task_id(
    symbol: str, cutoff: dt.date, horizon: int, language: str
) -> str:
    return f"forecast-{symbol}-{cutoff.strftime('%Y%m%d')}-h{horizon}-{language}"


@dataclass(frozen=True)
class ForecastRun:
    """Artifacts of one forecaster invocation."""

    task: Task
    result: ForecastResult
    model_text: str
    exchange: ChatExchange
    evaluation: WorkflowEvaluation | None = None
    run_dir: Path | None = None

    @property
    def forecast_path(self) -> Path | None:
        return self.run_dir / "forecast.json" if self.run_dir else None


def run_forecaster(
    symbol: str,
    cutoff: dt.date,
    horizon: int,
    *,
    scheduler: Scheduler,
    gateway: Gateway,
    prompt_store: PromptStore,
    market_data: MarketData,
    language: str = "en",
    runs_dir: Path | None = None,
    clock: Clock | None = None,
    window_days: int = 30,
) -> ForecastRun:
    """Route, perceive, prompt, parse, reflect, and persist one forecast."""
    clock = clock or SystemClock()
    task = Task(
        task_id=forecast_task_id(symbol, cutoff, horizon, language),
        task_kind="forecast",
        subject=symbol,
        cutoff_date=cutoff,
        horizon=horizon,
        instruction_text=(
            f"Forecast {symbol} for the week after {cutoff.isoformat()}; "
            "give tagged positives, concerns, and a banded prediction."
        ),
        language=language,
    )
    run_dir = (runs_dir / task.task_id) if runs_dir is not None else None
    trace = _TraceWriter(
        run_dir / "trace.jsonl" if run_dir is not None else None, clock
    )

    try:
        chosen = scheduler.route(
            task, recorder=lambda rec: trace.emit(ROLE_DIRECTOR, rec)
        )
    except EngineError as exc:
        trace.emit(ROLE_DIRECTOR, {"event": "error", "error": str(exc)})
        raise exc.with_role(ROLE_DIRECTOR)
    backend_id = scheduler.get_agent(chosen).backend_id

    try:
        perception = perceive(
            task, market_data=market_data, clock=clock, window_days=window_days
        )
        bundle = perception.company
        assert bundle is not None
        messages = build_forecast_prompt(
            bundle, task.cutoff_date, horizon, language, prompt_store
        )
    except EngineError as exc:
        trace.emit(ROLE_ASSISTANT, {"event": "error", "error": str(exc)})
        raise exc.with_role(ROLE_ASSISTANT)
    trace.emit(
        ROLE_ASSISTANT,
        {
            "event": "perception",
            "prices": len(bundle.prices),
            "news": len(bundle.news),
        },
    )

    try:
        exchange = gateway.chat(backend_id, messages)
        result = parse_forecast(exchange.response_text, language)
    except EngineError as exc:
        trace.emit(ROLE_FINANCIAL_ANALYST, {"event": "error", "error": str(exc)})
        raise exc.with_role(ROLE_FINANCIAL_ANALYST)
    trace.emit(
        ROLE_FINANCIAL_ANALYST,
        {
            "event": "forecast",
            "direction": result.direction,
            "band": result.band_text(),
            "positives": len(result.positives),
            "concerns": len(result.concerns),
        },
    )

    assessment_prompt = prompt_store.render(
        "self_assessment",
        {"task_id": task.task_id, "output": exchange.response_text},
        language,
    )
    assessment = gateway.chat(
        backend_id, [ChatMessage(role="user", content=assessment_prompt)]
    )
    reflection = scheduler.record_reflection(
        chosen, task.task_id, assessment.response_text
    )
    trace.emit(
        ROLE_FINANCIAL_ANALYST,
        {"event": "self_assessment", "self_score": reflection.self_score},
    )

    scheduler.mark_workflow_complete(
        task.task_id,
        final_output=exchange.response_text,
        acceptance_text=task.instruction_text,
    )
    evaluation: WorkflowEvaluation | None = None
    try:
        evaluation = scheduler.finalize_workflow(task.task_id)
        trace.emit(ROLE_DIRECTOR, {"event": "finalized", "grade": evaluation.grade})
    except ConfigError as exc:
        trace.emit(ROLE_DIRECTOR, {"event": "finalize_skipped", "reason": str(exc)})

    if run_dir is not None:
        start, end = horizon_window(task.cutoff_date, horizon)
        artifact = {
            "task_id": task.task_id,
            "symbol": symbol,
            "cutoff": task.cutoff_date.isoformat(),
            "horizon_days": horizon,
            "language": language,
            "window": {"start": start.isoformat(), "end": end.isoformat()},
            "agent": chosen,
            "prediction": {
                "direction": result.direction,
                "low": result.low,
                "high": result.high,
            },
            "positives": [
                {
                    "text": p.text,
                    "evidence_tag": p.evidence_tag,
                    "other_tag": p.other_tag,
                }
                for p in result.positives
            ],
            "concerns": [
                {
                    "text": c.text,
                    "evidence_tag": c.evidence_tag,
                    "other_tag": c.other_tag,
                }
                for c in result.concerns
            ],
            "analysis": result.analysis,
            "model_text": exchange.response_text,
            "grade": evaluation.grade if evaluation else None,
            "self_score": reflection.self_score,
            "generated_at": isoformat(clock.now()),
        }
        (run_dir / "forecast.json").write_text(
            json.dumps(artifact, ensure_ascii=False, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )

    return ForecastRun(
        task=task,
        result=result,
        model_text=exchange.response_text,
        exchange=exchange,
        evaluation=evaluation,
        run_dir=run_dir,
    )
