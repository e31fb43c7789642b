"""finorch: multi-agent financial analysis engine.

Layers: gateway (LLM backends), scheduler (agent scoring and routing),
workflow (perceive/reason/act orchestration), tools (typed calls and a
sandboxed expression DSL), dataops (market data, cache, retrieval),
analytics (numeric formulas), and apps (forecaster, report generation).
"""

from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
