"""Tests for the sandboxed expression DSL."""

from __future__ import annotations

import datetime as dt
import json
import math
import random
import time
from pathlib import Path

import pytest

from finorch.analytics import log_return
from finorch.dataops.types import PriceSeries
from finorch.errors import DomainError, EngineError, ParseError, UnboundVariable
from finorch.tools.dsl import MAX_DEPTH, eval_dsl, parse_dsl, run_code
from dslgen import BINDINGS, gen_expr

FIXTURES = Path(__file__).parent / "fixtures"


def test_operator_precedence():
    assert eval_dsl("2 + 3 * 4") == 14.0


def test_log_return_anchor():
    got = eval_dsl("ln(s1 / s0)", {"s0": 100, "s1": 110})
    assert round(got, 7) == 0.0953102
    assert got == pytest.approx(math.log(1.1), abs=1e-15)


def test_division_by_zero():
    with pytest.raises(DomainError) as exc:
        eval_dsl("1 / 0")
    assert exc.value.operation == "division"


def test_matches_analytics_log_return_on_random_pairs():
    rng = random.Random(202)
    for _ in range(1000):
        a = rng.uniform(0.5, 900.0)
        b = rng.uniform(0.5, 900.0)
        series = PriceSeries.from_pairs(
            "X", [(dt.date(2024, 1, 1), str(a)), (dt.date(2024, 1, 2), str(b))]
        )
        (_, want) = log_return(series, 1)[0]
        got = eval_dsl("ln(b / a)", {"a": a, "b": b})
        assert got == pytest.approx(want, abs=1e-12)


def test_comparisons_return_indicator_floats():
    assert eval_dsl("2 < 3") == 1.0
    assert eval_dsl("2 > 3") == 0.0
    assert eval_dsl("2 >= 2") == 1.0
    assert eval_dsl("2 != 2") == 0.0
    assert eval_dsl("(1 < 2) + (3 > 4)") == 1.0


def test_conditional_behaviour():
    assert eval_dsl("if 2 > 1 then 10 else 20") == 10.0
    assert eval_dsl("if 0 then 10 else 20") == 20.0
    # only the taken branch is evaluated
    assert eval_dsl("if 1 then 2 else 1 / 0") == 2.0
    assert eval_dsl("if 0 then 1 / 0 else 2") == 2.0


def test_unbound_variable_checked_before_evaluation():
    # the unbound name sits in the branch that would not be taken
    with pytest.raises(UnboundVariable) as exc:
        eval_dsl("if 1 then 2 else ghost")
    assert exc.value.name == "ghost"


def test_functions():
    assert eval_dsl("abs(-4)") == 4.0
    assert eval_dsl("min(5, 2, 8)") == 2.0
    assert eval_dsl("max(5, 2, 8)") == 8.0
    assert eval_dsl("mean([1, 2, 3])") == 2.0
    assert eval_dsl("std([2, 4, 4, 4, 5, 5, 7, 9])") == 2.0
    assert eval_dsl("std([7])") == 0.0
    assert eval_dsl("exp(ln(5))") == pytest.approx(5.0, abs=1e-12)


def test_ln_domain():
    for src in ("ln(0)", "ln(0 - 3)"):
        with pytest.raises(DomainError) as exc:
            eval_dsl(src)
        assert exc.value.operation == "ln"


def test_overflow_is_domain_error():
    for src in ("exp(1000)", "1e308 * 10", "1e999"):
        with pytest.raises(DomainError):
            eval_dsl(src)


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as exc:
        eval_dsl("2 + $")
    assert exc.value.position == 4
    with pytest.raises(ParseError) as exc:
        eval_dsl("1 < 2 < 3")
    assert exc.value.position == 6


def test_depth_cap_rejects_instead_of_crashing():
    deep = "(" * (MAX_DEPTH + 10) + "1" + ")" * (MAX_DEPTH + 10)
    with pytest.raises(ParseError) as exc:
        eval_dsl(deep)
    assert "deep" in str(exc.value)
    very_deep = "(" * 5000 + "1" + ")" * 5000
    with pytest.raises(ParseError):
        eval_dsl(very_deep)


def test_wide_flat_expression_is_fine():
    n = 5000
    assert eval_dsl(" + ".join(["1"] * n)) == float(n)


def test_free_variables_exposed():
    program = parse_dsl("if x > y then x else z + 1")
    assert program.free_variables == {"x", "y", "z"}


def test_non_finite_binding_rejected():
    with pytest.raises(DomainError):
        eval_dsl("x + 1", {"x": float("inf")})


def test_run_code_captures_result_and_error():
    ok = run_code("2 + 2")
    assert ok.result == 4.0 and ok.error is None
    bad = run_code("1 / 0")
    assert bad.result is None
    assert bad.error is not None and bad.error.startswith("DomainError")
    unparsed = run_code("((")
    assert unparsed.error is not None and unparsed.error.startswith("ParseError")


def test_conformance_fixture():
    rows = json.loads((FIXTURES / "dsl_conformance.json").read_text())
    assert rows, "conformance fixture must not be empty"
    for row in rows:
        got = eval_dsl(row["program"], row["inputs"])
        assert got == pytest.approx(row["expected"], abs=1e-12), row["program"]


def test_adversarial_fixture_never_crashes():
    rows = json.loads((FIXTURES / "dsl_adversarial.json").read_text())
    assert rows, "adversarial fixture must not be empty"
    for row in rows:
        with pytest.raises(EngineError) as exc:
            eval_dsl(row["source"], row.get("inputs") or {})
        assert type(exc.value).__name__ == row["error"], row["source"]


def test_random_programs_terminate_quickly():
    rng = random.Random(303)
    for _ in range(500):
        source = gen_expr(rng, rng.randint(0, 6))
        started = time.perf_counter()
        try:
            value = eval_dsl(source, BINDINGS)
        except DomainError:
            pass
        else:
            assert math.isfinite(value)
        assert time.perf_counter() - started < 0.05, source
