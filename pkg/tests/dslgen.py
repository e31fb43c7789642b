"""Grammar-directed random program generator for the expression DSL.

Used by both the unit tests and the acceptance battery: every generated
program is syntactically valid, so evaluation must either return a float or
raise a DomainError — anything else is a sandbox bug.
"""

from __future__ import annotations

import random

VARIABLES = ("x", "y", "z")

#: Bindings paired with the generator's variable pool.
BINDINGS = {"x": 2.5, "y": -1.25, "z": 7.0}

_COMPARATORS = ("<", "<=", ">", ">=", "==", "!=")


def gen_expr(rng: random.Random, depth: int) -> str:
    """One random expression of nesting depth at most ``depth``."""
    if depth <= 0:
        if rng.random() < 0.5:
            return format(rng.uniform(-20.0, 20.0), ".4g")
        return rng.choice(VARIABLES)
    inner = depth - 1
    roll = rng.random()
    if roll < 0.30:
        op = rng.choice("+-*/")
        return f"({gen_expr(rng, inner)} {op} {gen_expr(rng, inner)})"
    if roll < 0.40:
        cmp_op = rng.choice(_COMPARATORS)
        return f"({gen_expr(rng, inner)} {cmp_op} {gen_expr(rng, inner)})"
    if roll < 0.50:
        return (
            f"(if {gen_expr(rng, inner)} then {gen_expr(rng, inner)} "
            f"else {gen_expr(rng, inner)})"
        )
    if roll < 0.60:
        return f"-{gen_expr(rng, inner)}"
    if roll < 0.70:
        fn = rng.choice(("abs", "ln", "exp"))
        return f"{fn}({gen_expr(rng, inner)})"
    if roll < 0.80:
        fn = rng.choice(("min", "max"))
        args = ", ".join(
            gen_expr(rng, inner) for _ in range(rng.randint(1, 3))
        )
        return f"{fn}({args})"
    if roll < 0.90:
        fn = rng.choice(("mean", "std"))
        items = ", ".join(
            gen_expr(rng, inner) for _ in range(rng.randint(1, 4))
        )
        return f"{fn}([{items}])"
    return f"({gen_expr(rng, inner)})"
