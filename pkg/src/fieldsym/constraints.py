"""Named symbolic constraints with zero/nonzero verdicts."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from . import expr as E
from .expr import Expr

IDENTICALLY_ZERO = "identically-zero"
ON_SHELL = "on-shell"
VIOLATED = "violated"


@dataclass(frozen=True)
class Constraint:
    label: str
    expr: Expr
    verdict: str
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.verdict != VIOLATED

    def text(self) -> str:
        return E.to_text(self.expr)


@dataclass(frozen=True)
class ConstraintSet:
    items: tuple

    def __getitem__(self, label: str) -> Constraint:
        for c in self.items:
            if c.label == label:
                return c
        raise KeyError(label)

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.items)

    def labels(self) -> list:
        return [c.label for c in self.items]


def zero_constraint(label: str, e: Expr, note: str = "") -> Constraint:
    e = E.canonicalize(e)
    return Constraint(label, e, IDENTICALLY_ZERO if E.is_zero(e) else VIOLATED, note)


def positive_ratio(a: Expr, b: Expr) -> Fraction | None:
    """r > 0 with a == r*b, or None.  Both zero gives 1."""
    a, b = E.canonicalize(a), E.canonicalize(b)
    if a == E.ZERO and b == E.ZERO:
        return Fraction(1)
    if a == E.ZERO or b == E.ZERO:
        return None
    ta, tb = E.terms_of(a), E.terms_of(b)
    r = ta[0][0] / tb[0][0]
    if r > 0 and E.is_zero(a - E.Num(r) * b):
        return r
    return None
