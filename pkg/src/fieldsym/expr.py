"""Index-aware symbolic expressions for classical field Lagrangians.

Expressions are immutable trees.  Operator overloads build raw trees; the
:func:`canonicalize` pass turns any tree into a unique sum-of-monomials
normal form with exact rational coefficients and canonically named dummy
indices, so structural equality of canonical forms is expression equality.

Repeated indices are summed plainly over their range.  Raising and lowering
is always explicit through :class:`Metric`, which is constant and diagonal.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Union

SPACETIME = "spacetime"
INTERNAL = "internal"
SIGNATURES = ("mostly-minus", "mostly-plus")

MAX_TERMS = 200_000


class ExprError(Exception):
    """Base class for expression-level failures."""


class IndexViolation(ExprError):
    """An index occurs three or more times in one product term."""


class IndexMismatch(ExprError):
    """Terms of a sum, or a substitution, disagree on free indices."""


class ExpressionTooLarge(ExprError):
    pass


class MissingAtom(ExprError):
    def __init__(self, atoms: Iterable[str]):
        self.atoms = sorted(set(atoms))
        super().__init__("unassigned atoms: " + ", ".join(self.atoms))


@dataclass(frozen=True)
class Index:
    """A named abstract index.  ``range`` is the dimension or multiplet size."""

    kind: str
    name: str
    range: int

    def __post_init__(self) -> None:
        if self.kind not in (SPACETIME, INTERNAL):
            raise ValueError(f"unknown index kind {self.kind!r}")
        if self.range < 1:
            raise ValueError("index range must be at least 1")

    def __repr__(self) -> str:
        return self.name

    def values(self) -> range:
        # spacetime components are 0-based, internal components 1-based
        if self.kind == SPACETIME:
            return range(self.range)
        return range(1, self.range + 1)


Slot = Union[Index, int]


def spacetime(name: str, dim: int = 4) -> Index:
    return Index(SPACETIME, name, dim)


def internal(name: str, size: int = 2) -> Index:
    return Index(INTERNAL, name, size)


def _slot_key(s: Slot) -> tuple:
    if isinstance(s, Index):
        return (1, 0, s.kind, s.name)
    return (0, int(s), "", "")


def _sorted_slots(slots: Iterable[Slot]) -> tuple:
    return tuple(sorted(slots, key=_slot_key))


# ---------------------------------------------------------------------------
# nodes


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ()

    def __add__(self, other: object) -> Expr:
        return Sum((self, as_expr(other)))

    def __radd__(self, other: object) -> Expr:
        return Sum((as_expr(other), self))

    def __sub__(self, other: object) -> Expr:
        return Sum((self, Prod((Num(-1), as_expr(other)))))

    def __rsub__(self, other: object) -> Expr:
        return Sum((as_expr(other), Prod((Num(-1), self))))

    def __neg__(self) -> Expr:
        return Prod((Num(-1), self))

    def __mul__(self, other: object) -> Expr:
        return Prod((self, as_expr(other)))

    def __rmul__(self, other: object) -> Expr:
        return Prod((as_expr(other), self))

    def __truediv__(self, other: object) -> Expr:
        o = as_expr(other)
        if isinstance(o, Num):
            if o.value == 0:
                raise ZeroDivisionError("division by zero")
            return Prod((self, Num(1 / o.value)))
        return Prod((self, Pow(o, -1)))

    def __rtruediv__(self, other: object) -> Expr:
        return as_expr(other) / self

    def __pow__(self, n: int) -> Expr:
        if not isinstance(n, int):
            raise TypeError("only integer exponents are supported")
        return Pow(self, n)

    def __str__(self) -> str:
        return to_text(self)


def as_expr(x: object) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Num(Fraction(x))
    raise TypeError(f"cannot convert {type(x).__name__} to an expression")


@dataclass(frozen=True, repr=False)
class Num(Expr):
    value: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", Fraction(self.value))

    def __repr__(self) -> str:
        return f"Num({self.value})"


@dataclass(frozen=True, repr=False)
class Param(Expr):
    name: str

    def __repr__(self) -> str:
        return f"Param({self.name!r})"


@dataclass(frozen=True, repr=False)
class Coord(Expr):
    index: Slot

    def __repr__(self) -> str:
        return f"Coord({self.index!r})"


@dataclass(frozen=True, repr=False)
class Field(Expr):
    name: str
    idx: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "idx", tuple(self.idx))

    def __repr__(self) -> str:
        return f"Field({self.name!r}, {self.idx!r})"


@dataclass(frozen=True, repr=False)
class FieldDeriv(Expr):
    name: str
    idx: tuple
    derivs: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "idx", tuple(self.idx))
        object.__setattr__(self, "derivs", _sorted_slots(self.derivs))
        if not self.derivs:
            raise ValueError("FieldDeriv needs at least one derivative index")

    def __repr__(self) -> str:
        return f"FieldDeriv({self.name!r}, {self.idx!r}, {self.derivs!r})"


@dataclass(frozen=True, repr=False)
class ArbFn(Expr):
    """An arbitrary function of position, such as a gauge parameter."""

    name: str
    derivs: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "derivs", _sorted_slots(self.derivs))

    def __repr__(self) -> str:
        return f"ArbFn({self.name!r}, {self.derivs!r})"


@dataclass(frozen=True, repr=False)
class Metric(Expr):
    a: Slot
    b: Slot
    signature: str = "mostly-minus"

    def __post_init__(self) -> None:
        if self.signature not in SIGNATURES:
            raise ValueError(f"unknown signature {self.signature!r}")
        a, b = _sorted_slots((self.a, self.b))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __repr__(self) -> str:
        return f"Metric({self.a!r}, {self.b!r})"


@dataclass(frozen=True, repr=False)
class Delta(Expr):
    a: Slot
    b: Slot

    def __post_init__(self) -> None:
        a, b = _sorted_slots((self.a, self.b))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __repr__(self) -> str:
        return f"Delta({self.a!r}, {self.b!r})"


@dataclass(frozen=True, repr=False)
class Epsilon(Expr):
    """Two-index Levi-Civita symbol on an internal doublet, eps(1,2) = 1."""

    a: Slot
    b: Slot

    def __post_init__(self) -> None:
        for s in (self.a, self.b):
            if isinstance(s, Index) and s.range != 2:
                raise ValueError("eps needs indices of range 2")

    def __repr__(self) -> str:
        return f"Epsilon({self.a!r}, {self.b!r})"


@dataclass(frozen=True, repr=False)
class Sum(Expr):
    terms: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(as_expr(t) for t in self.terms))

    def __repr__(self) -> str:
        return f"Sum({self.terms!r})"


@dataclass(frozen=True, repr=False)
class Prod(Expr):
    factors: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "factors", tuple(as_expr(f) for f in self.factors))

    def __repr__(self) -> str:
        return f"Prod({self.factors!r})"


@dataclass(frozen=True, repr=False)
class Pow(Expr):
    base: Expr
    exp: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "base", as_expr(self.base))
        if not isinstance(self.exp, int):
            raise TypeError("Pow exponent must be an integer")

    def __repr__(self) -> str:
        return f"Pow({self.base!r}, {self.exp})"


@dataclass(frozen=True, repr=False)
class UnaryFn(Expr):
    """A scalar function of one scalar argument.

    Subclasses set ``fname`` and implement :meth:`derivative` (the outer
    derivative, as an expression in the same argument) and :meth:`evaluate`.
    """

    arg: Expr
    fname = "?"

    def __post_init__(self) -> None:
        object.__setattr__(self, "arg", as_expr(self.arg))

    def derivative(self) -> Expr:
        raise NotImplementedError

    def evaluate(self, x: float) -> float:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.arg!r})"


@dataclass(frozen=True, repr=False)
class ExpFn(UnaryFn):
    fname = "exp"

    def derivative(self) -> Expr:
        return self

    def evaluate(self, x: float) -> float:
        return math.exp(x)


ZERO = Num(0)
ONE = Num(1)

_ATOMS = (Param, Coord, Field, FieldDeriv, ArbFn, Metric, Delta, Epsilon)


# ---------------------------------------------------------------------------
# structural keys and slot plumbing


def _skey(e: Expr) -> tuple:
    """A total-order key over expression trees."""
    if isinstance(e, Num):
        return (0, (e.value.numerator, e.value.denominator))
    if isinstance(e, Param):
        return (1, (e.name,))
    if isinstance(e, Coord):
        return (2, (_slot_key(e.index),))
    if isinstance(e, Field):
        return (3, (e.name, tuple(_slot_key(s) for s in e.idx)))
    if isinstance(e, FieldDeriv):
        return (4, (e.name, tuple(_slot_key(s) for s in e.idx),
                    tuple(_slot_key(s) for s in e.derivs)))
    if isinstance(e, ArbFn):
        return (5, (e.name, tuple(_slot_key(s) for s in e.derivs)))
    if isinstance(e, Metric):
        return (6, (e.signature, _slot_key(e.a), _slot_key(e.b)))
    if isinstance(e, Delta):
        return (7, (_slot_key(e.a), _slot_key(e.b)))
    if isinstance(e, Epsilon):
        return (8, (_slot_key(e.a), _slot_key(e.b)))
    if isinstance(e, UnaryFn):
        return (9, (e.fname, _skey(e.arg)))
    if isinstance(e, Pow):
        return (10, (_skey(e.base), e.exp))
    if isinstance(e, Prod):
        return (11, tuple(_skey(f) for f in e.factors))
    if isinstance(e, Sum):
        return (12, tuple(_skey(t) for t in e.terms))
    raise TypeError(f"not an expression: {e!r}")


def _slots(a: Expr) -> tuple:
    if isinstance(a, Coord):
        return (a.index,)
    if isinstance(a, Field):
        return a.idx
    if isinstance(a, FieldDeriv):
        return a.idx + a.derivs
    if isinstance(a, ArbFn):
        return a.derivs
    if isinstance(a, (Metric, Delta, Epsilon)):
        return (a.a, a.b)
    return ()


def _rebuild(a: Expr, slots: tuple) -> Expr:
    if isinstance(a, Coord):
        return Coord(slots[0])
    if isinstance(a, Field):
        return Field(a.name, slots)
    if isinstance(a, FieldDeriv):
        n = len(a.idx)
        return FieldDeriv(a.name, slots[:n], slots[n:])
    if isinstance(a, ArbFn):
        return ArbFn(a.name, slots)
    if isinstance(a, Metric):
        return Metric(slots[0], slots[1], a.signature)
    if isinstance(a, Delta):
        return Delta(slots[0], slots[1])
    if isinstance(a, Epsilon):
        return Epsilon(slots[0], slots[1])
    return a


def _relabel(a: Expr, mapping: Mapping[Index, Slot]) -> Expr:
    sl = _slots(a)
    if not any(isinstance(s, Index) and s in mapping for s in sl):
        return a
    return _rebuild(a, tuple(mapping.get(s, s) if isinstance(s, Index) else s for s in sl))


def _indexed(a: Expr) -> bool:
    return any(isinstance(s, Index) for s in _slots(a))


def _index_counts(atoms: Iterable[Expr]) -> Counter:
    c: Counter = Counter()
    for a in atoms:
        for s in _slots(a):
            if isinstance(s, Index):
                c[s] += 1
    return c


def _fresh(kind: str, rng: int, used: set, stem: str = "_r") -> Index:
    k = 1
    while f"{stem}{k}" in used:
        k += 1
    name = f"{stem}{k}"
    used.add(name)
    return Index(kind, name, rng)


# ---------------------------------------------------------------------------
# expansion into monomials


class _Term:
    __slots__ = ("coef", "idx", "pw")

    def __init__(self, coef: Fraction, idx: list, pw: dict):
        self.coef = coef
        self.idx = idx
        self.pw = pw

    def dummies(self) -> set:
        return {s for s, n in _index_counts(self.idx).items() if n == 2}

    def free(self) -> frozenset:
        return frozenset(s for s, n in _index_counts(self.idx).items() if n == 1)

    def relabel(self, mapping: Mapping[Index, Slot]) -> _Term:
        return _Term(self.coef, [_relabel(a, mapping) for a in self.idx], self.pw)


def _mul(t1: _Term, t2: _Term) -> _Term:
    if t1.idx and t2.idx:
        c1, c2 = _index_counts(t1.idx), _index_counts(t2.idx)
        d1 = {s for s, n in c1.items() if n >= 2}
        d2 = {s for s, n in c2.items() if n >= 2}
        clash1 = {s for s in d1 if s in c2}
        clash2 = {s for s in d2 if s in c1}
        if clash1 or clash2:
            used = {s.name for s in c1} | {s.name for s in c2}
            if clash1:
                t1 = t1.relabel({s: _fresh(s.kind, s.range, used) for s in clash1})
            if clash2:
                t2 = t2.relabel({s: _fresh(s.kind, s.range, used) for s in clash2})
    pw = dict(t1.pw)
    for a, n in t2.pw.items():
        pw[a] = pw.get(a, 0) + n
        if pw[a] == 0:
            del pw[a]
    return _Term(t1.coef * t2.coef, t1.idx + t2.idx, pw)


def _mul_lists(xs: list, ys: list, plain: bool = False) -> list:
    if len(xs) * len(ys) > MAX_TERMS:
        raise ExpressionTooLarge("expansion exceeds the term limit")
    if plain:
        return [_concat(x, y) for x in xs for y in ys]
    return [_mul(x, y) for x in xs for y in ys]


def _concat(t1: _Term, t2: _Term) -> _Term:
    pw = dict(t1.pw)
    for a, n in t2.pw.items():
        pw[a] = pw.get(a, 0) + n
        if pw[a] == 0:
            del pw[a]
    return _Term(t1.coef * t2.coef, t1.idx + t2.idx, pw)


def _apart(parts: list) -> list:
    """Rename each factor's internal dummies away from names used by the other factors.

    Free indices are left alone, so an index written three times across the
    factors of one product still trips the occurrence check.
    """
    names = [{s.name for t in p for a in t.idx for s in _slots(a) if isinstance(s, Index)}
             for p in parts]
    used = set().union(*names) if names else set()
    out = []
    for k, p in enumerate(parts):
        others = set().union(*(n for m, n in enumerate(names) if m != k))
        fixed = []
        for t in p:
            clash = {d for d in t.dummies() if d.name in others}
            if clash:
                t = t.relabel({d: _fresh(d.kind, d.range, used) for d in clash})
            fixed.append(t)
        out.append(fixed)
    return out


def _merge(terms: list) -> list:
    """Collect index-free terms with equal powers so repeated products stay small."""
    merged: dict = {}
    out = []
    for t in terms:
        if t.idx:
            out.append(t)
            continue
        key = frozenset(t.pw.items())
        if key in merged:
            merged[key].coef += t.coef
        else:
            merged[key] = _Term(t.coef, [], t.pw)
    out.extend(t for t in merged.values() if t.coef != 0)
    return out


def _atom_term(a: Expr) -> _Term:
    if isinstance(a, (Metric, Delta, Epsilon)) and not _indexed(a):
        res = _contract(Fraction(1), [a])
        return _Term(res[1] if res else Fraction(0), [], {})
    if _indexed(a):
        return _Term(Fraction(1), [a], {})
    return _Term(Fraction(1), [], {a: 1})


def _expand(e: Expr) -> list:
    if isinstance(e, Num):
        return [_Term(e.value, [], {})] if e.value != 0 else []
    if isinstance(e, _ATOMS):
        t = _atom_term(e)
        return [t] if t.coef != 0 else []
    if isinstance(e, UnaryFn):
        arg = canonicalize(e.arg)
        if free_indices(arg):
            raise IndexMismatch(f"argument of {e.fname} must be a scalar")
        if isinstance(e, ExpFn) and arg == ZERO:
            return [_Term(Fraction(1), [], {})]
        return [_Term(Fraction(1), [], {type(e)(arg): 1})]
    if isinstance(e, Sum):
        out: list = []
        free = None
        for t in e.terms:
            for term in _expand(t):
                f = term.free()
                if free is None:
                    free = f
                elif f != free:
                    raise IndexMismatch(
                        f"sum mixes free indices {sorted(s.name for s in free)}"
                        f" and {sorted(s.name for s in f)}")
                out.append(term)
            if len(out) > MAX_TERMS:
                raise ExpressionTooLarge("expansion exceeds the term limit")
        return _merge(out)
    if isinstance(e, Prod):
        parts = []
        for f in e.factors:
            p = _expand(f)
            if not p:
                return []
            parts.append(p)
        acc = [_Term(Fraction(1), [], {})]
        for p in _apart(parts):
            acc = _merge(_mul_lists(acc, p, plain=True))
        return acc
    if isinstance(e, Pow):
        return _expand_pow(e)
    raise TypeError(f"not an expression: {e!r}")


def _expand_pow(e: Pow) -> list:
    n = e.exp
    if n == 0:
        return [_Term(Fraction(1), [], {})]
    base = _expand(e.base)
    if n > 2 and any(t.free() for t in base):
        raise IndexViolation("power above 2 of an expression with free indices")
    if n > 0:
        acc = base
        for _ in range(n - 1):
            acc = _merge(_mul_lists(acc, base))
        return acc
    canon = _canon_terms_from(base)
    if not canon:
        raise ZeroDivisionError("zero raised to a negative power")
    if any(t[1] for t in canon):
        if free_indices(e.base):
            raise IndexViolation("negative power of an expression with free indices")
        return [_Term(Fraction(1), [], {_build(canon): n})]
    if len(canon) == 1:
        c, _, pw = canon[0]
        return [_Term(c ** n, [], {a: k * n for a, k in pw})]
    return [_Term(Fraction(1), [], {_build(canon): n})]


# ---------------------------------------------------------------------------
# per-term normal form


def _metric_value(sig: str, i: int, j: int) -> int:
    if i != j:
        return 0
    time = 1 if sig == "mostly-minus" else -1
    return time if i == 0 else -time


def _metric_trace(sig: str, dim: int) -> int:
    return (2 - dim) if sig == "mostly-minus" else (dim - 2)


def _eps_value(i: int, j: int) -> int:
    return {(1, 2): 1, (2, 1): -1}.get((i, j), 0)


def _contract(coef: Fraction, idx: list):
    """Eliminate deltas, metric pairs and traces, concrete symbols, eps pairs.

    Returns ``None`` for a vanishing term, ``("split", [(coef, idx), ...])``
    when an eps pair was expanded, or ``("done", coef, idx)``.
    """
    idx = list(idx)
    while True:
        counts = _index_counts(idx)
        for s, n in counts.items():
            if n > 2:
                raise IndexViolation(f"index {s.name} occurs {n} times in one term")
        changed = False
        for k, a in enumerate(idx):
            if isinstance(a, (Delta, Metric, Epsilon)):
                x, y = a.a, a.b
                rest = idx[:k] + idx[k + 1:]
                if isinstance(a, Epsilon):
                    if x == y:
                        return None
                    if not isinstance(x, Index) and not isinstance(y, Index):
                        v = _eps_value(x, y)
                        if v == 0:
                            return None
                        coef *= v
                        idx = rest
                        changed = True
                        break
                    for j, b in enumerate(rest):
                        if isinstance(b, Epsilon):
                            others = rest[:j] + rest[j + 1:]
                            u, w = b.a, b.b
                            return ("split", [
                                (coef, others + [Delta(x, u), Delta(y, w)]),
                                (-coef, others + [Delta(x, w), Delta(y, u)]),
                            ])
                    continue
                if x == y and isinstance(x, Index):
                    if isinstance(a, Delta):
                        coef *= x.range
                    else:
                        tr = _metric_trace(a.signature, x.range)
                        if tr == 0:
                            return None
                        coef *= tr
                    idx = rest
                    changed = True
                    break
                if not isinstance(x, Index) and not isinstance(y, Index):
                    v = (1 if x == y else 0) if isinstance(a, Delta) else _metric_value(a.signature, x, y)
                    if v == 0:
                        return None
                    coef *= v
                    idx = rest
                    changed = True
                    break
                if isinstance(a, Delta):
                    for s, t in ((x, y), (y, x)):
                        if isinstance(s, Index) and counts[s] == 2:
                            idx = [_relabel(b, {s: t}) for b in rest]
                            changed = True
                            break
                    if changed:
                        break
                else:
                    # diagonal metric: g(c,s) X_s = g(c,c) X_c for a concrete c
                    for s, c in ((x, y), (y, x)):
                        if isinstance(s, Index) and not isinstance(c, Index) and counts[s] == 2:
                            coef *= _metric_value(a.signature, c, c)
                            idx = [_relabel(b, {s: c}) for b in rest]
                            changed = True
                            break
                    if changed:
                        break
                    for j, b in enumerate(rest):
                        if isinstance(b, Metric):
                            shared = [s for s in (x, y) if isinstance(s, Index) and s in (b.a, b.b)]
                            if shared:
                                s = shared[0]
                                p = y if x == s else x
                                q = b.b if b.a == s else b.a
                                idx = rest[:j] + rest[j + 1:] + [Delta(p, q)]
                                changed = True
                                break
                    if changed:
                        break
        if not changed:
            return ("done", coef, idx)


def _skeleton(a: Expr, dummies: set) -> tuple:
    sl = tuple((1, 0, s.kind, "*") if (isinstance(s, Index) and s in dummies) else _slot_key(s)
               for s in _slots(a))
    if isinstance(a, FieldDeriv):
        n = len(a.idx)
        return (4, a.name, sl[:n], tuple(sorted(sl[n:])))
    if isinstance(a, ArbFn):
        return (5, a.name, tuple(sorted(sl)))
    if isinstance(a, (Metric, Delta)):
        return (_skey(a)[0], tuple(sorted(sl)))
    if isinstance(a, Epsilon):
        return (8, tuple(sorted(sl)))
    return (_skey(a)[0], getattr(a, "name", ""), sl)


def _slot_class(a: Expr, pos: int) -> tuple:
    if isinstance(a, FieldDeriv) and pos >= len(a.idx):
        return ("der",)
    if isinstance(a, (ArbFn, Metric, Delta, Epsilon)):
        return ("sym",)
    return ("pos", pos)


def _normalize_atoms(atoms: list):
    sign = 1
    out = []
    for a in atoms:
        if isinstance(a, Epsilon):
            if _slot_key(a.a) > _slot_key(a.b):
                a = Epsilon(a.b, a.a)
                sign = -sign
        out.append(a)
    out.sort(key=_skey)
    return out, sign


_MAX_LABELINGS = 40320


def _canon_dummies(idx: list):
    """Rename dummies canonically.  Returns (sign, atoms); sign 0 means zero."""
    counts = _index_counts(idx)
    dummies = {s for s, n in counts.items() if n == 2}
    if not dummies:
        atoms, sign = _normalize_atoms(idx)
        return sign, atoms
    free_names = {s.name for s, n in counts.items() if n == 1}
    sig: dict = {d: [] for d in dummies}
    for a in idx:
        sk = _skeleton(a, dummies)
        for pos, s in enumerate(_slots(a)):
            if s in dummies:
                sig[s].append((sk, _slot_class(a, pos)))
    groups: dict = {}
    for d in dummies:
        key = (d.kind, d.range, tuple(sorted(sig[d])))
        groups.setdefault(key, []).append(d)
    ordered = [sorted(groups[k], key=lambda s: s.name) for k in sorted(groups)]
    counters = {SPACETIME: 0, INTERNAL: 0}
    targets = []
    for members in ordered:
        names = []
        for m in members:
            stem = "m_" if m.kind == SPACETIME else "i_"
            while True:
                counters[m.kind] += 1
                nm = f"{stem}{counters[m.kind]}"
                if nm not in free_names:
                    break
            names.append(Index(m.kind, nm, m.range))
        targets.append(names)
    n_labelings = 1
    for members in ordered:
        n_labelings *= math.factorial(len(members))
    if n_labelings > _MAX_LABELINGS:
        perms_iter = [tuple(tuple(m) for m in ordered)]
    else:
        perms_iter = itertools.product(*(itertools.permutations(m) for m in ordered))
    best_key = None
    best = None
    signs: set = set()
    for perm in perms_iter:
        mapping = {}
        for members, names in zip(perm, targets):
            mapping.update(zip(members, names))
        atoms, sign = _normalize_atoms([_relabel(a, mapping) for a in idx])
        key = tuple(_skey(a) for a in atoms)
        if best_key is None or key < best_key:
            best_key, best, signs = key, atoms, {sign}
        elif key == best_key:
            signs.add(sign)
    if len(signs) > 1:
        return 0, best
    return signs.pop(), best


def _merge_exps(pw: dict) -> dict:
    exps = [(a, n) for a, n in pw.items() if isinstance(a, ExpFn)]
    if len(exps) <= 1 and all(n == 1 for _, n in exps):
        return pw
    out = {a: n for a, n in pw.items() if not isinstance(a, ExpFn)}
    arg = canonicalize(Sum(tuple(Prod((Num(n), a.arg)) for a, n in exps)))
    if arg != ZERO:
        out[ExpFn(arg)] = 1
    return out


def _finalize(coef: Fraction, idx: list, pw: dict) -> list:
    out = []
    stack = [(coef, idx)]
    while stack:
        c, ix = stack.pop()
        res = _contract(c, ix)
        if res is None:
            continue
        if res[0] == "split":
            stack.extend(res[1])
            continue
        _, c, ix = res
        p = dict(pw)
        keep = []
        for a in ix:
            if _indexed(a):
                keep.append(a)
            else:
                p[a] = p.get(a, 0) + 1
        p = {a: n for a, n in p.items() if n != 0}
        p = _merge_exps(p)
        sign, atoms = _canon_dummies(keep)
        if sign == 0:
            continue
        out.append((c * sign, tuple(atoms), tuple(sorted(p.items(), key=lambda kv: _skey(kv[0])))))
    return out


def _term_key(atoms: tuple, pw: tuple) -> tuple:
    return (tuple(_skey(a) for a in atoms), tuple((_skey(a), n) for a, n in pw))


def _canon_terms_from(terms: list) -> list:
    merged: dict = {}
    for t in terms:
        for c, atoms, pw in _finalize(t.coef, t.idx, t.pw):
            key = _term_key(atoms, pw)
            if key in merged:
                merged[key][0] += c
            else:
                merged[key] = [c, atoms, pw]
    out = [(c, atoms, pw) for key, (c, atoms, pw) in sorted(merged.items()) if c != 0]
    return out


def _canon_terms(e: Expr) -> list:
    """Canonical monomials of ``e`` as ``(coef, indexed atoms, ((atom, exp), ...))``."""
    return _canon_terms_from(_expand(e))


def _term_factors(atoms: tuple, pw: tuple) -> list:
    facs = list(atoms) + [a if n == 1 else Pow(a, n) for a, n in pw]
    facs.sort(key=lambda f: _skey(f.base if isinstance(f, Pow) else f))
    return facs


def _build(terms: list) -> Expr:
    out = []
    for c, atoms, pw in terms:
        facs = _term_factors(atoms, pw)
        if not facs:
            out.append(Num(c))
        elif c == 1 and len(facs) == 1:
            out.append(facs[0])
        elif c == 1:
            out.append(Prod(tuple(facs)))
        else:
            out.append(Prod((Num(c), *facs)))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    return Sum(tuple(out))


def canonicalize(e: Expr) -> Expr:
    """Return the unique normal form of ``e``."""
    return _build(_canon_terms(as_expr(e)))


def terms_of(e: Expr) -> list:
    """Canonical monomials ``(coef, indexed atoms, powered atoms)`` of ``e``."""
    return _canon_terms(as_expr(e))


def free_indices(e: Expr) -> frozenset:
    terms = _canon_terms(as_expr(e))
    if not terms:
        return frozenset()
    return frozenset(s for s, n in _index_counts(terms[0][1]).items() if n == 1)


def equal(a: Expr, b: Expr) -> bool:
    return canonicalize(a - b) == ZERO


# ---------------------------------------------------------------------------
# generic traversal


def map_atoms(e: Expr, fn: Callable[[Expr], Expr]) -> Expr:
    """Rebuild ``e`` with ``fn`` applied to every atom, including function arguments."""
    if isinstance(e, Num):
        return e
    if isinstance(e, _ATOMS):
        return fn(e)
    if isinstance(e, UnaryFn):
        return type(e)(map_atoms(e.arg, fn))
    if isinstance(e, Sum):
        return Sum(tuple(map_atoms(t, fn) for t in e.terms))
    if isinstance(e, Prod):
        return Prod(tuple(map_atoms(f, fn) for f in e.factors))
    if isinstance(e, Pow):
        return Pow(map_atoms(e.base, fn), e.exp)
    raise TypeError(f"not an expression: {e!r}")


def atoms(e: Expr) -> set:
    """All atoms appearing in ``e``, descending into function arguments."""
    found: set = set()

    def visit(x: Expr) -> Expr:
        found.add(x)
        return x

    map_atoms(e, visit)
    return found


def rename_indices(e: Expr, mapping: Mapping[Index, Slot]) -> Expr:
    """Rename free indices.  Dummies colliding with the new names are moved aside."""
    e = as_expr(e)
    targets = {s.name for s in mapping.values() if isinstance(s, Index)}
    e = _dummies_apart(e, targets)
    return canonicalize(map_atoms(e, lambda a: _relabel(a, mapping)))


def _dummies_apart(e: Expr, avoid: set) -> Expr:
    """Rename dummy indices whose names are in ``avoid``; result is not canonical."""
    out = []
    for c, ix, pw in _canon_terms(e):
        counts = _index_counts(ix)
        clash = [s for s, n in counts.items() if n == 2 and s.name in avoid]
        if clash:
            used = {s.name for s in counts} | set(avoid)
            mapping = {s: _fresh(s.kind, s.range, used) for s in clash}
            ix = tuple(_relabel(a, mapping) for a in ix)
        facs = _term_factors(ix, pw)
        out.append(Prod((Num(c), *facs)))
    return Sum(tuple(out)) if out else ZERO


# ---------------------------------------------------------------------------
# substitution


def _match(pattern: Expr, atom: Expr):
    """Bind the abstract indices of ``pattern`` so that it equals ``atom``."""
    if type(pattern) is not type(atom):
        return None
    if getattr(pattern, "name", None) != getattr(atom, "name", None):
        return None
    if isinstance(pattern, FieldDeriv) and len(pattern.idx) != len(atom.idx):
        return None
    ps, ats = _slots(pattern), _slots(atom)
    if len(ps) != len(ats):
        return None
    if isinstance(pattern, Metric) and pattern.signature != atom.signature:
        return None
    binding: dict = {}
    for p, s in zip(ps, ats):
        if isinstance(p, Index):
            if isinstance(s, Index) and s.kind != p.kind:
                return None
            if p in binding and binding[p] != s:
                return None
            binding[p] = s
        elif p != s:
            return None
    return binding


def substitute(e: Expr, bindings: Mapping[Expr, Expr]) -> Expr:
    """Simultaneously replace atoms, then canonicalize.

    Keys whose indices are abstract act as patterns: ``{d(phi,mu): 0}``
    zeroes every first derivative of ``phi``.
    """
    prepared = []
    for key, val in bindings.items():
        val = canonicalize(as_expr(val))
        key_free = frozenset(s for s in _slots(key) if isinstance(s, Index))
        if val != ZERO and free_indices(val) != key_free:
            raise IndexMismatch(f"binding for {to_text(key)} changes free indices")
        prepared.append((key, val, key_free))
    exact = {k: v for k, v, _ in prepared}

    def repl(a: Expr) -> Expr:
        if a in exact:
            return exact[a]
        for key, val, key_free in prepared:
            if not key_free:
                continue
            b = _match(key, a)
            if b is None:
                continue
            names = {s.name for s in b.values() if isinstance(s, Index)}
            v = _dummies_apart(val, names)
            return map_atoms(v, lambda x: _relabel(x, b))
        return a

    return canonicalize(map_atoms(as_expr(e), repl))


def constant_fields(e: Expr) -> Expr:
    """Drop every term containing a field derivative (constant configuration)."""
    return canonicalize(map_atoms(as_expr(e), lambda a: ZERO if isinstance(a, FieldDeriv) else a))


# ---------------------------------------------------------------------------
# differentiation


def _kdelta(x: Slot, y: Slot) -> Expr:
    if not isinstance(x, Index) and not isinstance(y, Index):
        return ONE if x == y else ZERO
    return Delta(x, y)


def _deriv_deltas(have: tuple, want: tuple) -> Expr:
    k = len(have)
    if k == 0:
        return ONE
    if k == 1:
        return _kdelta(have[0], want[0])
    if not any(isinstance(s, Index) for s in have + want):
        return ONE if sorted(have) == sorted(want) else ZERO
    perms = [Prod(tuple(_kdelta(h, want[p]) for h, p in zip(have, perm)))
             for perm in itertools.permutations(range(k))]
    return Prod((Num(Fraction(1, math.factorial(k))), Sum(tuple(perms))))


def _derive(e: Expr, leaf: Callable[[Expr], Expr], avoid: set) -> Expr:
    out = []
    for c, ix, pw in _canon_terms(as_expr(e)):
        counts = _index_counts(ix)
        clash = [s for s, n in counts.items() if n == 2 and s.name in avoid]
        if clash:
            used = {s.name for s in counts} | set(avoid)
            mapping = {s: _fresh(s.kind, s.range, used) for s in clash}
            ix = tuple(_relabel(a, mapping) for a in ix)
        pw_f = [a if n == 1 else Pow(a, n) for a, n in pw]
        for k, a in enumerate(ix):
            d = leaf(a)
            if d == ZERO:
                continue
            out.append(Prod((Num(c), *ix[:k], *ix[k + 1:], *pw_f, d)))
        for k, (a, n) in enumerate(pw):
            d = _derive_atom(a, leaf, avoid)
            if d == ZERO:
                continue
            rest = [x if m == 1 else Pow(x, m) for j, (x, m) in enumerate(pw) if j != k]
            if n != 1:
                rest.append(Pow(a, n - 1))
            out.append(Prod((Num(c * n), *ix, *rest, d)))
    return canonicalize(Sum(tuple(out))) if out else ZERO


def _derive_atom(a: Expr, leaf: Callable[[Expr], Expr], avoid: set) -> Expr:
    if isinstance(a, UnaryFn):
        inner = _derive(a.arg, leaf, avoid)
        if inner == ZERO:
            return ZERO
        return Prod((a.derivative(), inner))
    if isinstance(a, Sum):
        return _derive(a, leaf, avoid)
    return leaf(a)


def _names(slots: Iterable[Slot]) -> set:
    return {s.name for s in slots if isinstance(s, Index)}


def diff_field(e: Expr, target: Expr) -> Expr:
    """Formal partial derivative treating each field atom as independent.

    ``target`` is a Field, FieldDeriv, ArbFn or Param atom.  Abstract target
    indices produce Kronecker deltas; for higher derivative atoms the result
    is symmetrized over the derivative slots.  Free indices shared between
    ``e`` and ``target`` are contracted.
    """
    if not isinstance(target, (Field, FieldDeriv, ArbFn, Param, Coord)):
        raise TypeError("can only differentiate with respect to an atom")

    def leaf(a: Expr) -> Expr:
        if isinstance(target, Param):
            return ONE if a == target else ZERO
        if type(a) is not type(target) or getattr(a, "name", None) != target.name:
            return ZERO
        if isinstance(a, Coord):
            return _kdelta(a.index, target.index)
        if isinstance(a, ArbFn):
            if len(a.derivs) != len(target.derivs):
                return ZERO
            return _deriv_deltas(a.derivs, target.derivs)
        if len(a.idx) != len(target.idx):
            return ZERO
        facs = [_kdelta(x, y) for x, y in zip(a.idx, target.idx)]
        if isinstance(a, FieldDeriv):
            if len(a.derivs) != len(target.derivs):
                return ZERO
            facs.append(_deriv_deltas(a.derivs, target.derivs))
        if any(f == ZERO for f in facs):
            return ZERO
        return Prod(tuple(facs)) if facs else ONE

    return _derive(e, leaf, _names(_slots(target)))


def spacetime_derivative(e: Expr, index: Slot) -> Expr:
    """Total derivative by the chain rule through fields, coordinates and ArbFn atoms."""
    if isinstance(index, Index) and index.kind != SPACETIME:
        raise ValueError("spacetime_derivative needs a spacetime index")

    def leaf(a: Expr) -> Expr:
        if isinstance(a, Coord):
            return _kdelta(index, a.index)
        if isinstance(a, Field):
            return FieldDeriv(a.name, a.idx, (index,))
        if isinstance(a, FieldDeriv):
            return FieldDeriv(a.name, a.idx, a.derivs + (index,))
        if isinstance(a, ArbFn):
            return ArbFn(a.name, a.derivs + (index,))
        return ZERO

    return _derive(e, leaf, _names((index,)))


def divergence(vec: Expr, index: Index) -> Expr:
    """d_mu V^mu for an expression with free spacetime index ``index``."""
    return spacetime_derivative(vec, index)


# ---------------------------------------------------------------------------
# component expansion and numerics


def expand_indices(e: Expr, kinds: Iterable[str] | None = None,
                   values: Mapping[Index, int] | None = None) -> Expr:
    """Sum out dummy indices of the given kinds and bind free indices to values."""
    kinds = set(kinds) if kinds is not None else {SPACETIME, INTERNAL}
    values = dict(values or {})
    out = []
    total = 0
    for c, ix, pw in _canon_terms(as_expr(e)):
        counts = _index_counts(ix)
        dums = [s for s, n in counts.items() if n == 2 and s.kind in kinds]
        pw_f = [_expand_inner(a, kinds) if n == 1 else Pow(_expand_inner(a, kinds), n) for a, n in pw]
        base = {s: values[s] for s in counts if s in values}
        ranges = [list(d.values()) for d in dums]
        for combo in itertools.product(*ranges):
            total += 1
            if total > MAX_TERMS:
                raise ExpressionTooLarge("component expansion exceeds the term limit")
            mapping = dict(base)
            mapping.update(zip(dums, combo))
            out.append(Prod((Num(c), *(_relabel(a, mapping) for a in ix), *pw_f)))
    return canonicalize(Sum(tuple(out))) if out else ZERO


def _expand_inner(a: Expr, kinds: set) -> Expr:
    if isinstance(a, UnaryFn):
        return type(a)(expand_indices(a.arg, kinds))
    if isinstance(a, Sum):
        return expand_indices(a, kinds)
    return a


def is_zero(e: Expr) -> bool:
    """Exact zero test: canonical form first, then full component expansion."""
    c = canonicalize(as_expr(e))
    if c == ZERO:
        return True
    free = sorted(free_indices(c), key=lambda s: (s.kind, s.name))
    for combo in itertools.product(*(list(s.values()) for s in free)):
        if expand_indices(c, values=dict(zip(free, combo))) != ZERO:
            return False
    return True


def _normalize_assignment(assignment: Mapping) -> dict:
    out = {}
    for k, v in assignment.items():
        out[Param(k) if isinstance(k, str) else k] = v
    return out


def eval_numeric(e: Expr, assignment: Mapping, free: Mapping[Index, int] | None = None):
    """Evaluate ``e`` numerically.

    ``assignment`` maps concrete atoms (``Field('phi', (1,))``, ``Param('m')``
    or just ``'m'``) to numbers.  Dummy indices are summed over their ranges;
    free indices must be bound through ``free``.
    """
    values = _normalize_assignment(assignment)
    missing: set = set()
    result = _eval(as_expr(e), values, dict(free or {}), missing)
    if missing:
        raise MissingAtom(missing)
    return result


def _eval(e: Expr, values: dict, free: dict, missing: set):
    total = 0.0
    for c, ix, pw in _canon_terms(e):
        counts = _index_counts(ix)
        unbound = [s for s, n in counts.items() if n == 1 and s not in free]
        if unbound:
            raise ExprError("free indices need values: " + ", ".join(s.name for s in unbound))
        scalar = float(c)
        for a, n in pw:
            scalar *= _atom_value(a, values, missing) ** n
        if not ix:
            total += scalar
            continue
        dums = [s for s, n in counts.items() if n == 2]
        acc = 0.0
        for combo in itertools.product(*(list(d.values()) for d in dums)):
            mapping = dict(free)
            mapping.update(zip(dums, combo))
            prod = 1.0
            for a in ix:
                prod *= _atom_value(_relabel(a, mapping), values, missing)
                if prod == 0.0:
                    break
            acc += prod
        total += scalar * acc
    return total


def _atom_value(a: Expr, values: dict, missing: set):
    if isinstance(a, Metric):
        return float(_metric_value(a.signature, a.a, a.b))
    if isinstance(a, Delta):
        return 1.0 if a.a == a.b else 0.0
    if isinstance(a, Epsilon):
        return float(_eps_value(a.a, a.b))
    if isinstance(a, UnaryFn):
        return a.evaluate(_eval(a.arg, values, {}, missing))
    if isinstance(a, Sum):
        return _eval(a, values, {}, missing)
    if a in values:
        return values[a]
    missing.add(to_text(a))
    return float("nan")


# ---------------------------------------------------------------------------
# text form (re-parseable model-file syntax)


def _slot_text(s: Slot) -> str:
    return s.name if isinstance(s, Index) else str(s)


def _atom_text(a: Expr) -> str:
    if isinstance(a, Param):
        return a.name
    if isinstance(a, Coord):
        return f"x({_slot_text(a.index)})"
    if isinstance(a, Field):
        if a.idx:
            return f"{a.name}[{','.join(_slot_text(s) for s in a.idx)}]"
        return a.name
    if isinstance(a, FieldDeriv):
        out = _atom_text(Field(a.name, a.idx))
        for d in a.derivs:
            out = f"d({out},{_slot_text(d)})"
        return out
    if isinstance(a, ArbFn):
        out = a.name
        for d in a.derivs:
            out = f"d({out},{_slot_text(d)})"
        return out
    if isinstance(a, Metric):
        return f"g({_slot_text(a.a)},{_slot_text(a.b)})"
    if isinstance(a, Delta):
        return f"kron({_slot_text(a.a)},{_slot_text(a.b)})"
    if isinstance(a, Epsilon):
        return f"eps({_slot_text(a.a)},{_slot_text(a.b)})"
    if isinstance(a, UnaryFn):
        return f"{a.fname}({to_text(a.arg)})"
    raise TypeError(a)


def _num_text(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    return f"({v.numerator}/{v.denominator})"


def to_text(e: Expr) -> str:
    e = as_expr(e)
    if isinstance(e, Num):
        return _num_text(e.value) if e.value >= 0 else f"-{_num_text(-e.value)}"
    if isinstance(e, Sum):
        parts = []
        for k, t in enumerate(e.terms):
            s = to_text(t)
            if k == 0:
                parts.append(s)
            elif s.startswith("-"):
                parts.append(" - " + s[1:])
            else:
                parts.append(" + " + s)
        return "".join(parts)
    if isinstance(e, Prod):
        facs = list(e.factors)
        sign = ""
        if facs and isinstance(facs[0], Num) and facs[0].value < 0 and len(facs) > 1:
            sign = "-"
            facs[0] = Num(-facs[0].value)
            if facs[0].value == 1:
                facs = facs[1:]
        strs = []
        for f in facs:
            s = to_text(f)
            if isinstance(f, Sum) or (isinstance(f, Num) and f.value < 0):
                s = f"({s})"
            strs.append(s)
        return sign + "*".join(strs)
    if isinstance(e, Pow):
        b = to_text(e.base)
        if not isinstance(e.base, _ATOMS + (UnaryFn,)) or b.startswith("-"):
            b = f"({b})"
        return f"{b}^{e.exp}"
    return _atom_text(e)
