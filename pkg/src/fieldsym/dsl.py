"""Model files: parsing into :class:`ModelDef` and printing back.

A model file looks like::

    model mexican_hat
    dimension 4
    signature mostly-minus
    param lambda v
    field phi[2] scalar
    lagrangian = (1/2)*g(mu,nu)*d(phi[i],mu)*d(phi[i],nu) - (lambda/4)*(phi[i]*phi[i] - v^2)^2
    transform u1 global { delta phi[i] = eps0 * eps(i,j) * phi[j] }

Index kinds are never declared; they follow from where an index name is used.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

from . import expr as E
from .expr import Expr

KEYWORDS = ("dimension", "signature", "param", "field", "lagrangian", "transform")
RESERVED = {"exp", "d", "g", "eps", "x", "kron", "theta", "eps0", "delta", "model"} | set(KEYWORDS)
TRANSFORM_KINDS = ("global", "local", "spacetime")
GAUGE_FN = "theta"
GLOBAL_PARAM = "eps0"

MAX_DEPTH = 100
MAX_EXPONENT = 16
MAX_DIMENSION = 16
MAX_MULTIPLET = 16


class ModelError(Exception):
    """A rejected model file, with a position."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.message = message or "invalid input"
        self.offset = offset
        self.line = text.count("\n", 0, offset) + 1
        self.column = offset - (text.rfind("\n", 0, offset) + 1) + 1
        super().__init__(f"{self.line}:{self.column}: {self.message}")


class ParseError(ModelError):
    def __init__(self, message: str, offset: int, text: str = "", expected=()):
        self.expected = frozenset(expected)
        super().__init__(message, offset, text)


class ValidationError(ModelError):
    pass


# ---------------------------------------------------------------------------
# model values


@dataclass(frozen=True)
class FieldDecl:
    name: str
    size: int | None = None     # multiplet size, None for a single component
    vector: bool = False
    dilaton: bool = False
    weight: Fraction = Fraction(1)

    def slot_kinds(self) -> tuple:
        kinds = []
        if self.size is not None:
            kinds.append(E.INTERNAL)
        if self.vector:
            kinds.append(E.SPACETIME)
        return tuple(kinds)

    def ref(self, dim: int, names: tuple = ()) -> Expr:
        """The field atom with abstract indices (default names a, alpha)."""
        slots = []
        defaults = iter(names)
        for kind in self.slot_kinds():
            nm = next(defaults, None)
            if kind == E.INTERNAL:
                slots.append(E.Index(kind, nm or "a", self.size))
            else:
                slots.append(E.Index(kind, nm or "alpha", dim))
        return E.Field(self.name, tuple(slots))

    def components(self, dim: int) -> list:
        ranges = []
        if self.size is not None:
            ranges.append(range(1, self.size + 1))
        if self.vector:
            ranges.append(range(dim))
        import itertools
        return [E.Field(self.name, combo) for combo in itertools.product(*ranges)]


@dataclass(frozen=True)
class Transformation:
    """Per-field infinitesimal variations, stored with the parameter set to one
    (``theta`` for local kinds, ``eps0`` for global ones as written)."""

    name: str
    kind: str
    deltas: tuple   # ((field atom with abstract indices, delta expression), ...)

    def delta_for(self, field_name: str):
        for ref, d in self.deltas:
            if ref.name == field_name:
                return ref, d
        return None


@dataclass(frozen=True)
class ModelDef:
    name: str
    dimension: int
    signature: str
    params: tuple
    fields: tuple
    lagrangian: Expr
    transformations: tuple = ()

    def field(self, name: str) -> FieldDecl:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def transformation(self, name: str) -> Transformation:
        for t in self.transformations:
            if t.name == name:
                return t
        raise KeyError(name)

    def components(self) -> list:
        out = []
        for f in self.fields:
            out.extend(f.components(self.dimension))
        return out

    def with_lagrangian(self, lagrangian: Expr) -> ModelDef:
        return ModelDef(self.name, self.dimension, self.signature, self.params, self.fields,
                        E.canonicalize(lagrangian), self.transformations)


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>[-+*/^()\[\]{},=])
""", re.VERBOSE)


@dataclass(frozen=True)
class Tok:
    kind: str   # num, ident, sym, eof
    text: str
    pos: int


def tokenize(text: str) -> list:
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        if m.lastgroup != "ws":
            toks.append(Tok(m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(Tok("eof", "", n))
    return toks


# ---------------------------------------------------------------------------
# parser producing a small AST


@dataclass
class _FieldAst:
    name: str
    size: int | None
    vector: bool
    dilaton: bool
    weight: Fraction
    pos: int


@dataclass
class _TransformAst:
    name: str
    family: tuple | None    # (index name, pos)
    kind: str
    deltas: list            # (field name, [slot tokens], expr ast, pos)
    pos: int


@dataclass
class _ModelAst:
    name: str = ""
    dimension: int | None = None
    signature: str | None = None
    params: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    lagrangian: tuple | None = None
    lagrangian_pos: int = 0
    transforms: list = field(default_factory=list)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0
        self.depth = 0

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def fail(self, expected, message: str | None = None):
        t = self.tok
        got = "end of input" if t.kind == "eof" else repr(t.text)
        exp = sorted(expected)
        msg = message or f"expected {' or '.join(exp)}, got {got}"
        raise ParseError(msg, t.pos, self.text, exp)

    def advance(self) -> Tok:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def accept_sym(self, s: str) -> bool:
        if self.tok.kind == "sym" and self.tok.text == s:
            self.i += 1
            return True
        return False

    def expect_sym(self, s: str) -> Tok:
        if self.tok.kind == "sym" and self.tok.text == s:
            return self.advance()
        self.fail({f"'{s}'"})

    def expect_word(self, *words: str) -> Tok:
        if self.tok.kind == "ident" and self.tok.text in words:
            return self.advance()
        self.fail({f'"{w}"' if len(words) > 1 else w for w in words})

    def expect_ident(self, what: str = "identifier") -> Tok:
        if self.tok.kind == "ident":
            return self.advance()
        self.fail({what})

    def expect_int(self, what: str = "integer") -> int:
        if self.tok.kind == "num" and "." not in self.tok.text:
            return int(self.advance().text)
        self.fail({what})

    # -- items

    def model(self) -> _ModelAst:
        if not (self.tok.kind == "ident" and self.tok.text == "model"):
            self.fail({"model"})
        self.advance()
        ast = _ModelAst(name=self.expect_ident("model name").text)
        while self.tok.kind != "eof":
            t = self.tok
            if t.kind != "ident" or t.text not in KEYWORDS:
                self.fail(set(KEYWORDS) | {"end of input"})
            self.advance()
            getattr(self, "item_" + t.text)(ast, t)
        return ast

    def item_dimension(self, ast: _ModelAst, t: Tok) -> None:
        pos = self.tok.pos
        d = self.expect_int("dimension")
        if not 1 <= d <= MAX_DIMENSION:
            raise ValidationError(f"dimension must be between 1 and {MAX_DIMENSION}", pos, self.text)
        ast.dimension = d

    def item_signature(self, ast: _ModelAst, t: Tok) -> None:
        self.expect_word("mostly")
        self.expect_sym("-")
        ast.signature = "mostly-" + self.expect_word("minus", "plus").text

    def item_param(self, ast: _ModelAst, t: Tok) -> None:
        n = 0
        while self.tok.kind == "ident" and self.tok.text not in KEYWORDS:
            p = self.advance()
            ast.params.append((p.text, p.pos))
            n += 1
        if n == 0:
            self.fail({"parameter name"})

    def item_field(self, ast: _ModelAst, t: Tok) -> None:
        name = self.expect_ident("field name")
        size = None
        if self.accept_sym("["):
            pos = self.tok.pos
            size = self.expect_int("multiplet size")
            if not 1 <= size <= MAX_MULTIPLET:
                raise ValidationError(f"multiplet size must be between 1 and {MAX_MULTIPLET}", pos, self.text)
            self.expect_sym("]")
        kind = self.expect_word("scalar", "vector").text
        dilaton = False
        weight = Fraction(1)
        while self.tok.kind == "ident" and self.tok.text in ("dilaton", "weight"):
            attr = self.advance().text
            if attr == "dilaton":
                dilaton = True
            else:
                weight = self.rational()
        ast.fields.append(_FieldAst(name.text, size, kind == "vector", dilaton, weight, name.pos))

    def rational(self) -> Fraction:
        neg = self.accept_sym("-")
        if self.tok.kind != "num":
            self.fail({"number"})
        v = Fraction(self.advance().text)
        if self.accept_sym("/"):
            pos = self.tok.pos
            den = self.expect_int("denominator")
            if den == 0:
                raise ValidationError("division by zero", pos, self.text)
            v /= den
        return -v if neg else v

    def item_lagrangian(self, ast: _ModelAst, t: Tok) -> None:
        self.expect_sym("=")
        ast.lagrangian_pos = self.tok.pos
        if ast.lagrangian is not None:
            raise ValidationError("duplicate lagrangian", t.pos, self.text)
        ast.lagrangian = self.expr()

    def item_transform(self, ast: _ModelAst, t: Tok) -> None:
        name = self.expect_ident("transformation name")
        family = None
        if self.accept_sym("["):
            fam = self.expect_ident("index name")
            family = (fam.text, fam.pos)
            self.expect_sym("]")
        kind = self.expect_word(*TRANSFORM_KINDS).text
        self.expect_sym("{")
        deltas = []
        while True:
            if self.tok.kind == "ident" and self.tok.text == "delta":
                dpos = self.advance().pos
                fname = self.expect_ident("field name")
                slots = []
                if self.accept_sym("["):
                    slots.append(self.slot())
                    while self.accept_sym(","):
                        slots.append(self.slot())
                    self.expect_sym("]")
                self.expect_sym("=")
                deltas.append((fname.text, slots, self.expr(), fname.pos))
                continue
            if deltas and self.accept_sym("}"):
                break
            self.fail({"delta"} | ({"'}'"} if deltas else set()))
        ast.transforms.append(_TransformAst(name.text, family, kind, deltas, name.pos))

    # -- expressions

    def slot(self) -> tuple:
        t = self.tok
        if t.kind == "ident":
            self.advance()
            return ("name", t.text, t.pos)
        if t.kind == "num" and "." not in t.text:
            self.advance()
            return ("int", int(t.text), t.pos)
        self.fail({"index"})

    def expr(self) -> tuple:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            self.fail(set(), "expression nested too deeply")
        node = self.term()
        while self.tok.kind == "sym" and self.tok.text in "+-":
            op = self.advance()
            node = ("add" if op.text == "+" else "sub", node, self.term(), op.pos)
        self.depth -= 1
        return node

    def term(self) -> tuple:
        node = self.unary()
        while self.tok.kind == "sym" and self.tok.text in "*/":
            op = self.advance()
            node = ("mul" if op.text == "*" else "div", node, self.unary(), op.pos)
        return node

    def unary(self) -> tuple:
        if self.tok.kind == "sym" and self.tok.text == "-":
            pos = self.advance().pos
            self.depth += 1
            if self.depth > MAX_DEPTH:
                self.fail(set(), "expression nested too deeply")
            node = ("neg", self.unary(), pos)
            self.depth -= 1
            return node
        return self.power()

    def power(self) -> tuple:
        node = self.primary()
        if self.accept_sym("^"):
            pos = self.tok.pos
            neg = False
            if self.accept_sym("("):
                neg = self.accept_sym("-")
                n = self.expect_int("exponent")
                self.expect_sym(")")
            else:
                neg = self.accept_sym("-")
                n = self.expect_int("exponent")
            if n > MAX_EXPONENT:
                raise ParseError(f"exponent larger than {MAX_EXPONENT}", pos, self.text, ())
            node = ("pow", node, -n if neg else n, pos)
        return node

    def primary(self) -> tuple:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return ("num", Fraction(t.text), t.pos)
        if self.accept_sym("("):
            node = self.expr()
            self.expect_sym(")")
            return node
        if t.kind == "ident":
            self.advance()
            if self.tok.kind == "sym" and self.tok.text == "(" and t.text in ("exp", "d", "g", "eps", "x", "kron"):
                self.advance()
                return self.call(t)
            slots = None
            if self.accept_sym("["):
                slots = [self.slot()]
                while self.accept_sym(","):
                    slots.append(self.slot())
                self.expect_sym("]")
            return ("name", t.text, slots, t.pos)
        self.fail({"number", "identifier", "'('", "'-'"})

    def call(self, t: Tok) -> tuple:
        fn = t.text
        if fn == "exp":
            args = [self.expr()]
        elif fn == "d":
            args = [self.expr()]
            self.expect_sym(",")
            args.append(self.slot())
        elif fn == "x":
            args = [self.slot()]
        else:
            args = [self.slot()]
            self.expect_sym(",")
            args.append(self.slot())
        self.expect_sym(")")
        return ("call", fn, args, t.pos)


# ---------------------------------------------------------------------------
# resolution of the AST into expressions


class _Scope:
    """Index bookkeeping for one expression: name -> (kind, range)."""

    def __init__(self, text: str, fixed: dict | None = None):
        self.text = text
        self.kinds: dict = {}
        self.fixed = dict(fixed or {})
        self.pending: list = []

    def note(self, slot: tuple, kind: str | None, rng: int | None) -> None:
        if slot[0] != "name" or slot[1] in self.fixed:
            return
        name, pos = slot[1], slot[2]
        if kind is None:
            self.pending.append(slot)
            return
        prev = self.kinds.get(name)
        if prev is not None and prev != (kind, rng):
            raise ValidationError(
                f"index {name} used inconsistently ({prev[0]} {prev[1]} and {kind} {rng})", pos, self.text)
        self.kinds[name] = (kind, rng)

    def resolve(self, slot: tuple, kind: str | None, rng: int | None) -> E.Slot:
        if slot[0] == "int":
            v = slot[1]
            if kind == E.SPACETIME and not 0 <= v < rng:
                raise ValidationError(f"spacetime component {v} out of range 0..{rng - 1}", slot[2], self.text)
            if kind == E.INTERNAL and not 1 <= v <= rng:
                raise ValidationError(f"internal component {v} out of range 1..{rng}", slot[2], self.text)
            return v
        name = slot[1]
        if name in self.fixed:
            return self.fixed[name]
        if name not in self.kinds:
            raise ValidationError(f"cannot infer the kind of index {name}", slot[2], self.text)
        k, r = self.kinds[name]
        return E.Index(k, name, r)


class _Resolver:
    def __init__(self, text: str, dim: int, signature: str, params: set, fields: dict):
        self.text = text
        self.dim = dim
        self.sig = signature
        self.params = params
        self.fields = fields

    def field_slot_info(self, f: FieldDecl) -> list:
        info = []
        if f.size is not None:
            info.append((E.INTERNAL, f.size))
        if f.vector:
            info.append((E.SPACETIME, self.dim))
        return info

    def collect(self, node: tuple, scope: _Scope) -> None:
        tag = node[0]
        if tag in ("add", "sub", "mul", "div"):
            self.collect(node[1], scope)
            self.collect(node[2], scope)
        elif tag in ("neg", "pow"):
            self.collect(node[1], scope)
        elif tag == "name":
            _, name, slots, pos = node
            if slots is None:
                return
            f = self.fields.get(name)
            if f is None:
                raise ValidationError(f"undeclared field {name}", pos, self.text)
            info = self.field_slot_info(f)
            if len(info) != len(slots):
                raise ValidationError(f"field {name} takes {len(info)} index(es)", pos, self.text)
            for s, (k, r) in zip(slots, info):
                scope.note(s, k, r)
        elif tag == "call":
            _, fn, args, pos = node
            if fn == "exp":
                self.collect(args[0], scope)
            elif fn == "d":
                self.collect(args[0], scope)
                scope.note(args[1], E.SPACETIME, self.dim)
            elif fn in ("g", "x"):
                for s in args:
                    scope.note(s, E.SPACETIME, self.dim)
            elif fn == "eps":
                for s in args:
                    scope.note(s, E.INTERNAL, 2)
            elif fn == "kron":
                for s in args:
                    scope.note(s, None, None)

    def finish(self, scope: _Scope) -> None:
        for s in scope.pending:
            if s[1] not in scope.kinds and s[1] not in scope.fixed:
                raise ValidationError(f"cannot infer the kind of index {s[1]}", s[2], self.text)

    def build(self, node: tuple, scope: _Scope) -> Expr:
        tag = node[0]
        if tag == "num":
            return E.Num(node[1])
        if tag == "add":
            return self.build(node[1], scope) + self.build(node[2], scope)
        if tag == "sub":
            return self.build(node[1], scope) - self.build(node[2], scope)
        if tag == "mul":
            # one term, however it is parenthesized: indices are counted across all factors
            factors = []
            stack = [node]
            while stack:
                n = stack.pop()
                if n[0] == "mul":
                    stack.extend((n[2], n[1]))
                else:
                    factors.append(self.build(n, scope))
            return E.Prod(tuple(factors))
        if tag == "div":
            den = self.build(node[2], scope)
            if isinstance(den, E.Num) and den.value == 0:
                raise ValidationError("division by zero", node[3], self.text)
            return self.build(node[1], scope) / den
        if tag == "neg":
            return -self.build(node[1], scope)
        if tag == "pow":
            return E.Pow(self.build(node[1], scope), node[2])
        if tag == "name":
            return self.name(node, scope)
        if tag == "call":
            return self.call(node, scope)
        raise AssertionError(tag)

    def name(self, node: tuple, scope: _Scope) -> Expr:
        _, name, slots, pos = node
        if name in self.fields:
            f = self.fields[name]
            info = self.field_slot_info(f)
            slots = slots or []
            if len(info) != len(slots):
                raise ValidationError(f"field {name} takes {len(info)} index(es)", pos, self.text)
            return E.Field(name, tuple(scope.resolve(s, k, r) for s, (k, r) in zip(slots, info)))
        if slots is not None:
            raise ValidationError(f"undeclared field {name}", pos, self.text)
        if name in self.params or name == GLOBAL_PARAM:
            return E.Param(name)
        if name == GAUGE_FN:
            return E.ArbFn(GAUGE_FN)
        raise ValidationError(f"undeclared name {name}", pos, self.text)

    def call(self, node: tuple, scope: _Scope) -> Expr:
        _, fn, args, pos = node
        if fn == "exp":
            return E.ExpFn(self.build(args[0], scope))
        if fn == "d":
            inner = self.build(args[0], scope)
            return E.spacetime_derivative(inner, scope.resolve(args[1], E.SPACETIME, self.dim))
        if fn == "x":
            return E.Coord(scope.resolve(args[0], E.SPACETIME, self.dim))
        if fn == "g":
            a, b = (scope.resolve(s, E.SPACETIME, self.dim) for s in args)
            return E.Metric(a, b, self.sig)
        if fn == "eps":
            a, b = (scope.resolve(s, E.INTERNAL, 2) for s in args)
            return E.Epsilon(a, b)
        if fn == "kron":
            resolved = []
            for s in args:
                if s[0] == "name" and s[1] in scope.kinds:
                    k, r = scope.kinds[s[1]]
                    resolved.append(scope.resolve(s, k, r))
                else:
                    resolved.append(scope.resolve(s, None, None))
            return E.Delta(*resolved)
        raise AssertionError(fn)

    def expression(self, node: tuple, pos: int, fixed: dict | None = None,
                   seed: list | None = None) -> Expr:
        scope = _Scope(self.text, fixed)
        for s, k, r in seed or ():
            scope.note(s, k, r)
        self.collect(node, scope)
        self.finish(scope)
        try:
            return E.canonicalize(self.build(node, scope)), scope
        except ModelError:
            raise
        except (E.ExprError, ValueError, TypeError, ZeroDivisionError) as exc:
            raise ValidationError(str(exc), pos, self.text) from None


def _node_pos(node: tuple) -> int:
    return node[-1] if isinstance(node[-1], int) else 0


def _check_lagrangian(lag: Expr, pos: int, text: str) -> None:
    if E.free_indices(lag):
        raise ValidationError("Lagrangian must be a scalar", pos, text)
    for a in E.atoms(lag):
        if isinstance(a, E.ArbFn):
            raise ValidationError("Lagrangian may not contain theta", pos, text)
        if isinstance(a, E.FieldDeriv) and len(a.derivs) > 1:
            raise ValidationError("Lagrangian must be first order in derivatives", pos, text)


def _check_transform(t: Transformation, pos: int, text: str) -> None:
    all_atoms = set()
    for _, d in t.deltas:
        all_atoms |= E.atoms(d)
    has_theta = any(isinstance(a, E.ArbFn) for a in all_atoms)
    has_x = any(isinstance(a, E.Coord) for a in all_atoms)
    has_dphi = any(isinstance(a, E.FieldDeriv) for a in all_atoms)
    bad = None
    if t.kind == "global" and (has_theta or has_x or has_dphi):
        bad = "global transformation may not depend on theta, x or field derivatives"
    elif t.kind == "local":
        if not has_theta:
            bad = "local transformation must involve theta"
        elif has_x or has_dphi:
            bad = "local transformation may not depend on x or field derivatives"
        elif any(isinstance(a, E.ArbFn) and len(a.derivs) > 1 for a in all_atoms):
            bad = "local transformation may use at most first derivatives of theta"
    elif t.kind == "spacetime":
        if not has_x:
            bad = "spacetime transformation must depend on x"
        elif has_theta:
            bad = "spacetime transformation may not involve theta"
        elif any(isinstance(a, E.FieldDeriv) and len(a.derivs) > 1 for a in all_atoms):
            bad = "transformation may use at most first derivatives of fields"
    if bad:
        raise ValidationError(f"wrong transformation kind: {bad}", pos, text)


def parse_model(text: str | bytes, dimension: int | None = None) -> ModelDef:
    """Parse a model file.  ``dimension`` overrides the declared dimension."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("input is not valid UTF-8", exc.start, "", ()) from None
    p = _Parser(text)
    try:
        ast = p.model()
    except RecursionError:
        raise ParseError("expression nested too deeply", p.tok.pos, text, ()) from None
    return _resolve_model(ast, text, dimension)


def _resolve_model(ast: _ModelAst, text: str, dimension: int | None) -> ModelDef:
    dim = dimension if dimension is not None else (ast.dimension or 4)
    if not 1 <= dim <= MAX_DIMENSION:
        raise ValidationError(f"dimension must be between 1 and {MAX_DIMENSION}", 0, text)
    sig = ast.signature or "mostly-minus"
    names: dict = {}
    params = []
    for pname, pos in ast.params:
        if pname in RESERVED:
            raise ValidationError(f"{pname} is a reserved name", pos, text)
        if pname in names:
            raise ValidationError(f"duplicate name {pname}", pos, text)
        names[pname] = pos
        params.append(pname)
    fields: dict = {}
    for fa in ast.fields:
        if fa.name in RESERVED:
            raise ValidationError(f"{fa.name} is a reserved name", fa.pos, text)
        if fa.name in names:
            raise ValidationError(f"duplicate name {fa.name}", fa.pos, text)
        if (fa.dilaton or fa.weight != 1) and (fa.vector or fa.size is not None):
            raise ValidationError("dilaton and weight apply to single scalars only", fa.pos, text)
        names[fa.name] = fa.pos
        fields[fa.name] = FieldDecl(fa.name, fa.size, fa.vector, fa.dilaton, fa.weight)
    if sum(f.dilaton for f in fields.values()) > 1:
        raise ValidationError("at most one field may be a dilaton", 0, text)
    if ast.lagrangian is None:
        raise ValidationError("missing lagrangian", len(text), text)
    res = _Resolver(text, dim, sig, set(params), fields)
    lag, _ = res.expression(ast.lagrangian, ast.lagrangian_pos)
    _check_lagrangian(lag, ast.lagrangian_pos, text)

    transforms = []
    seen = set()
    for ta in ast.transforms:
        variants = [(ta.name, {})]
        if ta.family is not None:
            fam, fpos = ta.family
            variants = [(f"{ta.name}_{v}", {fam: v}) for v in range(dim)]
        for tname, fixed in variants:
            if tname in seen:
                raise ValidationError(f"duplicate transformation {tname}", ta.pos, text)
            seen.add(tname)
            deltas = []
            done = set()
            for fname, slots, node, dpos in ta.deltas:
                if fname not in fields:
                    raise ValidationError(f"undeclared field {fname}", dpos, text)
                if fname in done:
                    raise ValidationError(f"duplicate delta for {fname}", dpos, text)
                done.add(fname)
                f = fields[fname]
                info = res.field_slot_info(f)
                if len(info) != len(slots):
                    raise ValidationError(f"field {fname} takes {len(info)} index(es)", dpos, text)
                if any(s[0] != "name" for s in slots) or len({s[1] for s in slots}) != len(slots):
                    raise ValidationError("delta indices must be distinct names", dpos, text)
                seed = [(s, k, r) for s, (k, r) in zip(slots, info)]
                d, scope = res.expression(node, _node_pos(node), fixed, seed)
                ref = E.Field(fname, tuple(scope.resolve(s, k, r) for s, (k, r) in zip(slots, info)))
                want = frozenset(s for s in ref.idx if isinstance(s, E.Index))
                if d != E.ZERO and E.free_indices(d) != want:
                    raise ValidationError(f"delta for {fname} has the wrong free indices", dpos, text)
                deltas.append((ref, d))
            t = Transformation(tname, ta.kind, tuple(deltas))
            _check_transform(t, ta.pos, text)
            transforms.append(t)
    return ModelDef(ast.name, dim, sig, tuple(params), tuple(fields.values()), lag, tuple(transforms))


# ---------------------------------------------------------------------------
# printing


def _field_line(f: FieldDecl) -> str:
    out = f"field {f.name}"
    if f.size is not None:
        out += f"[{f.size}]"
    out += " vector" if f.vector else " scalar"
    if f.dilaton:
        out += " dilaton"
    if f.weight != 1:
        w = f.weight
        out += f" weight {w.numerator}" + (f"/{w.denominator}" if w.denominator != 1 else "")
    return out


def print_model(m: ModelDef) -> str:
    lines = [f"model {m.name}", f"dimension {m.dimension}", f"signature {m.signature}"]
    if m.params:
        lines.append("param " + " ".join(m.params))
    lines.extend(_field_line(f) for f in m.fields)
    lines.append(f"lagrangian = {E.to_text(m.lagrangian)}")
    for t in m.transformations:
        lines.append(f"transform {t.name} {t.kind} {{")
        for ref, d in t.deltas:
            lines.append(f"  delta {E.to_text(ref)} = {E.to_text(d)}")
        lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# shipped models


SHIPPED = ("mexican_hat", "u1_higgs", "coleman", "broken")


def shipped_path(name: str):
    stem = name[:-4] if name.endswith(".ftl") else name
    return resources.files("fieldsym").joinpath("models", f"{stem}.ftl")


def shipped_text(name: str) -> str:
    return shipped_path(name).read_text(encoding="utf-8")


def load_shipped(name: str, dimension: int | None = None) -> ModelDef:
    return parse_model(shipped_text(name), dimension)
