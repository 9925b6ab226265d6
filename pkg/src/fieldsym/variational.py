"""Euler-Lagrange derivatives, first and second variations, total-derivative test."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from sympy import QQ
from sympy.polys.matrices import DomainMatrix

from . import expr as E
from .dsl import FieldDecl, ModelDef, Transformation
from .expr import Expr


class UnknownField(KeyError):
    pass


ZERO_CLASS = "zero"
TOTAL_DERIVATIVE = "total-derivative"
NONZERO = "nonzero"

# Bound on the number of trial currents tried when exhibiting K.
MAX_CANDIDATES = 600


@dataclass(frozen=True)
class VariationResult:
    classification: str
    per_field: dict = field(default_factory=dict)   # variable text -> Euler-Lagrange expression
    current: Expr | None = None                     # K with free index ``current_index``
    current_index: E.Index | None = None
    residual: Expr = E.ZERO

    @property
    def is_total_derivative(self) -> bool:
        return self.classification in (ZERO_CLASS, TOTAL_DERIVATIVE)


# ---------------------------------------------------------------------------
# helpers


def _used_names(*es: Expr) -> set:
    names = set()
    for e in es:
        for a in E.atoms(e):
            for s in E._slots(a):
                if isinstance(s, E.Index):
                    names.add(s.name)
    return names


def fresh_spacetime(dim: int, avoid: set, stem: str = "nu") -> E.Index:
    k = 1
    while f"{stem}{k}" in avoid:
        k += 1
    avoid.add(f"{stem}{k}")
    return E.spacetime(f"{stem}{k}", dim)


def field_template(decl: FieldDecl, dim: int, avoid: set) -> Expr:
    """``decl`` as an atom with abstract index names not in ``avoid``."""
    names = []
    pools = {E.INTERNAL: "abcdefgh", E.SPACETIME: ["alpha", "beta", "gamma", "kappa", "tau"]}
    for kind in decl.slot_kinds():
        for cand in list(pools[kind]) + [f"{kind[0]}x{n}" for n in range(50)]:
            if cand not in avoid:
                avoid.add(cand)
                names.append(cand)
                break
    return decl.ref(dim, tuple(names))


def _deriv_of(atom: Expr, derivs: tuple) -> Expr:
    if not derivs:
        return atom
    if isinstance(atom, E.ArbFn):
        return E.ArbFn(atom.name, atom.derivs + tuple(derivs))
    return E.FieldDeriv(atom.name, atom.idx, tuple(derivs))


def _max_order(e: Expr, var: Expr) -> int:
    best = -1
    for a in E.atoms(e):
        if isinstance(var, E.ArbFn):
            if isinstance(a, E.ArbFn) and a.name == var.name:
                best = max(best, len(a.derivs))
        elif isinstance(a, (E.Field, E.FieldDeriv)) and a.name == var.name:
            best = max(best, len(a.derivs) if isinstance(a, E.FieldDeriv) else 0)
    return best


def _dim_of(e: Expr, default: int = 4) -> int:
    for a in E.atoms(e):
        for s in E._slots(a):
            if isinstance(s, E.Index) and s.kind == E.SPACETIME:
                return s.range
    return default


def euler_operator(e: Expr, var: Expr, dim: int | None = None) -> Expr:
    """Sum over k of (-D)^k applied to the derivative of ``e`` by the k-th jet of ``var``.

    ``var`` is a Field (abstract or concrete indices) or an undifferentiated ArbFn.
    """
    e = E.canonicalize(e)
    dim = dim or _dim_of(e)
    top = _max_order(e, var)
    if top < 0:
        return E.ZERO
    avoid = _used_names(e, var)
    total = E.ZERO
    for k in range(top + 1):
        ds = tuple(fresh_spacetime(dim, avoid, "_j") for _ in range(k))
        part = E.diff_field(e, _deriv_of(var, ds))
        for d in ds:
            part = E.spacetime_derivative(part, d)
        total = total + (part if k % 2 == 0 else -part)
    return E.canonicalize(total)


def _decl(m: ModelDef, name: str) -> FieldDecl:
    try:
        return m.field(name)
    except KeyError:
        raise UnknownField(name) from None


def euler_lagrange(m: ModelDef, field_name: str, index_names: tuple = ()) -> Expr:
    """dL/dPhi - d_mu dL/d(d_mu Phi) for one declared field.

    The free indices of the result are the field's own indices, named by
    ``index_names`` when given.
    """
    decl = _decl(m, field_name)
    if index_names:
        var = decl.ref(m.dimension, tuple(index_names))
    else:
        var = field_template(decl, m.dimension, _used_names(m.lagrangian))
    return euler_operator(m.lagrangian, var, m.dimension)


# ---------------------------------------------------------------------------
# first variation


def _delta_pairs(m: ModelDef, t: Transformation) -> list:
    out = []
    for ref, d in t.deltas:
        if d != E.ZERO:
            out.append((ref, d))
    return out


def first_variation(m: ModelDef, t: Transformation) -> Expr:
    """delta L = dL/dPhi Delta + dL/d(d_mu Phi) d_mu Delta, summed over fields."""
    L = m.lagrangian
    total = E.ZERO
    for ref, d in _delta_pairs(m, t):
        avoid = _used_names(L, ref, d)
        mu = fresh_spacetime(m.dimension, avoid, "_v")
        total = total + E.diff_field(L, ref) * d
        dd = E.spacetime_derivative(d, mu)
        if dd != E.ZERO:
            total = total + E.diff_field(L, _deriv_of(ref, (mu,))) * dd
    return E.canonicalize(total)


def variation_of(L: Expr, deltas: list, dim: int) -> Expr:
    """First variation of a bare Lagrangian under ``[(field atom, Delta), ...]``."""
    total = E.ZERO
    for ref, d in deltas:
        avoid = _used_names(L, ref, d)
        mu = fresh_spacetime(dim, avoid, "_v")
        total = total + E.diff_field(L, ref) * d
        total = total + E.diff_field(L, _deriv_of(ref, (mu,))) * E.spacetime_derivative(d, mu)
    return E.canonicalize(total)


# ---------------------------------------------------------------------------
# second variation contracted with Delta


def second_variation_apply(m: ModelDef, t: Transformation) -> dict:
    """For each field a, the operator of the second variation applied to Delta.

    Returns ``{field name: (template atom, expression)}``; the expression has
    the template's free indices.
    """
    L = m.lagrangian
    pairs = _delta_pairs(m, t)
    avoid = _used_names(L, *(r for r, _ in pairs), *(d for _, d in pairs))
    out = {}
    for decl in m.fields:
        var = field_template(decl, m.dimension, set(avoid))
        local = set(avoid) | _used_names(var)
        alpha = fresh_spacetime(m.dimension, local, "_a")
        dL_dvar = E.diff_field(L, var)
        dL_ddvar = E.diff_field(L, _deriv_of(var, (alpha,)))
        total = E.ZERO
        for ref, d in pairs:
            mu = fresh_spacetime(m.dimension, local, "_m")
            dd = E.spacetime_derivative(d, mu)
            dref = _deriv_of(ref, (mu,))
            # the four terms of the Hessian operator contracted with Delta
            t1 = E.diff_field(dL_ddvar, dref) * dd
            t2 = E.diff_field(dL_ddvar, ref) * d
            t3 = E.diff_field(dL_dvar, dref) * dd
            t4 = E.diff_field(dL_dvar, ref) * d
            total = total - E.spacetime_derivative(E.canonicalize(t1 + t2), alpha) + t3 + t4
        out[decl.name] = (var, E.canonicalize(total))
    return out


# ---------------------------------------------------------------------------
# total derivatives


def _variables(e: Expr) -> list:
    """Field and ArbFn variables of ``e`` as templates for the Euler operator."""
    slot_info: dict = {}
    concrete: dict = {}
    arb = set()
    for a in E.atoms(e):
        if isinstance(a, E.ArbFn):
            arb.add(a.name)
        elif isinstance(a, (E.Field, E.FieldDeriv)):
            info = slot_info.setdefault(a.name, [None] * len(a.idx))
            for k, s in enumerate(a.idx):
                if isinstance(s, E.Index):
                    info[k] = (s.kind, s.range)
            concrete.setdefault(a.name, set()).add(a.idx)
    out = []
    for name in sorted(slot_info):
        info = slot_info[name]
        if all(i is not None for i in info):
            idx = tuple(E.Index(k, f"_w{n}", r) for n, (k, r) in enumerate(info))
            out.append(E.Field(name, idx))
            continue
        # some slot is only ever concrete: treat each observed component separately
        seen = set()
        for idx in concrete[name]:
            key = tuple(s if info[n] is None else None for n, s in enumerate(idx))
            if key in seen:
                continue
            seen.add(key)
            slots = tuple(s if info[n] is None else E.Index(info[n][0], f"_w{n}", info[n][1])
                          for n, s in enumerate(idx))
            out.append(E.Field(name, slots))
    out.extend(E.ArbFn(n) for n in sorted(arb))
    return out


def _term_expr(c: Fraction, ix: tuple, pw: tuple) -> Expr:
    return E.Prod((E.Num(c), *E._term_factors(ix, pw)))


def _peel(term: tuple, nu: E.Index) -> list:
    """Trial currents obtained by undoing one derivative of a monomial."""
    c, ix, pw = term
    out = []
    counts = E._index_counts(ix)
    for k, a in enumerate(ix):
        if not isinstance(a, (E.FieldDeriv, E.ArbFn)):
            continue
        for d in dict.fromkeys(a.derivs):
            rest = list(a.derivs)
            rest.remove(d)
            if isinstance(a, E.ArbFn):
                stripped = E.ArbFn(a.name, tuple(rest))
            elif rest:
                stripped = E.FieldDeriv(a.name, a.idx, tuple(rest))
            else:
                stripped = E.Field(a.name, a.idx)
            others = list(ix[:k]) + [stripped] + list(ix[k + 1:])
            if isinstance(d, E.Index):
                if counts.get(d) != 2:
                    continue
                others = [E._relabel(o, {d: nu}) for o in others]
                facs = others
            else:
                facs = others + [E.Delta(nu, d)]
            out.append(E.Prod((E.Num(c), *facs, *(x if n == 1 else E.Pow(x, n) for x, n in pw))))
            # x-stripping: x^d d_d(...) -> x^nu (...)
            if isinstance(d, E.Index):
                for j, b in enumerate(ix):
                    if j != k and isinstance(b, E.Coord) and b.index == d:
                        kept = [o for n, o in enumerate(list(ix[:k]) + [stripped] + list(ix[k + 1:]))
                                if n != j]
                        out.append(E.Prod((E.Num(c), E.Coord(nu), *kept,
                                           *(x if n == 1 else E.Pow(x, n) for x, n in pw))))
    for j, (a, n) in enumerate(pw):
        if isinstance(a, (E.FieldDeriv, E.ArbFn)) and a.derivs:
            d = a.derivs[-1]
            rest = a.derivs[:-1]
            if isinstance(a, E.ArbFn):
                stripped = E.ArbFn(a.name, rest)
            elif rest:
                stripped = E.FieldDeriv(a.name, a.idx, rest)
            else:
                stripped = E.Field(a.name, a.idx)
            others = [x if m == 1 else E.Pow(x, m) for i, (x, m) in enumerate(pw) if i != j]
            if n > 1:
                others.append(E.Pow(a, n - 1))
            out.append(E.Prod((E.Num(Fraction(c, n)), *ix, stripped, E.Delta(nu, d), *others)))
    has_deriv = any(isinstance(a, (E.FieldDeriv, E.ArbFn)) and getattr(a, "derivs", ())
                    for a in list(ix) + [x for x, _ in pw])
    if not has_deriv:
        out.append(E.Prod((E.Num(c), E.Coord(nu), *E._term_factors(ix, pw))))
    return out


def _monomials(e: Expr) -> dict:
    return {(ix, pw): c for c, ix, pw in E.terms_of(e)}


def _solve_current(e: Expr, dim: int) -> tuple:
    """Find K with d_nu K^nu == e by a linear ansatz; returns (K, nu) or (None, nu)."""
    nu = E.spacetime("_k", dim)
    target = _monomials(e)
    cands: list = []
    keys: set = set()
    divs: list = []
    frontier = E.terms_of(e)
    for _depth in range(4):
        new = []
        for term in frontier:
            for k in _peel(term, nu):
                k = E.canonicalize(k)
                if k == E.ZERO:
                    continue
                # normalize the overall coefficient so duplicates collapse
                ts = E.terms_of(k)
                lead = ts[0][0]
                k = E.canonicalize(k * E.Num(1 / lead))
                if k in keys:
                    continue
                keys.add(k)
                new.append(k)
        if not new:
            break
        for k in new:
            cands.append(k)
            divs.append(_monomials(E.spacetime_derivative(k, nu)))
            if len(cands) >= MAX_CANDIDATES:
                break
        sol = _least_solution(divs, target)
        if sol is not None:
            K = E.canonicalize(E.Sum(tuple(E.Num(s) * k for s, k in zip(sol, cands) if s != 0)))
            return K, nu
        if len(cands) >= MAX_CANDIDATES:
            break
        frontier = [t for k in new for t in E.terms_of(E.spacetime_derivative(k, nu))]
    return None, nu


def _least_solution(divs: list, target: dict):
    rows = sorted(set().union(target, *divs), key=repr)
    if not rows:
        return [Fraction(0)] * len(divs)
    pos = {r: i for i, r in enumerate(rows)}
    n = len(divs)
    mat = [[QQ(0)] * (n + 1) for _ in rows]
    for j, d in enumerate(divs):
        for key, c in d.items():
            mat[pos[key]][j] = QQ(c.numerator, c.denominator)
    for key, c in target.items():
        mat[pos[key]][n] = QQ(c.numerator, c.denominator)
    rref, pivots = DomainMatrix(mat, (len(rows), n + 1), QQ).rref()
    if n in pivots:
        return None
    sol = [Fraction(0)] * n
    dense = rref.to_Matrix()
    for r, p in enumerate(pivots):
        v = dense[r, n]
        sol[p] = Fraction(int(v.p), int(v.q))
    return sol


def is_total_derivative(e: Expr, dim: int | None = None) -> VariationResult:
    """Decide whether scalar ``e`` is a divergence by its Euler-Lagrange derivatives."""
    e = E.canonicalize(e)
    dim = dim or _dim_of(e)
    if e == E.ZERO:
        return VariationResult(ZERO_CLASS, {}, E.ZERO, E.spacetime("_k", dim), E.ZERO)
    per = {}
    for var in _variables(e):
        per[E.to_text(var)] = euler_operator(e, var, dim)
    if not all(E.is_zero(x) for x in per.values()):
        return VariationResult(NONZERO, per, None, None, e)
    K, nu = _solve_current(e, dim)
    return VariationResult(TOTAL_DERIVATIVE, per, K, nu, e)


def divergence_matches(K: Expr, nu: E.Index, e: Expr) -> bool:
    return E.is_zero(E.spacetime_derivative(K, nu) - e)
