"""Dilation and special conformal transformations with a dilaton; vacuum analysis."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expr as E
from .constraints import ConstraintSet
from .dsl import ModelDef, Transformation
from .expr import Expr
from .goldstone import (MissingDilaton, VacuumConfig, XDecomposition, delta_profile,
                        extra_constraints, generalized_residual, goldstone_count,
                        proportional_parts, span_rank, ZERO_REL_TOL)
from .symmetry import verify_global


class UnknownParameter(KeyError):
    pass


@dataclass(frozen=True)
class ConformalScenario:
    model: ModelDef
    dilaton: str
    scalars: tuple          # ordinary single scalars, in declaration order
    scale: str              # name of the parameter f
    transformations: tuple  # dilation, conformal_0 .. conformal_{D-1}

    @property
    def dilation(self) -> Transformation:
        return self.transformations[0]

    @property
    def conformal(self) -> tuple:
        return self.transformations[1:]


def _orbital(m: ModelDef, lam: int, target: Expr) -> Expr:
    D = m.dimension
    r, s, t = (E.spacetime(n, D) for n in ("_r", "_s", "_t"))
    x2 = E.Metric(s, t, m.signature) * E.Coord(s) * E.Coord(t)
    return (2 * E.Coord(lam) * E.Coord(r) - E.Metric(lam, r, m.signature) * x2) * \
        E.spacetime_derivative(target, r)


def build_scenario(m: ModelDef, dilaton: str | None = None, scale: str = "f") -> ConformalScenario:
    """Synthesize the dilation and the D special conformal transformations.

    Ordinary scalars get weight ``w`` from their declaration (default 1); the
    dilaton shifts by 1/f.
    """
    if dilaton is None:
        flagged = [f for f in m.fields if f.dilaton]
        if not flagged:
            raise MissingDilaton(f"{m.name} declares no dilaton")
        dilaton = flagged[0].name
    try:
        dil = m.field(dilaton)
    except KeyError:
        raise MissingDilaton(f"no field named {dilaton}") from None
    if dil.vector or dil.size is not None:
        raise MissingDilaton("the dilaton must be a single scalar")
    if scale not in m.params:
        raise UnknownParameter(scale)
    scalars = tuple(f for f in m.fields if f.name != dilaton and not f.vector and f.size is None)
    if len(scalars) + 1 != len(m.fields):
        raise MissingDilaton("only single scalars and the dilaton are supported")
    D = m.dimension
    a = E.spacetime("_a", D)
    inv_f = E.Pow(E.Param(scale), -1)

    def dilation_delta(f) -> Expr:
        x_d = E.Coord(a) * E.FieldDeriv(f.name, (), (a,))
        return x_d + (inv_f if f.name == dilaton else E.Num(f.weight) * E.Field(f.name))

    members = [Transformation("dilation", "spacetime", tuple(
        (E.Field(f.name), E.canonicalize(dilation_delta(f))) for f in (*scalars, dil)))]
    for lam in range(D):
        deltas = []
        for f in (*scalars, dil):
            fld = E.Field(f.name)
            shift = 2 * E.Coord(lam) * (inv_f if f.name == dilaton else E.Num(f.weight) * fld)
            deltas.append((fld, E.canonicalize(_orbital(m, lam, fld) + shift)))
        members.append(Transformation(f"conformal_{lam}", "spacetime", tuple(deltas)))
    return ConformalScenario(m, dilaton, tuple(f.name for f in scalars), scale, tuple(members))


# ---------------------------------------------------------------------------
# solving the dilation constraint


POSITIVE_NOTE = "parameters are taken to be positive"


@dataclass(frozen=True)
class Solution:
    status: str            # solved | unconstrained | no-solution | unsolved
    assignments: dict      # field name -> 0 for each field forced to vanish
    residual: dict         # field name -> expression left unsolved

    def text(self) -> str:
        if self.status == "solved":
            return ", ".join(f"{k} = {v}" for k, v in sorted(self.assignments.items()))
        return self.status


def _positive_definite(ix: tuple, pw: tuple, sign: int, c: Fraction) -> bool:
    if (c > 0) != (sign > 0):
        return False
    if ix:
        return False
    for a, n in pw:
        if isinstance(a, E.Param) or isinstance(a, E.ExpFn):
            continue
        if isinstance(a, E.Field) and n % 2 == 0:
            continue
        return False
    return True


def _strip(e: Expr, unknown: str) -> tuple:
    """Return (power of the unknown factored out, remainder is positive definite?)."""
    terms = E.terms_of(e)
    if not terms:
        return None, True
    u = E.Field(unknown)
    k = min(dict(pw).get(u, 0) for _, _, pw in terms)
    sign = 1 if terms[0][0] > 0 else -1
    for c, ix, pw in terms:
        pw2 = tuple((a, n - k) if a == u else (a, n) for a, n in pw)
        pw2 = tuple(p for p in pw2 if p[1] != 0)
        if not _positive_definite(ix, pw2, sign, c):
            return k, False
    return k, True


def solve_dilation(scn: ConformalScenario, part: dict) -> Solution:
    """Solve {part[f] = 0} for the ordinary scalars, everything else free.

    Handles the shape needed here: each component is a power of one scalar
    times a sign-definite remainder.
    """
    if all(E.is_zero(e) for e in part.values()):
        return Solution("unconstrained", {}, {})
    forced: dict = {}
    left: dict = {}
    for name, e in part.items():
        if E.is_zero(e):
            continue
        done = False
        for u in scn.scalars:
            k, definite = _strip(e, u)
            if definite and k is not None and k > 0:
                forced[u] = 0
                done = True
                break
            if definite and k == 0:
                return Solution("no-solution", {}, {name: e})
        if not done:
            left[name] = e
    if left:
        # components that vanish once the forced scalars are zero are fine
        binds = {E.Field(u): E.ZERO for u in forced}
        still = {n: e for n, e in left.items() if not E.is_zero(E.substitute(e, binds))}
        if still:
            return Solution("unsolved", forced, still)
    return Solution("solved", forced, {})


# ---------------------------------------------------------------------------
# analysis


@dataclass
class ConformalReport:
    scenario: ConformalScenario
    residuals: dict                 # transformation name -> XDecomposition
    degeneracy: dict                # conformal name -> positive ratio to the dilation part, or None
    stray_parts: dict               # conformal name -> keys other than () and (lam,) that are nonzero
    constant_parts_zero: dict       # conformal name -> bool
    solution: Solution
    extra: ConstraintSet
    notes: list = field(default_factory=list)
    dilation_value: np.ndarray | None = None
    goldstone: object = None

    @property
    def degenerate(self) -> bool:
        return all(r is not None for r in self.degeneracy.values())


def analyze(scn: ConformalScenario, v: VacuumConfig | None = None, override: bool = False) -> ConformalReport:
    m = scn.model
    res = {t.name: generalized_residual(m, t) for t in scn.transformations}
    dil = res["dilation"].part(())
    deg, stray, cz = {}, {}, {}
    for lam, t in enumerate(scn.conformal):
        xd: XDecomposition = res[t.name]
        deg[t.name] = proportional_parts(xd.part((lam,)), dil)
        stray[t.name] = [k for k, per in xd.parts.items()
                         if k not in ((), (lam,)) and not all(E.is_zero(e) for e in per.values())]
        cz[t.name] = all(E.is_zero(e) for e in xd.part(()).values())
    sol = solve_dilation(scn, dil)
    extra = extra_constraints(m) if scn.scalars else ConstraintSet(())
    rep = ConformalReport(scn, res, deg, stray, cz, sol, extra,
                          notes=[POSITIVE_NOTE, "residual parts are defined up to positive rational factors"])
    if v is not None:
        vals = res["dilation"].evaluate(m, v)
        rep.dilation_value = vals.get((), np.zeros(len(m.components())))
        verdicts = {t.name: verify_global(m, t) for t in scn.transformations}
        rep.goldstone = goldstone_count(m, v, list(scn.transformations), override=override,
                                        verdicts=verdicts)
    return rep


def goldstone_multiplicity(scn: ConformalScenario, v: VacuumConfig,
                           rel_tol: float = ZERO_REL_TOL) -> tuple:
    """(broken members, Goldstone directions, extra constraint count)."""
    m = scn.model
    broken = 0
    dirs = []
    for t in scn.transformations:
        prof = delta_profile(m, t, v.complete(m))
        nz = [vec for vec in prof.values() if np.max(np.abs(vec), initial=0.0) > rel_tol]
        if nz:
            broken += 1
            dirs.extend(nz)
    rank, _ = span_rank(dirs, rel_tol)
    extra = len(extra_constraints(m)) if scn.scalars else 0
    return broken, rank, extra
