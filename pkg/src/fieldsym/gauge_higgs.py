"""Abelian Higgs pipeline: local-symmetry constraints, gauge mass, polar rewrite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expr as E
from .constraints import (IDENTICALLY_ZERO, ON_SHELL, VIOLATED, Constraint, ConstraintSet,
                          positive_ratio)
from .dsl import GAUGE_FN, GLOBAL_PARAM, FieldDecl, ModelDef, Transformation
from .expr import Expr
from .goldstone import VacuumConfig
from .symmetry import ThetaOrderExceeded, theta_coefficients
from .variational import euler_lagrange, second_variation_apply


class ShapeMismatch(ValueError):
    pass


class NotProportional(ValueError):
    pass


# ---------------------------------------------------------------------------
# model shape


@dataclass(frozen=True)
class GaugeShape:
    scalar: FieldDecl
    vector: FieldDecl | None
    transformation: Transformation
    direction: Expr        # Delta_phi with theta set to one; free index = scalar ref index
    scalar_ref: Expr
    kinetic: Fraction      # coefficient of g d(phi_i) d(phi_i) in L


def _kinetic_coefficient(m: ModelDef, phi: str) -> Fraction:
    for c, ix, pw in E.terms_of(m.lagrangian):
        if pw or len(ix) != 3:
            continue
        kinds = sorted(type(a).__name__ for a in ix)
        if kinds != ["FieldDeriv", "FieldDeriv", "Metric"]:
            continue
        ds = [a for a in ix if isinstance(a, E.FieldDeriv)]
        if all(d.name == phi for d in ds) and ds[0].idx == ds[1].idx:
            return c
    return Fraction(0)


def gauge_shape(m: ModelDef, t: Transformation | None = None) -> GaugeShape:
    doublets = [f for f in m.fields if f.size == 2 and not f.vector]
    vectors = [f for f in m.fields if f.vector and f.size is None]
    if len(doublets) != 1 or len(vectors) > 1 or len(m.fields) != len(doublets) + len(vectors):
        raise ShapeMismatch("need one scalar doublet and at most one vector field")
    phi = doublets[0]
    if t is None:
        cands = [x for x in m.transformations if x.kind == "local"] or \
                [x for x in m.transformations if x.kind == "global"]
        if not cands:
            raise ShapeMismatch("no local or global transformation to work with")
        t = cands[0]
    pair = t.delta_for(phi.name)
    if pair is None:
        raise ShapeMismatch(f"{t.name} does not act on {phi.name}")
    ref, d = pair

    def unit(a: Expr) -> Expr:
        if isinstance(a, E.ArbFn):
            return E.ZERO if a.derivs else E.ONE
        if a == E.Param(GLOBAL_PARAM):
            return E.ONE
        return a

    direction = E.canonicalize(E.map_atoms(d, unit))
    if any(isinstance(a, (E.FieldDeriv, E.Coord)) for a in E.atoms(direction)):
        raise ShapeMismatch("scalar variation must be algebraic in the scalar")
    if vectors:
        apair = t.delta_for(vectors[0].name)
        if t.kind == "local" and apair is None:
            raise ShapeMismatch("local transformation must act on the vector field")
    return GaugeShape(phi, vectors[0] if vectors else None, t, direction, ref,
                      _kinetic_coefficient(m, phi.name))


# ---------------------------------------------------------------------------
# derivative helpers with fixed index names


class _Kit:
    def __init__(self, m: ModelDef, sh: GaugeShape):
        self.m = m
        self.sh = sh
        self.dim = m.dimension
        self.phi = sh.scalar.name
        self.A = sh.vector.name if sh.vector else None
        self.L = m.lagrangian

    def s(self, name: str) -> E.Index:
        return E.spacetime(name, self.dim)

    def i(self, name: str) -> E.Index:
        return E.internal(name, 2)

    def fphi(self, i: str) -> Expr:
        return E.Field(self.phi, (self.i(i),))

    def dphi(self, i: str, b: str) -> Expr:
        return E.FieldDeriv(self.phi, (self.i(i),), (self.s(b),))

    def fA(self, a: str) -> Expr:
        return E.Field(self.A, (self.s(a),))

    def q(self, i: str) -> Expr:
        """Gauge direction Q_i (eps_ij phi_j for the shipped model)."""
        ref = self.sh.scalar_ref
        return E.rename_indices(self.sh.direction, {ref.idx[0]: self.i(i)})

    def d(self, e: Expr, target: Expr) -> Expr:
        return E.diff_field(e, target)

    def D(self, e: Expr, mu: str) -> Expr:
        return E.spacetime_derivative(e, self.s(mu))

    def g(self, a: str, b: str) -> Expr:
        return E.Metric(self.s(a), self.s(b), self.m.signature)


def _drop_scalar_derivs(e: Expr, phi: str) -> Expr:
    return E.canonicalize(E.map_atoms(
        e, lambda a: E.ZERO if isinstance(a, E.FieldDeriv) and a.name == phi else a))


def _ratio(a: Expr, b: Expr) -> Fraction | None:
    """Nonzero rational r with a == r*b (either sign)."""
    r = positive_ratio(a, b)
    if r is not None:
        return r
    r = positive_ratio(a, E.canonicalize(-b))
    return -r if r is not None else None


def _classify(label: str, e: Expr, shell: list, note: str = "") -> Constraint:
    e = E.canonicalize(e)
    if E.is_zero(e):
        return Constraint(label, e, IDENTICALLY_ZERO, note)
    free = E.free_indices(e)
    for name, q in shell:
        if E.is_zero(q) or E.free_indices(q) != free:
            continue
        r = _ratio(e, q)
        if r is not None:
            extra = f"equals {r} times {name}"
            return Constraint(label, e, ON_SHELL, f"{note}; {extra}" if note else extra)
    return Constraint(label, e, VIOLATED, note)


def _fin_exprs(k: _Kit, two: Fraction = Fraction(2)) -> dict:
    """The five constraint expressions with their inhomogeneous coefficients scaled by ``two``/2."""
    L = k.L
    out = {}
    if k.A is None:
        raise ShapeMismatch("constraints need a gauge field")
    dA_a = k.d(L, k.fA("alpha"))
    dAphi = k.d(dA_a, k.dphi("j", "beta"))          # d2L / dA_alpha d(d_beta phi_j)
    out["fin1"] = k.d(dA_a, k.fA("beta")) + dAphi * k.q("j")
    out["fin2"] = k.d(dA_a, k.fphi("j")) * k.q("j") + dAphi * k.D(k.q("j"), "beta")
    dphi_nu = k.d(L, k.dphi("i", "nu"))
    out["fin3"] = k.d(dphi_nu, k.fA("beta")) + two * k.g("nu", "beta") * k.q("i")
    dL_phi = k.d(L, k.fphi("i"))
    dL_dphib = k.d(L, k.dphi("i", "beta"))
    anti = k.d(dL_phi, k.dphi("j", "beta")) - k.d(dL_dphib, k.fphi("j"))
    out["fin4"] = (k.d(dL_phi, k.fA("beta"))
                   - k.D(k.d(dphi_nu, k.fA("beta")), "nu")
                   - 2 * two * k.g("beta", "rho") * k.D(k.q("i"), "rho")
                   + anti * k.q("j"))
    hess = k.d(dL_phi, k.fphi("j")) - k.D(k.d(dphi_nu, k.fphi("j")), "nu")
    out["fin5"] = (-two * k.g("mu", "nu") * k.D(k.D(k.q("i"), "mu"), "nu")
                   + anti * k.D(k.q("j"), "beta")
                   + hess * k.q("j"))
    return {lab: E.canonicalize(e) for lab, e in out.items()}


@dataclass
class GaugeConstraints:
    constraints: ConstraintSet
    theta_route: ConstraintSet
    agreement: dict                  # fin label -> theta-route label it is checked against
    kinetic: Fraction
    charge_note: str
    warnings: list = field(default_factory=list)
    rescaled: ConstraintSet | None = None


_ROUTE_OF = {"fin1a": "A:dd", "fin2a": "A:d", "fin3a": "phi:dd", "fin4a": "phi:d", "fin5a": "phi:0"}


def _shell_candidates(k: _Kit, reduce: bool) -> list:
    el = euler_lagrange(k.m, k.phi, ("k",))
    cands = [("eps(i,k)*EL[k]", E.Epsilon(k.i("i"), k.i("k")) * el),
             ("EL[i]", E.rename_indices(el, {k.i("k"): k.i("i")}))]
    out = []
    for name, q in cands:
        q = E.canonicalize(q)
        out.append((name, _drop_scalar_derivs(q, k.phi) if reduce else q))
    return out


def theta_route(m: ModelDef, sh: GaugeShape) -> ConstraintSet:
    """Coefficients of theta, d theta, dd theta in the second-variation identity per field row.

    Each row is reduced to constant scalar fields, as the a-labelled constraints are.
    """
    sv = second_variation_apply(m, sh.transformation)
    k = _Kit(m, sh)
    shell = _shell_candidates(k, reduce=True)
    items = []
    for fname, (tmpl, e) in sv.items():
        e = _drop_scalar_derivs(e, sh.scalar.name)
        for a in E.atoms(e):
            if isinstance(a, E.ArbFn) and len(a.derivs) > 3:
                raise ThetaOrderExceeded(f"theta derivative of order {len(a.derivs)}")
        third = E.diff_field(e, E.ArbFn(GAUGE_FN, tuple(E.spacetime(n, m.dimension) for n in ("k1", "k2", "k3"))))
        if not E.is_zero(third):
            raise ThetaOrderExceeded("third derivatives of theta survive")
        coeffs = theta_coefficients(e, m.dimension)
        row = "A" if sh.vector and fname == sh.vector.name else "phi"
        rename = {}
        if row == "phi":
            rename = {tmpl.idx[0]: E.internal("i", 2)}
        for key, lab in (("theta", "0"), ("d(theta,beta)", "d"), ("d(d(theta,mu),beta)", "dd")):
            c = E.rename_indices(coeffs[key], rename) if rename else coeffs[key]
            items.append(_classify(f"{row}:{lab}", c, shell if row == "phi" else []))
    return ConstraintSet(tuple(items))


def _charge_note(sh: GaugeShape, k: _Kit) -> str:
    eps_phi = E.Epsilon(k.i("i"), k.i("j")) * k.fphi("j")
    r = _ratio(k.q("i"), eps_phi)
    if r is None:
        return "scalar variation is not proportional to eps(i,j)*phi[j]"
    if r != 1:
        return f"charge {r}; the constraint forms assume unit charge"
    return "unit charge"


def derive_constraints(m: ModelDef, t: Transformation | None = None) -> GaugeConstraints:
    sh = gauge_shape(m, t)
    if sh.vector is None or sh.transformation.kind != "local":
        raise ShapeMismatch("constraints need a gauge field and a local transformation")
    k = _Kit(m, sh)
    full = _fin_exprs(k)
    shell = _shell_candidates(k, reduce=False)
    shell_a = _shell_candidates(k, reduce=True)
    items = []
    for n in range(1, 6):
        items.append(_classify(f"fin{n}", full[f"fin{n}"], shell))
    for n in range(1, 6):
        red = _drop_scalar_derivs(full[f"fin{n}"], k.phi)
        items.append(_classify(f"fin{n}a", red, shell_a, "scalar constant, gauge field unspecified"))
    route = theta_route(m, sh)
    warnings = []
    rescaled = None
    if sh.kinetic != 1:
        warnings.append(f"scalar kinetic term has coefficient {sh.kinetic}; the literal constraint "
                        "coefficients assume coefficient 1, see the rescaled set")
        sc = _fin_exprs(k, two=2 * sh.kinetic)
        rescaled = ConstraintSet(tuple(
            _classify(f"fin{n}a", _drop_scalar_derivs(sc[f"fin{n}"], k.phi), shell_a)
            for n in range(1, 6)))
    return GaugeConstraints(ConstraintSet(tuple(items)), route, dict(_ROUTE_OF), sh.kinetic,
                            _charge_note(sh, k), warnings, rescaled)


def residual_identities(m: ModelDef, v: VacuumConfig | None = None) -> ConstraintSet:
    """fin4a and fin5a contracted with the gauge direction; optionally at a configuration."""
    sh = gauge_shape(m)
    k = _Kit(m, sh)
    full = _fin_exprs(k)
    shell = _shell_candidates(k, reduce=True)
    out = []
    for lab in ("fin4", "fin5"):
        red = _drop_scalar_derivs(full[lab], k.phi)
        e = E.canonicalize(red * k.q("i"))
        note = "contracted with the gauge direction"
        shell_q = [(n, E.canonicalize(q * k.q("i"))) for n, q in shell]
        if v is not None:
            e = at_configuration(e, m, v)
            note += " at the configuration"
            shell_q = [(n, at_configuration(q, m, v)) for n, q in shell_q]
        out.append(_classify(f"{lab}a.Q", e, shell_q, note))
    return ConstraintSet(tuple(out))


def at_configuration(e: Expr, m: ModelDef, v: VacuumConfig) -> Expr:
    """Substitute constant scalar values exactly; gauge field and params stay symbolic."""
    e = E.expand_indices(e, kinds=[E.INTERNAL])
    binds = {}
    for atom, val in v.values.items():
        decl = m.field(atom.name)
        if decl.vector:
            continue
        binds[atom] = E.Num(Fraction(val))
    e = E.substitute(e, binds)
    pat = {}
    for f in m.fields:
        if not f.vector:
            for c in f.components(m.dimension):
                pat[E.FieldDeriv(c.name, c.idx, (E.spacetime("_d", m.dimension),))] = E.ZERO
    return E.substitute(e, pat)


# ---------------------------------------------------------------------------
# gauge boson mass


@dataclass
class GaugeMassReport:
    tensor: np.ndarray          # M2[alpha][beta] at the configuration
    mass_squared: float
    mass: float
    symbolic_direct: Expr
    symbolic_via_constraints: Expr
    routes_agree: bool
    note: str = ""


def gauge_mass(m: ModelDef, v: VacuumConfig, tol: float = 1e-12) -> GaugeMassReport:
    sh = gauge_shape(m)
    if sh.vector is None:
        raise ShapeMismatch("no gauge field")
    k = _Kit(m, sh)
    direct = E.canonicalize(k.d(k.d(m.lagrangian, k.fA("alpha")), k.fA("beta")))
    # fin3a gives d2L/dA_beta d(d_nu phi_i) = -2 g(nu,beta) Q_i; fin1a then fixes d2L/dA dA
    mixed = -2 * k.g("beta", "alpha") * k.q("j")
    via = E.canonicalize(-(mixed * k.q("j")))
    both = E.is_zero(_drop_scalar_derivs(direct, k.phi) - via)
    vals = {a: x for a, x in v.values.items() if not m.field(a.name).vector}
    vv = VacuumConfig(vals, v.params)
    for c in m.components():
        if c.name == sh.vector.name:
            vv.values.setdefault(c, 0.0)
    assign = vv.assignment()
    for mu in range(m.dimension):
        for c in m.components():
            assign.setdefault(E.FieldDeriv(c.name, c.idx, (mu,)), 0.0)
    a, b = k.s("alpha"), k.s("beta")
    D = m.dimension
    M = np.array([[E.eval_numeric(direct, assign, {a: x, b: y}) for y in range(D)] for x in range(D)])
    sign = np.array([E.eval_numeric(E.Metric(a, b, m.signature), {}, {a: x, b: x}) for x in range(D)])
    m2 = float(M[0, 0] * sign[0])
    expect = m2 * np.diag(sign)
    if np.max(np.abs(M - expect)) > tol * max(1.0, abs(m2)):
        raise NotProportional("mass tensor is not a multiple of the metric")
    note = ""
    if m2 < 0:
        note = "negative mass squared"
    return GaugeMassReport(M, m2, math.sqrt(m2) if m2 >= 0 else float("nan"), direct, via, both, note)


# ---------------------------------------------------------------------------
# polar rewrite


@dataclass(frozen=True, repr=False)
class Cos(E.UnaryFn):
    fname = "cos"

    def derivative(self) -> Expr:
        return -Sin(self.arg)

    def evaluate(self, x: float) -> float:
        return math.cos(x)


@dataclass(frozen=True, repr=False)
class Sin(E.UnaryFn):
    fname = "sin"

    def derivative(self) -> Expr:
        return Cos(self.arg)

    def evaluate(self, x: float) -> float:
        return math.sin(x)


def reduce_trig(e: Expr) -> Expr:
    """Rewrite sin^n as sin^(n-2) (1 - cos^2) until sin appears at most linearly."""
    while True:
        e = E.canonicalize(e)
        out = []
        changed = False
        for c, ix, pw in E.terms_of(e):
            facs = []
            for a, n in pw:
                if isinstance(a, Sin) and n >= 2:
                    changed = True
                    facs.append(E.Pow(a, n - 2) * (1 - E.Pow(Cos(a.arg), 2)))
                else:
                    facs.append(a if n == 1 else E.Pow(a, n))
            out.append(E.Prod((E.Num(c), *ix, *facs)))
        if not changed:
            return e
        e = E.Sum(tuple(out)) if out else E.ZERO


@dataclass
class PolarReport:
    lagrangian: Expr
    shift_sign: Fraction            # delta xi = s*theta
    shift: str
    xi_free: bool                   # dL/dxi == 0
    dxi_free: bool                  # dL/d(d xi) == 0
    theta_invariant: bool
    rho_kinetic: Expr
    vector_mass: Expr | None
    residual_xi: Expr
    residual_dxi: Expr

    @property
    def goldstone_eliminated(self) -> bool:
        return self.xi_free and self.dxi_free


RHO, XI, BNAME = "rho", "xi", "B"


def polar_map(m: ModelDef, sh: GaugeShape, s: Fraction) -> dict:
    D = m.dimension
    mu, nu = E.spacetime("_p", D), E.spacetime("_q", D)
    rho, xi = E.Field(RHO), E.Field(XI)
    drho, dxi = E.FieldDeriv(RHO, (), (mu,)), E.FieldDeriv(XI, (), (mu,))
    c, sn = Cos(xi), Sin(xi)
    p = sh.scalar.name
    binds = {
        E.Field(p, (1,)): rho * c,
        E.Field(p, (2,)): rho * sn,
        E.FieldDeriv(p, (1,), (mu,)): drho * c - rho * sn * dxi,
        E.FieldDeriv(p, (2,), (mu,)): drho * sn + rho * c * dxi,
    }
    if sh.vector is not None:
        A = sh.vector.name
        binds[E.Field(A, (mu,))] = E.Field(BNAME, (mu,)) + E.Num(1 / s) * dxi
        binds[E.FieldDeriv(A, (mu,), (nu,))] = (E.FieldDeriv(BNAME, (mu,), (nu,))
                                               + E.Num(1 / s) * E.FieldDeriv(XI, (), (mu, nu)))
    return binds


def shift_sign(m: ModelDef, sh: GaugeShape) -> Fraction:
    """s with delta xi = s*theta, read off (phi1*Q2 - phi2*Q1) = s*(phi1^2 + phi2^2)."""
    q = E.expand_indices(sh.direction, values={sh.scalar_ref.idx[0]: 1})
    q2 = E.expand_indices(sh.direction, values={sh.scalar_ref.idx[0]: 2})
    p1, p2 = E.Field(sh.scalar.name, (1,)), E.Field(sh.scalar.name, (2,))
    num = E.canonicalize(E.expand_indices(p1 * q2 - p2 * q))
    r = _ratio(num, p1 * p1 + p2 * p2)
    if r is None:
        raise ShapeMismatch("scalar variation is not a rotation of the doublet")
    return r


def eliminate_would_be_goldstone(m: ModelDef) -> PolarReport:
    sh = gauge_shape(m)
    s = shift_sign(m, sh)
    L = E.expand_indices(m.lagrangian, kinds=[E.INTERNAL])
    newL = reduce_trig(E.substitute(L, polar_map(m, sh, s)))
    D = m.dimension
    nu = E.spacetime("nu", D)
    r_xi = reduce_trig(E.diff_field(newL, E.Field(XI)))
    r_dxi = reduce_trig(E.diff_field(newL, E.FieldDeriv(XI, (), (nu,))))
    # in the new variables the transformation only shifts xi
    if sh.transformation.kind == "local":
        th = E.ArbFn(GAUGE_FN)
        dl = E.Num(s) * (E.diff_field(newL, E.Field(XI)) * th
                         + E.diff_field(newL, E.FieldDeriv(XI, (), (nu,))) * E.ArbFn(GAUGE_FN, (nu,)))
    else:
        dl = E.Num(s) * E.diff_field(newL, E.Field(XI))
    theta_ok = E.is_zero(reduce_trig(dl))
    mu = E.spacetime("mu", D)
    rho_kin = E.canonicalize(E.diff_field(E.diff_field(newL, E.FieldDeriv(RHO, (), (mu,))),
                                          E.FieldDeriv(RHO, (), (nu,))) * E.Num(Fraction(1, 2)))
    vmass = None
    if sh.vector is not None:
        vmass = reduce_trig(E.diff_field(E.diff_field(newL, E.Field(BNAME, (mu,))), E.Field(BNAME, (nu,))))
        vmass = E.substitute(vmass, {E.FieldDeriv(RHO, (), (E.spacetime("_z", D),)): 0})
    shift = "none (no gauge field)"
    if sh.vector is not None:
        c = -1 / s
        mag = "" if abs(c) == 1 else f"{_frac(abs(c))}*"
        shift = f"{BNAME} = {sh.vector.name} {'+' if c > 0 else '-'} {mag}d({XI})"
    return PolarReport(newL, s, shift, E.is_zero(r_xi), E.is_zero(r_dxi), theta_ok,
                       rho_kin, vmass, r_xi, r_dxi)


def _frac(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
