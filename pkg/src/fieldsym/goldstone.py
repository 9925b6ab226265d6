"""Vacuum checks, mass matrices and Goldstone counting at constant configurations."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg

from . import expr as E
from .constraints import ConstraintSet, positive_ratio, zero_constraint
from .dsl import GAUGE_FN, GLOBAL_PARAM, ModelDef, Transformation
from .expr import Expr
from .symmetry import BROKEN, verify
from .variational import _deriv_of, second_variation_apply

ZERO_REL_TOL = 1e-9


class NoPotential(ValueError):
    pass


class SymmetryNotVerified(ValueError):
    pass


class MissingDilaton(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configurations


_ASSIGN = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\[\s*([0-9,\s]+)\s*\])?\s*=\s*(.+?)\s*$")


def parse_number(text: str, params: dict | None = None) -> float:
    text = text.strip()
    if params and text in params:
        return float(params[text])
    neg = text.startswith("-")
    body = text[1:] if neg else text
    if params and body in params:
        return -float(params[body]) if neg else float(params[body])
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_assignments(text: str) -> list:
    """``"phi[1]=1, v=2"`` -> [("phi", (1,), "1"), ("v", (), "2")]."""
    out = []
    if not text or not text.strip():
        return out
    # split on commas outside brackets
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    for p in parts:
        if not p.strip():
            continue
        m = _ASSIGN.match(p)
        if m is None:
            raise ConfigError(f"cannot read assignment {p.strip()!r}")
        idx = ()
        if m.group(2):
            try:
                idx = tuple(int(s) for s in m.group(2).split(","))
            except ValueError:
                raise ConfigError(f"bad component in {p.strip()!r}") from None
        out.append((m.group(1), idx, m.group(3)))
    return out


@dataclass(frozen=True)
class VacuumConfig:
    """Constant field values plus numeric parameter bindings."""

    values: dict            # concrete Field atom -> float
    params: dict = field(default_factory=dict)   # name -> float

    @classmethod
    def from_strings(cls, m: ModelDef, vacuum: str, params: str = "") -> VacuumConfig:
        pvals: dict = {}
        for name, idx, val in parse_assignments(params):
            if idx or name not in m.params:
                raise ConfigError(f"unknown parameter {name}")
            pvals[name] = parse_number(val, pvals)
        comps = {(c.name, c.idx): c for c in m.components()}
        vals: dict = {}
        for name, idx, val in parse_assignments(vacuum):
            key = (name, idx)
            if key not in comps:
                raise ConfigError(f"unknown field component {name}{list(idx) if idx else ''}")
            vals[comps[key]] = parse_number(val, pvals)
        return cls(vals, pvals)

    @classmethod
    def of(cls, m: ModelDef, values: dict, params: dict | None = None) -> VacuumConfig:
        """Build from ``{"phi": [1, 0], "sigma": 0}`` style values."""
        vals = {}
        for f in m.fields:
            if f.name not in values:
                continue
            v = values[f.name]
            comps = f.components(m.dimension)
            seq = list(np.ravel(v)) if len(comps) > 1 or np.ndim(v) else [v]
            if len(seq) != len(comps):
                raise ConfigError(f"{f.name} needs {len(comps)} values")
            vals.update({c: float(x) for c, x in zip(comps, seq)})
        return cls(vals, {k: float(x) for k, x in (params or {}).items()})

    def complete(self, m: ModelDef, allow_missing_vectors: bool = False) -> VacuumConfig:
        missing = [c for c in m.components() if c not in self.values]
        if allow_missing_vectors:
            vec = {f.name for f in m.fields if f.vector}
            if all(c.name in vec for c in missing):
                vals = dict(self.values)
                vals.update({c: 0.0 for c in missing})
                return VacuumConfig(vals, self.params)
        if missing:
            raise ConfigError("unassigned field components: " + ", ".join(E.to_text(c) for c in missing))
        return self

    def assignment(self) -> dict:
        out: dict = dict(self.values)
        out.update({E.Param(k): v for k, v in self.params.items()})
        out.setdefault(E.Param(GLOBAL_PARAM), 1.0)
        return out

    def vector(self, m: ModelDef) -> np.ndarray:
        return np.array([self.values[c] for c in m.components()], dtype=float)


# ---------------------------------------------------------------------------
# potential


def _term_deriv_count(ix: tuple, pw: tuple) -> int:
    n = sum(1 for a in ix if isinstance(a, E.FieldDeriv))
    n += sum(k for a, k in pw if isinstance(a, E.FieldDeriv))
    return n


def potential(m: ModelDef) -> Expr:
    """V = minus the derivative-free part of L, when L has the T(dPhi) - V(Phi) shape."""
    vectors = {f.name for f in m.fields if f.vector}
    keep = []
    for c, ix, pw in E.terms_of(m.lagrangian):
        for a, _ in pw:
            if isinstance(a, E.UnaryFn) and any(isinstance(x, E.FieldDeriv) for x in E.atoms(a.arg)):
                raise NoPotential("field derivatives inside a function argument")
        n = _term_deriv_count(ix, pw)
        if n == 1:
            raise NoPotential("Lagrangian has a term linear in field derivatives")
        if n == 0:
            names = {a.name for a in list(ix) + [x for x, _ in pw] if isinstance(a, E.Field)}
            if names & vectors:
                raise NoPotential("vector field in the potential")
            keep.append((c, ix, pw))
    return E.canonicalize(-E._build(keep))


def _eval(e: Expr, v: VacuumConfig, free: dict | None = None) -> float:
    return float(E.eval_numeric(e, v.assignment(), free))


@dataclass(frozen=True)
class ExtremumCheck:
    gradient: np.ndarray
    is_extremum: bool
    tol: float


def potential_gradient(m: ModelDef) -> list:
    V = potential(m)
    return [E.diff_field(V, c) for c in m.components()]


def potential_hessian(m: ModelDef) -> list:
    grads = potential_gradient(m)
    comps = m.components()
    return [[E.diff_field(g, c) for c in comps] for g in grads]


def check_extremum(m: ModelDef, v: VacuumConfig, tol: float = 1e-9) -> ExtremumCheck:
    v = v.complete(m)
    grad = np.array([_eval(g, v) for g in potential_gradient(m)])
    ok = bool(np.max(np.abs(grad), initial=0.0) < tol)
    return ExtremumCheck(grad, ok, tol)


def zero_tolerance(eigs: np.ndarray, rel: float = ZERO_REL_TOL) -> float:
    return rel * max(1.0, float(np.max(np.abs(eigs), initial=0.0)))


@dataclass
class DeltaInfo:
    transformation: str
    vector: np.ndarray
    mass_times_delta: np.ndarray
    annihilated: bool
    direction: int | None = None     # index into goldstone_directions, None when delta vanishes


@dataclass
class MassReport:
    components: list                 # text names of field components
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    tol: float
    zero_count: int
    extremum: ExtremumCheck | None = None
    deltas: list = field(default_factory=list)
    n_broken: int = 0
    goldstone_directions: list = field(default_factory=list)
    shared_directions: list = field(default_factory=list)   # [[t names mapping to one direction], ...]
    warnings: list = field(default_factory=list)

    @property
    def goldstone_count(self) -> int:
        return self.n_broken


def mass_matrix(m: ModelDef, v: VacuumConfig, rel_tol: float = ZERO_REL_TOL) -> MassReport:
    """Hessian of V at the configuration and its spectrum."""
    v = v.complete(m)
    H = np.array([[_eval(h, v) for h in row] for row in potential_hessian(m)], dtype=float)
    H = 0.5 * (H + H.T)
    eigs, vecs = np.linalg.eigh(H) if H.size else (np.zeros(0), np.zeros((0, 0)))
    tol = zero_tolerance(eigs, rel_tol)
    zc = int(np.sum(np.abs(eigs) < tol))
    ext = check_extremum(m, v)
    rep = MassReport([E.to_text(c) for c in m.components()], H, eigs, vecs, tol, zc, ext)
    if not ext.is_extremum:
        rep.warnings.append("configuration is not an extremum of the potential")
    return rep


def _constant_fields_theta(a: Expr) -> Expr:
    if isinstance(a, E.FieldDeriv):
        return E.ZERO
    if isinstance(a, E.ArbFn) and a.name == GAUGE_FN:
        return E.ZERO if a.derivs else E.ONE
    return a


def delta_profile(m: ModelDef, t: Transformation, v: VacuumConfig) -> dict:
    """Delta at constant fields split by monomials in x: key -> vector over components.

    The ``()`` entry is the constant part; theta is set to one.
    """
    out: dict = {(): np.zeros(len(m.components()))}
    for n, c in enumerate(m.components()):
        pair = t.delta_for(c.name)
        if pair is None:
            continue
        ref, d = pair
        d = E.canonicalize(E.map_atoms(d, _constant_fields_theta))
        free = {s: val for s, val in zip(ref.idx, c.idx) if isinstance(s, E.Index)}
        if free:
            d = E.expand_indices(d, values=free)
        for key, part in _split_by_x(d).items():
            vec = out.setdefault(key, np.zeros(len(m.components())))
            vec[n] = _eval(part, v)
    return out


def delta_vector(m: ModelDef, t: Transformation, v: VacuumConfig) -> np.ndarray:
    """Delta at constant fields: derivatives and coordinates set to zero, theta to one."""
    return delta_profile(m, t, v)[()]


def span_rank(vectors: list, rel_tol: float = ZERO_REL_TOL) -> tuple:
    """Rank and orthonormal basis of the span, by QR with column pivoting."""
    if not vectors:
        return 0, []
    A = np.column_stack(vectors)
    Q, R, _ = scipy.linalg.qr(A, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    scale = max(1.0, float(diag[0]) if diag.size else 0.0)
    rank = int(np.sum(diag > rel_tol * scale))
    basis = []
    for k in range(rank):
        q = Q[:, k].copy()
        j = int(np.argmax(np.abs(q)))
        if q[j] < 0:
            q = -q
        basis.append(q + 0.0)
    return rank, basis


def goldstone_count(m: ModelDef, v: VacuumConfig, ts: list, override: bool = False,
                    rel_tol: float = ZERO_REL_TOL, verdicts: dict | None = None) -> MassReport:
    rep = mass_matrix(m, v, rel_tol)
    v = v.complete(m)
    verdicts = verdicts if verdicts is not None else {}
    for t in ts:
        if t.name not in verdicts:
            verdicts[t.name] = verify(m, t)
        if verdicts[t.name].status == BROKEN:
            if not override:
                raise SymmetryNotVerified(f"{t.name} is not a symmetry of {m.name}")
            rep.warnings.append(f"{t.name} is not a symmetry; counted anyway")
    vecs = [delta_vector(m, t, v) for t in ts]
    scale = max(1.0, float(np.max(np.abs(rep.matrix), initial=0.0)))
    nonzero = [x for x in vecs if np.max(np.abs(x), initial=0.0) > rel_tol * max(1.0, np.max(np.abs(v.vector(m)), initial=0.0))]
    rank, basis = span_rank(nonzero, rel_tol)
    rep.n_broken = rank
    rep.goldstone_directions = basis
    groups: dict = {}
    for t, x in zip(ts, vecs):
        mx = rep.matrix @ x
        ann = bool(np.max(np.abs(mx), initial=0.0) < rel_tol * scale * max(1.0, np.max(np.abs(x), initial=0.0)))
        info = DeltaInfo(t.name, x, mx, ann)
        # direction: the constant part, or else the first nonvanishing x coefficient
        prof = delta_profile(m, t, v)
        lead = next((prof[k] for k in sorted(prof, key=lambda k: (len(k), repr(k)))
                     if np.max(np.abs(prof[k]), initial=0.0) > rel_tol), None)
        if lead is not None and basis:
            B = np.column_stack(basis)
            coef = B.T @ lead
            for k in range(len(basis)):
                resid = lead - coef[k] * basis[k]
                if np.max(np.abs(resid)) < 1e-9 * np.max(np.abs(lead)):
                    info.direction = k
                    groups.setdefault(k, []).append(t.name)
                    break
        rep.deltas.append(info)
        if not ann:
            rep.warnings.append(f"mass matrix does not annihilate delta of {t.name}")
    rep.shared_directions = [names for names in groups.values() if len(names) > 1]
    if rep.zero_count < rep.n_broken and rep.extremum.is_extremum:
        rep.warnings.append("fewer zero eigenvalues than broken generators")
    return rep


# ---------------------------------------------------------------------------
# generalized identity with x-dependent Delta


@dataclass(frozen=True)
class XDecomposition:
    """Residual split by monomials in the coordinates.

    ``parts`` maps a sorted tuple of coordinate components (``()`` for the
    constant part) to ``{field name: expression}``; ``templates`` gives the
    atom whose free indices each expression carries.
    """

    transformation: str
    parts: dict
    templates: dict

    def part(self, key: tuple = ()) -> dict:
        return self.parts.get(tuple(key), {n: E.ZERO for n in self.templates})

    def reconstruct(self) -> dict:
        out = {n: E.ZERO for n in self.templates}
        for key, per in self.parts.items():
            mono = E.ONE
            for k in key:
                mono = mono * E.Coord(k)
            for n, e in per.items():
                out[n] = out[n] + mono * e
        return {n: E.canonicalize(e) for n, e in out.items()}

    def evaluate(self, m: ModelDef, v: VacuumConfig) -> dict:
        """Numeric parts: key -> vector over field components."""
        out = {}
        v = v.complete(m, allow_missing_vectors=True)
        for key, per in self.parts.items():
            vec = []
            for c in m.components():
                ref = self.templates[c.name]
                free = {s: val for s, val in zip(ref.idx, c.idx) if isinstance(s, E.Index)}
                vec.append(_eval(per.get(c.name, E.ZERO), v, free))
            out[key] = np.array(vec)
        return out


def _x_key(ix: tuple, pw: tuple) -> tuple:
    xs = [a.index for a in ix if isinstance(a, E.Coord)]
    xs += [a.index for a, n in pw if isinstance(a, E.Coord) for _ in range(n)]
    return tuple(sorted(xs))


def _split_by_x(e: Expr) -> dict:
    if any(isinstance(a, E.Coord) and isinstance(a.index, E.Index) for a in E.atoms(e)):
        e = E.expand_indices(e, kinds=[E.SPACETIME])
    out: dict = {}
    for c, ix, pw in E.terms_of(e):
        key = _x_key(ix, pw)
        ix2 = tuple(a for a in ix if not isinstance(a, E.Coord))
        pw2 = tuple((a, n) for a, n in pw if not isinstance(a, E.Coord))
        out.setdefault(key, []).append(E.Prod((E.Num(c), *E._term_factors(ix2, pw2))))
    return {k: E.canonicalize(E.Sum(tuple(v))) for k, v in out.items()}


def generalized_residual(m: ModelDef, t: Transformation) -> XDecomposition:
    """The second-variation identity at constant fields, split by powers of x.

    Sign: reported as Hessian-of-V times Delta, i.e. minus the second
    variation of L, so that global symmetries reduce to mass matrix times Delta.
    """
    sv = second_variation_apply(m, t)
    parts: dict = {}
    templates = {}
    for name, (tmpl, e) in sv.items():
        templates[name] = tmpl
        e = E.canonicalize(-E.constant_fields(e))
        for key, sub in _split_by_x(e).items():
            parts.setdefault(key, {})[name] = sub
    for per in parts.values():
        for name in templates:
            per.setdefault(name, E.ZERO)
    if not parts:
        parts[()] = {n: E.ZERO for n in templates}
    return XDecomposition(t.name, parts, templates)


def proportional_parts(a: dict, b: dict):
    """Common positive factor r with a[f] == r*b[f] for every field, or None."""
    ratio = None
    for name in a:
        ea, eb = a[name], b.get(name, E.ZERO)
        if E.is_zero(ea) and E.is_zero(eb):
            continue
        r = positive_ratio(ea, eb)
        if r is None or (ratio is not None and r != ratio):
            return None
        ratio = r
    return ratio if ratio is not None else Fraction(1)


def dilaton_pair(m: ModelDef) -> tuple:
    dil = [f for f in m.fields if f.dilaton]
    other = [f for f in m.fields if not f.dilaton and not f.vector and f.size is None]
    if not dil or not other:
        raise MissingDilaton(f"{m.name} has no scalar/dilaton pair")
    return other[0], dil[0]


def extra_constraints(m: ModelDef) -> ConstraintSet:
    """d2L/dsigma d(d_l phi) - d2L/dphi d(d_l sigma) for each direction l."""
    phi, sigma = dilaton_pair(m)
    pa, sa = E.Field(phi.name), E.Field(sigma.name)
    out = []
    for lam in range(m.dimension):
        a = E.diff_field(E.diff_field(m.lagrangian, _deriv_of(pa, (lam,))), sa)
        b = E.diff_field(E.diff_field(m.lagrangian, _deriv_of(sa, (lam,))), pa)
        out.append(zero_constraint(f"cross_{lam}", a - b))
    return ConstraintSet(tuple(out))
