"""Periodic-lattice discretization used as an independent numerical check.

The action is transcribed with central differences and evaluated by a small
array interpreter of its own; only index expansion is borrowed from the
symbolic side, never differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expr as E
from .dsl import GAUGE_FN, GLOBAL_PARAM, ModelDef, Transformation
from .expr import Expr
from .goldstone import VacuumConfig

MAX_SITES = 4096
MIN_EXTENT = 4
# largest batch of configurations pushed through the evaluator at once (in numbers)
_BATCH_BUDGET = 4_000_000
# rows of H touch sites up to this many steps away (central difference, squared)
STENCIL_REACH = 2

# densities are summed in extended precision: the four-point Hessian divides
# by h^2 ~ eps^(2/3), which magnifies float64 cancellation between large terms
WORK = np.longdouble


class UnsupportedShape(ValueError):
    pass


class NotASolution(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    shape: tuple = (16,)
    spacing: float = 1.0
    boundary: str = "periodic"

    def __post_init__(self) -> None:
        shape = (self.shape,) if isinstance(self.shape, int) else tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if self.boundary != "periodic":
            raise UnsupportedShape(f"boundary {self.boundary!r}: only periodic lattices are supported")
        if not shape:
            raise UnsupportedShape("need at least one lattice direction")
        if any(n < MIN_EXTENT for n in shape):
            raise UnsupportedShape(f"every extent must be at least {MIN_EXTENT}")
        if self.sites > MAX_SITES:
            raise UnsupportedShape(f"{self.sites} sites exceeds the limit of {MAX_SITES}")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise UnsupportedShape("spacing must be positive")

    @property
    def sites(self) -> int:
        return math.prod(self.shape)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def volume_element(self) -> float:
        return self.spacing ** self.ndim

    def directions(self, dim: int) -> tuple:
        """Spacetime directions carried by the lattice axes.

        Spatial directions come first (1, 2, ...); the time direction is only
        used when every direction is kept.
        """
        if self.ndim > dim:
            raise UnsupportedShape(f"{self.ndim}-dimensional lattice for a {dim}-dimensional model")
        if self.ndim == dim:
            return tuple(range(dim))
        return tuple(range(1, self.ndim + 1))


@dataclass(frozen=True)
class LatticeConfig:
    values: np.ndarray              # flat, site-major: index = site * ncomp + component
    params: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, m: ModelDef, l: LatticeSpec, v: VacuumConfig) -> LatticeConfig:
        v = v.complete(m, allow_missing_vectors=True)
        return cls(np.tile(v.vector(m), l.sites), dict(v.params))

    def with_values(self, values: np.ndarray) -> LatticeConfig:
        return LatticeConfig(np.asarray(values, dtype=float), self.params)


# ---------------------------------------------------------------------------
# array interpreter


class _Ctx:
    """Field arrays of shape (batch, *lattice) plus parameters and coordinates."""

    def __init__(self, fields: dict, params: dict, coords: dict, spacing: float, axes: dict):
        self.fields = fields
        self.params = params
        self.coords = coords
        self.spacing = spacing
        self.axes = axes          # spacetime direction -> array axis


def _central(f: np.ndarray, axis: int, a: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2 * a)


def _rational(c) -> np.longdouble:
    c = Fraction(c)
    return WORK(c.numerator) / WORK(c.denominator)


def _value(a: Expr, ctx: _Ctx):
    if isinstance(a, E.Num):
        return _rational(a.value)
    if isinstance(a, E.Param):
        if a.name not in ctx.params:
            raise E.MissingAtom({a.name})
        return WORK(ctx.params[a.name])
    if isinstance(a, E.Field):
        return ctx.fields[(a.name, a.idx)]
    if isinstance(a, E.FieldDeriv):
        f = ctx.fields[(a.name, a.idx)]
        for mu in a.derivs:
            if mu not in ctx.axes:
                return 0.0
            f = _central(f, ctx.axes[mu], ctx.spacing)
        return f
    if isinstance(a, E.Coord):
        return ctx.coords.get(a.index, 0.0)
    if isinstance(a, E.ArbFn) and a.name == GAUGE_FN:
        # constant unit gauge parameter
        return 0.0 if a.derivs else 1.0
    if isinstance(a, E.ExpFn):
        return np.exp(_evaluate(a.arg, ctx))
    if isinstance(a, E.Sum):
        return _evaluate(a, ctx)
    raise UnsupportedShape(f"cannot evaluate {E.to_text(a)} on the lattice")


def _evaluate(e: Expr, ctx: _Ctx):
    total = WORK(0)
    for c, ix, pw in E.terms_of(e):
        term = _rational(c)
        for a in ix:
            term = term * _value(a, ctx)
        for a, n in pw:
            term = term * _value(a, ctx) ** n
        total = total + term
    return total


def _concrete(e: Expr) -> Expr:
    """Component form with no indices left."""
    e = E.expand_indices(e)
    if E.free_indices(e):
        raise UnsupportedShape("expression has free indices")
    return e


def _check_first_order(e: Expr) -> None:
    for a in E.atoms(e):
        if isinstance(a, E.FieldDeriv) and len(a.derivs) > 1:
            raise UnsupportedShape("the Lagrangian must be first order in derivatives")
        if isinstance(a, E.ArbFn):
            raise UnsupportedShape(f"{a.name} in the Lagrangian")
        if isinstance(a, E.UnaryFn) and not isinstance(a, E.ExpFn):
            raise UnsupportedShape(f"function {a.fname} has no lattice evaluator")


class Lattice:
    """Shared plumbing: component layout, coordinates, batched field arrays."""

    def __init__(self, m: ModelDef, l: LatticeSpec):
        self.model = m
        self.spec = l
        self.components = m.components()
        self.ncomp = len(self.components)
        self.dirs = l.directions(m.dimension)
        self.axes = {mu: k + 1 for k, mu in enumerate(self.dirs)}
        grids = np.meshgrid(*(np.arange(n, dtype=WORK) * WORK(l.spacing) for n in l.shape), indexing="ij")
        self.coords = {mu: g[None, ...] for mu, g in zip(self.dirs, grids)}

    @property
    def size(self) -> int:
        return self.spec.sites * self.ncomp

    def context(self, values: np.ndarray, params: dict) -> _Ctx:
        values = np.asarray(values, dtype=WORK)
        batch = values.reshape(-1, *self.spec.shape, self.ncomp)
        fields = {(c.name, c.idx): batch[..., k] for k, c in enumerate(self.components)}
        p = {GLOBAL_PARAM: 1.0}
        p.update(params)
        return _Ctx(fields, p, self.coords, self.spec.spacing, self.axes)


class LatticeAction(Lattice):
    """S(config) = a^d * sum over sites of the Lagrangian density."""

    def __init__(self, m: ModelDef, l: LatticeSpec):
        super().__init__(m, l)
        lag = _concrete(m.lagrangian)
        _check_first_order(lag)
        self.density_expr = lag

    def density(self, values: np.ndarray, params: dict) -> np.ndarray:
        """Lagrangian density per site, shape (batch, *lattice)."""
        ctx = self.context(values, params)
        nb = np.atleast_2d(values).shape[0]
        out = _evaluate(self.density_expr, ctx)
        return np.broadcast_to(out, (nb, *self.spec.shape))

    def batch(self, values: np.ndarray, params: dict, baseline: np.ndarray | None = None) -> np.ndarray:
        """Actions of many configurations.

        With ``baseline`` (a density) the result is S - S_baseline, summed site
        by site so that untouched sites cancel exactly.
        """
        values = np.atleast_2d(values)
        rows = max(1, _BATCH_BUDGET // max(1, values.shape[1]))
        out = []
        for start in range(0, values.shape[0], rows):
            dens = self.density(values[start:start + rows], params)
            if baseline is not None:
                dens = dens - baseline
            out.append(dens.reshape(dens.shape[0], -1).sum(axis=1) * self.spec.volume_element)
        return np.concatenate(out)

    def __call__(self, c: LatticeConfig) -> float:
        return float(self.batch(c.values[None, :], c.params)[0])


def discretize_action(m: ModelDef, l: LatticeSpec) -> LatticeAction:
    return LatticeAction(m, l)


# ---------------------------------------------------------------------------
# finite differences


def _steps(x: np.ndarray) -> np.ndarray:
    return np.finfo(float).eps ** (1 / 3) * np.maximum(1.0, np.abs(x))


def numeric_gradient(action: LatticeAction, c: LatticeConfig) -> np.ndarray:
    x = np.asarray(c.values, dtype=float)
    h = _steps(x)
    n = x.size
    plus = np.tile(x, (n, 1)) + np.diag(h)
    minus = np.tile(x, (n, 1)) - np.diag(h)
    base = action.density(x, c.params)
    s = action.batch(np.vstack([plus, minus]), c.params, base)
    return ((s[:n] - s[n:]) / (2 * h)).astype(float)


def numeric_hessian(action: LatticeAction, c: LatticeConfig) -> np.ndarray:
    """Four-point central second differences, symmetrized."""
    x = np.asarray(c.values, dtype=float)
    h = _steps(x)
    n = x.size
    iu, ju = np.triu_indices(n)
    npairs = iu.size
    out = np.empty(npairs)
    rows = max(1, _BATCH_BUDGET // (4 * n))
    base = action.density(x, c.params)
    for start in range(0, npairs, rows):
        i, j = iu[start:start + rows], ju[start:start + rows]
        k = np.arange(i.size)
        pts = np.tile(x, (4, i.size, 1))
        for sheet, (si, sj) in enumerate(((1, 1), (1, -1), (-1, 1), (-1, -1))):
            pts[sheet, k, i] += si * h[i]
            pts[sheet, k, j] += sj * h[j]
        s = action.batch(pts.reshape(-1, n), c.params, base).reshape(4, -1)
        out[start:start + rows] = (s[0] - s[1] - s[2] + s[3]) / (4 * h[i] * h[j])
    H = np.zeros((n, n))
    H[iu, ju] = out
    H[ju, iu] = out
    return H


def zero_mode_projector(lat: Lattice) -> np.ndarray:
    """Columns: one constant mode per field component."""
    return np.tile(np.eye(lat.ncomp), (lat.spec.sites, 1))


def zero_mode_block(lat: Lattice, H: np.ndarray) -> np.ndarray:
    """P^T (-H) P; for a constant background this is sites * a^d * V''."""
    P = zero_mode_projector(lat)
    return -(P.T @ H @ P)


def constant_mode_hessian(m: ModelDef, v: VacuumConfig, l: LatticeSpec | None = None) -> np.ndarray:
    """Second difference of -S/(sites * a^d) along constant shifts of each component.

    Cheaper than the full Hessian: only ncomp directions are probed.
    """
    l = l or LatticeSpec((MIN_EXTENT,))
    action = discretize_action(m, l)
    c = LatticeConfig.constant(m, l, v)
    P = zero_mode_projector(action)
    base = c.values
    h = np.finfo(float).eps ** (1 / 3) * np.maximum(1.0, np.abs(base[:action.ncomp]))
    n = action.ncomp
    iu, ju = np.triu_indices(n)
    pts = []
    for i, j in zip(iu, ju):
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            pts.append(base + si * h[i] * P[:, i] + sj * h[j] * P[:, j])
    s = action.batch(np.array(pts), c.params, action.density(base, c.params)).reshape(-1, 4)
    vals = (s[:, 0] - s[:, 1] - s[:, 2] + s[:, 3]) / (4 * h[iu] * h[ju])
    M = np.zeros((n, n))
    M[iu, ju] = vals
    M[ju, iu] = vals
    return -M / (l.sites * l.volume_element)


# ---------------------------------------------------------------------------
# the generalized Goldstone check


class LatticeDelta(Lattice):
    """Site-wise Delta with theta = 1, eps0 = 1 and x = site index * spacing."""

    def __init__(self, m: ModelDef, l: LatticeSpec, t: Transformation):
        super().__init__(m, l)
        self.transformation = t
        self.exprs = []
        for c in self.components:
            pair = t.delta_for(c.name)
            if pair is None:
                self.exprs.append(E.ZERO)
                continue
            ref, d = pair
            free = {s: val for s, val in zip(ref.idx, c.idx) if isinstance(s, E.Index)}
            self.exprs.append(_concrete(E.expand_indices(d, values=free) if free else d))
        self.coordinate_axes: tuple = ()

    def __call__(self, c: LatticeConfig) -> np.ndarray:
        ctx = self.context(c.values[None, :], c.params)
        cols = [np.broadcast_to(_evaluate(e, ctx), (1, *self.spec.shape)).reshape(self.spec.shape)
                for e in self.exprs]
        # axes along which Delta grows with an explicit coordinate; the
        # periodic seam breaks such profiles, so rows near it are left out
        used = set()
        for e in self.exprs:
            for a in E.atoms(e):
                if isinstance(a, E.Coord) and a.index in self.axes:
                    used.add(self.axes[a.index] - 1)
        self.coordinate_axes = tuple(sorted(
            ax for ax in used if any(np.ptp(col, axis=ax).max() > 0 for col in cols)))
        return np.stack([col.reshape(-1) for col in cols], axis=1).reshape(-1).astype(float)

    def row_mask(self) -> np.ndarray:
        """True for rows whose Hessian stencil does not straddle the seam.

        Call after evaluating Delta.
        """
        keep = np.ones(self.spec.shape, dtype=bool)
        for ax in self.coordinate_axes:
            n = self.spec.shape[ax]
            idx = np.arange(n)
            ok = (idx >= STENCIL_REACH) & (idx < n - STENCIL_REACH)
            shape = [1] * self.spec.ndim
            shape[ax] = n
            keep &= ok.reshape(shape)
        return np.repeat(keep.reshape(-1), self.ncomp)


@dataclass
class OracleResult:
    transformation: str
    residual: float             # ||H Delta||_inf / ||H||_inf over the rows used
    gradient_norm: float
    hessian_norm: float
    hessian_asymmetry: float
    rows_used: int
    rows_total: int
    delta: np.ndarray
    h_delta: np.ndarray
    notes: list = field(default_factory=list)

    @property
    def interior_only(self) -> bool:
        return self.rows_used < self.rows_total


def check_generalized_goldstone(m: ModelDef, t: Transformation, v: VacuumConfig,
                                l: LatticeSpec | None = None, require_solution: bool = True,
                                grad_tol: float = 1e-6, hessian: np.ndarray | None = None) -> OracleResult:
    """Apply the lattice Hessian to the site-wise Delta at a constant configuration."""
    l = l or LatticeSpec((16,))
    action = discretize_action(m, l)
    c = LatticeConfig.constant(m, l, v)
    grad = numeric_gradient(action, c)
    gnorm = float(np.max(np.abs(grad), initial=0.0))
    if require_solution and gnorm > grad_tol:
        raise NotASolution(f"gradient norm {gnorm:.3g} exceeds {grad_tol:g}")
    H = numeric_hessian(action, c) if hessian is None else hessian
    dl = LatticeDelta(m, l, t)
    delta = dl(c)
    hd = H @ delta
    mask = dl.row_mask()
    hnorm = float(np.max(np.sum(np.abs(H), axis=1), initial=0.0))
    used = hd[mask]
    res = float(np.max(np.abs(used), initial=0.0)) / hnorm if hnorm > 0 else 0.0
    asym = float(np.max(np.abs(H - H.T), initial=0.0)) / hnorm if hnorm > 0 else 0.0
    notes = []
    if dl.coordinate_axes:
        notes.append("Delta depends on a periodic coordinate; rows next to the seam are excluded")
    return OracleResult(t.name, res, gnorm, hnorm, asym, int(mask.sum()), mask.size,
                        delta, hd, notes)


def _unit_theta(residual):
    def fix(a: Expr) -> Expr:
        if isinstance(a, E.ArbFn) and a.name == GAUGE_FN:
            return E.ZERO if a.derivs else E.ONE
        return a
    parts = {k: {n: E.canonicalize(E.map_atoms(e, fix)) for n, e in per.items()}
             for k, per in residual.parts.items()}
    return type(residual)(residual.transformation, parts, residual.templates)


def symbolic_agreement(m: ModelDef, t: Transformation, v: VacuumConfig, residual,
                       l: LatticeSpec | None = None, oracle: OracleResult | None = None) -> float:
    """Relative gap between a symbolic generalized residual and -H Delta / a^d.

    ``residual`` is the split returned by ``goldstone.generalized_residual``;
    its pieces are summed with the site coordinates and compared site by site
    over the rows the oracle used.  The scale is the larger of the symbolic
    values and ||H||_inf ||Delta||_inf / a^d, so an exact zero on both sides
    compares cleanly.
    """
    l = l or LatticeSpec((16,))
    if oracle is None:
        oracle = check_generalized_goldstone(m, t, v, l, require_solution=False)
    lat = LatticeDelta(m, l, t)
    lat(LatticeConfig.constant(m, l, v))
    parts = _unit_theta(residual).evaluate(m, v)
    sym = np.zeros((l.sites, lat.ncomp))
    for key, vec in parts.items():
        mono = np.ones(l.shape)
        for mu in key:
            mono = mono * (lat.coords[mu][0] if mu in lat.coords else 0.0)
        sym += mono.reshape(-1, 1) * vec[None, :]
    sym = sym.reshape(-1)
    lat_vals = -oracle.h_delta / l.volume_element
    mask = lat.row_mask()
    scale = max(float(np.max(np.abs(sym[mask]), initial=0.0)),
                oracle.hessian_norm * float(np.max(np.abs(oracle.delta), initial=0.0)) / l.volume_element)
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(sym[mask] - lat_vals[mask]), initial=0.0)) / scale


def site_euler_lagrange(m: ModelDef, l: LatticeSpec, c: LatticeConfig) -> np.ndarray:
    """Discrete Euler-Lagrange values per (site, component), from symbolic partials.

    Uses the symbolic dL/dphi and dL/d(d phi) evaluated at each site with
    central-difference derivatives, then a central-difference divergence.
    Matches a^-d times the numeric gradient of the lattice action.
    """
    action = discretize_action(m, l)
    ctx = action.context(c.values[None, :], c.params)
    out = np.zeros((l.sites, action.ncomp))
    for k, comp in enumerate(action.components):
        val = _evaluate(_concrete(E.diff_field(m.lagrangian, comp)), ctx)
        total = np.broadcast_to(val, (1, *l.shape)).astype(float)
        for mu, ax in action.axes.items():
            target = E.FieldDeriv(comp.name, comp.idx, (mu,))
            p = _evaluate(_concrete(E.diff_field(m.lagrangian, target)), ctx)
            p = np.broadcast_to(p, (1, *l.shape))
            # d S / d phi_n picks up -(P_{n+1} - P_{n-1}) / (2a) from the stencil
            total = total - _central(p, ax, l.spacing)
        out[:, k] = total.reshape(-1)
    return out.reshape(-1)
