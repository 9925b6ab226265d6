"""Symmetry verification for global, spacetime and local transformations."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import expr as E
from .dsl import GAUGE_FN, ModelDef, Transformation
from .expr import Expr
from .variational import first_variation, is_total_derivative

INVARIANT = "invariant"
UP_TO_BOUNDARY = "invariant-up-to-boundary"
BROKEN = "broken"


class ThetaOrderExceeded(ValueError):
    pass


class WrongKind(ValueError):
    pass


@dataclass(frozen=True)
class SymmetryVerdict:
    transformation: str
    status: str
    residual: Expr
    current: Expr | None = None
    current_index: E.Index | None = None
    # local kind: "theta", "d(theta,beta)", "d(d(theta,mu),beta)" -> coefficient
    coefficients: dict = field(default_factory=dict)
    theta_atoms: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status != BROKEN


def verify_global(m: ModelDef, t: Transformation) -> SymmetryVerdict:
    if t.kind not in ("global", "spacetime"):
        raise WrongKind(f"{t.name} is {t.kind}; use verify_local")
    dl = first_variation(m, t)
    if dl == E.ZERO or E.is_zero(dl):
        return SymmetryVerdict(t.name, INVARIANT, E.ZERO)
    res = is_total_derivative(dl, m.dimension)
    if res.is_total_derivative:
        return SymmetryVerdict(t.name, UP_TO_BOUNDARY, dl, res.current, res.current_index)
    return SymmetryVerdict(t.name, BROKEN, dl)


def theta_atoms(dim: int) -> dict:
    beta = E.spacetime("beta", dim)
    mu = E.spacetime("mu", dim)
    return {
        "theta": E.ArbFn(GAUGE_FN),
        "d(theta,beta)": E.ArbFn(GAUGE_FN, (beta,)),
        "d(d(theta,mu),beta)": E.ArbFn(GAUGE_FN, (mu, beta)),
    }


def theta_coefficients(dl: Expr, dim: int) -> dict:
    """Split an expression linear in the theta jet into its coefficients.

    The second-order coefficient comes out symmetrized, which is the only
    part a symmetric d d theta can see.
    """
    for a in E.atoms(dl):
        if isinstance(a, E.ArbFn) and a.name == GAUGE_FN and len(a.derivs) > 2:
            raise ThetaOrderExceeded(f"theta derivative of order {len(a.derivs)}")
    out = {}
    for key, atom in theta_atoms(dim).items():
        out[key] = E.diff_field(dl, atom)
    return out


def verify_local(m: ModelDef, t: Transformation, constant_theta: bool = False) -> SymmetryVerdict:
    """Coefficients of theta, d theta and d d theta in delta L, computed off-shell.

    With ``constant_theta`` all derivatives of theta are set to zero first,
    which turns the check into the global one for that direction.
    """
    if t.kind != "local":
        raise WrongKind(f"{t.name} is {t.kind}; use verify_global")
    dl = first_variation(m, t)
    if constant_theta:
        dl = E.canonicalize(E.map_atoms(
            dl, lambda a: E.ZERO if isinstance(a, E.ArbFn) and a.derivs else a))
    coeffs = theta_coefficients(dl, m.dimension)
    broken = any(not E.is_zero(c) for c in coeffs.values())
    return SymmetryVerdict(t.name, BROKEN if broken else INVARIANT, dl,
                           coefficients=coeffs, theta_atoms=theta_atoms(m.dimension))


def reconstruct(v: SymmetryVerdict) -> Expr:
    """Sum of coefficient times theta-atom; equals the residual for local verdicts."""
    total = E.ZERO
    for key, c in v.coefficients.items():
        total = total + c * v.theta_atoms[key]
    return E.canonicalize(total)


def verify(m: ModelDef, t: Transformation) -> SymmetryVerdict:
    if t.kind == "local":
        return verify_local(m, t)
    return verify_global(m, t)
