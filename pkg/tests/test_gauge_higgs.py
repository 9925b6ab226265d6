import math

import numpy as np
import pytest

from fieldsym import expr as E
from fieldsym.constraints import IDENTICALLY_ZERO, ON_SHELL, VIOLATED
from fieldsym.dsl import load_shipped, parse_model, shipped_text
from fieldsym.gauge_higgs import (ShapeMismatch, derive_constraints, eliminate_would_be_goldstone,
                                  gauge_mass, residual_identities)
from fieldsym.goldstone import VacuumConfig
from fieldsym.lattice import constant_mode_hessian

COUPLING = "+ 2*g(mu,nu)*A[mu]*eps(i,j)*phi[i]*d(phi[j],nu)"
CONTACT = "+ phi[i]*phi[i]*g(mu,nu)*A[mu]*A[nu]"
QUARTIC = "- (lambda/4)*(phi[i]*phi[i] - v^2)^2"

i, k = E.internal("i", 2), E.internal("k", 2)
nu, beta = E.spacetime("nu"), E.spacetime("beta")


def variant(old: str, new: str) -> "object":
    text = shipped_text("u1_higgs")
    assert old in text
    return parse_model(text.replace(old, new))


def test_standard_coupling_satisfies_every_constraint():
    g = derive_constraints(load_shipped("u1_higgs"))
    verdicts = {c.label: c.verdict for c in g.constraints}
    for lab in ("fin1", "fin2", "fin3", "fin4", "fin1a", "fin2a", "fin3a", "fin4a"):
        assert verdicts[lab] == IDENTICALLY_ZERO, lab
    # the theta coefficient is the rotated equation of motion
    assert verdicts["fin5"] == ON_SHELL and verdicts["fin5a"] == ON_SHELL
    assert g.constraints.ok and g.theta_route.ok
    assert g.charge_note == "unit charge" and g.warnings == []


def test_reduction_drops_scalar_derivatives():
    g = derive_constraints(load_shipped("u1_higgs"))
    full, red = g.constraints["fin5"].expr, g.constraints["fin5a"].expr
    dropped = E.map_atoms(full, lambda a: E.ZERO if isinstance(a, E.FieldDeriv) and a.name == "phi" else a)
    assert E.equal(dropped, red)


def test_halved_coupling_leaves_a_residual():
    g = derive_constraints(variant(COUPLING, COUPLING.replace("+ 2*", "+ 1*")))
    c = g.constraints["fin3a"]
    assert c.verdict == VIOLATED
    assert E.equal(c.expr, E.Metric(nu, beta) * E.Epsilon(i, k) * E.Field("phi", (k,)))


def test_local_invariance_forces_the_coupling():
    g = derive_constraints(variant(COUPLING + "\n  " + CONTACT, ""))
    c = g.constraints["fin3a"]
    assert c.verdict == VIOLATED
    assert E.equal(c.expr, 2 * E.Metric(nu, beta) * E.Epsilon(i, k) * E.Field("phi", (k,)))


def test_contracted_identities():
    ids = residual_identities(load_shipped("u1_higgs"))
    assert ids.labels() == ["fin4a.Q", "fin5a.Q"] and ids.ok
    m = load_shipped("u1_higgs")
    at_zero = residual_identities(m, VacuumConfig.of(m, {"phi": [0.0, 0.0]}, {"lambda": 1.0, "v": 1.0}))
    assert all(c.verdict == IDENTICALLY_ZERO for c in at_zero)


def test_asymmetric_potential_breaks_the_contracted_identity():
    text = shipped_text("u1_higgs").replace(QUARTIC, "- c*phi[1]^3").replace("param lambda v", "param c")
    e = residual_identities(parse_model(text))["fin5a.Q"]
    assert e.verdict == VIOLATED
    c_part = E.expand_indices(e.expr - E.substitute(e.expr, {E.Param("c"): E.ZERO}), kinds=[E.INTERNAL])
    p1, p2 = E.Field("phi", (1,)), E.Field("phi", (2,))
    assert E.equal(c_part, -6 * E.Param("c") * p1 * p2 * p2)


def test_shape_checks():
    with pytest.raises(ShapeMismatch):
        derive_constraints(load_shipped("mexican_hat"))
    with pytest.raises(ShapeMismatch):
        gauge_mass(load_shipped("mexican_hat"), VacuumConfig.of(load_shipped("mexican_hat"), {"phi": [1, 0]}))


@pytest.mark.parametrize("phi, m2", [((1.0, 0.0), 2.0), ((0.0, 0.0), 0.0), ((3.0, 4.0), 50.0)])
def test_gauge_mass(phi, m2):
    m = load_shipped("u1_higgs")
    rep = gauge_mass(m, VacuumConfig.of(m, {"phi": list(phi)}, {"lambda": 1.0, "v": 1.0}))
    assert rep.routes_agree
    assert math.isclose(rep.mass_squared, m2, abs_tol=1e-12)
    assert math.isclose(rep.mass, math.sqrt(m2), abs_tol=1e-12)
    assert np.allclose(rep.tensor, m2 * np.diag([1, -1, -1, -1]))


def test_gauge_mass_against_lattice_second_difference():
    m = load_shipped("u1_higgs")
    # v = 5 puts (3, 4) at the bottom of the potential, so the lattice sum has no large constant
    v = VacuumConfig.of(m, {"phi": [3.0, 4.0], "A": [0.0] * 4}, {"lambda": 1.0, "v": 5.0})
    rep = gauge_mass(m, v)
    block = -constant_mode_hessian(m, v)[2:, 2:]
    assert np.max(np.abs(block - rep.tensor)) / abs(rep.mass_squared) < 1e-6


def test_polar_rewrite_removes_the_phase():
    r = eliminate_would_be_goldstone(load_shipped("u1_higgs"))
    assert r.xi_free and r.dxi_free and r.theta_invariant and r.goldstone_eliminated
    assert r.shift == "B = A + d(xi)"
    mu = E.spacetime("mu")
    assert E.equal(r.vector_mass, 2 * E.Field("rho") ** 2 * E.Metric(mu, nu))
    assert not any(a.name == "xi" for a in E.atoms(r.lagrangian) if isinstance(a, (E.Field, E.FieldDeriv)))


def test_global_model_keeps_a_derivative_coupled_phase():
    r = eliminate_would_be_goldstone(load_shipped("mexican_hat"))
    assert r.xi_free and not r.dxi_free
    mu = E.spacetime("mu")
    assert E.equal(r.residual_dxi, E.Field("rho") ** 2 * E.FieldDeriv("xi", (), (mu,)) * E.Metric(mu, nu))


def test_free_complex_scalar_phase_enters_only_through_its_gradient():
    m = parse_model("model free\nfield phi[2] scalar\nlagrangian = (1/2)*g(mu,nu)*d(phi[i],mu)*d(phi[i],nu)\n"
                    "transform u1 global { delta phi[i] = eps0*eps(i,j)*phi[j] }\n")
    r = eliminate_would_be_goldstone(m)
    assert r.xi_free and not r.dxi_free
    a, b = E.spacetime("a"), E.spacetime("b")
    want = (E.Num(0.5) * E.FieldDeriv("rho", (), (a,)) * E.FieldDeriv("rho", (), (b,))
            + E.Num(0.5) * E.Field("rho") ** 2 * E.FieldDeriv("xi", (), (a,)) * E.FieldDeriv("xi", (), (b,))) * E.Metric(a, b)
    assert E.equal(r.lagrangian, want)


def _polar_assignment(rng, D: int, s: float) -> tuple:
    rho, xi = rng.uniform(0.2, 2.0), rng.uniform(-math.pi, math.pi)
    drho, dxi = rng.normal(size=D), rng.normal(size=D)
    ddxi = rng.normal(size=(D, D))
    ddxi = ddxi + ddxi.T
    B, dB = rng.normal(size=D), rng.normal(size=(D, D))
    new = {E.Field("rho"): rho, E.Field("xi"): xi}
    old = {E.Field("phi", (1,)): rho * math.cos(xi), E.Field("phi", (2,)): rho * math.sin(xi)}
    for a in range(D):
        new[E.FieldDeriv("rho", (), (a,))] = drho[a]
        new[E.FieldDeriv("xi", (), (a,))] = dxi[a]
        new[E.Field("B", (a,))] = B[a]
        old[E.FieldDeriv("phi", (1,), (a,))] = drho[a] * math.cos(xi) - rho * math.sin(xi) * dxi[a]
        old[E.FieldDeriv("phi", (2,), (a,))] = drho[a] * math.sin(xi) + rho * math.cos(xi) * dxi[a]
        old[E.Field("A", (a,))] = B[a] + dxi[a] / s
        for b in range(D):
            new[E.FieldDeriv("B", (a,), (b,))] = dB[a, b]
            new[E.FieldDeriv("xi", (), tuple(sorted((a, b))))] = ddxi[a, b]
            old[E.FieldDeriv("A", (a,), (b,))] = dB[a, b] + ddxi[a, b] / s
    params = {"lambda": 0.7, "v": 1.3}
    return {**old, **params}, {**new, **params}


def test_polar_rewrite_preserves_values():
    m = load_shipped("u1_higgs")
    r = eliminate_would_be_goldstone(m)
    rng = np.random.default_rng(11)
    for _ in range(20):
        old, new = _polar_assignment(rng, m.dimension, float(r.shift_sign))
        before = E.eval_numeric(m.lagrangian, old)
        after = E.eval_numeric(r.lagrangian, new)
        assert abs(before - after) / max(1.0, abs(before)) < 1e-9
