from fractions import Fraction

import numpy as np
import pytest

from fieldsym import expr as E
from fieldsym.conformal import (UnknownParameter, analyze, build_scenario, goldstone_multiplicity,
                                solve_dilation)
from fieldsym.dsl import load_shipped, parse_model, shipped_text
from fieldsym.goldstone import MissingDilaton, VacuumConfig, extra_constraints

phi, sigma = E.Field("phi"), E.Field("sigma")
f, mu, lam = E.Param("f"), E.Param("mu"), E.Param("lambda")
UNIT = {"f": 1.0, "mu": 1.0, "lambda": 24.0}


@pytest.fixture(scope="module")
def symbolic():
    return analyze(build_scenario(load_shipped("coleman")))


def coleman_vacuum(m, p: float, s: float = 0.0, params=UNIT) -> VacuumConfig:
    return VacuumConfig.of(m, {"phi": p, "sigma": s}, params)


def test_bundle_and_constant_field_deltas():
    scn = build_scenario(load_shipped("coleman"))
    assert [t.name for t in scn.transformations] == ["dilation"] + [f"conformal_{n}" for n in range(4)]
    strip = lambda e: E.canonicalize(E.constant_fields(e))
    d = dict((ref.name, strip(x)) for ref, x in scn.dilation.deltas)
    assert E.equal(d["phi"], phi) and E.equal(d["sigma"], 1 / f)
    for n, t in enumerate(scn.conformal):
        c = dict((ref.name, strip(x)) for ref, x in t.deltas)
        assert E.equal(c["phi"], 2 * E.Coord(n) * phi)
        assert E.equal(c["sigma"], 2 * E.Coord(n) / f)


def test_scenario_matches_the_shipped_transformations():
    m = load_shipped("coleman")
    scn = build_scenario(m)
    for t in scn.transformations:
        shipped = dict((ref.name, x) for ref, x in m.transformation(t.name).deltas)
        for ref, x in t.deltas:
            assert E.equal(x, shipped[ref.name]), t.name


def test_scenario_errors():
    with pytest.raises(MissingDilaton):
        build_scenario(load_shipped("mexican_hat"))
    with pytest.raises(UnknownParameter):
        build_scenario(load_shipped("coleman"), scale="g0")


def test_dilation_constraint_at_symbolic_fields(symbolic):
    rep = symbolic
    dil = rep.residuals["dilation"].part(())
    e2 = E.ExpFn(2 * f * sigma)
    assert E.equal(dil["phi"], lam / 2 * phi ** 3 + 3 * mu ** 2 * phi * e2)
    assert E.equal(dil["sigma"], 4 * f * mu ** 2 * phi ** 2 * e2)


def test_dilation_constraint_matches_the_matrix_form(symbolic):
    rep = symbolic
    dil = rep.residuals["dilation"].part(())
    pre = mu ** 2 * E.ExpFn(2 * f * sigma)
    rows = [[1 + lam / (2 * mu ** 2) * phi ** 2 * E.ExpFn(-2 * f * sigma), 2 * f * phi],
            [2 * f * phi, 2 * f ** 2 * phi ** 2]]
    vec = [phi, 1 / f]
    for name, row in zip(("phi", "sigma"), rows):
        assert E.equal(dil[name], pre * (row[0] * vec[0] + row[1] * vec[1]))


def test_conformal_parts_repeat_the_dilation_constraint(symbolic):
    rep = symbolic
    dil = rep.residuals["dilation"].part(())
    for n in range(4):
        name = f"conformal_{n}"
        # delta^lambda = 2 x^lambda * delta at constant fields, hence the factor 2
        assert rep.degeneracy[name] == Fraction(2)
        part = rep.residuals[name].part((n,))
        assert all(E.equal(part[k], 2 * dil[k]) for k in dil)
        assert rep.constant_parts_zero[name] and rep.stray_parts[name] == []
    assert rep.degenerate


def test_solution_and_extra_constraints(symbolic):
    rep = symbolic
    assert rep.solution.status == "solved" and rep.solution.assignments == {"phi": 0}
    assert rep.solution.text() == "phi = 0"
    assert len(rep.extra) == 4 and all(c.verdict == "identically-zero" for c in rep.extra)


def test_solution_is_stable_under_positive_rescaling():
    rng = np.random.default_rng(5)
    text = shipped_text("coleman")
    for _ in range(10):
        a, b, c = (Fraction(int(rng.integers(1, 30)), int(rng.integers(1, 9))) for _ in range(3))
        t = (text.replace("param f mu lambda", "param f")
                 .replace("mu^2/2", f"({a.numerator}/{2 * a.denominator})")
                 .replace("lambda/24", f"({b.numerator}/{24 * b.denominator})")
                 .replace("2*f*sigma", f"({2 * c.numerator}/{c.denominator})*f*sigma"))
        rep = analyze(build_scenario(parse_model(t)))
        assert rep.solution.assignments == {"phi": 0}, t


def test_goldstone_multiplicity():
    m = load_shipped("coleman")
    assert goldstone_multiplicity(build_scenario(m), coleman_vacuum(m, 0.0, 0.3)) == (5, 1, 4)
    m3 = load_shipped("coleman", dimension=3)
    assert goldstone_multiplicity(build_scenario(m3), coleman_vacuum(m3, 0.0)) == (4, 1, 3)


def test_goldstone_direction_is_the_dilaton():
    m = load_shipped("coleman")
    rep = analyze(build_scenario(m), coleman_vacuum(m, 0.0, 0.2, {"f": 2.0, "mu": 1.0, "lambda": 1.0}))
    g = rep.goldstone
    assert g.goldstone_count == 1
    (d,) = g.goldstone_directions
    assert np.allclose(d, [0.0, 1.0])
    assert np.allclose(rep.dilation_value, [0.0, 0.0])


def test_forced_nonzero_scalar_leaves_a_residual():
    m = load_shipped("coleman")
    rep = analyze(build_scenario(m), coleman_vacuum(m, 1.0), override=True)
    # lambda/2 + 3 mu^2 and 4 f mu^2 at unit values with lambda = 24
    assert np.allclose(rep.dilation_value, [15.0, 4.0])


def test_dilaton_only_model():
    m = parse_model("model solo\nparam f\nfield sigma scalar dilaton\n"
                    "lagrangian = (1/(2*f^2))*g(a,b)*d(exp(f*sigma),a)*d(exp(f*sigma),b)\n")
    scn = build_scenario(m)
    rep = analyze(scn, VacuumConfig.of(m, {"sigma": 0.4}, {"f": 1.5}))
    assert rep.solution.status == "unconstrained"
    assert len(rep.extra) == 0
    assert rep.goldstone.goldstone_count == 1
    assert goldstone_multiplicity(scn, VacuumConfig.of(m, {"sigma": 0.4}, {"f": 1.5}))[2] == 0


def test_extra_constraints_flip_sign_when_roles_swap():
    text = shipped_text("coleman").replace(
        "- (lambda/24)*phi^4", "- (lambda/24)*phi^4 + phi*g(a,b)*d(phi,a)*d(sigma,b)")
    m = parse_model(text)
    swapped = parse_model(text.replace("field phi scalar\nfield sigma scalar dilaton",
                                       "field phi scalar dilaton\nfield sigma scalar"))
    for a, b in zip(extra_constraints(m), extra_constraints(swapped)):
        assert not E.is_zero(a.expr)
        assert E.equal(a.expr, -b.expr)


def test_solver_reports_what_it_cannot_do():
    scn = build_scenario(load_shipped("coleman"))
    got = solve_dilation(scn, {"phi": phi - 1, "sigma": E.ZERO})
    assert got.status == "unsolved"
