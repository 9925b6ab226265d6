"""End-to-end acceptance checks, one per criterion.

Each check returns (passed, detail).  Under pytest every criterion is its own
test and the summary lines are repeated at the end of the run; executed as a
script the lines go straight to stdout.
"""

from __future__ import annotations

import math
import sys

import numpy as np
import pytest

from fieldsym import expr as E
from fieldsym.conformal import analyze, build_scenario, goldstone_multiplicity
from fieldsym.dsl import load_shipped, parse_model, shipped_text
from fieldsym.gauge_higgs import derive_constraints, eliminate_would_be_goldstone, gauge_mass
from fieldsym.goldstone import VacuumConfig, delta_vector, goldstone_count
from fieldsym.lattice import check_generalized_goldstone, constant_mode_hessian
from fieldsym.symmetry import verify_local

# tolerances fixed by the acceptance criteria
EIG_ABS = 1e-8
MDELTA_ABS = 1e-10
ORACLE_REL = 1e-6
NEGATIVE_MIN = 0.1      # "order one" for the non-extremal control
MASS_ABS = 1e-12
FD_REL = 1e-6

LINES: list = []


def _record(n: int, title: str, ok: bool, detail: str) -> bool:
    LINES.append(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
    return ok


def goldstone_count_check() -> tuple:
    m = load_shipped("mexican_hat")
    v = VacuumConfig.of(m, {"phi": [1.0, 0.0]}, {"lambda": 0.5, "v": 1.0})
    rep = goldstone_count(m, v, list(m.transformations))
    eigs = np.sort(rep.eigenvalues)
    eig_err = float(np.max(np.abs(eigs - [0.0, 1.0])))
    mdelta = max(float(np.max(np.abs(d.mass_times_delta))) for d in rep.deltas)
    lat = np.sort(np.linalg.eigvalsh(constant_mode_hessian(m, v)))
    lat_err = float(np.max(np.abs(lat - [0.0, 1.0])))
    ok = eig_err < EIG_ABS and rep.goldstone_count == 1 and mdelta < MDELTA_ABS and lat_err < FD_REL
    return ok, (f"eigenvalue error {eig_err:.2e}, goldstones {rep.goldstone_count}, "
                f"|M.Delta| {mdelta:.2e}, lattice constant-mode error {lat_err:.2e}")


def _triples() -> list:
    hat = load_shipped("mexican_hat")
    higgs = load_shipped("u1_higgs")
    col = load_shipped("coleman")
    out = [(hat, "u1", VacuumConfig.of(hat, {"phi": [1.0, 0.0]}, {"lambda": 0.5, "v": 1.0})),
           (higgs, "gauge", VacuumConfig.of(higgs, {"phi": [1.0, 0.0], "A": [0.0] * 4},
                                            {"lambda": 1.0, "v": 1.0}))]
    cv = VacuumConfig.of(col, {"phi": 0.0, "sigma": 0.3}, {"f": 1.0, "mu": 1.0, "lambda": 1.0})
    out += [(col, t.name, cv) for t in col.transformations]
    return out


def generalized_identity_check() -> tuple:
    worst, names = 0.0, []
    for m, tname, v in _triples():
        r = check_generalized_goldstone(m, m.transformation(tname), v)
        worst = max(worst, r.residual)
        names.append(f"{m.name}/{tname}")
    hat = load_shipped("mexican_hat")
    bad = VacuumConfig.of(hat, {"phi": [0.5, 0.0]}, {"lambda": 0.5, "v": 1.0})
    neg = check_generalized_goldstone(hat, hat.transformation("u1"), bad, require_solution=False).residual
    ok = worst < ORACLE_REL and neg > NEGATIVE_MIN
    return ok, f"{len(names)} triples, worst residual {worst:.2e}; non-extremal control {neg:.3f}"


def gauge_invariance_check() -> tuple:
    m = load_shipped("u1_higgs")
    v = verify_local(m, m.transformation("gauge"))
    exact = all(c == E.ZERO for c in v.coefficients.values())
    text = shipped_text("u1_higgs").replace("+ 2*g(mu,nu)*A[mu]", "+ 1*g(mu,nu)*A[mu]")
    fin3a = derive_constraints(parse_model(text)).constraints["fin3a"]
    broken = fin3a.verdict == "violated" and not E.is_zero(fin3a.expr)
    return exact and broken, f"standard coefficients zero: {exact}; perturbed fin3a = {E.to_text(fin3a.expr)}"


def higgs_mass_check() -> tuple:
    m = load_shipped("u1_higgs")
    params = {"lambda": 1.0, "v": 1.0}
    r1 = gauge_mass(m, VacuumConfig.of(m, {"phi": [1.0, 0.0]}, params))
    alpha, beta = E.spacetime("alpha"), E.spacetime("beta")
    i = E.internal("i", 2)
    canon = E.equal(r1.symbolic_direct, 2 * E.Metric(alpha, beta) * E.Field("phi", (i,)) ** 2)
    # v = 5 puts (3, 4) on the vacuum circle, which keeps the lattice sum free of a large constant
    v2 = VacuumConfig.of(m, {"phi": [3.0, 4.0], "A": [0.0] * 4}, {"lambda": 1.0, "v": 5.0})
    r2 = gauge_mass(m, v2)
    block = -constant_mode_hessian(m, v2)[2:, 2:]
    fd = float(np.max(np.abs(block - r2.tensor))) / abs(r2.mass_squared)
    e1, e2 = abs(r1.mass - math.sqrt(2)), abs(r2.mass - math.sqrt(50))
    ok = canon and r1.routes_agree and e1 < MASS_ABS and e2 < MASS_ABS and fd < FD_REL
    return ok, f"canonical 2g*phi.phi: {canon}; |m-sqrt2| {e1:.1e}; |m-sqrt50| {e2:.1e}; lattice rel {fd:.1e}"


def would_be_goldstone_check() -> tuple:
    r = eliminate_would_be_goldstone(load_shipped("u1_higgs"))
    exact = r.residual_xi == E.ZERO and r.residual_dxi == E.ZERO
    text = shipped_text("u1_higgs").replace(
        "  + 2*g(mu,nu)*A[mu]*eps(i,j)*phi[i]*d(phi[j],nu)\n  + phi[i]*phi[i]*g(mu,nu)*A[mu]*A[nu]\n", "")
    ctrl = eliminate_would_be_goldstone(parse_model(text))
    survives = not E.is_zero(ctrl.residual_dxi)
    return exact and survives, (f"dL/dxi and dL/d(d xi) exactly 0: {exact}; "
                                f"decoupled control dL/d(d xi) = {E.to_text(ctrl.residual_dxi)}")


def conformal_accounting_check() -> tuple:
    m = load_shipped("coleman")
    scn = build_scenario(m)
    v = VacuumConfig.of(m, {"phi": 0.0, "sigma": 0.3}, {"f": 1.0, "mu": 1.0, "lambda": 1.0})
    mult = goldstone_multiplicity(scn, v)
    rep = analyze(scn)
    dil = rep.residuals["dilation"].part(())
    literal = twice = True
    for n, t in enumerate(scn.conformal):
        part = rep.residuals[t.name].part((n,))
        literal &= all(E.equal(part[k], dil[k]) for k in dil)
        twice &= all(E.equal(part[k], 2 * dil[k]) for k in dil)
    extra = all(c.verdict == "identically-zero" for c in rep.extra)
    solved = rep.solution.status == "solved" and rep.solution.assignments == {"phi": 0}
    # conformal deltas are 2 x^l times the dilation delta at constant fields, so the
    # x^l part reproduces the dilation residual up to that fixed factor of 2
    ok = mult == (5, 1, 4) and twice and extra and solved
    return ok, (f"multiplicity {mult}; x^l part equals dilation residual literally: {literal}, "
                f"as 2x: {twice}; extra constraints zero: {extra}; solution {rep.solution.text()}")


def coleman_matrix_check() -> tuple:
    rep = analyze(build_scenario(load_shipped("coleman")))
    dil = rep.residuals["dilation"].part(())
    phi, sigma = E.Field("phi"), E.Field("sigma")
    f, mu, lam = E.Param("f"), E.Param("mu"), E.Param("lambda")
    pre = mu ** 2 * E.ExpFn(2 * f * sigma)
    rows = [[1 + lam / (2 * mu ** 2) * phi ** 2 * E.ExpFn(-2 * f * sigma), 2 * f * phi],
            [2 * f * phi, 2 * f ** 2 * phi ** 2]]
    vec = [phi, 1 / f]
    same = [E.equal(dil[n], pre * (r[0] * vec[0] + r[1] * vec[1])) for n, r in zip(("phi", "sigma"), rows)]
    return all(same), f"rows equal: {same}; phi row {E.to_text(dil['phi'])}; sigma row {E.to_text(dil['sigma'])}"


def _run_property(fn) -> str | None:
    try:
        fn()
    except Exception as exc:  # noqa: BLE001 - any failure counts against the criterion
        return f"{fn.__name__}: {type(exc).__name__}"
    return None


def infrastructure_check() -> tuple:
    from tests.test_dsl import test_parser_survives_ten_thousand_mutants, test_random_models_round_trip
    from tests.test_expr import test_differentiation_matches_finite_differences
    from tests.test_variational import test_euler_operator_kills_divergences
    props = [test_random_models_round_trip, test_differentiation_matches_finite_differences,
             test_euler_operator_kills_divergences, test_parser_survives_ten_thousand_mutants]
    failed = [msg for msg in map(_run_property, props) if msg]
    return not failed, ("round trip x100, derivative vs FD x100, Euler operator x50, parser mutants x10000"
                        + (f"; failed: {failed}" if failed else ""))


CRITERIA = [
    (1, "Goldstone count at the Mexican hat vacuum", goldstone_count_check),
    (2, "generalized Goldstone identity on the lattice", generalized_identity_check),
    (3, "local gauge invariance and the perturbed coupling", gauge_invariance_check),
    (4, "gauge boson mass", higgs_mass_check),
    (5, "would-be Goldstone elimination", would_be_goldstone_check),
    (6, "conformal accounting", conformal_accounting_check),
    (7, "dilation constraint matrix form", coleman_matrix_check),
    (8, "infrastructure properties", infrastructure_check),
]


@pytest.mark.parametrize("n, title, check", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(n, title, check):
    ok, detail = check()
    assert _record(n, title, ok, detail), LINES[-1]


if __name__ == "__main__":
    results = [_record(n, title, *check()) for n, title, check in CRITERIA]
    print("\n".join(LINES))
    sys.exit(0 if all(results) else 1)
