import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldsym import expr as E
from fieldsym.dsl import load_shipped, parse_model
from fieldsym.goldstone import (NoPotential, SymmetryNotVerified, VacuumConfig, check_extremum,
                                delta_vector, generalized_residual, goldstone_count, mass_matrix,
                                potential)

HAT = {"lambda": 0.5, "v": 1.0}


def hat_vacuum(x: float, y: float, params=HAT) -> VacuumConfig:
    m = load_shipped("mexican_hat")
    return VacuumConfig.of(m, {"phi": [x, y]}, params)


def test_potential_drops_kinetic_terms():
    m = load_shipped("mexican_hat")
    lam, v = E.Param("lambda"), E.Param("v")
    phi = E.Field("phi", (E.internal("i"),))
    assert E.equal(potential(m), lam / 4 * (phi * phi - v * v) ** 2)


def test_mass_spectrum_on_the_circle():
    m = load_shipped("mexican_hat")
    rep = mass_matrix(m, hat_vacuum(1.0, 0.0))
    # analytic: diag(2 lambda v^2, 0)
    assert np.allclose(rep.matrix, [[1.0, 0.0], [0.0, 0.0]], atol=1e-12)
    assert np.allclose(rep.eigenvalues, [0.0, 1.0], atol=1e-12)
    assert rep.zero_count == 1 and rep.extremum.is_extremum


def test_goldstone_count_and_annihilation():
    m = load_shipped("mexican_hat")
    rep = goldstone_count(m, hat_vacuum(1.0, 0.0), list(m.transformations))
    assert rep.goldstone_count == 1
    (d,) = rep.deltas
    assert np.allclose(d.vector, [0.0, -1.0])
    assert d.annihilated and d.direction == 0
    assert rep.warnings == []


def test_symmetric_point_has_no_goldstones():
    m = load_shipped("mexican_hat")
    rep = goldstone_count(m, hat_vacuum(0.0, 0.0), list(m.transformations))
    assert rep.goldstone_count == 0
    assert np.allclose(rep.eigenvalues, [-0.5, -0.5])


def test_off_shell_point_is_flagged():
    m = load_shipped("mexican_hat")
    ext = check_extremum(m, hat_vacuum(0.5, 0.0).complete(m))
    assert not ext.is_extremum
    assert math.isclose(ext.gradient[0], 0.5 * (0.25 - 1) * 0.5)
    rep = goldstone_count(m, hat_vacuum(0.5, 0.0), list(m.transformations))
    assert any("not an extremum" in w for w in rep.warnings)
    assert any("annihilate" in w for w in rep.warnings)


def test_broken_shift_needs_override():
    m = load_shipped("broken")
    v = VacuumConfig.of(m, {"phi": 0.0}, {"m": 1.0})
    with pytest.raises(SymmetryNotVerified):
        goldstone_count(m, v, list(m.transformations))
    rep = goldstone_count(m, v, list(m.transformations), override=True)
    assert rep.goldstone_count == 1
    assert rep.zero_count == 0
    assert any("not a symmetry" in w for w in rep.warnings)


def test_potential_needs_the_kinetic_minus_potential_shape():
    free = parse_model("model t\nfield s scalar\nlagrangian = d(s,mu)*d(s,nu)*g(mu,nu)\n")
    assert potential(free) == E.ZERO
    with pytest.raises(NoPotential):
        potential(load_shipped("u1_higgs"))


def test_generalized_residual_of_a_global_symmetry_is_mass_times_delta():
    m = load_shipped("mexican_hat")
    (t,) = m.transformations
    dec = generalized_residual(m, t)
    assert set(dec.parts) == {()}
    for x, y in [(1.0, 0.0), (0.3, -0.8), (0.5, 0.0)]:
        v = hat_vacuum(x, y).complete(m)
        got = dec.evaluate(m, v)[()]
        rep = mass_matrix(m, v)
        assert np.allclose(got, rep.matrix @ delta_vector(m, t, v), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.2, 3.0), st.floats(0.1, 2.0))
def test_any_point_on_the_vacuum_manifold_has_one_goldstone(angle, radius, lam):
    m = load_shipped("mexican_hat")
    params = {"lambda": lam, "v": radius}
    v = hat_vacuum(radius * math.cos(angle), radius * math.sin(angle), params)
    rep = goldstone_count(m, v, list(m.transformations))
    assert rep.goldstone_count == 1 and rep.zero_count == 1
    assert math.isclose(max(rep.eigenvalues), 2 * lam * radius ** 2, rel_tol=1e-9)
    assert rep.deltas[0].annihilated
