import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldsym import expr as E
from fieldsym.dsl import load_shipped, parse_model
from fieldsym.goldstone import VacuumConfig, generalized_residual, mass_matrix
from fieldsym.lattice import (LatticeConfig, LatticeSpec, NotASolution, UnsupportedShape,
                              check_generalized_goldstone, constant_mode_hessian,
                              discretize_action, numeric_gradient, numeric_hessian,
                              symbolic_agreement, zero_mode_block)

HAT = {"lambda": 0.5, "v": 1.0}
FREE = """model free
param m
field s scalar
lagrangian = (1/2)*g(mu,nu)*d(s,mu)*d(s,nu) - (1/2)*m^2*s^2
"""


def hat(x: float, y: float, params=HAT) -> tuple:
    m = load_shipped("mexican_hat")
    return m, VacuumConfig.of(m, {"phi": [x, y]}, params)


def test_constant_actions():
    m, v = hat(1.0, 0.0)
    l = LatticeSpec((8,))
    assert discretize_action(m, l)(LatticeConfig.constant(m, l, v)) == 0.0
    m, v = hat(0.0, 0.0, {"lambda": 1.0, "v": 1.0})
    assert discretize_action(m, l)(LatticeConfig.constant(m, l, v)) == pytest.approx(-2.0, abs=1e-14)


def _direct_sum(m, l: LatticeSpec, vals: np.ndarray, params: dict) -> float:
    """Site-by-site symbolic evaluation with hand-written central differences."""
    n, a = l.shape[0], l.spacing
    field = vals.reshape(n, 2)
    total = 0.0
    for s in range(n):
        assign = dict(params)
        for k in (1, 2):
            assign[E.Field("phi", (k,))] = field[s, k - 1]
            for mu in range(4):
                d = (field[(s + 1) % n, k - 1] - field[(s - 1) % n, k - 1]) / (2 * a) if mu == 1 else 0.0
                assign[E.FieldDeriv("phi", (k,), (mu,))] = d
        total += E.eval_numeric(m.lagrangian, assign)
    return total * a


def test_single_site_bump_matches_direct_summation():
    m = load_shipped("mexican_hat")
    l = LatticeSpec((10,), spacing=0.8)
    vals = np.zeros(20)
    vals[6] = 0.7
    vals[7] = -0.3
    got = discretize_action(m, l)(LatticeConfig(vals, HAT))
    assert abs(got - _direct_sum(m, l, vals, HAT)) < 1e-12


def test_gradient_vanishes_at_the_vacuum():
    m, v = hat(1.0, 0.0)
    l = LatticeSpec((16,))
    g = numeric_gradient(discretize_action(m, l), LatticeConfig.constant(m, l, v))
    assert np.max(np.abs(g)) < 1e-7


def test_hessian_is_symmetric_and_the_zero_mode_block_is_the_mass_matrix():
    m, v = hat(1.0, 0.0)
    l = LatticeSpec((16,))
    action = discretize_action(m, l)
    H = numeric_hessian(action, LatticeConfig.constant(m, l, v))
    assert np.max(np.abs(H - H.T)) / np.max(np.sum(np.abs(H), axis=1)) < 1e-10
    block = zero_mode_block(action, H)
    eigs = np.linalg.eigvalsh(block)
    scale = l.sites * l.volume_element
    assert np.allclose(eigs / scale, [0.0, 2 * 0.5], atol=1e-5)
    assert np.allclose(block / scale, mass_matrix(m, v).matrix, atol=1e-5)


def test_free_field_spectrum():
    m = parse_model(FREE)
    n = 16
    l = LatticeSpec((n,))
    c = LatticeConfig(np.zeros(n), {"m": 1.0})
    H = numeric_hessian(discretize_action(m, l), c)
    eigs = np.sort(np.linalg.eigvalsh(-H))
    # central differences: the wave number k and its doubler k + N/2 share sin^2(2 pi k / N)
    want = np.sort([1.0 + math.sin(2 * math.pi * k / n) ** 2 for k in range(n)])
    assert np.allclose(eigs, want, atol=1e-6)
    assert zero_mode_block(discretize_action(m, l), H)[0, 0] == pytest.approx(n, rel=1e-6)


def test_unsupported_shapes():
    with pytest.raises(UnsupportedShape):
        LatticeSpec((3,))
    with pytest.raises(UnsupportedShape):
        LatticeSpec((65, 64))
    with pytest.raises(UnsupportedShape):
        LatticeSpec((8,), boundary="open")
    with pytest.raises(UnsupportedShape):
        LatticeSpec((4,) * 5).directions(4)
    assert LatticeSpec((4, 4, 4, 4)).directions(4) == (0, 1, 2, 3)
    assert LatticeSpec((8, 8)).directions(4) == (1, 2)


def test_goldstone_identity_on_the_lattice():
    m, v = hat(1.0, 0.0)
    res = check_generalized_goldstone(m, m.transformation("u1"), v)
    assert res.residual < 1e-6 and not res.interior_only


def test_identity_needs_the_equation_of_motion():
    m, v = hat(0.5, 0.0)
    with pytest.raises(NotASolution):
        check_generalized_goldstone(m, m.transformation("u1"), v)
    res = check_generalized_goldstone(m, m.transformation("u1"), v, require_solution=False)
    assert res.residual > 0.1


@pytest.mark.parametrize("name", ["dilation", "conformal_0", "conformal_1", "conformal_3"])
def test_coleman_identities_on_the_lattice(name):
    m = load_shipped("coleman")
    v = VacuumConfig.of(m, {"phi": 0.0, "sigma": 0.3}, {"f": 1.0, "mu": 1.0, "lambda": 1.0})
    res = check_generalized_goldstone(m, m.transformation(name), v)
    assert res.residual < 1e-6
    # only the retained spatial coordinate varies across the lattice
    assert res.interior_only == (name == "conformal_1")


def test_gauge_identity_on_the_lattice():
    m = load_shipped("u1_higgs")
    v = VacuumConfig.of(m, {"phi": [1.0, 0.0], "A": [0.0] * 4}, {"lambda": 1.0, "v": 1.0})
    assert check_generalized_goldstone(m, m.transformation("gauge"), v).residual < 1e-6


@pytest.mark.parametrize("model, tname, vac, params", [
    ("mexican_hat", "u1", {"phi": [1.0, 0.0]}, HAT),
    ("mexican_hat", "u1", {"phi": [0.6, 0.3]}, HAT),
    ("broken", "shift", {"phi": 0.4}, {"m": 1.3}),
    ("coleman", "dilation", {"phi": 0.5, "sigma": 0.1}, {"f": 1.0, "mu": 1.0, "lambda": 2.0}),
    ("coleman", "conformal_1", {"phi": 0.5, "sigma": 0.1}, {"f": 1.0, "mu": 1.0, "lambda": 2.0}),
    ("u1_higgs", "gauge", {"phi": [0.8, -0.4], "A": [0.0] * 4}, {"lambda": 1.0, "v": 1.0}),
])
def test_symbolic_residual_agrees_with_the_lattice(model, tname, vac, params):
    m = load_shipped(model)
    t = m.transformation(tname)
    v = VacuumConfig.of(m, vac, params)
    assert symbolic_agreement(m, t, v, generalized_residual(m, t)) < 1e-5


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.3, 2.0))
def test_every_vacuum_on_the_circle_passes(angle, radius):
    m, v = hat(radius * math.cos(angle), radius * math.sin(angle), {"lambda": 0.5, "v": radius})
    assert check_generalized_goldstone(m, m.transformation("u1"), v, LatticeSpec((8,))).residual < 1e-6


def test_constant_mode_hessian_is_the_mass_matrix():
    m, v = hat(0.6, 0.8)
    assert np.allclose(constant_mode_hessian(m, v), mass_matrix(m, v).matrix, atol=1e-6)
