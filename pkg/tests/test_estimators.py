import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import closed_box, furnace_scene, random_params
from semigrad.cache import CacheParams, EncodingConfig, constant_params, parameter_count
from semigrad.errors import ConfigurationError
from semigrad.estimators import (db_terms, estimate_rhs, evaluate_lhs, generic_terms, loss_grad_db,
                                 loss_grad_generic, loss_grad_nr, loss_grad_sg, loss_grad_wdb,
                                 nr_terms, rhs_from_directions, sg_terms, wdb_terms)
from semigrad.transport import UNIFORM, sample_surface
from semigrad.transport.sampling import COSINE, sample_direction

rgb = arrays(np.float64, (4, 3), elements=st.floats(-3, 3))


def setup(seed=0, B=6, M=4, params=None):
    """A lit closed box, random query points and three independent RHS buffers."""
    sc = closed_box(0.5, (3.0, 3.0, 3.0))
    rng = np.random.default_rng(seed)
    params = params or random_params(rng, hidden=(8,), frequencies=1, scale=0.3)
    x = sample_surface(sc, rng, B)
    w = sample_direction(x.normal, UNIFORM, rng).direction
    lhs = evaluate_lhs(params, sc, x, w)
    bufs = [estimate_rhs(sc, params, x, w, M, UNIFORM, np.random.default_rng(seed + 100 + k),
                         requires_grad=True, stream_id=k) for k in range(3)]
    return sc, params, x, w, lhs, bufs


# ---------------------------------------------------------------- closed-form terms

def test_nr_loss_example():
    loss, gL, gR = nr_terms(np.ones((1, 3)), np.zeros((1, 3)), 0.01)
    np.testing.assert_allclose(loss, 3 / 3.01, rtol=1e-15)
    np.testing.assert_allclose(loss, 0.99668, atol=1e-5)
    np.testing.assert_array_equal(gR, -gL)


def test_sg_same_loss_and_upstream():
    L, R = np.ones((1, 3)), np.zeros((1, 3))
    assert sg_terms(L, R, 0.01)[0] == nr_terms(L, R, 0.01)[0]
    loss, gL = sg_terms(np.array([[1.0]]), np.array([[0.5]]), 0.01)
    np.testing.assert_allclose(gL, 2 * 0.5 / 1.01, rtol=1e-15)
    np.testing.assert_allclose(gL, 0.990099, atol=1e-6)


def test_db_example_can_be_negative():
    loss, gL, gX, gY = db_terms(np.array([[1.0]]), np.array([[0.8]]), np.array([[1.2]]), 1e-300)
    np.testing.assert_allclose(loss, -0.04, rtol=1e-12)
    np.testing.assert_allclose(gX, -(1 - 1.2), rtol=1e-12)
    np.testing.assert_allclose(gY, -(1 - 0.8), rtol=1e-12)


def test_wdb_zero_weight_first_term():
    loss, gL, gX, gY = wdb_terms(np.array([[1.0]]), np.array([[0.8]]), np.array([[1.2]]), 0.0)
    assert loss[0] == 0.0 and gL[0, 0] == 0.0
    assert not gX.any() and not gY.any()


def test_mae_semi_example():
    eps = 0.01
    s = 1.0 / (1.0 + eps)
    loss, gL = generic_terms("mae", np.array([[1.0]]), np.array([[0.5]]), eps)
    np.testing.assert_allclose(loss, 0.5 * s, rtol=1e-15)
    np.testing.assert_allclose(gL, s, rtol=1e-15)


def test_huber_quadratic_branch():
    L, R = np.array([[1.0, 0.5, 0.2]]), np.array([[0.8, 0.6, 0.25]])
    loss, gL = generic_terms("huber", L, R, 0.01, delta=1.0)
    nl, ngL, _ = nr_terms(L, R, 0.01)
    np.testing.assert_allclose(loss, 0.5 * nl, rtol=1e-14)
    np.testing.assert_allclose(gL, 0.5 * ngL, rtol=1e-14)


def test_huber_linear_branch():
    loss, gL = generic_terms("huber", np.array([[3.0]]), np.array([[0.0]]), 1.0, delta=1.0)
    np.testing.assert_allclose(loss, (3.0 - 0.5) / 10.0)
    np.testing.assert_allclose(gL, 1.0 / 10.0)


@pytest.mark.parametrize("kind", ["rmse", "huber", "mae"])
def test_generic_zero_residual(kind):
    L = np.array([[0.3, 0.2, 0.9]])
    loss, gL = generic_terms(kind, L, L.copy())
    assert loss[0] == 0.0 and not gL.any()


def test_zero_residual_all_estimators():
    L = np.array([[0.3, 0.2, 0.9]])
    for loss, *grads in (nr_terms(L, L), db_terms(L, L, L), wdb_terms(L, L, L, 0.7)):
        assert loss[0] == 0.0
        assert all(not g.any() for g in grads)


def test_argument_errors():
    L = np.ones((1, 3))
    for eps in (0.0, -1.0):
        with pytest.raises(ConfigurationError):
            nr_terms(L, L, eps)
    with pytest.raises(ConfigurationError):
        wdb_terms(L, L, L, -0.1)
    with pytest.raises(ConfigurationError):
        generic_terms("l4", L, L)
    with pytest.raises(ConfigurationError):
        generic_terms("huber", L, L, delta=0.0)


@settings(max_examples=60, deadline=None)
@given(rgb, rgb, st.floats(1e-3, 1.0))
def test_upstream_is_derivative_with_frozen_denominator(L, R, eps):
    d = (L * L).sum(-1) + eps
    _, gL, gR = nr_terms(L, R, eps)
    h = 1e-6
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        num = lambda a, b: ((a - b) ** 2).sum(-1) / d  # noqa: E731
        np.testing.assert_allclose(gL[:, c], (num(L + e, R) - num(L - e, R)) / (2 * h), atol=1e-5)
        np.testing.assert_allclose(gR[:, c], (num(L, R + e) - num(L, R - e)) / (2 * h), atol=1e-5)


@settings(max_examples=60, deadline=None)
@given(rgb, rgb, rgb)
def test_db_symmetric_and_wdb_endpoints(L, X, Y):
    a, b = db_terms(L, X, Y), db_terms(L, Y, X)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-14, atol=1e-14)
    np.testing.assert_array_equal(a[1], b[1])
    w1 = wdb_terms(L, X, Y, 1.0)
    for i in (1, 2, 3):
        np.testing.assert_array_equal(w1[i], a[i])
    target = (X + Y) / 2.0
    np.testing.assert_array_equal(wdb_terms(L, X, Y, 0.0)[1], sg_terms(L, target)[1])


@settings(max_examples=60, deadline=None)
@given(rgb, rgb, rgb)
def test_db_unbiased_over_two_outcomes(L, A, B):
    # X, Y drawn independently from {A, B}: the expected LHS upstream of db
    # is the semi-gradient upstream toward the mean target
    mean = (A + B) / 2
    exp_db = np.mean([db_terms(L, X, Y)[1] for X in (A, B) for Y in (A, B)], axis=0)
    np.testing.assert_allclose(exp_db, sg_terms(L, mean)[1], rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- RHS estimate

def test_constant_cache_contribution_is_cosine():
    sc = closed_box(0.5)
    x = sample_surface(sc, np.random.default_rng(3), 5)
    cos = np.array([0.9, 0.5, 0.2, 0.7, 0.1])
    local = np.stack([np.sqrt(1 - cos**2), np.zeros(5), cos], -1)
    from semigrad.transport.sampling import to_world

    d = to_world(local, x.normal)[:, None, :]
    rhs = rhs_from_directions(sc, constant_params(1.0), x, x.normal, d, np.full((5, 1), 1 / (2 * np.pi)))
    assert rhs.valid.all()
    np.testing.assert_allclose(rhs.value, np.repeat(cos[:, None], 3, 1), rtol=1e-12)
    np.testing.assert_allclose(rhs.recompute(), rhs.value, rtol=1e-15)


def test_dark_box_zero_cache_gives_emission():
    sc = closed_box(0.5)
    rng = np.random.default_rng(4)
    x = sample_surface(sc, rng, 20)
    p = CacheParams(np.zeros(parameter_count((18, 3))), (18, 3), EncodingConfig(1))
    rhs = estimate_rhs(sc, p, x, x.normal, 8, COSINE, rng)
    np.testing.assert_array_equal(rhs.value, rhs.emission)
    np.testing.assert_array_equal(rhs.value, 0.0)


@pytest.mark.parametrize("strategy", [UNIFORM, COSINE])
def test_furnace_rhs_mean(strategy):
    sc = furnace_scene(0.5, 1.0)
    rng = np.random.default_rng(5)
    x = sample_surface(sc, rng, 10**5)
    rhs = estimate_rhs(sc, constant_params(1.0), x, x.normal, 1, strategy, rng)
    assert rhs.valid.all()
    assert abs(rhs.value.mean() / 2.0 - 1.0) < 0.01
    assert (rhs.pdf > 0).all()


def test_estimate_rhs_rejects_bad_m():
    sc = closed_box()
    x = sample_surface(sc, np.random.default_rng(0), 2)
    with pytest.raises(ConfigurationError):
        estimate_rhs(sc, constant_params(0.0), x, x.normal, 0, UNIFORM, np.random.default_rng(0))


# ---------------------------------------------------------------- estimators with backprop

def test_nr_decomposes_into_sg_plus_rhs_term():
    *_, lhs, (R, _, _) = setup(1)
    nr = loss_grad_nr(lhs, R)
    sg = loss_grad_sg(lhs, R)
    assert nr.loss == sg.loss
    assert sg.grad_rhs is None
    assert np.array_equal(nr.grad_lhs, sg.grad_lhs)
    assert np.array_equal(nr.grad, nr.grad_lhs + nr.grad_rhs)
    assert np.abs(nr.grad_rhs).max() > 0


def test_db_requires_distinct_streams():
    *_, lhs, (X, Y, _) = setup(2)
    with pytest.raises(ConfigurationError, match="uncorrelated"):
        loss_grad_db(lhs, X, dataclasses.replace(Y, stream_id=X.stream_id))
    with pytest.raises(ConfigurationError):
        loss_grad_wdb(lhs, X, X, 0.5)


def test_wdb_endpoints_bit_exact():
    *_, lhs, (X, Y, _) = setup(3)
    db = loss_grad_db(lhs, X, Y)
    w1 = loss_grad_wdb(lhs, X, Y, 1.0)
    assert np.array_equal(w1.grad, db.grad)
    w0 = loss_grad_wdb(lhs, X, Y, 0.0)
    avg = dataclasses.replace(X, value=(X.value + Y.value) / 2.0)
    sg = loss_grad_sg(lhs, avg)
    assert np.array_equal(w0.grad, sg.grad)
    assert w0.grad_rhs is None


def test_wdb_interpolates_rhs_term():
    *_, lhs, (X, Y, _) = setup(4)
    g0, g1 = loss_grad_wdb(lhs, X, Y, 0.0), loss_grad_wdb(lhs, X, Y, 1.0)
    gh = loss_grad_wdb(lhs, X, Y, 0.5)
    np.testing.assert_array_equal(gh.grad_lhs, g0.grad_lhs)
    np.testing.assert_allclose(gh.grad_rhs, 0.5 * g1.grad_rhs, rtol=1e-12, atol=1e-15)


def test_generic_modes():
    *_, lhs, (R, _, _) = setup(5)
    semi = loss_grad_generic("mae", "semi", lhs, R)
    full = loss_grad_generic("mae", "full", lhs, R)
    assert semi.loss == full.loss and semi.grad_rhs is None
    np.testing.assert_array_equal(full.upstream_rhs[0], -semi.upstream_lhs)
    with pytest.raises(ConfigurationError):
        loss_grad_generic("mae", "half", lhs, R)


def test_gradient_matches_finite_difference_of_nr_loss():
    # the full NR gradient differentiates both L and <R> with the normalizer frozen
    sc, params, x, w, lhs, (R, _, _) = setup(6, B=3, M=2)
    g = loss_grad_nr(lhs, R).grad
    d = (lhs.value**2).sum(-1) + 0.01

    def loss(theta):
        p = CacheParams(theta, params.topology, params.encoding)
        L = evaluate_lhs(p, sc, x, w, requires_grad=False).value
        Rv = rhs_from_directions(sc, p, x, w, R.directions, R.pdf).value
        return np.mean(((L - Rv) ** 2).sum(-1) / d)

    h = 1e-6
    for k in np.random.default_rng(0).choice(params.theta.size, 25, replace=False):
        e = np.zeros_like(params.theta)
        e[k] = h
        fd = (loss(params.theta + e) - loss(params.theta - e)) / (2 * h)
        assert abs(fd - g[k]) <= 1e-6 * max(1.0, abs(fd))


def test_zero_residual_zero_gradient():
    *_, lhs, (R, _, _) = setup(7)
    match = dataclasses.replace(R, value=lhs.value.copy())
    for out in (loss_grad_nr(lhs, match), loss_grad_sg(lhs, match)):
        assert out.loss == 0.0
        assert not out.grad.any()
