import numpy as np
import pytest
import scipy.sparse as sp
import torch
from hypothesis import given, strategies as st

from gapfill import GappyField, NormStats, SolverSpec, build_model, cost, grad_cost, infer, make_prior, solve
from gapfill.errors import Diverged, InvalidSpec, ShapeMismatch
from oracles import central_difference, cg_minimizer, diffusion_matrix, lipschitz, quad_cost


def instance(seed, shape=(2, 8, 8), land=True, frac=0.6):
    rng = np.random.default_rng(seed)
    valid = rng.random(shape) < frac
    if land:
        valid[:, :2, :2] = False
    y = GappyField(rng.normal(size=shape), valid)
    x = rng.normal(size=shape) * y.ocean
    return x, y


def linear_operator(kind, y, nu=0.2, nu_t=0.1):
    T, H, W = y.shape
    if kind == "zero":
        return make_prior("zero"), sp.csr_matrix((y.values.size, y.values.size))
    return make_prior("diffusion", nu=nu, nu_t=nu_t), diffusion_matrix(T, H, W, nu, nu_t, y.ocean)


def test_cost_examples():
    zero = make_prior("zero")
    one = np.zeros((1, 2, 2), bool)
    one[0, 0, 0] = True
    x = np.zeros((1, 2, 2))
    x[0, 0, 0] = 3.0
    assert cost(x, GappyField(np.full((1, 2, 2), 2.0), one), zero, 1.0, 0.0) == 1.0
    full = GappyField(np.zeros((1, 2, 2)), np.ones((1, 2, 2), bool))
    assert cost(np.array([[[1.0, 2.0], [0.0, 0.0]]]), full, zero, 0.0, 1.0) == 5.0


def test_cost_zero_at_fixed_point():
    _, y = instance(0)
    ident = make_prior("diffusion", nu=0.0, nu_t=0.0)
    x = y.filled(0.0)
    assert cost(x, y, ident, 1.3, 0.7) == 0.0


def test_diffusion_with_zero_nu_is_identity_and_land_maps_to_zero():
    x, y = instance(1)
    ocean = torch.tensor(y.ocean, dtype=torch.float64)
    xt = torch.tensor(np.random.default_rng(0).normal(size=y.shape))
    out = make_prior("diffusion", nu=0.0, nu_t=0.0)(xt, ocean)
    torch.testing.assert_close(out, xt * ocean, rtol=0, atol=0)
    for kind in ("zero", "diffusion", "convnet"):
        phi = make_prior(kind)(xt, ocean)
        assert phi.shape == xt.shape
        assert torch.all(phi[:, ~torch.tensor(y.ocean)] == 0)


def test_gradient_closed_form_without_prior():
    x, y = instance(2)
    g = grad_cost(x, y, make_prior("convnet"), 0.8, 0.0)
    expected = np.where(y.valid, 2 * 0.8 * (x - y.filled(0.0)), 0.0)
    np.testing.assert_allclose(g, expected, rtol=1e-14, atol=0)


@pytest.mark.parametrize("kind", ["zero", "diffusion", "convnet"])
@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_differences(kind, seed):
    x, y = instance(seed)
    prior = make_prior(kind, **({"seed": seed} if kind == "convnet" else {}))
    g = grad_cost(x, y, prior, 1.0, 0.9)
    fd = central_difference(lambda z: cost(z, y, prior, 1.0, 0.9), x)
    assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-5


def test_shape_mismatch():
    x, y = instance(0)
    with pytest.raises(ShapeMismatch):
        cost(x[:1], y, make_prior("zero"), 1, 1)
    with pytest.raises(ShapeMismatch):
        grad_cost(x[:, :4], y, make_prior("zero"), 1, 1)


def test_plain_step_one_pixel():
    valid = np.zeros((1, 3, 3), bool)
    valid[0, 1, 1] = True
    y = GappyField(np.ones((1, 3, 3)), valid)
    x = solve(y, make_prior("zero"), SolverSpec(lambda1=1, lambda2=0, K=1, update="plain", alpha=0.5, init="zero-fill"))
    assert x[0, 1, 1] == 1.0 and x.sum() == 1.0


@pytest.mark.parametrize("kind", ["zero", "diffusion"])
def test_solve_reaches_quadratic_minimizer(kind):
    _, y = instance(5, shape=(3, 12, 12))
    prior, A = linear_operator(kind, y)
    yv = y.filled(0.0)
    xs = cg_minimizer(yv, y.valid, y.ocean, A, 1.0, 0.5)
    assert np.linalg.norm(grad_cost(xs, y, prior, 1.0, 0.5)) < 1e-8
    L = lipschitz(yv, y.valid, y.ocean, A, 1.0, 0.5)
    x = solve(y, prior, SolverSpec(lambda1=1.0, lambda2=0.5, K=500, update="plain", alpha=1.0 / L))
    c_star = quad_cost(xs, yv, y.valid, y.ocean, A, 1.0, 0.5)
    assert abs(cost(x, y, prior, 1.0, 0.5) - c_star) <= 1e-6 * c_star
    xm = solve(y, prior, SolverSpec(lambda1=1.0, lambda2=0.5, K=300, update="momentum", alpha=0.5 / L, beta=0.8))
    assert abs(cost(xm, y, prior, 1.0, 0.5) - c_star) <= 1e-6 * c_star


def test_plain_solver_cost_is_monotone_below_inverse_lipschitz():
    _, y = instance(8, shape=(2, 10, 10))
    prior, A = linear_operator("diffusion", y, nu=0.24, nu_t=0.2)
    L = lipschitz(y.filled(0.0), y.valid, y.ocean, A, 1.0, 2.0)
    costs = [cost(solve(y, prior, SolverSpec(lambda1=1.0, lambda2=2.0, K=k, update="plain", alpha=0.99 / L)),
                  y, prior, 1.0, 2.0) for k in range(1, 25)]
    assert all(b <= a for a, b in zip(costs, costs[1:]))


@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_lambda_scaling(c, seed):
    x, y = instance(seed)
    prior, A = linear_operator("diffusion", y)
    assert cost(x, y, prior, c * 1.0, c * 0.5) == pytest.approx(c * cost(x, y, prior, 1.0, 0.5), rel=1e-12)
    np.testing.assert_allclose(grad_cost(x, y, prior, c, c * 0.5), c * grad_cost(x, y, prior, 1.0, 0.5),
                               rtol=1e-12, atol=1e-12 * c)
    yv = y.filled(0.0)
    np.testing.assert_allclose(cg_minimizer(yv, y.valid, y.ocean, A, c, c * 0.5),
                               cg_minimizer(yv, y.valid, y.ocean, A, 1.0, 0.5), atol=1e-8)


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        SolverSpec(K=0)
    with pytest.raises(InvalidSpec):
        SolverSpec(update="plain", alpha=0.0)
    with pytest.raises(InvalidSpec):
        SolverSpec(lambda1=0.0, lambda2=0.0)
    with pytest.raises(InvalidSpec):
        make_prior("spline")


def test_divergence_reports_iteration():
    _, y = instance(0)
    with pytest.raises(Diverged) as err:
        solve(y, make_prior("zero"), SolverSpec(K=2000, update="plain", alpha=1e3))
    assert err.value.iteration > 0


def test_infer_fills_ocean_and_leaves_parameters_alone():
    _, y = instance(3, shape=(5, 8, 8))
    y = y.replace(values=10.0 ** y.values, valid=y.valid)
    stats = NormStats(0.0, 1.0, "log10")
    model = build_model({"kind": "convnet", "channels": 2}, {"K": 3, "hidden": 2}, seed=1)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    out = infer(y, model, stats)
    assert out.valid[:, y.ocean].all() and not out.valid[:, ~y.ocean].any()
    assert (out.values[out.valid] > 0).all()
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k])
    assert all(p.requires_grad for n, p in model.named_parameters() if "lam" not in n)


def test_unnormalized_input_warns():
    _, y = instance(0)
    shifted = y.replace(values=10.0 ** (y.values + 20.0), valid=y.valid)
    model = build_model({"kind": "zero"}, {"K": 1, "update": "plain"})
    with pytest.warns(RuntimeWarning, match="unnormalized"):
        infer(shifted, model, NormStats(0.0, 1.0, "log10"))
