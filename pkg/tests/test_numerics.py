import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcvad import numerics as nx
from dcvad.errors import DeterminismError, IncompleteGradientError, InvalidInputError
from dcvad.numerics import OptimState, ParamSet, Tensor, adam_step, gaussian_log_density, grad_check


def test_gaussian_log_density_constants():
    assert gaussian_log_density(np.zeros(1)) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert gaussian_log_density(np.zeros(24)) == pytest.approx(-12 * math.log(2 * math.pi), abs=1e-12)
    assert gaussian_log_density(np.zeros(24)) == pytest.approx(-22.0545, abs=1e-4)


def test_gaussian_log_density_matches_scalar_sum():
    rng = np.random.default_rng(3)
    z = rng.normal(size=5)
    # product of five univariate pdfs, logged
    direct = sum(math.log(math.exp(-v * v / 2) / math.sqrt(2 * math.pi)) for v in z)
    assert gaussian_log_density(z) == pytest.approx(direct, abs=1e-12)


def test_gaussian_log_density_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        gaussian_log_density(np.array([0.0, np.nan]))
    with pytest.raises(InvalidInputError):
        gaussian_log_density(np.zeros(3), dims=4)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_gaussian_log_density_permutation_invariant_and_max_at_zero(vals):
    z = np.array(vals)
    assert gaussian_log_density(z[::-1]) == pytest.approx(gaussian_log_density(z), rel=1e-12, abs=1e-12)
    assert gaussian_log_density(np.zeros_like(z)) >= gaussian_log_density(z)


def test_grad_check_quadratic():
    params = ParamSet({"p": np.array([1.0, 2.0, 3.0])})
    err = grad_check(lambda ps: (ps["p"] * ps["p"]).sum(), params, 1e-5)
    assert err < 1e-8


def test_grad_check_detects_nondeterminism():
    counter = iter(range(100))

    def noisy(ps):
        return (ps["p"] * ps["p"]).sum() + float(next(counter))

    with pytest.raises(DeterminismError):
        grad_check(noisy, ParamSet({"p": np.ones(2)}))


def test_grad_check_rejects_bad_eps():
    with pytest.raises(InvalidInputError):
        grad_check(lambda ps: ps["p"].sum(), ParamSet({"p": np.ones(2)}), eps=0.0)


def _op_cases():
    rng = np.random.default_rng(0)
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    labels = np.array([1, 0, 1])
    idx = np.array([0, 2])
    return {
        "add-broadcast": lambda p: (p["a"] + p["v"]).sum(),
        "mul-sub": lambda p: ((p["a"] - 0.3) * p["a"] * p["v"]).sum(),
        "matmul-tanh": lambda p: nx.tanh(p["a"] @ p["b"]).sum(),
        "exp-mean": lambda p: nx.exp(p["a"] * 0.5).mean(),
        "reshape-sum-axis": lambda p: (nx.tanh(p["a"].reshape(2, 6).sum(axis=0)) * 1.5).sum(),
        "take-scatter": lambda p: (nx.scatter_columns([(nx.take_columns(p["a"], idx), np.array([1, 3])),
                                                       (nx.take_columns(p["a"], np.array([1, 3])), idx)], 4)
                                   * nx.tanh(p["a"])).sum(),
        "cross-entropy": lambda p: nx.cross_entropy(p["a"] @ p["b"], labels, np.array([1.0, 0.5, 2.0])),
        "gauss": lambda p: gaussian_log_density(p["a"]).sum(),
    }, {"a": a0, "b": b0, "v": rng.normal(size=4)}


@pytest.mark.parametrize("name", list(_op_cases()[0]))
def test_every_op_gradient(name):
    cases, vals = _op_cases()
    assert grad_check(cases[name], ParamSet(vals), 1e-5) < 1e-6


def test_unused_parameter_gets_zero_gradient():
    ps = ParamSet({"used": np.ones(3), "unused": np.ones(2)})
    ps.backward((ps["used"] * 2.0).sum())
    assert np.array_equal(ps.grads["unused"], np.zeros(2))
    assert np.array_equal(ps.grads["used"], np.full(3, 2.0))


def test_no_grad_builds_no_tape():
    ps = ParamSet({"p": np.ones(3)})
    with nx.no_grad():
        out = (ps["p"] * 3.0).sum()
    assert not out.requires_grad


def test_adam_hand_computed_first_step():
    ps = ParamSet({"p": np.array([0.0])})
    ps.grads = {"p": np.array([1.0])}
    new, state = adam_step(ps, OptimState(lr=0.1))
    # m_hat = 1, v_hat = 1 after bias correction
    assert new["p"].data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert new["p"].data[0] == pytest.approx(-0.0999999, abs=1e-7)
    assert state.step == 1


def test_adam_zero_gradient_is_fixed_point():
    vals = np.array([[1.5, -2.0], [0.25, 3.0]])
    ps = ParamSet({"w": vals})
    ps.grads = {"w": np.zeros_like(vals)}
    new, state = adam_step(ps, OptimState())
    assert np.array_equal(new["w"].data, vals)
    assert state.step == 1


def test_adam_reduces_convex_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    ps, state = ParamSet({"p": np.zeros(3)}), OptimState(lr=0.1)

    def loss(p):
        d = p["p"] - target
        return (d * d).sum()

    before = loss(ps).item()
    for _ in range(2):
        ps.backward(loss(ps))
        ps, state = adam_step(ps, state)
    assert loss(ps).item() < before
    assert state.step == 2


def test_adam_missing_gradient():
    ps = ParamSet({"a": np.ones(2), "b": np.ones(2)})
    ps.grads = {"a": np.ones(2)}
    with pytest.raises(IncompleteGradientError):
        adam_step(ps, OptimState())


def test_adam_does_not_mutate_inputs():
    ps = ParamSet({"p": np.array([1.0, 2.0])})
    ps.grads = {"p": np.array([0.5, -0.5])}
    state = OptimState()
    adam_step(ps, state)
    assert np.array_equal(ps["p"].data, [1.0, 2.0]) and state.step == 0 and not state.m


def test_backward_accumulates_shared_subexpressions():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y * y + y).sum().backward()
    # d/dx (x^4 + x^2) = 4x^3 + 2x
    assert x.grad[0] == pytest.approx(4 * 8 + 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_softmax_rows_are_distributions(n, k, seed):
    logits = np.random.default_rng(seed).normal(scale=30, size=(n, k))
    p = nx.softmax(logits)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
