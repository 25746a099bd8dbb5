import numpy as np
import pytest

from ccq.exceptions import ConvergenceError, ValidationError
from ccq.mdp import (
    TabularMdp,
    average_policy_error,
    bellman_iterates,
    bellman_residual,
    greedy_policy,
    load_mdp,
    occupancy_distribution,
    random_mdp,
    save_mdp,
    step,
    value_iteration,
)


def test_single_state_geometric_series():
    m = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    q, v, pi = value_iteration(m)
    assert v[0] == pytest.approx(2.0, abs=1e-9)
    assert pi.tolist() == [0]


def test_swap_values_solve_linear_system(swap_mdp):
    _, v, _ = value_iteration(swap_mdp)
    # V0 = 1 + V1/2, V1 = 2 + V0/2
    np.testing.assert_allclose(v, [8 / 3, 10 / 3], atol=1e-9)


def test_dominated_action_is_never_chosen():
    rng = np.random.default_rng(0)
    p = np.repeat(rng.dirichlet(np.ones(4), size=4)[:, :, None], 2, axis=2)
    cost = np.column_stack([np.full(4, 2.0), np.full(4, 1.0)])
    _, _, pi = value_iteration(TabularMdp(p, cost, 0.9))
    assert pi.tolist() == [1, 1, 1, 1]


def test_residual_certificate():
    m = random_mdp(8, 3, np.random.default_rng(1), discount=0.95)
    q, v, pi = value_iteration(m, tol=1e-8)
    assert bellman_residual(m, q) <= 1e-8
    np.testing.assert_array_equal(v, q.min(axis=1))
    np.testing.assert_array_equal(pi, np.argmin(q, axis=1))


def test_nonconvergence_reports_residual():
    m = random_mdp(5, 2, np.random.default_rng(2), discount=0.99)
    with pytest.raises(ConvergenceError) as err:
        value_iteration(m, tol=1e-12, max_iter=3)
    assert err.value.residual > 1e-12
    assert err.value.iterations == 3


def test_contraction_per_sweep():
    m = random_mdp(6, 2, np.random.default_rng(3), discount=0.8)
    q_star = value_iteration(m, tol=1e-13)[0]
    gaps = []
    for k, q in enumerate(bellman_iterates(m)):
        gaps.append(np.max(np.abs(q - q_star)))
        if k == 30:
            break
    for a, b in zip(gaps, gaps[1:]):
        assert b <= 0.8 * a + 1e-12


def test_action_permutation_equivariance():
    m = random_mdp(7, 3, np.random.default_rng(4))
    perm = [2, 0, 1]
    permuted = TabularMdp(m.transition[:, :, perm], m.cost[:, perm], m.discount)
    q1, _, pi1 = value_iteration(m)
    q2, _, pi2 = value_iteration(permuted)
    np.testing.assert_allclose(q2, q1[:, perm], atol=1e-9)
    np.testing.assert_array_equal(np.array(perm)[pi2], pi1)


def test_ties_go_to_lowest_index():
    assert greedy_policy(np.array([[1.0, 1.0], [2.0, 1.0]])).tolist() == [0, 1]


@pytest.mark.parametrize("bad", [
    dict(transition=np.full((2, 2, 1), 0.6), cost=np.ones((2, 1)), discount=0.5),
    dict(transition=np.eye(2)[:, :, None], cost=np.zeros((2, 1)), discount=0.5),
    dict(transition=np.eye(2)[:, :, None], cost=np.ones((2, 1)), discount=1.0),
    dict(transition=np.array([[1.5, -0.5], [0.0, 1.0]])[:, :, None], cost=np.ones((2, 1)), discount=0.5),
])
def test_invariants_enforced(bad):
    with pytest.raises(ValidationError):
        TabularMdp(**bad)


def test_step_degenerate_row():
    p = np.zeros((4, 4, 1))
    p[:, 3, 0] = 1.0
    m = TabularMdp(p, np.ones((4, 1)), 0.9)
    rng = np.random.default_rng(0)
    assert {step(m, s, 0, rng)[0] for s in range(4) for _ in range(50)} == {3}


def test_step_frequency_monte_carlo():
    p = np.zeros((2, 2, 1))
    p[:, :, 0] = [0.75, 0.25]
    m = TabularMdp(p, np.ones((2, 1)), 0.9)
    rng = np.random.default_rng(11)
    hits = sum(step(m, 0, 0, rng)[0] == 0 for _ in range(100_000))
    assert abs(hits / 100_000 - 0.75) <= 0.01


def test_step_rejects_bad_indices(swap_mdp):
    with pytest.raises(ValidationError):
        step(swap_mdp, 2, 0, np.random.default_rng(0))


@pytest.mark.parametrize("a, b, expected", [
    ([0, 1, 0, 1], [0, 1, 0, 1], 0.0),
    ([0, 1, 0, 1], [1, 0, 1, 0], 1.0),
    ([0, 1, 0, 1], [0, 1, 0, 0], 0.25),
])
def test_average_policy_error(a, b, expected):
    assert average_policy_error(np.array(a), np.array(b)) == expected


def test_average_policy_error_shape_mismatch():
    with pytest.raises(ValidationError):
        average_policy_error(np.zeros(3), np.zeros(4))


def test_occupancy_swap_is_balanced(swap_mdp):
    d, residual = occupancy_distribution(swap_mdp, np.array([0, 0]))
    np.testing.assert_allclose(d[:, 0], [0.5, 0.5], atol=1e-9)
    assert residual < 1e-9


def test_occupancy_absorbing_state():
    p = np.zeros((3, 3, 2))
    p[:, 0, :] = 1.0
    m = TabularMdp(p, np.ones((3, 2)), 0.9)
    d, _ = occupancy_distribution(m, np.array([1, 0, 0]))
    assert d[0, 1] == pytest.approx(1.0)
    assert d.sum() == pytest.approx(1.0)


def test_occupancy_uniform_transitions():
    m = TabularMdp(np.full((5, 5, 2), 0.2), np.ones((5, 2)), 0.9)
    d, _ = occupancy_distribution(m, np.zeros(5, dtype=int))
    np.testing.assert_allclose(d[:, 0], np.full(5, 0.2))


def test_serialization_round_trip(tmp_path):
    m = random_mdp(9, 3, np.random.default_rng(5), discount=0.93, support=4)
    save_mdp(m, tmp_path / "m.txt")
    back = load_mdp(tmp_path / "m.txt")
    assert back.discount == m.discount
    np.testing.assert_allclose(back.transition, m.transition, atol=1e-12, rtol=0)
    np.testing.assert_allclose(back.cost, m.cost, atol=1e-12, rtol=0)


def test_load_rejects_missing_header(tmp_path):
    (tmp_path / "x.txt").write_text("n_states 1\n")
    with pytest.raises(ValidationError):
        load_mdp(tmp_path / "x.txt")
