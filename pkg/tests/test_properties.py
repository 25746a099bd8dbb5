import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccq.coverage import (
    bound_prop1,
    bound_prop2,
    cc_star,
    coverage_coefficient,
    estimate_lambda,
    exploration_dist,
)
from ccq.ensemble import feedback, fuse
from ccq.mdp import average_policy_error, random_mdp
from ccq.ordering import f_gamma, order_environments
from ccq.qlearning import QTrace, q_update
from ccq.synthesis import build_nhop
from ccq.wireless import MixedRadix

positive = st.floats(0.01, 100.0, allow_nan=False)
gammas = st.floats(0.01, 0.99)
seeds = st.integers(0, 2 ** 32 - 1)


def q_tables(max_states=6, max_actions=4):
    shapes = st.tuples(st.integers(1, max_states), st.integers(2, max_actions))
    return shapes.flatmap(lambda shape: arrays(np.float64, shape, elements=positive))


@given(q=q_tables(), data=st.data())
def test_coverage_is_inverse_exploration_or_zero(q, data):
    n_states, n_actions = q.shape
    pi = np.array(data.draw(st.lists(st.integers(0, n_actions - 1), min_size=n_states, max_size=n_states)))
    s = data.draw(st.integers(0, n_states - 1))
    a = data.draw(st.integers(0, n_actions - 1))
    c = coverage_coefficient(q, pi, s, a)
    if pi[s] == a:
        assert math.isclose(c, 1.0 / exploration_dist(q, s)[a], rel_tol=1e-12)
        assert c >= 1.0
    else:
        assert c == 0.0


@given(q=q_tables())
def test_exploration_is_a_distribution(q):
    for s in range(q.shape[0]):
        v = exploration_dist(q, s)
        assert math.isclose(v.sum(), 1.0, rel_tol=1e-12) and np.all(v > 0)


@given(q=q_tables(), data=st.data())
def test_adding_pairs_never_lowers_c_star(q, data):
    pi = np.argmin(q, axis=1)
    pairs = [(s, int(pi[s])) for s in range(q.shape[0])]
    k = data.draw(st.integers(1, len(pairs)))
    assert cc_star(q, pi, pairs[:k]) <= cc_star(q, pi, pairs)


@given(gamma=gammas, n=st.integers(2, 40), m=st.integers(2, 40))
def test_f_gamma_reciprocity(gamma, n, m):
    assert math.isclose(f_gamma(gamma, n, m) * f_gamma(gamma, m, n), 1.0, rel_tol=1e-12)


@given(gamma=gammas, n=st.integers(2, 30), d=st.integers(1, 10))
def test_f_gamma_exceeds_one_for_smaller_order(gamma, n, d):
    f = f_gamma(gamma, n, n + d)
    assert f >= 1.0
    # f - 1 is about gamma**(n-1) * (1 - gamma)**2, invisible below double precision
    if gamma ** (n - 1) * (1 - gamma) ** 2 > 1e-12:
        assert f > 1.0


@given(k=st.integers(2, 15), gamma=gammas, alpha=st.floats(0, 1), c_min=st.floats(0.1, 10),
       spread=st.floats(1, 20))
def test_ranking_is_permutation_with_base_first(k, gamma, alpha, c_min, spread):
    res = order_environments(k, gamma, alpha, c_min, c_min * spread)
    assert sorted(res.ranking) == list(range(1, k + 1))
    assert res.ranking[0] == 1
    assert res.comparisons == k * (k - 1) // 2
    assert sum(res.copeland_scores.values()) == res.comparisons


@given(seed=seeds, k=st.integers(1, 5))
def test_fuse_is_permutation_equivariant(seed, k):
    rng = np.random.default_rng(seed)
    tables = [rng.uniform(0.1, 5, size=(3, 2)) for _ in range(k)]
    weights = rng.dirichlet(np.ones(k))
    perm = rng.permutation(k)
    a = fuse(tables, weights)
    b = fuse([tables[i] for i in perm], [weights[i] for i in perm])
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert np.all(a >= np.min(tables, axis=0) - 1e-12) and np.all(a <= np.max(tables, axis=0) + 1e-12)


@given(seed=seeds, u=st.floats(0, 1))
def test_feedback_stays_between_member_and_ensemble(seed, u):
    rng = np.random.default_rng(seed)
    m, e = rng.uniform(0.1, 5, size=(4, 2)), rng.uniform(0.1, 5, size=(4, 2))
    out = feedback(m, e, u)
    assert np.all(out >= np.minimum(m, e) - 1e-12) and np.all(out <= np.maximum(m, e) + 1e-12)


@given(seed=seeds, shift=st.floats(-50, 50))
def test_lambda_is_shift_consistent(seed, shift):
    rng = np.random.default_rng(seed)
    q_star = rng.uniform(1, 3, size=(3, 2))
    pairs = ((0, 0), (1, 1), (2, 0))
    idx = tuple(np.array(p) for p in zip(*pairs))
    values = q_star[idx][None, :] + rng.normal(0, 0.2, size=(40, 3))
    t = np.arange(1, 41)

    def trace(vals):
        return QTrace(pairs, t, vals, np.zeros_like(vals, dtype=np.int64))

    a = estimate_lambda(trace(values), q_star)
    b = estimate_lambda(trace(values + shift), q_star + shift)
    assert math.isclose(a, b, rel_tol=1e-6, abs_tol=1e-9)


@given(lam=st.floats(0, 10), theta=st.floats(1, 3), u=st.floats(0.01, 0.99), q=st.floats(0.1, 50))
def test_ensemble_bound_never_exceeds_single(lam, theta, u, q):
    e1, v1 = bound_prop1(lam, theta, q)
    e2, v2 = bound_prop2(lam, theta, u, q)
    assert e2 <= e1 + 1e-12 and v2 <= v1 + 1e-12
    assert e1 >= math.log(2) - 1e-6


@given(a=st.lists(st.integers(0, 3), min_size=1, max_size=20), data=st.data())
def test_policy_error_symmetric_and_zero_on_self(a, data):
    b = data.draw(st.lists(st.integers(0, 3), min_size=len(a), max_size=len(a)))
    a, b = np.array(a), np.array(b)
    assert average_policy_error(a, a) == 0.0
    assert average_policy_error(a, b) == average_policy_error(b, a)


@given(radices=st.lists(st.integers(1, 6), min_size=1, max_size=5))
def test_mixed_radix_bijection(radices):
    codec = MixedRadix(radices)
    idx = np.arange(codec.size)
    digits = codec.decode(idx)
    np.testing.assert_array_equal(codec.encode(digits), idx)
    assert len({tuple(d) for d in digits}) == codec.size


@settings(max_examples=40)
@given(seed=seeds, n=st.integers(1, 8), gamma=gammas)
def test_nhop_members_are_valid(seed, n, gamma):
    base = random_mdp(5, 2, np.random.default_rng(seed), discount=gamma)
    env = build_nhop(base, n)
    env.check()
    assert math.isclose(env.discount, gamma ** n, rel_tol=1e-12)
    lo, hi = base.cost_range
    scale = (1 - gamma ** n) / (1 - gamma)
    assert env.cost.min() >= lo * scale - 1e-9 and env.cost.max() <= hi * scale + 1e-9


@given(seed=seeds, alpha=st.floats(0.01, 1.0), gamma=gammas)
def test_q_update_keeps_positivity_and_locality(seed, alpha, gamma):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.01, 5, size=(4, 3))
    s, a, s2 = (int(x) for x in rng.integers(0, [4, 3, 4]))
    out = q_update(q, (s, a, s2, float(rng.uniform(0.01, 2))), alpha, gamma)
    assert np.all(out > 0)
    mask = np.ones_like(q, dtype=bool)
    mask[s, a] = False
    np.testing.assert_array_equal(out[mask], q[mask])
