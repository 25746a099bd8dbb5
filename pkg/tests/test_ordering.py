import math
from functools import cmp_to_key
from itertools import combinations

import numpy as np
import pytest

from ccq.exceptions import StageError, ValidationError
from ccq.mdp import average_policy_error, random_mdp, value_iteration
from ccq.ordering import (
    Verdict,
    ccq,
    compare_envs,
    empirical_lambda_ordering,
    f_gamma,
    order_environments,
    pairwise_agreement,
    threshold,
)
from ccq.qlearning import LearningSchedule
from ccq.synthesis import EnvironmentFamily, estimate_model


def test_f_gamma_values():
    assert f_gamma(0.95, 4, 4) == 1.0
    assert f_gamma(0.95, 2, 3) == pytest.approx(1.3330, abs=1e-3)
    # (1 - g^2)(1 - g^2) / ((1 - g^3)(1 - g)) evaluated by hand
    assert f_gamma(0.95, 2, 3) == pytest.approx(0.0975 ** 2 / (0.142625 * 0.05), rel=1e-12)
    assert f_gamma(0.9, 1, 5) == math.inf
    assert f_gamma(0.9, 5, 1) == 0.0


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5])
def test_f_gamma_rejects_bad_discount(gamma):
    with pytest.raises(ValidationError):
        f_gamma(gamma, 2, 3)


def test_compare_examples():
    assert compare_envs(1, 7, 0.95, 0.9, 1.0, 10.0) is Verdict.N_SMALLER
    assert threshold(0.5, 1.0, 1.2) == pytest.approx(0.5 * 1.2 + 0.5 / 1.2)
    assert compare_envs(2, 3, 0.95, 0.5, 1.0, 1.2) is Verdict.N_SMALLER
    # orientation does not change the answer
    assert compare_envs(3, 2, 0.95, 0.5, 1.0, 1.2) is Verdict.M_SMALLER


def test_compare_rejects_nonpositive_cost():
    with pytest.raises(ValidationError):
        compare_envs(2, 3, 0.9, 0.5, 0.0, 1.0)


def test_six_environment_ranking():
    res = order_environments(6, 0.95, 0.5, 1.0, 2.0)
    assert res.threshold_used == pytest.approx(1.25)
    assert res.ranking == (1, 2, 6, 5, 4, 3)


def test_flat_costs_give_index_order():
    assert order_environments(8, 0.9, 0.3, 2.0, 2.0).ranking == tuple(range(1, 9))


def test_comparison_count_and_csv(tmp_path):
    res = order_environments(10, 0.95, 0.5, 1.0, 1.5)
    assert res.comparisons == 45 and len(res.verdicts) == 45
    res.write_csv(tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "n,m,f_value,threshold,verdict"
    assert lines[-1].startswith("ranking,1 ")


def test_alpha_drawn_from_rng():
    with pytest.raises(ValidationError):
        order_environments(4, 0.9, None, 1.0, 2.0)
    a = order_environments(4, 0.9, None, 1.0, 2.0, np.random.default_rng(3))
    b = order_environments(4, 0.9, None, 1.0, 2.0, np.random.default_rng(3))
    assert 0.0 < a.alpha_used < 1.0 and a.alpha_used == b.alpha_used
    redraw = order_environments(6, 0.9, None, 1.0, 2.0, np.random.default_rng(3), redraw_alpha=True)
    assert len(set(redraw.thresholds.values())) > 1


def test_copeland_matches_sort_when_transitive():
    """For transitive verdicts Copeland must agree with a comparison sort."""
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(300):
        k, gamma = int(rng.integers(3, 9)), float(rng.uniform(0.5, 0.99))
        alpha, ratio = float(rng.uniform()), float(rng.uniform(1.0, 3.0))
        res = order_environments(k, gamma, alpha, 1.0, ratio)
        beats = {(n, m): v is Verdict.N_SMALLER for (n, m), v in res.verdicts.items()}

        def smaller(x, y):
            return beats[(x, y)] if x < y else not beats[(y, x)]

        transitive = all(
            not (smaller(x, y) and smaller(y, z)) or smaller(x, z)
            for x in range(1, k + 1) for y in range(1, k + 1) for z in range(1, k + 1)
            if len({x, y, z}) == 3
        )
        if transitive:
            order = sorted(range(1, k + 1), key=cmp_to_key(lambda x, y: -1 if smaller(x, y) else 1))
            assert tuple(order) == res.ranking
            checked += 1
    assert checked > 100


def test_pairwise_agreement():
    assert pairwise_agreement((1, 2, 3), (1, 2, 3)) == 1.0
    assert pairwise_agreement((1, 2, 3), (3, 2, 1)) == 0.0
    assert pairwise_agreement((1, 2, 3, 4), (1, 2, 4, 3)) == pytest.approx(5 / 6)
    with pytest.raises(ValidationError):
        pairwise_agreement((1, 2), (1, 3))


def test_identical_family_falls_back_to_index_order():
    m = random_mdp(5, 2, np.random.default_rng(0))
    fam = EnvironmentFamily(m, {n: m for n in range(1, 5)})
    res = empirical_lambda_ordering(fam, LearningSchedule(max_steps=2_000, min_visits=10 ** 6), range(10))
    assert res.ranking == (1, 2, 3, 4)
    assert np.allclose(res.lambda_hat, res.lambda_hat[:, :1])


def test_empirical_ordering_needs_ten_seeds():
    m = random_mdp(3, 2, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        empirical_lambda_ordering(EnvironmentFamily(m), LearningSchedule(max_steps=10), range(5))


def test_ccq_tiny_swap(swap_mdp_two_actions):
    pi_star = value_iteration(swap_mdp_two_actions)[2]
    sched = LearningSchedule(max_steps=20_000, min_visits=10 ** 6)
    res = ccq(swap_mdp_two_actions, 2, 4, 0.5, 0.5, sched, np.random.default_rng(0))
    assert average_policy_error(res.policy, pi_star) == 0.0
    assert res.ensemble.members[0] == 1


def test_ccq_saturated_selection():
    m = random_mdp(4, 2, np.random.default_rng(1), discount=0.8)
    res = ccq(m, 5, 5, 0.5, None, LearningSchedule(max_steps=500, min_visits=10 ** 6),
              np.random.default_rng(0))
    assert sorted(res.ensemble.members) == [1, 2, 3, 4, 5]


def test_ccq_with_bounds():
    m = random_mdp(6, 2, np.random.default_rng(2), discount=0.8)
    q_star = value_iteration(m)[0]
    res = ccq(m, 2, 4, 0.5, 0.5, LearningSchedule(max_steps=5_000, min_visits=10 ** 6),
              np.random.default_rng(0), tracked_states=[0, 3], q_star=q_star, stride=10)
    assert res.coverage.proposition == "ensemble"
    assert res.coverage.e_bound.shape == (2,)


def test_ccq_on_estimated_model():
    truth = random_mdp(4, 2, np.random.default_rng(3), discount=0.8)
    rng = np.random.default_rng(4)
    samples = [(s, a, int(rng.choice(4, p=truth.transition[s, :, a])), truth.cost[s, a])
               for s in range(4) for a in range(2) for _ in range(200)]
    est = estimate_model(samples, 4, 2)
    with pytest.raises(ValidationError):
        ccq(est, 2, 3, 0.5, 0.5, LearningSchedule(max_steps=100), np.random.default_rng(0))
    res = ccq(est, 2, 3, 0.5, 0.5, LearningSchedule(max_steps=1_000, min_visits=10 ** 6),
              np.random.default_rng(0), gamma=0.8)
    assert res.q_hat.shape == (4, 2)


def test_ccq_stage_failure_is_named():
    m = random_mdp(3, 2, np.random.default_rng(5))
    with pytest.raises(StageError) as err:
        ccq(m, 2, 3, 0.5, 1.5, LearningSchedule(max_steps=100), np.random.default_rng(0))
    assert err.value.stage == "order"


def test_ccq_selection_contains_base():
    for k_total in range(2, 12):
        res = order_environments(k_total, 0.9, None, 1.0, 3.0, np.random.default_rng(k_total))
        assert res.ranking[0] == 1
        assert sorted(res.ranking) == list(range(1, k_total + 1))
        assert len(res.verdicts) == len(list(combinations(range(k_total), 2)))
