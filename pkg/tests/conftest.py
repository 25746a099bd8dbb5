import numpy as np
import pytest

from ccq.mdp import TabularMdp


@pytest.fixture
def swap_mdp() -> TabularMdp:
    """Two states that swap deterministically; one action, costs (1, 2), discount 0.5."""
    p = np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None]
    return TabularMdp(p, np.array([[1.0], [2.0]]), 0.5)


@pytest.fixture
def swap_mdp_two_actions() -> TabularMdp:
    """Swap dynamics under both actions; action 1 is cheaper in state 0, action 0 in state 1."""
    p = np.repeat(np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None], 2, axis=2)
    return TabularMdp(p, np.array([[2.0, 1.0], [1.0, 3.0]]), 0.5)
