"""Compiled inner loops for tabular Q-learning.

Randomness arrives as pre-drawn uniforms, one row of five per step:
``[explore?, random action, successor, episode start, double-Q coin]``.
The loops are resumable: every mutable counter lives in ``state``.
Bookkeeping is written out in both kernels because numba does not inline
helpers that take many array arguments.
"""

from numba import njit

# layout of the int64 ``state`` vector
S_CUR, S_TIME_IN_EP, S_EPISODE, S_TOTAL, S_DEFICIT, S_DONE = range(6)
# layout of the float64 ``params`` vector
(P_ALPHA, P_ALPHA_POW, P_EPS, P_EPS_MIN, P_EPS_DECAY,
 P_TRAJ_LEN, P_MIN_VISITS, P_MAX_STEPS) = range(8)


@njit(cache=True)
def _sample(cdf, s, a, u):
    lo, hi = 0, cdf.shape[2] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[s, a, mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def advance_q(q, visits, cdf, cost, gamma, u, start, n_steps, state, params,
              tracked_s, tracked_a, hist_q, hist_v, stride):
    """Run up to ``n_steps`` Q-learning steps; returns uniforms consumed."""
    n_states, n_actions = q.shape
    traj_len = int(params[P_TRAJ_LEN])
    min_visits = int(params[P_MIN_VISITS])
    max_steps = int(params[P_MAX_STEPS])
    n_tracked = tracked_s.shape[0]
    s = state[S_CUR]
    t_ep = state[S_TIME_IN_EP]
    episode = state[S_EPISODE]
    total = state[S_TOTAL]
    deficit = state[S_DEFICIT]
    done = state[S_DONE]
    eps = params[P_EPS] if params[P_EPS] >= 0.0 else max(params[P_EPS_MIN], params[P_EPS_DECAY] ** episode)
    used = 0
    while used < n_steps and done == 0:
        i = start + used
        if t_ep == 0:
            s = min(int(u[i, 3] * n_states), n_states - 1)
        if u[i, 0] < eps:
            a = min(int(u[i, 1] * n_actions), n_actions - 1)
        else:
            a = 0
            for b in range(1, n_actions):
                if q[s, b] < q[s, a]:
                    a = b
        s2 = _sample(cdf, s, a, u[i, 2])
        best = q[s2, 0]
        for b in range(1, n_actions):
            if q[s2, b] < best:
                best = q[s2, b]
        n = visits[s, a] + 1
        visits[s, a] = n
        alpha = params[P_ALPHA] if params[P_ALPHA] > 0.0 else (1.0 + n) ** (-params[P_ALPHA_POW])
        q[s, a] = (1.0 - alpha) * q[s, a] + alpha * (cost[s, a] + gamma * best)

        if n == min_visits:
            deficit -= 1
        total += 1
        t_ep += 1
        s = s2
        if t_ep >= traj_len:
            t_ep = 0
            episode += 1
            if params[P_EPS] < 0.0:
                eps = max(params[P_EPS_MIN], params[P_EPS_DECAY] ** episode)
        if n_tracked > 0 and total % stride == 0:
            row = total // stride - 1
            for k in range(n_tracked):
                hist_q[row, k] = q[tracked_s[k], tracked_a[k]]
                hist_v[row, k] = visits[tracked_s[k], tracked_a[k]]
        if deficit <= 0 or total >= max_steps:
            done = 1
        used += 1
    state[S_CUR] = s
    state[S_TIME_IN_EP] = t_ep
    state[S_EPISODE] = episode
    state[S_TOTAL] = total
    state[S_DEFICIT] = deficit
    state[S_DONE] = done
    return used


@njit(cache=True)
def advance_double_q(qa, qb, visits, visits_a, visits_b, cdf, cost, gamma, u, start,
                     n_steps, state, params, tracked_s, tracked_a, hist_q, hist_v, stride):
    """Double Q-learning steps; behaviour is epsilon-greedy on ``qa + qb``."""
    n_states, n_actions = qa.shape
    traj_len = int(params[P_TRAJ_LEN])
    min_visits = int(params[P_MIN_VISITS])
    max_steps = int(params[P_MAX_STEPS])
    n_tracked = tracked_s.shape[0]
    s = state[S_CUR]
    t_ep = state[S_TIME_IN_EP]
    episode = state[S_EPISODE]
    total = state[S_TOTAL]
    deficit = state[S_DEFICIT]
    done = state[S_DONE]
    eps = params[P_EPS] if params[P_EPS] >= 0.0 else max(params[P_EPS_MIN], params[P_EPS_DECAY] ** episode)
    used = 0
    while used < n_steps and done == 0:
        i = start + used
        if t_ep == 0:
            s = min(int(u[i, 3] * n_states), n_states - 1)
        if u[i, 0] < eps:
            a = min(int(u[i, 1] * n_actions), n_actions - 1)
        else:
            a = 0
            for b in range(1, n_actions):
                if qa[s, b] + qb[s, b] < qa[s, a] + qb[s, a]:
                    a = b
        s2 = _sample(cdf, s, a, u[i, 2])
        if u[i, 4] < 0.5:
            m = visits_a[s, a] + 1
            visits_a[s, a] = m
            alpha = params[P_ALPHA] if params[P_ALPHA] > 0.0 else (1.0 + m) ** (-params[P_ALPHA_POW])
            b_star = 0
            for b in range(1, n_actions):
                if qa[s2, b] < qa[s2, b_star]:
                    b_star = b
            qa[s, a] = (1.0 - alpha) * qa[s, a] + alpha * (cost[s, a] + gamma * qb[s2, b_star])
        else:
            m = visits_b[s, a] + 1
            visits_b[s, a] = m
            alpha = params[P_ALPHA] if params[P_ALPHA] > 0.0 else (1.0 + m) ** (-params[P_ALPHA_POW])
            b_star = 0
            for b in range(1, n_actions):
                if qb[s2, b] < qb[s2, b_star]:
                    b_star = b
            qb[s, a] = (1.0 - alpha) * qb[s, a] + alpha * (cost[s, a] + gamma * qa[s2, b_star])
        n = visits[s, a] + 1
        visits[s, a] = n

        if n == min_visits:
            deficit -= 1
        total += 1
        t_ep += 1
        s = s2
        if t_ep >= traj_len:
            t_ep = 0
            episode += 1
            if params[P_EPS] < 0.0:
                eps = max(params[P_EPS_MIN], params[P_EPS_DECAY] ** episode)
        if n_tracked > 0 and total % stride == 0:
            row = total // stride - 1
            for k in range(n_tracked):
                ts, ta = tracked_s[k], tracked_a[k]
                hist_q[row, k] = 0.5 * (qa[ts, ta] + qb[ts, ta])
                hist_v[row, k] = visits[ts, ta]
        if deficit <= 0 or total >= max_steps:
            done = 1
        used += 1
    state[S_CUR] = s
    state[S_TIME_IN_EP] = t_ep
    state[S_EPISODE] = episode
    state[S_TOTAL] = total
    state[S_DEFICIT] = deficit
    state[S_DONE] = done
    return used
