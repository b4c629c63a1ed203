"""Hot loops shared by the estimators.

Every kernel exists twice: a loop version compiled by numba and a vectorised
numpy version. The public names at the bottom pick one according to
``roughreg._accel.use_jit``; tests compare the two directly.
"""

import numpy as np

from ._accel import njit, pick


def _pvar_dp_py(values, rho):
    n, dim = values.shape
    dp = np.zeros(n)
    for j in range(1, n):
        best = -1.0
        for i in range(j):
            inc = 0.0
            for c in range(dim):
                a = abs(values[j, c] - values[i, c])
                if a > inc:
                    inc = a
            cand = dp[i] + inc**rho
            if cand > best:
                best = cand
        dp[j] = best
    return dp


def _pvar_dp_numpy(values, rho):
    n = values.shape[0]
    dp = np.zeros(n)
    for j in range(1, n):
        inc = np.abs(values[j] - values[:j]).max(axis=1)
        dp[j] = np.max(dp[:j] + inc**rho)
    return dp


def _pair_ratio_max_py(values, times, gamma, origin, weight_exp, first):
    n, dim = values.shape
    worst = 0.0
    for i in range(first, n):
        w = (times[i] - origin) ** weight_exp
        for j in range(i + 1, n):
            inc = 0.0
            for c in range(dim):
                a = abs(values[j, c] - values[i, c])
                if a > inc:
                    inc = a
            r = inc / ((times[j] - times[i]) ** gamma * w)
            if r > worst:
                worst = r
    return worst


def _pair_ratio_max_numpy(values, times, gamma, origin, weight_exp, first):
    worst = 0.0
    for i in range(first, values.shape[0] - 1):
        inc = np.abs(values[i + 1 :] - values[i]).max(axis=1)
        scale = (times[i + 1 :] - times[i]) ** gamma * (times[i] - origin) ** weight_exp
        worst = max(worst, float(np.max(inc / scale)))
    return worst


def _chen_defect_py(a, b, area):
    n, p = a.shape
    q = b.shape[1]
    worst = 0.0
    for s in range(n):
        for u in range(s + 1, n):
            for t in range(u + 1, n):
                for i in range(p):
                    da = a[u, i] - a[s, i]
                    for k in range(q):
                        d = area[s, t, i, k] - area[s, u, i, k] - area[u, t, i, k] - da * (b[t, k] - b[u, k])
                        if abs(d) > worst:
                            worst = abs(d)
    return worst


def _chen_defect_numpy(a, b, area):
    n = a.shape[0]
    worst = 0.0
    for u in range(1, n - 1):
        left = a[u] - a[:u]
        right = b[u + 1 :] - b[u]
        d = (
            area[:u, u + 1 :]
            - area[:u, u][:, None]
            - area[u, u + 1 :][None, :]
            - left[:, None, :, None] * right[None, :, None, :]
        )
        worst = max(worst, float(np.max(np.abs(d))))
    return worst


pvar_dp_jit = njit(_pvar_dp_py)
pair_ratio_max_jit = njit(_pair_ratio_max_py)
chen_defect_jit = njit(_chen_defect_py)

pvar_dp = pick(pvar_dp_jit, _pvar_dp_numpy)
pair_ratio_max = pick(pair_ratio_max_jit, _pair_ratio_max_numpy)
chen_defect_max = pick(chen_defect_jit, _chen_defect_numpy)

KERNELS = {
    "pvar_dp": (pvar_dp_jit, _pvar_dp_numpy),
    "pair_ratio_max": (pair_ratio_max_jit, _pair_ratio_max_numpy),
    "chen_defect_max": (chen_defect_jit, _chen_defect_numpy),
}
