"""Independent reference computations used by the tests.

Nothing here calls into the vectorized paths it is checking. Losses are
evaluated point by point in plain Python and sums use ``math.fsum``.
"""

from __future__ import annotations

import itertools
import math

import mpmath


def loss(y, w, M):
    return min((y - w) ** 2, M)


def head_predict(coords, a, b, x):
    return b + sum(ak * x[c] for ak, c in zip(a, coords))


def emp_risk(coords, head, M, xs, ys):
    a, b = head
    return math.fsum(loss(y, head_predict(coords, a, b, x), M) for x, y in zip(xs, ys)) / len(ys)


def best_head(coords, heads, M, xs, ys):
    """(index, value) of the minimum empirical risk, first index on ties."""
    best = None
    for i, h in enumerate(heads):
        r = emp_risk(coords, h, M, xs, ys)
        if best is None or r < best[1]:
            best = (i, r)
    return best


def task_risk(coords, head, M, support, probs):
    a, b = head
    return math.fsum(
        p * loss(y, head_predict(coords, a, b, x), M) for (x, y), p in zip(support, probs)
    )


def exact_transfer_risk(coords, heads, M, tasks, task_probs, m):
    """Sum over tasks and every ordered m-tuple of support indices.

    ``tasks`` is a list of (support, probs) with support a list of (x, y).
    """
    total = []
    for (support, probs), tp in zip(tasks, task_probs):
        for combo in itertools.product(range(len(support)), repeat=m):
            pr = tp * math.prod(probs[i] for i in combo)
            if pr == 0:
                continue
            xs = [support[i][0] for i in combo]
            ys = [support[i][1] for i in combo]
            g, _ = best_head(coords, heads, M, xs, ys)
            total.append(pr * task_risk(coords, heads[g], M, support, probs))
    return math.fsum(total)


def min_cover_size(dist, eps):
    """Smallest covering subset by scanning every one of the 2^k masks."""
    k = len(dist)
    best = k
    for mask in range(1, 1 << k):
        centers = [i for i in range(k) if mask >> i & 1]
        if len(centers) >= best:
            continue
        if all(any(dist[c][j] <= eps for c in centers) for j in range(k)):
            best = len(centers)
    return best


mpmath.mp.dps = 50


def thm1_m(M, alpha, delta, nu, n, C, Cs):
    M, alpha, delta, nu = (mpmath.mpf(v) for v in (M, alpha, delta, nu))
    raw = 8 * M / (alpha**2 * nu) * (mpmath.log(C) + mpmath.log(4 * Cs / delta) / n)
    return max(1, int(mpmath.ceil(raw)))


def thm2_nm(M, alpha, delta, nu, C, Cs, Cs_task):
    M, alpha, delta, nu = (mpmath.mpf(v) for v in (M, alpha, delta, nu))
    n = max(1, int(mpmath.ceil(32 * M / alpha**2 * mpmath.log(8 * Cs_task / delta))))
    raw = 32 * M / (alpha**2 * nu) * (mpmath.log(C) + mpmath.log(8 * Cs / delta) / n)
    return n, max(1, int(mpmath.ceil(raw)))


def wilson_upper(k, n, z):
    p = k / n
    return (p + z * z / (2 * n) + z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))) / (
        1 + z * z / n
    )
