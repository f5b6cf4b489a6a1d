"""Independent reference implementations used as test oracles.

Written separately from the package and kept deliberately naive: brute
force enumeration, Monte-Carlo sampling, textbook formulas. Nothing here
imports package internals.
"""
import itertools
import math

import numpy as np


def brute_jpda(cost, gate, p_d, lam):
    """Marginals ``K x (N+1)`` by listing every injective partial track->detection map."""
    cost = np.asarray(cost, float)
    gate = np.asarray(gate, bool)
    K, N = cost.shape
    options = [[-1] + [j for j in range(N) if gate[i, j]] for i in range(K)]
    marg = np.zeros((K, N + 1))
    total = 0.0
    for event in itertools.product(*options):
        used = [j for j in event if j >= 0]
        if len(used) != len(set(used)):
            continue
        w = 1.0
        for i, j in enumerate(event):
            w *= (1.0 - p_d) if j < 0 else p_d * math.exp(-cost[i, j])
        w *= lam ** (N - len(used))
        total += w
        for i, j in enumerate(event):
            marg[i, j + 1] += w
    return marg / total


def truncated_jpda(cost, gate, p_d, lam, m):
    """Marginals from only the ``m`` heaviest joint events, each row renormalized."""
    cost = np.asarray(cost, float)
    gate = np.asarray(gate, bool)
    K, N = cost.shape
    options = [[-1] + [j for j in range(N) if gate[i, j]] for i in range(K)]
    events = []
    for event in itertools.product(*options):
        used = [j for j in event if j >= 0]
        if len(used) != len(set(used)):
            continue
        w = 1.0
        for i, j in enumerate(event):
            w *= (1.0 - p_d) if j < 0 else p_d * math.exp(-cost[i, j])
        events.append((w * lam ** (N - len(used)), event))
    events.sort(key=lambda e: -e[0])
    marg = np.zeros((K, N + 1))
    for w, event in events[:m]:
        for i, j in enumerate(event):
            marg[i, j + 1] += w
    return marg / marg.sum(axis=1, keepdims=True)


def count_events(gate):
    gate = np.asarray(gate, bool)
    K, N = gate.shape
    options = [[-1] + [j for j in range(N) if gate[i, j]] for i in range(K)]
    n = 0
    for event in itertools.product(*options):
        used = [j for j in event if j >= 0]
        n += len(used) == len(set(used))
    return n


def brute_assignment(cost):
    """Minimum total cost over all injective row->column maps (rows <= cols)."""
    cost = np.asarray(cost, float)
    K, N = cost.shape
    best, arg = math.inf, None
    for perm in itertools.permutations(range(N), K):
        c = sum(cost[i, perm[i]] for i in range(K))
        if c < best:
            best, arg = c, perm
    return best, arg


def all_assignments_sorted(cost):
    cost = np.asarray(cost, float)
    K, N = cost.shape
    sols = [(sum(cost[i, p[i]] for i in range(K)), p) for p in itertools.permutations(range(N), K)]
    sols.sort(key=lambda s: s[0])
    return sols


def _box_mask(pts, box):
    x, y, z, l, w, h, th = box
    dx, dz = pts[:, 0] - x, pts[:, 2] - z
    c, s = math.cos(th), math.sin(th)
    along = c * dx + s * dz
    across = -s * dx + c * dz
    return (np.abs(along) <= l / 2) & (np.abs(across) <= w / 2) & (pts[:, 1] >= y) & (pts[:, 1] <= y + h)


def monte_carlo_iou3d(a, b, n=1_000_000, rng=None):
    """IoU of two (x, y, z, l, w, h, theta) boxes from uniform samples over a bounding region."""
    rng = rng or np.random.default_rng(0)
    ra = 0.5 * math.hypot(a[3], a[4])
    rb = 0.5 * math.hypot(b[3], b[4])
    lo = np.array([min(a[0] - ra, b[0] - rb), min(a[1], b[1]), min(a[2] - ra, b[2] - rb)])
    hi = np.array([max(a[0] + ra, b[0] + rb), max(a[1] + a[5], b[1] + b[5]), max(a[2] + ra, b[2] + rb)])
    pts = lo + (hi - lo) * rng.random((n, 3))
    ia, ib = _box_mask(pts, a), _box_mask(pts, b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def kalman_update(x, P, z, H, R, zhat=None):
    """Textbook (extended) Kalman update with the explicit inverse.

    ``zhat`` is the predicted measurement; it defaults to ``H x`` (linear model).
    """
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    x_new = x + K @ (z - (H @ x if zhat is None else zhat))
    P_new = (np.eye(len(x)) - K @ H) @ P
    return x_new, P_new


def chi2_cdf(x, k):
    """CDF of the chi-square distribution with integer ``k`` dof, via the gamma recurrences."""
    h = x / 2.0
    if k % 2 == 0:
        term, total = 1.0, 1.0
        for i in range(1, k // 2):
            term *= h / i
            total += term
        return 1.0 - math.exp(-h) * total
    cdf = math.erf(math.sqrt(h))
    a = 0.5
    # P(a + 1, h) = P(a, h) - h^a e^-h / Gamma(a + 1)
    while a < k / 2.0:
        cdf -= math.exp(a * math.log(h) - h - math.lgamma(a + 1.0)) if h > 0 else 0.0
        a += 1.0
    return cdf


def chi2_ppf(q, k):
    lo, hi = 0.0, 10.0 * k + 100.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, k) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def projected_box(corners_world, R, t, fx, fy, cx, cy):
    """Tight image rectangle (u, v, w, h) of 3D points through a pinhole camera."""
    pc = corners_world @ np.asarray(R).T + np.asarray(t)
    u = fx * pc[:, 0] / pc[:, 2] + cx
    v = fy * pc[:, 1] / pc[:, 2] + cy
    return np.array([u.min(), v.min(), u.max() - u.min(), v.max() - v.min()])


def cuboid_corners(x, y, z, l, w, h, th):
    out = []
    for dy in (0.0, h):
        for a, b in ((l / 2, w / 2), (-l / 2, w / 2), (-l / 2, -w / 2), (l / 2, -w / 2)):
            out.append((x + math.cos(th) * a - math.sin(th) * b, y + dy, z + math.sin(th) * a + math.cos(th) * b))
    return np.array(out)
