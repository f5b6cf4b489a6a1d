"""Pure-Python/numpy versions of the hot kernels.

Each function here has a twin with the same signature in ``_kernels_c.pyx``.
Box rows are ``[x, y, z, l, w, h, theta]`` with ``(x, y, z)`` the
bottom-face centre and ``y`` pointing up.
"""
import math

import numpy as np

CLIP_EPS = 1e-9


def footprint(x, z, l, w, theta):
    """Counter-clockwise bird's-eye corners of a box in the (x, z) plane."""
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = 0.5 * l, 0.5 * w
    out = []
    for a, b in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((x + c * a - s * b, z + s * a + c * b))
    return out


def _dedup(points):
    out = []
    for p in points:
        if out and abs(p[0] - out[-1][0]) <= CLIP_EPS and abs(p[1] - out[-1][1]) <= CLIP_EPS:
            continue
        out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= CLIP_EPS and abs(out[0][1] - out[-1][1]) <= CLIP_EPS:
        out.pop()
    return out


def clip(subject, clipper):
    """Sutherland-Hodgman clipping of convex CCW ``subject`` by convex CCW ``clipper``.

    Returns a list of vertices; fewer than three means empty.
    """
    out = list(subject)
    n = len(clipper)
    for k in range(n):
        if len(out) < 3:
            return []
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        src = out
        out = []
        m = len(src)
        for i in range(m):
            px, py = src[i]
            qx, qy = src[(i + 1) % m]
            dp = ex * (py - ay) - ey * (px - ax)
            dq = ex * (qy - ay) - ey * (qx - ax)
            p_in = dp >= -CLIP_EPS
            q_in = dq >= -CLIP_EPS
            if p_in:
                out.append((px, py))
            if p_in != q_in:
                t = dp / (dp - dq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
        out = _dedup(out)
    if len(out) < 3:
        return []
    return out


def area(points):
    n = len(points)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(0.5 * acc)


def iou3d_one(a, b):
    ax, ay, az, al, aw, ah, at = a
    bx, by, bz, bl, bw, bh, bt = b
    dy = min(ay + ah, by + bh) - max(ay, by)
    if dy <= 0.0:
        return 0.0
    inter = area(clip(footprint(ax, az, al, aw, at), footprint(bx, bz, bl, bw, bt))) * dy
    if inter <= 0.0:
        return 0.0
    union = al * aw * ah + bl * bw * bh - inter
    return min(1.0, max(0.0, inter / union))


def iou3d_batch(a, b):
    """Row-wise oriented 3D IoU for two ``(n, 7)`` arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        out[i] = iou3d_one(a[i], b[i])
    return out


def iou3d_aligned_matrix(a, b):
    """IoU between every row of ``a`` and ``b`` with b's yaw replaced by a's."""
    a = np.asarray(a, dtype=float).reshape(-1, 7)
    b = np.asarray(b, dtype=float).reshape(-1, 7)
    ax, ay, az, al, aw, ah, at = (a[:, k, None] for k in range(7))
    bx, by, bz, bl, bw, bh = (b[None, :, k] for k in range(6))
    c, s = np.cos(at), np.sin(at)
    dx, dz = bx - ax, bz - az
    u = c * dx + s * dz
    v = -s * dx + c * dz
    ol = np.minimum(0.5 * al, u + 0.5 * bl) - np.maximum(-0.5 * al, u - 0.5 * bl)
    ow = np.minimum(0.5 * aw, v + 0.5 * bw) - np.maximum(-0.5 * aw, v - 0.5 * bw)
    oh = np.minimum(ay + ah, by + bh) - np.maximum(ay, by)
    inter = np.clip(ol, 0.0, None) * np.clip(ow, 0.0, None) * np.clip(oh, 0.0, None)
    union = al * aw * ah + bl * bw * bh - inter
    return np.clip(inter / union, 0.0, 1.0)


def jpda_marginals(log_r, gate, max_events):
    """Exact JPDA marginals by enumerating every feasible joint event.

    ``log_r[i, j]`` is the log weight ratio of assigning detection j to
    track i relative to the all-miss event. Returns a ``(K, N + 1)`` array
    with column 0 the miss probability, or ``None`` when the number of
    events exceeds ``max_events``.
    """
    log_r = np.asarray(log_r, dtype=float)
    gate = np.asarray(gate, dtype=bool)
    K, N = log_r.shape
    if K == 0:
        return np.zeros((0, N + 1))
    options = [np.flatnonzero(gate[i]).tolist() for i in range(K)]
    events = []
    used = [False] * N
    choice = [-1] * K

    def walk(i):
        if i == K:
            events.append(tuple(choice))
            if len(events) > max_events:
                raise _TooManyEvents
            return
        choice[i] = -1
        walk(i + 1)
        for j in options[i]:
            if not used[j]:
                used[j] = True
                choice[i] = j
                walk(i + 1)
                used[j] = False
        choice[i] = -1

    try:
        walk(0)
    except _TooManyEvents:
        return None
    return _marginals_from_events(log_r, np.array(events, dtype=np.intp).reshape(-1, K), K, N)


class _TooManyEvents(Exception):
    pass


def _marginals_from_events(log_r, ev, K, N):
    logw = np.zeros(ev.shape[0])
    for i in range(K):
        col = ev[:, i]
        hit = col >= 0
        logw[hit] += log_r[i, col[hit]]
    w = np.exp(logw - logw.max())
    w /= w.sum()
    out = np.zeros((K, N + 1))
    for i in range(K):
        np.add.at(out[i], ev[:, i] + 1, w)
    return out
