# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see ``_kernels_py`` for the reference)."""
import numpy as np

from libc.math cimport cos, sin, fabs, exp, fmin, fmax

cdef double CLIP_EPS = 1e-9
cdef enum:
    MAXV = 32


cdef void _footprint(double x, double z, double l, double w, double theta,
                     double* px, double* pz) noexcept nogil:
    cdef double c = cos(theta), s = sin(theta)
    cdef double hl = 0.5 * l, hw = 0.5 * w
    cdef double a[4]
    cdef double b[4]
    a[0] = hl; b[0] = hw
    a[1] = -hl; b[1] = hw
    a[2] = -hl; b[2] = -hw
    a[3] = hl; b[3] = -hw
    cdef int k
    for k in range(4):
        px[k] = x + c * a[k] - s * b[k]
        pz[k] = z + s * a[k] + c * b[k]


cdef int _dedup(double* xs, double* ys, int n) noexcept nogil:
    cdef int i, m = 0
    for i in range(n):
        if m > 0 and fabs(xs[i] - xs[m - 1]) <= CLIP_EPS and fabs(ys[i] - ys[m - 1]) <= CLIP_EPS:
            continue
        xs[m] = xs[i]
        ys[m] = ys[i]
        m += 1
    while m > 1 and fabs(xs[0] - xs[m - 1]) <= CLIP_EPS and fabs(ys[0] - ys[m - 1]) <= CLIP_EPS:
        m -= 1
    return m


cdef int _clip(double* sx, double* sy, int ns, double* cx, double* cy, int nc,
               double* ox, double* oy) noexcept nogil:
    """Clip subject (sx, sy) by clipper (cx, cy); result written to (ox, oy)."""
    cdef double bufx[MAXV]
    cdef double bufy[MAXV]
    cdef int i, k, m, n
    cdef double ax, ay, ex, ey, px, py, qx, qy, dp, dq, t
    cdef bint p_in, q_in
    n = ns
    for i in range(n):
        ox[i] = sx[i]
        oy[i] = sy[i]
    for k in range(nc):
        if n < 3:
            return 0
        ax = cx[k]; ay = cy[k]
        ex = cx[(k + 1) % nc] - ax
        ey = cy[(k + 1) % nc] - ay
        for i in range(n):
            bufx[i] = ox[i]
            bufy[i] = oy[i]
        m = 0
        for i in range(n):
            px = bufx[i]; py = bufy[i]
            qx = bufx[(i + 1) % n]; qy = bufy[(i + 1) % n]
            dp = ex * (py - ay) - ey * (px - ax)
            dq = ex * (qy - ay) - ey * (qx - ax)
            p_in = dp >= -CLIP_EPS
            q_in = dq >= -CLIP_EPS
            if p_in and m < MAXV:
                ox[m] = px; oy[m] = py
                m += 1
            if p_in != q_in and m < MAXV:
                t = dp / (dp - dq)
                ox[m] = px + t * (qx - px)
                oy[m] = py + t * (qy - py)
                m += 1
        n = _dedup(ox, oy, m)
    if n < 3:
        return 0
    return n


cdef double _area(double* xs, double* ys, int n) noexcept nogil:
    cdef int i
    cdef double acc = 0.0
    if n < 3:
        return 0.0
    for i in range(n):
        acc += xs[i] * ys[(i + 1) % n] - xs[(i + 1) % n] * ys[i]
    return fabs(0.5 * acc)


cdef double _iou3d(const double[:] a, const double[:] b) noexcept nogil:
    cdef double ax[4]
    cdef double az[4]
    cdef double bx[4]
    cdef double bz[4]
    cdef double ox[MAXV]
    cdef double oz[MAXV]
    cdef double dy, inter, union_
    cdef int n
    dy = fmin(a[1] + a[5], b[1] + b[5]) - fmax(a[1], b[1])
    if dy <= 0.0:
        return 0.0
    _footprint(a[0], a[2], a[3], a[4], a[6], ax, az)
    _footprint(b[0], b[2], b[3], b[4], b[6], bx, bz)
    n = _clip(ax, az, 4, bx, bz, 4, ox, oz)
    inter = _area(ox, oz, n) * dy
    if inter <= 0.0:
        return 0.0
    union_ = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    return fmin(1.0, fmax(0.0, inter / union_))


def clip(subject, clipper):
    cdef int ns = len(subject), nc = len(clipper), i, n
    if ns + 2 * nc > MAXV or ns < 3:
        raise ValueError("polygon too large for compiled clipper")
    cdef double sx[MAXV]
    cdef double sy[MAXV]
    cdef double cx[MAXV]
    cdef double cy[MAXV]
    cdef double ox[MAXV]
    cdef double oy[MAXV]
    for i in range(ns):
        sx[i] = subject[i][0]; sy[i] = subject[i][1]
    for i in range(nc):
        cx[i] = clipper[i][0]; cy[i] = clipper[i][1]
    n = _clip(sx, sy, ns, cx, cy, nc, ox, oy)
    return [(ox[i], oy[i]) for i in range(n)]


def iou3d_batch(a, b):
    cdef const double[:, :] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, :] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], i
    out = np.empty(n)
    cdef double[:] ov = out
    with nogil:
        for i in range(n):
            ov[i] = _iou3d(av[i], bv[i])
    return out


def iou3d_aligned_matrix(a, b):
    cdef const double[:, :] av = np.ascontiguousarray(np.reshape(a, (-1, 7)), dtype=np.float64)
    cdef const double[:, :] bv = np.ascontiguousarray(np.reshape(b, (-1, 7)), dtype=np.float64)
    cdef Py_ssize_t K = av.shape[0], N = bv.shape[0], i, j
    out = np.empty((K, N))
    cdef double[:, :] ov = out
    cdef double c, s, dx, dz, u, v, ol, ow, oh, inter
    with nogil:
        for i in range(K):
            c = cos(av[i, 6]); s = sin(av[i, 6])
            for j in range(N):
                dx = bv[j, 0] - av[i, 0]
                dz = bv[j, 2] - av[i, 2]
                u = c * dx + s * dz
                v = -s * dx + c * dz
                ol = fmin(0.5 * av[i, 3], u + 0.5 * bv[j, 3]) - fmax(-0.5 * av[i, 3], u - 0.5 * bv[j, 3])
                ow = fmin(0.5 * av[i, 4], v + 0.5 * bv[j, 4]) - fmax(-0.5 * av[i, 4], v - 0.5 * bv[j, 4])
                oh = fmin(av[i, 1] + av[i, 5], bv[j, 1] + bv[j, 5]) - fmax(av[i, 1], bv[j, 1])
                if ol <= 0.0 or ow <= 0.0 or oh <= 0.0:
                    ov[i, j] = 0.0
                    continue
                inter = ol * ow * oh
                ov[i, j] = fmin(1.0, fmax(0.0, inter / (av[i, 3] * av[i, 4] * av[i, 5]
                                                        + bv[j, 3] * bv[j, 4] * bv[j, 5] - inter)))
    return out


def jpda_marginals(log_r, gate, Py_ssize_t max_events):
    cdef const double[:, :] lr = np.ascontiguousarray(log_r, dtype=np.float64)
    g_arr = np.ascontiguousarray(gate, dtype=np.uint8)
    cdef const unsigned char[:, :] gv = g_arr
    cdef Py_ssize_t K = lr.shape[0], N = lr.shape[1]
    if K == 0:
        return np.zeros((0, N + 1))

    # compact per-track option lists
    counts_arr = g_arr.sum(axis=1).astype(np.intp)
    cdef Py_ssize_t[:] counts = counts_arr
    opts_arr = np.zeros((K, max(N, 1)), dtype=np.intp)
    cdef Py_ssize_t[:, :] opts = opts_arr
    cdef Py_ssize_t i, j, k
    for i in range(K):
        k = 0
        for j in range(N):
            if gv[i, j]:
                opts[i, k] = j
                k += 1

    choice_arr = np.full(K, -1, dtype=np.intp)
    pos_arr = np.zeros(K, dtype=np.intp)
    used_arr = np.zeros(max(N, 1), dtype=np.uint8)
    cdef Py_ssize_t[:] choice = choice_arr
    cdef Py_ssize_t[:] pos = pos_arr
    cdef unsigned char[:] used = used_arr

    cap = 1024
    ev_arr = np.empty((cap, K), dtype=np.intp)
    lw_arr = np.empty(cap)
    cdef Py_ssize_t[:, :] ev = ev_arr
    cdef double[:] lw = lw_arr
    cdef Py_ssize_t n_ev = 0, depth = 0, p
    cdef double acc

    # pos[d] = next option index at depth d; 0 means miss, p>0 means opts[d, p-1]
    while depth >= 0:
        if depth == K:
            if n_ev >= max_events:
                return None
            if n_ev == cap:
                cap *= 2
                ev_arr = np.resize(ev_arr, (cap, K))
                lw_arr = np.resize(lw_arr, cap)
                ev = ev_arr
                lw = lw_arr
            acc = 0.0
            for i in range(K):
                ev[n_ev, i] = choice[i]
                if choice[i] >= 0:
                    acc += lr[i, choice[i]]
            lw[n_ev] = acc
            n_ev += 1
            depth -= 1
            continue
        if choice[depth] >= 0:
            used[choice[depth]] = 0
            choice[depth] = -1
        p = pos[depth]
        if p > counts[depth]:
            pos[depth] = 0
            depth -= 1
            continue
        pos[depth] = p + 1
        if p == 0:
            choice[depth] = -1
            depth += 1
            continue
        j = opts[depth, p - 1]
        if used[j]:
            continue
        used[j] = 1
        choice[depth] = j
        depth += 1

    cdef double mx = lw[0], tot = 0.0
    for k in range(n_ev):
        if lw[k] > mx:
            mx = lw[k]
    w_arr = np.empty(n_ev)
    cdef double[:] w = w_arr
    for k in range(n_ev):
        w[k] = exp(lw[k] - mx)
        tot += w[k]
    out = np.zeros((K, N + 1))
    cdef double[:, :] o = out
    for k in range(n_ev):
        for i in range(K):
            o[i, ev[k, i] + 1] += w[k] / tot
    return out
