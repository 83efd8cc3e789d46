"""numba implementations of the geometry kernels.

Every function here has a twin with the same signature in ``_kernels_numpy``.
Primitive conventions: type 0 is a box with half-extents ``param[:3]``; type 1
is a capsule along its local z axis with radius ``param[0]`` and half-length
``param[1]``.
"""
import numpy as np
from numba import njit

_GOLDEN_ITERS = 64
_INVPHI = 0.6180339887498949


@njit(cache=True)
def _rodrigues(ax, ay, az, theta, out):
    c = np.cos(theta)
    s = np.sin(theta)
    v = 1.0 - c
    out[0, 0] = c + ax * ax * v
    out[0, 1] = ax * ay * v - az * s
    out[0, 2] = ax * az * v + ay * s
    out[1, 0] = ay * ax * v + az * s
    out[1, 1] = c + ay * ay * v
    out[1, 2] = ay * az * v - ax * s
    out[2, 0] = az * ax * v - ay * s
    out[2, 1] = az * ay * v + ax * s
    out[2, 2] = c + az * az * v


@njit(cache=True)
def _matmul3(A, B, out):
    for r in range(3):
        a0 = A[r, 0]
        a1 = A[r, 1]
        a2 = A[r, 2]
        for c in range(3):
            out[r, c] = a0 * B[0, c] + a1 * B[1, c] + a2 * B[2, c]


@njit(cache=True)
def _matvec3(A, v, out):
    for r in range(3):
        out[r] = A[r, 0] * v[0] + A[r, 1] * v[1] + A[r, 2] * v[2]


@njit(cache=True)
def fk(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p, j_axis, n_links):
    K = q.shape[0]
    link_R = np.zeros((n_links, 3, 3))
    link_p = np.zeros((n_links, 3))
    axis_w = np.zeros((K, 3))
    origin_w = np.zeros((K, 3))
    link_R[0] = root_R
    link_p[0] = root_t
    rot = np.empty((3, 3))
    Rj = np.empty((3, 3))
    tmp = np.empty(3)
    for j in range(K):
        par = j_parent[j]
        ch = j_child[j]
        Rp = link_R[par]
        _matmul3(Rp, j_orig_R[j], Rj)
        _matvec3(Rp, j_orig_p[j], tmp)
        for r in range(3):
            origin_w[j, r] = link_p[par, r] + tmp[r]
            link_p[ch, r] = origin_w[j, r]
        _matvec3(Rj, j_axis[j], axis_w[j])
        _rodrigues(j_axis[j, 0], j_axis[j, 1], j_axis[j, 2], q[j], rot)
        _matmul3(Rj, rot, link_R[ch])
    return link_R, link_p, axis_w, origin_w


@njit(cache=True)
def prim_world(link_R, link_p, prim_link, prim_R, prim_p):
    P = prim_link.shape[0]
    out_R = np.empty((P, 3, 3))
    out_p = np.empty((P, 3))
    for i in range(P):
        L = prim_link[i]
        _matmul3(link_R[L], prim_R[i], out_R[i])
        _matvec3(link_R[L], prim_p[i], out_p[i])
        for r in range(3):
            out_p[i, r] += link_p[L, r]
    return out_R, out_p


@njit(cache=True)
def _box_local(u0, u1, u2, hx, hy, hz):
    q0 = abs(u0) - hx
    q1 = abs(u1) - hy
    q2 = abs(u2) - hz
    s0 = 1.0 if u0 >= 0.0 else -1.0
    s1 = 1.0 if u1 >= 0.0 else -1.0
    s2 = 1.0 if u2 >= 0.0 else -1.0
    if q0 > 0.0 or q1 > 0.0 or q2 > 0.0:
        e0 = max(q0, 0.0)
        e1 = max(q1, 0.0)
        e2 = max(q2, 0.0)
        n = np.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        return n, s0 * e0 / n, s1 * e1 / n, s2 * e2 / n
    if q0 >= q1 and q0 >= q2:
        return q0, s0, 0.0, 0.0
    if q1 >= q2:
        return q1, 0.0, s1, 0.0
    return q2, 0.0, 0.0, s2


@njit(cache=True)
def _capsule_local(u0, u1, u2, r, hl):
    c = min(max(u2, -hl), hl)
    v2 = u2 - c
    n = np.sqrt(u0 * u0 + u1 * u1 + v2 * v2)
    if n < 1e-300:
        return -r, 1.0, 0.0, 0.0
    return n - r, u0 / n, u1 / n, v2 / n


@njit(cache=True)
def _prim_sdf(R, c, typ, prm, x0, x1, x2):
    d0 = x0 - c[0]
    d1 = x1 - c[1]
    d2 = x2 - c[2]
    u0 = R[0, 0] * d0 + R[1, 0] * d1 + R[2, 0] * d2
    u1 = R[0, 1] * d0 + R[1, 1] * d1 + R[2, 1] * d2
    u2 = R[0, 2] * d0 + R[1, 2] * d1 + R[2, 2] * d2
    if typ == 0:
        s, g0, g1, g2 = _box_local(u0, u1, u2, prm[0], prm[1], prm[2])
    else:
        s, g0, g1, g2 = _capsule_local(u0, u1, u2, prm[0], prm[1])
    w0 = R[0, 0] * g0 + R[0, 1] * g1 + R[0, 2] * g2
    w1 = R[1, 0] * g0 + R[1, 1] * g1 + R[1, 2] * g2
    w2 = R[2, 0] * g0 + R[2, 1] * g1 + R[2, 2] * g2
    return s, w0, w1, w2


@njit(cache=True)
def sdf_points(points, prim_R, prim_p, prim_type, prim_param):
    N = points.shape[0]
    P = prim_type.shape[0]
    sdf = np.full(N, np.inf)
    grad = np.zeros((N, 3))
    arg = np.zeros(N, dtype=np.int64)
    # primitive-major so the frame is loaded once per primitive
    for k in range(P):
        r00, r01, r02 = prim_R[k, 0, 0], prim_R[k, 0, 1], prim_R[k, 0, 2]
        r10, r11, r12 = prim_R[k, 1, 0], prim_R[k, 1, 1], prim_R[k, 1, 2]
        r20, r21, r22 = prim_R[k, 2, 0], prim_R[k, 2, 1], prim_R[k, 2, 2]
        c0, c1, c2 = prim_p[k, 0], prim_p[k, 1], prim_p[k, 2]
        typ = prim_type[k]
        h0, h1, h2 = prim_param[k, 0], prim_param[k, 1], prim_param[k, 2]
        for i in range(N):
            d0 = points[i, 0] - c0
            d1 = points[i, 1] - c1
            d2 = points[i, 2] - c2
            u0 = r00 * d0 + r10 * d1 + r20 * d2
            u1 = r01 * d0 + r11 * d1 + r21 * d2
            u2 = r02 * d0 + r12 * d1 + r22 * d2
            if typ == 0:
                # cheap lower bound before the full box evaluation
                lb = max(abs(u0) - h0, abs(u1) - h1, abs(u2) - h2)
                if lb >= sdf[i]:
                    continue
                s, g0, g1, g2 = _box_local(u0, u1, u2, h0, h1, h2)
            else:
                z = min(max(u2, -h1), h1)
                v2 = u2 - z
                n2 = u0 * u0 + u1 * u1 + v2 * v2
                b = sdf[i] + h0
                if b <= 0.0 or n2 >= b * b:
                    continue
                s, g0, g1, g2 = _capsule_local(u0, u1, u2, h0, h1)
            if s < sdf[i]:
                sdf[i] = s
                arg[i] = k
                grad[i, 0] = r00 * g0 + r01 * g1 + r02 * g2
                grad[i, 1] = r10 * g0 + r11 * g1 + r12 * g2
                grad[i, 2] = r20 * g0 + r21 * g1 + r22 * g2
    return sdf, grad, arg


@njit(cache=True)
def nearest(a, b):
    Na = a.shape[0]
    Nb = b.shape[0]
    dist = np.empty(Na)
    idx = np.zeros(Na, dtype=np.int64)
    for i in range(Na):
        best = np.inf
        bi = 0
        a0 = a[i, 0]
        a1 = a[i, 1]
        a2 = a[i, 2]
        for j in range(Nb):
            d0 = a0 - b[j, 0]
            d1 = a1 - b[j, 1]
            d2 = a2 - b[j, 2]
            d = d0 * d0 + d1 * d1 + d2 * d2
            if d < best:
                best = d
                bi = j
        dist[i] = np.sqrt(best)
        idx[i] = bi
    return dist, idx


@njit(cache=True)
def contact_normals(points, obj, obj_nrm, h):
    """Inward contact normals blended over nearby cloud points, and their Jacobians."""
    c, J, _, _ = _contact_normals(points, obj, obj_nrm, h)
    return c, J


@njit(cache=True)
def _contact_normals(points, obj, obj_nrm, h):
    T = points.shape[0]
    N = obj.shape[0]
    c = np.empty((T, 3))
    J = np.zeros((T, 3, 3))
    dist = np.empty(T)
    idx = np.empty(T, dtype=np.int64)
    d2 = np.empty(N)
    ih2 = 1.0 / (h * h)
    for k in range(T):
        x0 = points[k, 0]
        x1 = points[k, 1]
        x2 = points[k, 2]
        best = np.inf
        i0 = 0
        for j in range(N):
            e0 = x0 - obj[j, 0]
            e1 = x1 - obj[j, 1]
            e2 = x2 - obj[j, 2]
            d = e0 * e0 + e1 * e1 + e2 * e2
            d2[j] = d
            if d < best:
                best = d
                i0 = j
        dist[k] = np.sqrt(best)
        idx[k] = i0
        u = np.zeros(3)
        Ju = np.zeros((3, 3))
        for j in range(N):
            s = (d2[j] - best) * ih2
            if s >= 1.0:
                continue
            r = 1.0 - s
            w = r * r * r
            f = -6.0 * r * r * ih2
            g0 = f * (obj[i0, 0] - obj[j, 0])
            g1 = f * (obj[i0, 1] - obj[j, 1])
            g2 = f * (obj[i0, 2] - obj[j, 2])
            for a in range(3):
                n = obj_nrm[j, a]
                u[a] += w * n
                Ju[a, 0] += n * g0
                Ju[a, 1] += n * g1
                Ju[a, 2] += n * g2
        nu = np.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
        if nu < 1e-12:
            for a in range(3):
                c[k, a] = -obj_nrm[i0, a]
            continue
        for a in range(3):
            c[k, a] = -u[a] / nu
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for e in range(3):
                    P = (1.0 if a == e else 0.0) - c[k, a] * c[k, e]
                    acc += P * Ju[e, b]
                J[k, a, b] = -acc / nu
    return c, J, dist, idx


@njit(cache=True)
def _clamp01(x):
    return min(max(x, 0.0), 1.0)


@njit(cache=True)
def _seg_seg(p1, q1, p2, q2):
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    eps = 1e-18
    if a <= eps and e <= eps:
        s = 0.0
        t = 0.0
    elif a <= eps:
        s = 0.0
        t = _clamp01(f / e)
    else:
        c = d1 @ r
        if e <= eps:
            t = 0.0
            s = _clamp01(-c / a)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = _clamp01((b * f - c * e) / denom) if denom > eps * a * e else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = _clamp01(-c / a)
            elif t > 1.0:
                t = 1.0
                s = _clamp01((b - c) / a)
    return p1 + d1 * s, p2 + d2 * t


@njit(cache=True)
def _seg_seg_params(p10, p11, p12, d10, d11, d12, p20, p21, p22, d20, d21, d22):
    """Closest-point parameters (s, t) in [0, 1] of segments p1 + s d1 and p2 + t d2."""
    r0 = p10 - p20
    r1 = p11 - p21
    r2 = p12 - p22
    a = d10 * d10 + d11 * d11 + d12 * d12
    e = d20 * d20 + d21 * d21 + d22 * d22
    f = d20 * r0 + d21 * r1 + d22 * r2
    eps = 1e-18
    if a <= eps and e <= eps:
        return 0.0, 0.0
    if a <= eps:
        return 0.0, _clamp01(f / e)
    c = d10 * r0 + d11 * r1 + d12 * r2
    if e <= eps:
        return _clamp01(-c / a), 0.0
    b = d10 * d20 + d11 * d21 + d12 * d22
    denom = a * e - b * b
    s = _clamp01((b * f - c * e) / denom) if denom > eps * a * e else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        return _clamp01(-c / a), 0.0
    if t > 1.0:
        return _clamp01((b - c) / a), 1.0
    return s, t


@njit(cache=True)
def _seg_box(a, b, R, c, prm):
    """Minimise the (convex) box SDF along segment a-b by golden section."""
    lo = 0.0
    hi = 1.0
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    d = b - a
    f1 = _prim_sdf(R, c, 0, prm, a[0] + x1 * d[0], a[1] + x1 * d[1], a[2] + x1 * d[2])[0]
    f2 = _prim_sdf(R, c, 0, prm, a[0] + x2 * d[0], a[1] + x2 * d[1], a[2] + x2 * d[2])[0]
    for _ in range(_GOLDEN_ITERS):
        if f1 <= f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - _INVPHI * (hi - lo)
            f1 = _prim_sdf(R, c, 0, prm, a[0] + x1 * d[0], a[1] + x1 * d[1], a[2] + x1 * d[2])[0]
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + _INVPHI * (hi - lo)
            f2 = _prim_sdf(R, c, 0, prm, a[0] + x2 * d[0], a[1] + x2 * d[1], a[2] + x2 * d[2])[0]
    best_s = 0.5 * (lo + hi)
    for s in (0.0, 1.0):
        fs = _prim_sdf(R, c, 0, prm, a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2])[0]
        fb = _prim_sdf(R, c, 0, prm, a[0] + best_s * d[0], a[1] + best_s * d[1],
                       a[2] + best_s * d[2])[0]
        if fs < fb:
            best_s = s
    p = a + best_s * d
    s, g0, g1, g2 = _prim_sdf(R, c, 0, prm, p[0], p[1], p[2])
    g = np.empty(3)
    g[0] = g0
    g[1] = g1
    g[2] = g2
    return s, p, g


@njit(cache=True)
def _seg_box_bound(a, b, R, c, prm):
    # box SDF is 1-Lipschitz: no point of the segment is more than half its length below the endpoints
    fa = _prim_sdf(R, c, 0, prm, a[0], a[1], a[2])[0]
    fb = _prim_sdf(R, c, 0, prm, b[0], b[1], b[2])[0]
    return min(fa, fb)


@njit(cache=True)
def _box_edges(R, c, h):
    corners = np.empty((8, 3))
    k = 0
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                corners[k] = c + R[:, 0] * (sx * h[0]) + R[:, 1] * (sy * h[1]) + R[:, 2] * (sz * h[2])
                k += 1
    edges = np.empty((12, 2), dtype=np.int64)
    e = 0
    for i in range(8):
        for bit in (1, 2, 4):
            j = i | bit
            if j != i:
                edges[e, 0] = i
                edges[e, 1] = j
                e += 1
    return corners, edges


@njit(cache=True)
def _bound_radius(typ, prm):
    if typ == 0:
        return np.sqrt(prm[0] ** 2 + prm[1] ** 2 + prm[2] ** 2)
    return prm[0] + prm[1]


@njit(cache=True)
def pair_distances(prim_R, prim_p, prim_type, prim_param, pairs, cutoff):
    """Signed separation of primitive pairs with witness points.

    For pair (A, B) a rigid displacement with point velocities ``vA`` / ``vB``
    changes the separation by ``-n . vA(pa) + n . vB(pb)``. Pairs whose
    bounding spheres are farther apart than ``cutoff`` return that lower bound
    and a zero ``n``.
    """
    Q = pairs.shape[0]
    dist = np.empty(Q)
    pa = np.zeros((Q, 3))
    pb = np.zeros((Q, 3))
    nrm = np.zeros((Q, 3))
    for k in range(Q):
        i = pairs[k, 0]
        j = pairs[k, 1]
        ti = prim_type[i]
        tj = prim_type[j]
        e0 = prim_p[i, 0] - prim_p[j, 0]
        e1 = prim_p[i, 1] - prim_p[j, 1]
        e2 = prim_p[i, 2] - prim_p[j, 2]
        gap = np.sqrt(e0 * e0 + e1 * e1 + e2 * e2) - _bound_radius(ti, prim_param[i]) \
            - _bound_radius(tj, prim_param[j])
        if gap > cutoff:
            dist[k] = gap
            pa[k] = prim_p[i]
            pb[k] = prim_p[j]
            continue
        ci = prim_p[i]
        cj = prim_p[j]
        if ti == 1 and tj == 1:
            hi = prim_param[i, 1]
            hj = prim_param[j, 1]
            s1, s2 = _seg_seg_params(ci[0] - hi * prim_R[i, 0, 2], ci[1] - hi * prim_R[i, 1, 2],
                                     ci[2] - hi * prim_R[i, 2, 2], 2.0 * hi * prim_R[i, 0, 2],
                                     2.0 * hi * prim_R[i, 1, 2], 2.0 * hi * prim_R[i, 2, 2],
                                     cj[0] - hj * prim_R[j, 0, 2], cj[1] - hj * prim_R[j, 1, 2],
                                     cj[2] - hj * prim_R[j, 2, 2], 2.0 * hj * prim_R[j, 0, 2],
                                     2.0 * hj * prim_R[j, 1, 2], 2.0 * hj * prim_R[j, 2, 2])
            ln2 = 0.0
            for a in range(3):
                pa[k, a] = ci[a] + hi * (2.0 * s1 - 1.0) * prim_R[i, a, 2]
                pb[k, a] = cj[a] + hj * (2.0 * s2 - 1.0) * prim_R[j, a, 2]
                nrm[k, a] = pb[k, a] - pa[k, a]
                ln2 += nrm[k, a] * nrm[k, a]
            ln = np.sqrt(ln2)
            dist[k] = ln - prim_param[i, 0] - prim_param[j, 0]
            if ln > 1e-300:
                for a in range(3):
                    nrm[k, a] /= ln
            else:
                for a in range(3):
                    nrm[k, a] = 0.0
        elif ti == 0 and tj == 1:
            aj = prim_R[j][:, 2] * prim_param[j, 1]
            lb = _seg_box_bound(cj - aj, cj + aj, prim_R[i], ci, prim_param[i]) - prim_param[j, 1] \
                - prim_param[j, 0]
            if lb > cutoff:
                dist[k] = lb
                pa[k] = ci
                pb[k] = cj
                continue
            s, p, g = _seg_box(cj - aj, cj + aj, prim_R[i], ci, prim_param[i])
            dist[k] = s - prim_param[j, 0]
            pa[k] = p
            pb[k] = p
            nrm[k] = g
        elif ti == 1 and tj == 0:
            ai = prim_R[i][:, 2] * prim_param[i, 1]
            lb = _seg_box_bound(ci - ai, ci + ai, prim_R[j], cj, prim_param[j]) - prim_param[i, 1] \
                - prim_param[i, 0]
            if lb > cutoff:
                dist[k] = lb
                pa[k] = ci
                pb[k] = cj
                continue
            s, p, g = _seg_box(ci - ai, ci + ai, prim_R[j], cj, prim_param[j])
            dist[k] = s - prim_param[i, 0]
            pa[k] = p
            pb[k] = p
            nrm[k] = -g
        else:
            best = np.inf
            cor_i, edges = _box_edges(prim_R[i], ci, prim_param[i])
            cor_j, _ = _box_edges(prim_R[j], cj, prim_param[j])
            for e in range(12):
                s, p, g = _seg_box(cor_i[edges[e, 0]], cor_i[edges[e, 1]], prim_R[j], cj, prim_param[j])
                if s < best:
                    best = s
                    pa[k] = p
                    pb[k] = p
                    nrm[k] = -g
                s, p, g = _seg_box(cor_j[edges[e, 0]], cor_j[edges[e, 1]], prim_R[i], ci, prim_param[i])
                if s < best:
                    best = s
                    pa[k] = p
                    pb[k] = p
                    nrm[k] = g
            dist[k] = best
    return dist, pa, pb, nrm


@njit(cache=True)
def _add_force(F, M, l, f0, f1, f2, x0, x1, x2):
    F[l, 0] += f0
    F[l, 1] += f1
    F[l, 2] += f2
    M[l, 0] += x1 * f2 - x2 * f1
    M[l, 1] += x2 * f0 - x0 * f2
    M[l, 2] += x0 * f1 - x1 * f0


@njit(cache=True)
def _link_wrench_grad(F, M, root_t, axis_w, origin_w, anc):
    L = anc.shape[0]
    K = anc.shape[1]
    Ft = np.zeros(3)
    g_w = np.zeros(3)
    for l in range(L):
        for a in range(3):
            Ft[a] += F[l, a]
            g_w[a] += M[l, a]
    g_w[0] -= root_t[1] * Ft[2] - root_t[2] * Ft[1]
    g_w[1] -= root_t[2] * Ft[0] - root_t[0] * Ft[2]
    g_w[2] -= root_t[0] * Ft[1] - root_t[1] * Ft[0]
    g_q = np.zeros(K)
    for j in range(K):
        f0 = 0.0
        f1 = 0.0
        f2 = 0.0
        m0 = 0.0
        m1 = 0.0
        m2 = 0.0
        for l in range(L):
            if anc[l, j]:
                f0 += F[l, 0]
                f1 += F[l, 1]
                f2 += F[l, 2]
                m0 += M[l, 0]
                m1 += M[l, 1]
                m2 += M[l, 2]
        o = origin_w[j]
        m0 -= o[1] * f2 - o[2] * f1
        m1 -= o[2] * f0 - o[0] * f2
        m2 -= o[0] * f1 - o[1] * f0
        g_q[j] = axis_w[j, 0] * m0 + axis_w[j, 1] * m1 + axis_w[j, 2] * m2
    return g_w, Ft, g_q


@njit(cache=True)
def accumulate(forces, points, links, root_t, axis_w, origin_w, anc):
    """Pull world-space point forces back to (omega, t, q) gradients."""
    L = anc.shape[0]
    F = np.zeros((L, 3))
    M = np.zeros((L, 3))
    for i in range(forces.shape[0]):
        _add_force(F, M, links[i], forces[i, 0], forces[i, 1], forces[i, 2],
                   points[i, 0], points[i, 1], points[i, 2])
    return _link_wrench_grad(F, M, root_t, axis_w, origin_w, anc)


@njit(cache=True)
def _penetrating(obj, PR, Pp, prim_type, prim_param):
    """Deepest primitive per object point among those containing it (best < 0), else index -1.

    Primitive-major: a tight bounding-sphere sweep collects candidates, and
    only those get the exact local SDF.
    """
    N = obj.shape[0]
    P = prim_type.shape[0]
    best = np.zeros(N)
    bk = np.full(N, -1, dtype=np.int64)
    bg = np.zeros((N, 3))
    cand = np.empty(N, dtype=np.int64)
    for k in range(P):
        r = _bound_radius(prim_type[k], prim_param[k])
        r2 = r * r
        c0 = Pp[k, 0]
        c1 = Pp[k, 1]
        c2 = Pp[k, 2]
        m = 0
        for i in range(N):
            d0 = obj[i, 0] - c0
            d1 = obj[i, 1] - c1
            d2 = obj[i, 2] - c2
            if d0 * d0 + d1 * d1 + d2 * d2 < r2:
                cand[m] = i
                m += 1
        for ci in range(m):
            i = cand[ci]
            d0 = obj[i, 0] - c0
            d1 = obj[i, 1] - c1
            d2 = obj[i, 2] - c2
            # cheap rejection of points outside the primitive; they cannot beat best <= 0
            u2 = PR[k, 0, 2] * d0 + PR[k, 1, 2] * d1 + PR[k, 2, 2] * d2
            if prim_type[k] == 0:
                if abs(u2) >= prim_param[k, 2]:
                    continue
                u0 = PR[k, 0, 0] * d0 + PR[k, 1, 0] * d1 + PR[k, 2, 0] * d2
                if abs(u0) >= prim_param[k, 0]:
                    continue
                u1 = PR[k, 0, 1] * d0 + PR[k, 1, 1] * d1 + PR[k, 2, 1] * d2
                if abs(u1) >= prim_param[k, 1]:
                    continue
                s, g0, g1, g2 = _box_local(u0, u1, u2, prim_param[k, 0], prim_param[k, 1], prim_param[k, 2])
            else:
                u0 = PR[k, 0, 0] * d0 + PR[k, 1, 0] * d1 + PR[k, 2, 0] * d2
                u1 = PR[k, 0, 1] * d0 + PR[k, 1, 1] * d1 + PR[k, 2, 1] * d2
                v2 = u2 - min(max(u2, -prim_param[k, 1]), prim_param[k, 1])
                if u0 * u0 + u1 * u1 + v2 * v2 >= prim_param[k, 0] * prim_param[k, 0]:
                    continue
                s, g0, g1, g2 = _capsule_local(u0, u1, u2, prim_param[k, 0], prim_param[k, 1])
            if s < best[i]:
                best[i] = s
                bk[i] = k
                bg[i, 0] = PR[k, 0, 0] * g0 + PR[k, 0, 1] * g1 + PR[k, 0, 2] * g2
                bg[i, 1] = PR[k, 1, 0] * g0 + PR[k, 1, 1] * g1 + PR[k, 1, 2] * g2
                bg[i, 2] = PR[k, 2, 0] * g0 + PR[k, 2, 1] * g1 + PR[k, 2, 2] * g2
    return best, bk, bg


@njit(cache=True)
def synth_energy(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p, j_axis, anc,
                 prim_link, prim_R0, prim_p0, prim_type, prim_param, pairs,
                 kp_link, kp_local, tip_link, tip_local, lower, upper,
                 obj, obj_nrm, centroid, weights, spen_thr, nrm_h):
    """Fused synthesis energy: terms (fc, dis, pen, tpen, joints, spen) and tangent gradient."""
    L = anc.shape[0]
    K = q.shape[0]
    link_R, link_p, axis_w, origin_w = fk(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p,
                                          j_axis, L)
    PR, Pp = prim_world(link_R, link_p, prim_link, prim_R0, prim_p0)
    F = np.zeros((L, 3))
    M = np.zeros((L, 3))
    terms = np.zeros(6)
    w_fc, w_dis, w_pen, w_tpen, w_joint, w_spen = weights[0], weights[1], weights[2], weights[3], \
        weights[4], weights[5]

    # fingertip pads against their nearest object points
    T = tip_link.shape[0]
    tips = np.empty((T, 3))
    for k in range(T):
        tips[k] = link_R[tip_link[k]] @ tip_local[k] + link_p[tip_link[k]]
    cn, Jn, dist, idx = _contact_normals(tips, obj, obj_nrm, nrm_h)
    fx = 0.0
    fy = 0.0
    fz = 0.0
    tx = 0.0
    ty = 0.0
    tz = 0.0
    for k in range(T):
        c = cn[k]
        a0 = tips[k, 0] - centroid[0]
        a1 = tips[k, 1] - centroid[1]
        a2 = tips[k, 2] - centroid[2]
        fx += c[0]
        fy += c[1]
        fz += c[2]
        tx += a1 * c[2] - a2 * c[1]
        ty += a2 * c[0] - a0 * c[2]
        tz += a0 * c[1] - a1 * c[0]
    terms[0] = fx * fx + fy * fy + fz * fz + tx * tx + ty * ty + tz * tz
    for k in range(T):
        c = cn[k]
        a0 = tips[k, 0] - centroid[0]
        a1 = tips[k, 1] - centroid[1]
        a2 = tips[k, 2] - centroid[2]
        # v = force + torque x arm, pulled back through the normal Jacobian
        v0 = fx + ty * a2 - tz * a1
        v1 = fy + tz * a0 - tx * a2
        v2 = fz + tx * a1 - ty * a0
        g0 = 2.0 * w_fc * (c[1] * tz - c[2] * ty + Jn[k, 0, 0] * v0 + Jn[k, 1, 0] * v1 + Jn[k, 2, 0] * v2)
        g1 = 2.0 * w_fc * (c[2] * tx - c[0] * tz + Jn[k, 0, 1] * v0 + Jn[k, 1, 1] * v1 + Jn[k, 2, 1] * v2)
        g2 = 2.0 * w_fc * (c[0] * ty - c[1] * tx + Jn[k, 0, 2] * v0 + Jn[k, 1, 2] * v1 + Jn[k, 2, 2] * v2)
        d = dist[k]
        terms[1] += d
        if d > 0.0:
            p = obj[idx[k]]
            s = w_dis / d
            g0 += s * (tips[k, 0] - p[0])
            g1 += s * (tips[k, 1] - p[1])
            g2 += s * (tips[k, 2] - p[2])
        _add_force(F, M, tip_link[k], g0, g1, g2, tips[k, 0], tips[k, 1], tips[k, 2])

    # object points inside the hand
    best, bk, bg = _penetrating(obj, PR, Pp, prim_type, prim_param)
    for i in range(obj.shape[0]):
        if bk[i] >= 0:
            terms[2] += best[i] * best[i]
            s = -2.0 * w_pen * best[i]
            _add_force(F, M, prim_link[bk[i]], s * bg[i, 0], s * bg[i, 1], s * bg[i, 2],
                       obj[i, 0], obj[i, 1], obj[i, 2])

    # keypoints and pads below the table
    for k in range(kp_link.shape[0] + T):
        if k < kp_link.shape[0]:
            l = kp_link[k]
            x = link_R[l] @ kp_local[k] + link_p[l]
        else:
            l = tip_link[k - kp_link.shape[0]]
            x = tips[k - kp_link.shape[0]]
        if x[2] < 0.0:
            terms[3] -= x[2]
            _add_force(F, M, l, 0.0, 0.0, -w_tpen, x[0], x[1], x[2])

    g_w, g_t, g_q = _link_wrench_grad(F, M, root_t, axis_w, origin_w, anc)

    for j in range(K):
        if q[j] > upper[j]:
            terms[4] += q[j] - upper[j]
            g_q[j] += w_joint
        elif q[j] < lower[j]:
            terms[4] += lower[j] - q[j]
            g_q[j] -= w_joint

    if pairs.shape[0] > 0:
        dist2, pa, pb, nrm = pair_distances(PR, Pp, prim_type, prim_param, pairs, spen_thr)
        F[:] = 0.0
        M[:] = 0.0
        any_act = False
        for k in range(pairs.shape[0]):
            v = spen_thr - dist2[k]
            if v > 0.0:
                any_act = True
                terms[5] += v * v
                s = 2.0 * w_spen * v
                la = prim_link[pairs[k, 0]]
                lb = prim_link[pairs[k, 1]]
                _add_force(F, M, la, s * nrm[k, 0], s * nrm[k, 1], s * nrm[k, 2], pa[k, 0], pa[k, 1], pa[k, 2])
                _add_force(F, M, lb, -s * nrm[k, 0], -s * nrm[k, 1], -s * nrm[k, 2], pb[k, 0], pb[k, 1],
                           pb[k, 2])
        if any_act:
            h_w, h_t, h_q = _link_wrench_grad(F, M, root_t, axis_w, origin_w, anc)
            g_w += h_w
            g_t += h_t
            g_q += h_q

    grad = np.empty(6 + K)
    grad[0:3] = g_w
    grad[3:6] = g_t
    grad[6:] = g_q
    total = terms[0] * w_fc + terms[1] * w_dis + terms[2] * w_pen + terms[3] * w_tpen \
        + terms[4] * w_joint + terms[5] * w_spen
    return total, terms, grad


@njit(cache=True)
def _exp_rot(w0, w1, w2, out):
    th2 = w0 * w0 + w1 * w1 + w2 * w2
    th = np.sqrt(th2)
    if th < 1e-8:
        a = 1.0
        b = 0.5
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / th2
    # I + a K + b K^2 with K^2 = w w^T - |w|^2 I
    out[0, 0] = 1.0 + b * (w0 * w0 - th2)
    out[1, 1] = 1.0 + b * (w1 * w1 - th2)
    out[2, 2] = 1.0 + b * (w2 * w2 - th2)
    out[0, 1] = -a * w2 + b * w0 * w1
    out[1, 0] = a * w2 + b * w0 * w1
    out[0, 2] = a * w1 + b * w0 * w2
    out[2, 0] = -a * w1 + b * w0 * w2
    out[1, 2] = -a * w0 + b * w1 * w2
    out[2, 1] = a * w0 + b * w1 * w2


@njit(cache=True)
def synth_descend(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p, j_axis, anc,
                  prim_link, prim_R0, prim_p0, prim_type, prim_param, pairs,
                  kp_link, kp_local, tip_link, tip_local, lower, upper,
                  obj, obj_nrm, centroid, weights, spen_thr, nrm_h,
                  precond, steps, alpha0, growth, max_backtracks):
    """Backtracking descent on the fused synthesis energy.

    Returns (energies, R, t, q, accepted, diverged_at) with ``diverged_at`` = -1
    unless a non-finite energy was met.
    """
    K = q.shape[0]
    R = root_R.copy()
    t = root_t.copy()
    qq = q.copy()
    energies = np.empty(steps + 1)
    e, _, g = synth_energy(R, t, qq, j_parent, j_child, j_orig_R, j_orig_p, j_axis, anc,
                           prim_link, prim_R0, prim_p0, prim_type, prim_param, pairs,
                           kp_link, kp_local, tip_link, tip_local, lower, upper,
                           obj, obj_nrm, centroid, weights, spen_thr, nrm_h)
    if not np.isfinite(e):
        return energies, R, t, qq, 0, 0
    energies[0] = e
    alpha = alpha0
    accepted = 0
    E = np.empty((3, 3))
    Rc = np.empty((3, 3))
    tc = np.empty(3)
    qc = np.empty(K)
    for step in range(1, steps + 1):
        a = alpha
        moved = False
        for _ in range(max_backtracks + 1):
            _exp_rot(-a * precond[0] * g[0], -a * precond[1] * g[1], -a * precond[2] * g[2], E)
            _matmul3(E, R, Rc)
            for i in range(3):
                tc[i] = t[i] - a * precond[3 + i] * g[3 + i]
            for j in range(K):
                v = qq[j] - a * precond[6 + j] * g[6 + j]
                qc[j] = min(max(v, lower[j]), upper[j])
            e_new, _, g_new = synth_energy(Rc, tc, qc, j_parent, j_child, j_orig_R, j_orig_p, j_axis, anc,
                                           prim_link, prim_R0, prim_p0, prim_type, prim_param, pairs,
                                           kp_link, kp_local, tip_link, tip_local, lower, upper,
                                           obj, obj_nrm, centroid, weights, spen_thr, nrm_h)
            if not np.isfinite(e_new):
                return energies, R, t, qq, accepted, step
            if e_new <= e:
                R[:, :] = Rc
                t[:] = tc
                qq[:] = qc
                e = e_new
                g = g_new
                accepted += 1
                alpha = a * growth
                moved = True
                break
            a *= 0.5
        if not moved:
            alpha = max(a, 1e-12)
        energies[step] = e
    return energies, R, t, qq, accepted, -1
