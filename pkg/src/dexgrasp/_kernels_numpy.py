"""Vectorised numpy implementations of the geometry kernels.

Same signatures and conventions as ``_kernels_numba``; used when numba is
disabled and as the cross-check route in the test-suite.
"""
import numpy as np

_GOLDEN_ITERS = 64
_INVPHI = 0.6180339887498949


def _rodrigues(a, theta):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(a, a)


def fk(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p, j_axis, n_links):
    K = q.shape[0]
    link_R = np.zeros((n_links, 3, 3))
    link_p = np.zeros((n_links, 3))
    axis_w = np.zeros((K, 3))
    origin_w = np.zeros((K, 3))
    link_R[0] = root_R
    link_p[0] = root_t
    for j in range(K):
        Rp = link_R[j_parent[j]]
        Rj = Rp @ j_orig_R[j]
        origin_w[j] = link_p[j_parent[j]] + Rp @ j_orig_p[j]
        axis_w[j] = Rj @ j_axis[j]
        link_R[j_child[j]] = Rj @ _rodrigues(j_axis[j], q[j])
        link_p[j_child[j]] = origin_w[j]
    return link_R, link_p, axis_w, origin_w


def prim_world(link_R, link_p, prim_link, prim_R, prim_p):
    LR = link_R[prim_link]
    return LR @ prim_R, link_p[prim_link] + np.einsum("pij,pj->pi", LR, prim_p)


def _box_local(u, h):
    """Box SDF and local gradient; u (..., 3), h broadcastable to u."""
    q = np.abs(u) - h
    sgn = np.where(u >= 0.0, 1.0, -1.0)
    outside = (q > 0.0).any(axis=-1)
    e = np.maximum(q, 0.0)
    n = np.linalg.norm(e, axis=-1)
    safe = np.where(outside, n, 1.0)
    g_out = sgn * e / safe[..., None]
    # ties resolved toward the lower axis index, as in the loop kernel
    k = np.argmax(q, axis=-1)
    s_in = np.take_along_axis(q, k[..., None], axis=-1)[..., 0]
    g_in = np.zeros_like(u)
    np.put_along_axis(g_in, k[..., None], np.take_along_axis(sgn, k[..., None], axis=-1), axis=-1)
    s = np.where(outside, n, s_in)
    g = np.where(outside[..., None], g_out, g_in)
    return s, g


def _capsule_local(u, r, hl):
    c = np.clip(u[..., 2], -hl, hl)
    v = u.copy()
    v[..., 2] = u[..., 2] - c
    n = np.linalg.norm(v, axis=-1)
    tiny = n < 1e-300
    g = np.where(tiny[..., None], np.array([1.0, 0.0, 0.0]), v / np.where(tiny, 1.0, n)[..., None])
    return n - r, g


def sdf_points(points, prim_R, prim_p, prim_type, prim_param):
    # u[i, k] = R_k^T (x_i - c_k)
    u = np.einsum("kja,ikj->ika", prim_R, points[:, None, :] - prim_p[None, :, :])
    N, P = u.shape[0], u.shape[1]
    s = np.empty((N, P))
    g = np.empty((N, P, 3))
    box = prim_type == 0
    if box.any():
        sb, gb = _box_local(u[:, box], prim_param[box][None, :, :])
        s[:, box], g[:, box] = sb, gb
    cap = ~box
    if cap.any():
        sc, gc = _capsule_local(u[:, cap], prim_param[cap, 0][None, :], prim_param[cap, 1][None, :])
        s[:, cap], g[:, cap] = sc, gc
    arg = np.argmin(s, axis=1)
    rows = np.arange(N)
    gl = g[rows, arg]
    grad = np.einsum("nij,nj->ni", prim_R[arg], gl)
    return s[rows, arg], grad, arg.astype(np.int64)


def nearest(a, b, chunk=4096):
    dist = np.empty(a.shape[0])
    idx = np.empty(a.shape[0], dtype=np.int64)
    for start in range(0, a.shape[0], chunk):
        aa = a[start:start + chunk]
        d2 = ((aa[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        k = np.argmin(d2, axis=1)
        idx[start:start + chunk] = k
        dist[start:start + chunk] = np.sqrt(d2[np.arange(aa.shape[0]), k])
    return dist, idx


def contact_normals(points, obj, obj_nrm, h):
    """Inward contact normals blended over cloud points near each query, and d(normal)/d(point).

    Weights ``(1 - s)^3`` with ``s = (d^2 - d_min^2) / h^2`` vanish with two
    continuous derivatives, so the blended normal moves smoothly as the
    query moves (up to switches of the nearest point).
    """
    T = points.shape[0]
    diff = points[:, None, :] - obj[None, :, :]
    d2 = (diff ** 2).sum(axis=-1)
    i0 = np.argmin(d2, axis=1)
    rows = np.arange(T)
    s = (d2 - d2[rows, i0][:, None]) / (h * h)
    act = s < 1.0
    w = np.where(act, (1.0 - s) ** 3, 0.0)
    # d s_j / dx = 2 (p0 - p_j) / h^2
    dp = obj[i0][:, None, :] - obj[None, :, :]
    gw = np.where(act[:, :, None], -6.0 * ((1.0 - s) ** 2)[:, :, None] * dp / (h * h), 0.0)
    u = w @ obj_nrm
    Ju = np.einsum("tja,tjb->tab", obj_nrm[None, :, :] * act[:, :, None], gw)
    nu = np.linalg.norm(u, axis=1)
    c = np.empty((T, 3))
    J = np.zeros((T, 3, 3))
    for k in range(T):
        if nu[k] < 1e-12:
            c[k] = -obj_nrm[i0[k]]
            continue
        uh = u[k] / nu[k]
        c[k] = -uh
        J[k] = -(np.eye(3) - np.outer(uh, uh)) @ Ju[k] / nu[k]
    return c, J


def _seg_seg(p1, q1, p2, q2):
    """Batched closest points between segments (rows)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = (d1 * d1).sum(-1)
    e = (d2 * d2).sum(-1)
    f = (d2 * r).sum(-1)
    c = (d1 * r).sum(-1)
    b = (d1 * d2).sum(-1)
    denom = a * e - b * b
    eps = 1e-18
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > eps * a * e, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / e
        s_lo = np.clip(-c / a, 0.0, 1.0)
        s_hi = np.clip((b - c) / a, 0.0, 1.0)
    s = np.where(t < 0.0, s_lo, np.where(t > 1.0, s_hi, s))
    t = np.clip(t, 0.0, 1.0)
    return p1 + d1 * s[:, None], p2 + d2 * t[:, None]


def _box_sdf_world(x, R, c, h):
    u = np.einsum("qji,qj->qi", R, x - c)
    s, g = _box_local(u, h)
    return s, np.einsum("qij,qj->qi", R, g)


def _seg_box(a, b, R, c, h):
    """Batched golden-section minimisation of a box SDF along segments."""
    Q = a.shape[0]
    d = b - a
    lo = np.zeros(Q)
    hi = np.ones(Q)
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)

    def f(s):
        return _box_sdf_world(a + s[:, None] * d, R, c, h)[0]

    f1, f2 = f(x1), f(x2)
    for _ in range(_GOLDEN_ITERS):
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x1, x2 = (np.where(left, hi - _INVPHI * (hi - lo), x2),
                  np.where(left, x1, lo + _INVPHI * (hi - lo)))
        f1, f2 = np.where(left, f(x1), f2), np.where(left, f1, f(x2))
    best = 0.5 * (lo + hi)
    for end in (0.0, 1.0):
        se = np.full(Q, end)
        better = f(se) < f(best)
        best = np.where(better, se, best)
    p = a + best[:, None] * d
    s, g = _box_sdf_world(p, R, c, h)
    return s, p, g


def _bound_radius(prim_type, prim_param):
    return np.where(prim_type == 0, np.linalg.norm(prim_param, axis=-1), prim_param[:, 0] + prim_param[:, 1])


def _box_corners(R, c, h):
    signs = np.array([[sx, sy, sz] for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)])
    return c[:, None, :] + np.einsum("qij,qkj->qki", R, signs[None, :, :] * h[:, None, :])


_EDGES = np.array([(i, i | bit) for i in range(8) for bit in (1, 2, 4) if (i | bit) != i])


def pair_distances(prim_R, prim_p, prim_type, prim_param, pairs, cutoff):
    Q = pairs.shape[0]
    i, j = pairs[:, 0], pairs[:, 1]
    ti, tj = prim_type[i], prim_type[j]
    ci, cj = prim_p[i], prim_p[j]
    br = _bound_radius(prim_type, prim_param)
    gap = np.linalg.norm(ci - cj, axis=1) - br[i] - br[j]
    dist = gap.copy()
    pa = ci.copy()
    pb = cj.copy()
    nrm = np.zeros((Q, 3))
    near = gap <= cutoff

    m = near & (ti == 1) & (tj == 1)
    if m.any():
        ai = prim_R[i[m]][:, :, 2] * prim_param[i[m], 1][:, None]
        aj = prim_R[j[m]][:, :, 2] * prim_param[j[m], 1][:, None]
        x1, x2 = _seg_seg(ci[m] - ai, ci[m] + ai, cj[m] - aj, cj[m] + aj)
        v = x2 - x1
        ln = np.linalg.norm(v, axis=1)
        dist[m] = ln - prim_param[i[m], 0] - prim_param[j[m], 0]
        pa[m], pb[m] = x1, x2
        nrm[m] = np.where(ln[:, None] > 1e-300, v / np.where(ln > 1e-300, ln, 1.0)[:, None], 0.0)

    for box_first in (True, False):
        m = near & ((ti == 0) & (tj == 1) if box_first else (ti == 1) & (tj == 0))
        if not m.any():
            continue
        bi, ci_ = (i[m], j[m]) if box_first else (j[m], i[m])
        ax = prim_R[ci_][:, :, 2] * prim_param[ci_, 1][:, None]
        cc = prim_p[ci_]
        # box SDF is 1-Lipschitz: no point of the segment is more than half its length below the endpoints
        lb = np.minimum(_box_sdf_world(cc - ax, prim_R[bi], prim_p[bi], prim_param[bi])[0],
                        _box_sdf_world(cc + ax, prim_R[bi], prim_p[bi], prim_param[bi])[0]) \
            - prim_param[ci_, 1] - prim_param[ci_, 0]
        far = lb > cutoff
        idx = np.nonzero(m)[0]
        dist[idx[far]] = lb[far]
        m[idx[far]] = False
        keep = ~far
        bi, ci_, ax, cc = bi[keep], ci_[keep], ax[keep], cc[keep]
        if not m.any():
            continue
        s, p, g = _seg_box(cc - ax, cc + ax, prim_R[bi], prim_p[bi], prim_param[bi])
        dist[m] = s - prim_param[ci_, 0]
        pa[m], pb[m] = p, p
        nrm[m] = g if box_first else -g

    m = near & (ti == 0) & (tj == 0)
    if m.any():
        ii, jj = i[m], j[m]
        n = ii.shape[0]
        best = np.full(n, np.inf)
        bp = np.zeros((n, 3))
        bn = np.zeros((n, 3))
        cor_i = _box_corners(prim_R[ii], prim_p[ii], prim_param[ii])
        cor_j = _box_corners(prim_R[jj], prim_p[jj], prim_param[jj])
        for e0, e1 in _EDGES:
            for seg_owner, seg_cor, box, sign in ((0, cor_i, jj, -1.0), (1, cor_j, ii, 1.0)):
                s, p, g = _seg_box(seg_cor[:, e0], seg_cor[:, e1], prim_R[box], prim_p[box], prim_param[box])
                better = s < best
                best = np.where(better, s, best)
                bp = np.where(better[:, None], p, bp)
                bn = np.where(better[:, None], sign * g, bn)
        dist[m] = best
        pa[m], pb[m], nrm[m] = bp, bp, bn
    return dist, pa, pb, nrm


def accumulate(forces, points, links, root_t, axis_w, origin_w, anc):
    L = anc.shape[0]
    F = np.zeros((L, 3))
    M = np.zeros((L, 3))
    np.add.at(F, links, forces)
    np.add.at(M, links, np.cross(points, forces))
    g_t = F.sum(axis=0)
    g_w = M.sum(axis=0) - np.cross(root_t, g_t)
    A = anc.astype(float)
    Fs = A.T @ F
    Ms = A.T @ M
    g_q = np.einsum("ki,ki->k", axis_w, Ms - np.cross(origin_w, Fs))
    return g_w, g_t, g_q


def synth_energy(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p, j_axis, anc,
                 prim_link, prim_R0, prim_p0, prim_type, prim_param, pairs,
                 kp_link, kp_local, tip_link, tip_local, lower, upper,
                 obj, obj_nrm, centroid, weights, spen_thr, nrm_h):
    L = anc.shape[0]
    link_R, link_p, axis_w, origin_w = fk(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p, j_axis, L)
    PR, Pp = prim_world(link_R, link_p, prim_link, prim_R0, prim_p0)
    w_fc, w_dis, w_pen, w_tpen, w_joint, w_spen = weights
    terms = np.zeros(6)
    forces, points, links = [], [], []

    tips = np.einsum("nij,nj->ni", link_R[tip_link], tip_local) + link_p[tip_link]
    dist, idx = nearest(tips, obj)
    c, J = contact_normals(tips, obj, obj_nrm, nrm_h)
    arm = tips - centroid
    torque = np.cross(arm, c).sum(axis=0)
    force = c.sum(axis=0)
    terms[0] = force @ force + torque @ torque
    terms[1] = dist.sum()
    safe = np.where(dist > 0.0, dist, 1.0)
    v = force[None, :] + np.cross(torque[None, :], arm)
    g_fc = np.cross(c, torque) + np.einsum("tab,ta->tb", J, v)
    g = 2.0 * w_fc * g_fc + w_dis * (tips - obj[idx]) / safe[:, None] * (dist > 0.0)[:, None]
    forces.append(g)
    points.append(tips)
    links.append(tip_link)

    sdf, grad, arg = sdf_points(obj, PR, Pp, prim_type, prim_param)
    inside = sdf < 0.0
    s = sdf[inside]
    terms[2] = s @ s
    forces.append(-2.0 * w_pen * s[:, None] * grad[inside])
    points.append(obj[inside])
    links.append(prim_link[arg[inside]])

    kl = np.concatenate([kp_link, tip_link])
    kx = np.vstack([np.einsum("nij,nj->ni", link_R[kp_link], kp_local) + link_p[kp_link], tips])
    below = kx[:, 2] < 0.0
    terms[3] = -kx[below, 2].sum()
    gt = np.zeros((int(below.sum()), 3))
    gt[:, 2] = -w_tpen
    forces.append(gt)
    points.append(kx[below])
    links.append(kl[below])

    up = q - upper
    lo = lower - q
    terms[4] = np.maximum(up, 0.0).sum() + np.maximum(lo, 0.0).sum()
    g_joint = w_joint * ((up > 0.0).astype(float) - (lo > 0.0).astype(float))

    if pairs.shape[0] > 0:
        d2, pa, pb, nrm = pair_distances(PR, Pp, prim_type, prim_param, pairs, spen_thr)
        v = spen_thr - d2
        act = v > 0.0
        terms[5] = v[act] @ v[act]
        sc = 2.0 * w_spen * v[act][:, None] * nrm[act]
        forces += [sc, -sc]
        points += [pa[act], pb[act]]
        links += [prim_link[pairs[act, 0]], prim_link[pairs[act, 1]]]

    g_w, g_t, g_q = accumulate(np.vstack(forces), np.vstack(points), np.concatenate(links).astype(np.int64),
                               root_t, axis_w, origin_w, anc)
    grad = np.concatenate([g_w, g_t, g_q + g_joint])
    total = float(terms @ np.asarray(weights, dtype=float))
    return total, terms, grad


def _exp_rot(w):
    th2 = w @ w
    th = np.sqrt(th2)
    a, b = (1.0, 0.5) if th < 1e-8 else (np.sin(th) / th, (1.0 - np.cos(th)) / th2)
    K = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    return np.eye(3) + a * K + b * (np.outer(w, w) - th2 * np.eye(3))


def synth_descend(root_R, root_t, q, j_parent, j_child, j_orig_R, j_orig_p, j_axis, anc,
                  prim_link, prim_R0, prim_p0, prim_type, prim_param, pairs,
                  kp_link, kp_local, tip_link, tip_local, lower, upper,
                  obj, obj_nrm, centroid, weights, spen_thr, nrm_h,
                  precond, steps, alpha0, growth, max_backtracks):
    def energy(R, t, qq):
        e, _, g = synth_energy(R, t, qq, j_parent, j_child, j_orig_R, j_orig_p, j_axis, anc,
                               prim_link, prim_R0, prim_p0, prim_type, prim_param, pairs,
                               kp_link, kp_local, tip_link, tip_local, lower, upper,
                               obj, obj_nrm, centroid, weights, spen_thr, nrm_h)
        return e, g

    R, t, qq = root_R.copy(), root_t.copy(), q.copy()
    energies = np.empty(steps + 1)
    e, g = energy(R, t, qq)
    if not np.isfinite(e):
        return energies, R, t, qq, 0, 0
    energies[0] = e
    alpha = alpha0
    accepted = 0
    for step in range(1, steps + 1):
        a = alpha
        moved = False
        for _ in range(max_backtracks + 1):
            d = a * precond * g
            Rc = _exp_rot(-d[:3]) @ R
            tc = t - d[3:6]
            qc = np.minimum(np.maximum(qq - d[6:], lower), upper)
            e_new, g_new = energy(Rc, tc, qc)
            if not np.isfinite(e_new):
                return energies, R, t, qq, accepted, step
            if e_new <= e:
                R, t, qq, e, g = Rc, tc, qc, e_new, g_new
                accepted += 1
                alpha = a * growth
                moved = True
                break
            a *= 0.5
        if not moved:
            alpha = max(a, 1e-12)
        energies[step] = e
    return energies, R, t, qq, accepted, -1
