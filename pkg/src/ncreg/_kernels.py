"""Compiled inner loops for the hash-grid encoding and Adam updates."""

import numpy as np
from numba import njit

PRIME_Y = np.uint64(2654435761)
PRIME_Z = np.uint64(805459861)


@njit(cache=True)
def hash_index(cx, cy, cz, mask):
    h = np.uint64(cx) ^ (np.uint64(cy) * PRIME_Y) ^ (np.uint64(cz) * PRIME_Z)
    return np.int64(h & mask)


@njit(cache=True)
def encode(x, tables, resolutions, idx_out, w_out, enc_out):
    """Trilinear hash-grid lookup.

    x is (n, 3) in [-1, 1]^3, tables (L, T, F). Fills corner indices and
    weights (n, L, 8) and the encoding (n, L*F). Corner c has offsets
    (c & 1, (c >> 1) & 1, (c >> 2) & 1).
    """
    n = x.shape[0]
    n_levels, table_size, n_feat = tables.shape
    mask = np.uint64(table_size - 1)
    hx = np.empty(2, dtype=np.uint64)
    hy = np.empty(2, dtype=np.uint64)
    hz = np.empty(2, dtype=np.uint64)
    wx = np.empty(2)
    wy = np.empty(2)
    wz = np.empty(2)
    kc = np.empty(8, dtype=np.int64)
    wc = np.empty(8)
    for i in range(n):
        u0 = (x[i, 0] + 1.0) * 0.5
        u1 = (x[i, 1] + 1.0) * 0.5
        u2 = (x[i, 2] + 1.0) * 0.5
        for lv in range(n_levels):
            r = resolutions[lv]
            s0 = u0 * r
            s1 = u1 * r
            s2 = u2 * r
            c0 = np.floor(s0)
            c1 = np.floor(s1)
            c2 = np.floor(s2)
            wx[1] = s0 - c0
            wy[1] = s1 - c1
            wz[1] = s2 - c2
            wx[0] = 1.0 - wx[1]
            wy[0] = 1.0 - wy[1]
            wz[0] = 1.0 - wz[1]
            ic0 = np.uint64(np.int64(c0))
            ic1 = np.uint64(np.int64(c1))
            ic2 = np.uint64(np.int64(c2))
            hx[0] = ic0
            hx[1] = ic0 + np.uint64(1)
            hy[0] = ic1 * PRIME_Y
            hy[1] = (ic1 + np.uint64(1)) * PRIME_Y
            hz[0] = ic2 * PRIME_Z
            hz[1] = (ic2 + np.uint64(1)) * PRIME_Z
            for corner in range(8):
                b0 = corner & 1
                b1 = (corner >> 1) & 1
                b2 = corner >> 2
                kc[corner] = np.int64((hx[b0] ^ hy[b1] ^ hz[b2]) & mask)
                wc[corner] = wx[b0] * wy[b1] * wz[b2]
                idx_out[i, lv, corner] = kc[corner]
                w_out[i, lv, corner] = wc[corner]
            for f in range(n_feat):
                # scalar accumulator, corners summed in order
                a = 0.0
                for corner in range(8):
                    a += wc[corner] * tables[lv, kc[corner], f]
                enc_out[i, lv * n_feat + f] = a


@njit(cache=True)
def encode_only(x, tables, resolutions, enc_out):
    """Same as :func:`encode` without storing corner data."""
    n = x.shape[0]
    n_levels, table_size, n_feat = tables.shape
    mask = np.uint64(table_size - 1)
    hx = np.empty(2, dtype=np.uint64)
    hy = np.empty(2, dtype=np.uint64)
    hz = np.empty(2, dtype=np.uint64)
    wx = np.empty(2)
    wy = np.empty(2)
    wz = np.empty(2)
    kc = np.empty(8, dtype=np.int64)
    wc = np.empty(8)
    for i in range(n):
        u0 = (x[i, 0] + 1.0) * 0.5
        u1 = (x[i, 1] + 1.0) * 0.5
        u2 = (x[i, 2] + 1.0) * 0.5
        for lv in range(n_levels):
            r = resolutions[lv]
            s0 = u0 * r
            s1 = u1 * r
            s2 = u2 * r
            c0 = np.floor(s0)
            c1 = np.floor(s1)
            c2 = np.floor(s2)
            wx[1] = s0 - c0
            wy[1] = s1 - c1
            wz[1] = s2 - c2
            wx[0] = 1.0 - wx[1]
            wy[0] = 1.0 - wy[1]
            wz[0] = 1.0 - wz[1]
            ic0 = np.uint64(np.int64(c0))
            ic1 = np.uint64(np.int64(c1))
            ic2 = np.uint64(np.int64(c2))
            hx[0] = ic0
            hx[1] = ic0 + np.uint64(1)
            hy[0] = ic1 * PRIME_Y
            hy[1] = (ic1 + np.uint64(1)) * PRIME_Y
            hz[0] = ic2 * PRIME_Z
            hz[1] = (ic2 + np.uint64(1)) * PRIME_Z
            for corner in range(8):
                b0 = corner & 1
                b1 = (corner >> 1) & 1
                b2 = corner >> 2
                kc[corner] = np.int64((hx[b0] ^ hy[b1] ^ hz[b2]) & mask)
                wc[corner] = wx[b0] * wy[b1] * wz[b2]
            for f in range(n_feat):
                a = 0.0
                for corner in range(8):
                    a += wc[corner] * tables[lv, kc[corner], f]
                enc_out[i, lv * n_feat + f] = a


@njit(cache=True)
def encode_with_jacobian(x, tables, resolutions, enc_out, jac_out):
    """Encoding plus its derivative w.r.t. x, jac_out of shape (n, L*F, 3).

    Cell boundaries use the floor cell (one-sided derivative).
    """
    n = x.shape[0]
    n_levels, table_size, n_feat = tables.shape
    mask = np.uint64(table_size - 1)
    hx = np.empty(2, dtype=np.uint64)
    hy = np.empty(2, dtype=np.uint64)
    hz = np.empty(2, dtype=np.uint64)
    wx = np.empty(2)
    wy = np.empty(2)
    wz = np.empty(2)
    sign = np.array([-1.0, 1.0])
    for i in range(n):
        u0 = (x[i, 0] + 1.0) * 0.5
        u1 = (x[i, 1] + 1.0) * 0.5
        u2 = (x[i, 2] + 1.0) * 0.5
        for lv in range(n_levels):
            r = resolutions[lv]
            s0 = u0 * r
            s1 = u1 * r
            s2 = u2 * r
            c0 = np.floor(s0)
            c1 = np.floor(s1)
            c2 = np.floor(s2)
            wx[1] = s0 - c0
            wy[1] = s1 - c1
            wz[1] = s2 - c2
            wx[0] = 1.0 - wx[1]
            wy[0] = 1.0 - wy[1]
            wz[0] = 1.0 - wz[1]
            ic0 = np.uint64(np.int64(c0))
            ic1 = np.uint64(np.int64(c1))
            ic2 = np.uint64(np.int64(c2))
            hx[0] = ic0
            hx[1] = ic0 + np.uint64(1)
            hy[0] = ic1 * PRIME_Y
            hy[1] = (ic1 + np.uint64(1)) * PRIME_Y
            hz[0] = ic2 * PRIME_Z
            hz[1] = (ic2 + np.uint64(1)) * PRIME_Z
            scale = 0.5 * r
            for f in range(n_feat):
                # scalar accumulators keep the inner loop in registers
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                for corner in range(8):
                    b0 = corner & 1
                    b1 = (corner >> 1) & 1
                    b2 = corner >> 2
                    k = np.int64((hx[b0] ^ hy[b1] ^ hz[b2]) & mask)
                    t = tables[lv, k, f]
                    a0 += wx[b0] * wy[b1] * wz[b2] * t
                    a1 += sign[b0] * wy[b1] * wz[b2] * t
                    a2 += wx[b0] * sign[b1] * wz[b2] * t
                    a3 += wx[b0] * wy[b1] * sign[b2] * t
                col = lv * n_feat + f
                enc_out[i, col] = a0
                jac_out[i, col, 0] = a1 * scale
                jac_out[i, col, 1] = a2 * scale
                jac_out[i, col, 2] = a3 * scale


@njit(cache=True)
def scatter_table_grad(idx, w, grad_enc, grad_tables):
    """Accumulate d loss / d table entries; grad_tables is zeroed here."""
    grad_tables[:] = 0.0
    n, n_levels, n_corner = idx.shape
    n_feat = grad_tables.shape[2]
    for i in range(n):
        for lv in range(n_levels):
            for corner in range(n_corner):
                k = idx[i, lv, corner]
                wc = w[i, lv, corner]
                for f in range(n_feat):
                    grad_tables[lv, k, f] += wc * grad_enc[i, lv * n_feat + f]


@njit(cache=True)
def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    """In-place Adam step on flat contiguous arrays."""
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    a1 = 1.0 - beta1
    a2 = 1.0 - beta2
    step_size = lr / c1
    inv_c2 = 1.0 / c2
    for i in range(param.size):
        g = grad[i]
        mi = beta1 * m[i] + a1 * g
        vi = beta2 * v[i] + a2 * g * g
        m[i] = mi
        v[i] = vi
        param[i] -= step_size * mi / (np.sqrt(vi * inv_c2) + eps)


@njit(cache=True)
def bias_relu(h, b):
    """In place: h = max(h + b, 0), letting NaN through."""
    n, m = h.shape
    for i in range(n):
        for j in range(m):
            v = h[i, j] + b[j]
            h[i, j] = 0.0 if v <= 0.0 else v


@njit(cache=True)
def relu_backward(g, h):
    """In place: zero g wherever the activation h is not positive."""
    n, m = g.shape
    for i in range(n):
        for j in range(m):
            if h[i, j] <= 0.0:
                g[i, j] = 0.0


@njit(cache=True)
def contract_jacobian(grad_enc, denc, out):
    """out[n, c, k] = sum_j grad_enc[c, n, j] * denc[n, j, k]."""
    n_out, n, m = grad_enc.shape
    for i in range(n):
        for c in range(n_out):
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            for j in range(m):
                g = grad_enc[c, i, j]
                a0 += g * denc[i, j, 0]
                a1 += g * denc[i, j, 1]
                a2 += g * denc[i, j, 2]
            out[i, c, 0] = a0
            out[i, c, 1] = a1
            out[i, c, 2] = a2


@njit(cache=True)
def _tri_area(ax, ay, az, bx, by, bz, cx, cy, cz):
    ux = bx - ax
    uy = by - ay
    uz = bz - az
    vx = cx - ax
    vy = cy - ay
    vz = cz - az
    nx = uy * vz - uz * vy
    ny = uz * vx - ux * vz
    nz = ux * vy - uy * vx
    return 0.5 * np.sqrt(nx * nx + ny * ny + nz * nz)


@njit(cache=True)
def face_samples(tri, vals, bary, planar, sphere, targets):
    """Planar points, their sphere projections and area-weighted targets.

    tri (n, 3, 3) face corners, vals (n, 3, C) corner features, bary (n, 3)
    simplex weights. Returns the smallest sub-area total seen.
    """
    n = tri.shape[0]
    n_ch = vals.shape[2]
    min_total = np.inf
    for i in range(n):
        for d in range(3):
            planar[i, d] = bary[i, 0] * tri[i, 0, d] + bary[i, 1] * tri[i, 1, d] + bary[i, 2] * tri[i, 2, d]
        px = planar[i, 0]
        py = planar[i, 1]
        pz = planar[i, 2]
        r = np.sqrt(px * px + py * py + pz * pz)
        sphere[i, 0] = px / r
        sphere[i, 1] = py / r
        sphere[i, 2] = pz / r
        a1 = _tri_area(tri[i, 1, 0], tri[i, 1, 1], tri[i, 1, 2], tri[i, 2, 0], tri[i, 2, 1], tri[i, 2, 2], px, py, pz)
        a2 = _tri_area(tri[i, 0, 0], tri[i, 0, 1], tri[i, 0, 2], tri[i, 2, 0], tri[i, 2, 1], tri[i, 2, 2], px, py, pz)
        a3 = _tri_area(tri[i, 0, 0], tri[i, 0, 1], tri[i, 0, 2], tri[i, 1, 0], tri[i, 1, 1], tri[i, 1, 2], px, py, pz)
        total = a1 + a2 + a3
        if total < min_total:
            min_total = total
        for c in range(n_ch):
            targets[i, c] = (a1 * vals[i, 0, c] + a2 * vals[i, 1, c] + a3 * vals[i, 2, c]) / total
    return min_total
