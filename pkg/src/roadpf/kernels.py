"""Hot numeric kernels.

Every kernel exists as a numba loop (``*_jit``) and a numpy/scipy
equivalent (``*_numpy``); the public name is bound to one of them by
:mod:`roadpf._accel`. Both variants are importable so tests and the kernel
benchmark can compare them directly.

Array layouts: images are ``(H, W)``; multi-channel fields are planar
``(C, H, W)`` float32 so that row loops stay contiguous.
"""
import math

import numpy as np
from scipy import ndimage

from ._accel import njit, select

F0 = np.float32(0.0)
F1 = np.float32(1.0)
FH = np.float32(0.5)
FQ = np.float32(0.25)

# Farnebaeck border attenuation for the outermost pixels of every level.
FLOW_BORDER = np.array([0.14, 0.14, 0.4472, 0.4472, 0.4472], dtype=np.float32)


# ---------------------------------------------------------------------------
# bilinear sampling at scattered points
# ---------------------------------------------------------------------------

@njit(fastmath=True)
def bilinear_points_jit(grid, xs, ys):
    h, w = grid.shape
    out = np.zeros(xs.shape[0], dtype=np.float64)
    for i in range(xs.shape[0]):
        x = xs[i]
        y = ys[i]
        if not (x >= 0.0 and y >= 0.0 and x <= w - 1 and y <= h - 1):
            continue
        x0 = min(int(x), max(w - 2, 0))
        y0 = min(int(y), max(h - 2, 0))
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        out[i] = ((1.0 - fy) * ((1.0 - fx) * grid[y0, x0] + fx * grid[y0, x1])
                  + fy * ((1.0 - fx) * grid[y1, x0] + fx * grid[y1, x1]))
    return out


def bilinear_points_numpy(grid, xs, ys):
    h, w = grid.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (ys >= 0) & (xs <= w - 1) & (ys <= h - 1)
    xc = np.where(inside, xs, 0.0)
    yc = np.where(inside, ys, 0.0)
    x0 = np.minimum(xc.astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(yc.astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    val = ((1.0 - fy) * ((1.0 - fx) * grid[y0, x0] + fx * grid[y0, x1])
           + fy * ((1.0 - fx) * grid[y1, x0] + fx * grid[y1, x1]))
    return np.where(inside, val, 0.0).astype(np.float64)


bilinear_points = select(bilinear_points_jit, bilinear_points_numpy)


# ---------------------------------------------------------------------------
# polynomial expansion
# ---------------------------------------------------------------------------

def poly_exp_basis(n, sigma):
    """1D applicability taps and the inverse-Gram weights for radius ``n``.

    Returns ``(g, xg, xxg, coef)`` where ``coef`` packs the entries of the
    inverse 6x6 Gram matrix of the basis {1, x, y, x^2, y^2, xy} that are
    needed to turn the six projections into (bx, by, axx, ayy, axy).
    """
    k = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-k * k / (2.0 * sigma * sigma))
    g /= g.sum()
    kx, ky = np.meshgrid(k, k)
    w = np.outer(g, g)
    basis = np.stack([np.ones_like(kx), kx, ky, kx * kx, ky * ky, kx * ky])
    gram = np.einsum("aij,bij,ij->ab", basis, basis, w)
    ginv = np.linalg.inv(gram)
    coef = np.array([ginv[1, 1], ginv[2, 2], ginv[3, 0], ginv[3, 3], ginv[3, 4],
                     ginv[4, 0], ginv[4, 3], ginv[4, 4], ginv[5, 5]], dtype=np.float32)
    return (g.astype(np.float32), (k * g).astype(np.float32),
            (k * k * g).astype(np.float32), coef)


@njit(fastmath=True)
def poly_exp_jit(img, g, xg, xxg, coef):
    h, w = img.shape
    n = (g.shape[0] - 1) // 2
    out = np.empty((5, h, w), dtype=np.float32)
    pads = np.empty((3, w + 2 * n), dtype=np.float32)
    t = np.empty((6, w), dtype=np.float32)
    for y in range(h):
        v0 = pads[0, n:n + w]
        v1 = pads[1, n:n + w]
        v2 = pads[2, n:n + w]
        row = img[y]
        for x in range(w):
            v0[x] = g[n] * row[x]
            v1[x] = F0
            v2[x] = F0
        for k in range(1, n + 1):
            up = img[max(y - k, 0)]
            dn = img[min(y + k, h - 1)]
            gk = g[n + k]
            xk = xg[n + k]
            xxk = xxg[n + k]
            for x in range(w):
                s = up[x] + dn[x]
                v0[x] += gk * s
                v1[x] += xk * (dn[x] - up[x])
                v2[x] += xxk * s
        for c in range(3):
            for k in range(n):
                pads[c, k] = pads[c, n]
                pads[c, w + n + k] = pads[c, w + n - 1]
        t0 = t[0]
        tx = t[1]
        txx = t[2]
        ty = t[3]
        txy = t[4]
        tyy = t[5]
        for x in range(w):
            t0[x] = g[n] * v0[x]
            tx[x] = F0
            txx[x] = F0
            ty[x] = g[n] * v1[x]
            txy[x] = F0
            tyy[x] = g[n] * v2[x]
        for k in range(1, n + 1):
            gk = g[n + k]
            xk = xg[n + k]
            xxk = xxg[n + k]
            l0 = pads[0, n - k:n - k + w]
            r0 = pads[0, n + k:n + k + w]
            l1 = pads[1, n - k:n - k + w]
            r1 = pads[1, n + k:n + k + w]
            l2 = pads[2, n - k:n - k + w]
            r2 = pads[2, n + k:n + k + w]
            for x in range(w):
                s0 = l0[x] + r0[x]
                t0[x] += gk * s0
                tx[x] += xk * (r0[x] - l0[x])
                txx[x] += xxk * s0
                ty[x] += gk * (l1[x] + r1[x])
                txy[x] += xk * (r1[x] - l1[x])
                tyy[x] += gk * (l2[x] + r2[x])
        o0 = out[0, y]
        o1 = out[1, y]
        o2 = out[2, y]
        o3 = out[3, y]
        o4 = out[4, y]
        for x in range(w):
            o0[x] = coef[0] * tx[x]
            o1[x] = coef[1] * ty[x]
            o2[x] = coef[2] * t0[x] + coef[3] * txx[x] + coef[4] * tyy[x]
            o3[x] = coef[5] * t0[x] + coef[6] * txx[x] + coef[7] * tyy[x]
            o4[x] = coef[8] * txy[x]
    return out


def poly_exp_numpy(img, g, xg, xxg, coef):
    img = np.asarray(img, dtype=np.float32)

    def sep(arr, wy, wx):
        tmp = ndimage.correlate1d(arr, wy, axis=0, mode="nearest")
        return ndimage.correlate1d(tmp, wx, axis=1, mode="nearest")

    t0 = sep(img, g, g)
    tx = sep(img, g, xg)
    ty = sep(img, xg, g)
    txx = sep(img, g, xxg)
    tyy = sep(img, xxg, g)
    txy = sep(img, xg, xg)
    out = np.empty((5,) + img.shape, dtype=np.float32)
    out[0] = coef[0] * tx
    out[1] = coef[1] * ty
    out[2] = coef[2] * t0 + coef[3] * txx + coef[4] * tyy
    out[3] = coef[5] * t0 + coef[6] * txx + coef[7] * tyy
    out[4] = coef[8] * txy
    return out


poly_exp = select(poly_exp_jit, poly_exp_numpy)


# ---------------------------------------------------------------------------
# flow update: per-pixel normal equations, windowed averaging, solve
# ---------------------------------------------------------------------------
#
# Channels of the expansion R: 0 bx, 1 by, 2 axx, 3 ayy, 4 axy (the
# coefficient of x*y, i.e. twice the off-diagonal of A).
# Channels of M: 0 G11, 1 G12, 2 G22, 3 h1, 4 h2 with G = A^T A, h = A^T db.
# The second expansion is sampled at scattered (flow-displaced) positions, so
# update_matrices takes it interleaved, shape (H, W, 5).

@njit(fastmath=True)
def update_matrices_jit(R0, R1i, flow, M, border):
    _, h, w = R0.shape
    nb = border.shape[0]
    sx = np.ones(w, dtype=np.float32)
    for x in range(min(nb, w)):
        sx[x] *= border[x]
        sx[w - 1 - x] *= border[x]
    for y in range(h):
        sy = F1
        if y < nb:
            sy *= border[y]
        if y >= h - nb:
            sy *= border[h - y - 1]
        du = flow[0, y]
        dv = flow[1, y]
        b0 = R0[0, y]
        b1 = R0[1, y]
        c2 = R0[2, y]
        c3 = R0[3, y]
        c4 = R0[4, y]
        m0 = M[0, y]
        m1 = M[1, y]
        m2 = M[2, y]
        m3 = M[3, y]
        m4 = M[4, y]
        for x in range(w):
            dx = du[x]
            dy = dv[x]
            fx = x + dx
            fy = y + dy
            x1 = int(math.floor(fx))
            y1 = int(math.floor(fy))
            ax = np.float32(fx - x1)
            ay = np.float32(fy - y1)
            if x1 >= 0 and y1 >= 0 and x1 < w - 1 and y1 < h - 1:
                a00 = (F1 - ax) * (F1 - ay)
                a01 = ax * (F1 - ay)
                a10 = (F1 - ax) * ay
                a11 = ax * ay
                p = R1i[y1, x1]
                q = R1i[y1, x1 + 1]
                r = R1i[y1 + 1, x1]
                t = R1i[y1 + 1, x1 + 1]
                bx1 = a00 * p[0] + a01 * q[0] + a10 * r[0] + a11 * t[0]
                by1 = a00 * p[1] + a01 * q[1] + a10 * r[1] + a11 * t[1]
                axx = (c2[x] + a00 * p[2] + a01 * q[2] + a10 * r[2] + a11 * t[2]) * FH
                ayy = (c3[x] + a00 * p[3] + a01 * q[3] + a10 * r[3] + a11 * t[3]) * FH
                a12 = (c4[x] + a00 * p[4] + a01 * q[4] + a10 * r[4] + a11 * t[4]) * FQ
            else:
                bx1 = F0
                by1 = F0
                axx = c2[x]
                ayy = c3[x]
                a12 = c4[x] * FH
            s = sy * sx[x]
            hx = ((b0[x] - bx1) * FH + axx * dx + a12 * dy) * s
            hy = ((b1[x] - by1) * FH + a12 * dx + ayy * dy) * s
            axx *= s
            ayy *= s
            a12 *= s
            m0[x] = axx * axx + a12 * a12
            m1[x] = a12 * (axx + ayy)
            m2[x] = ayy * ayy + a12 * a12
            m3[x] = axx * hx + a12 * hy
            m4[x] = a12 * hx + ayy * hy


def _border_scale(h, w, border):
    nb = border.shape[0]
    sx = np.ones(w, dtype=np.float32)
    sy = np.ones(h, dtype=np.float32)
    k = min(nb, w)
    sx[:k] *= border[:k]
    sx[w - k:] *= border[:k][::-1]
    k = min(nb, h)
    sy[:k] *= border[:k]
    sy[h - k:] *= border[:k][::-1]
    return sy[:, None] * sx[None, :]


def update_matrices_numpy(R0, R1i, flow, M, border):
    _, h, w = R0.shape
    dx = flow[0]
    dy = flow[1]
    yy, xx = np.mgrid[0:h, 0:w]
    fx = xx + dx
    fy = yy + dy
    x1 = np.floor(fx).astype(np.int64)
    y1 = np.floor(fy).astype(np.int64)
    fx = (fx - x1).astype(np.float32)
    fy = (fy - y1).astype(np.float32)
    inside = (x1 >= 0) & (y1 >= 0) & (x1 < w - 1) & (y1 < h - 1)
    xc = np.where(inside, x1, 0)
    yc = np.where(inside, y1, 0)
    a00 = (1 - fx) * (1 - fy)
    a01 = fx * (1 - fy)
    a10 = (1 - fx) * fy
    a11 = fx * fy
    R1 = np.moveaxis(R1i, 2, 0)
    s1 = (a00 * R1[:, yc, xc] + a01 * R1[:, yc, xc + 1]
          + a10 * R1[:, yc + 1, xc] + a11 * R1[:, yc + 1, xc + 1])
    bx1 = np.where(inside, s1[0], 0.0)
    by1 = np.where(inside, s1[1], 0.0)
    axx = np.where(inside, (R0[2] + s1[2]) * 0.5, R0[2])
    ayy = np.where(inside, (R0[3] + s1[3]) * 0.5, R0[3])
    a12 = np.where(inside, (R0[4] + s1[4]) * 0.25, R0[4] * 0.5)
    hx = (R0[0] - bx1) * 0.5 + axx * dx + a12 * dy
    hy = (R0[1] - by1) * 0.5 + a12 * dx + ayy * dy
    s = _border_scale(h, w, border)
    hx, hy, axx, ayy, a12 = hx * s, hy * s, axx * s, ayy * s, a12 * s
    M[0] = axx * axx + a12 * a12
    M[1] = a12 * (axx + ayy)
    M[2] = ayy * ayy + a12 * a12
    M[3] = axx * hx + a12 * hy
    M[4] = a12 * hx + ayy * hy


update_matrices = select(update_matrices_jit, update_matrices_numpy)


@njit(fastmath=True)
def blur_solve_jit(M, kernel, flow, eps):
    """Average the five M channels with a symmetric window, solve G d = h."""
    _, h, w = M.shape
    m = kernel.shape[0] - 1
    pad = np.empty(w + 2 * m, dtype=np.float32)
    hs = np.empty((5, w), dtype=np.float32)
    e = np.float32(eps)
    k0 = kernel[0]
    for y in range(h):
        for ch in range(5):
            core = pad[m:m + w]
            row = M[ch, y]
            for x in range(w):
                core[x] = k0 * row[x]
            for k in range(1, m + 1):
                kk = kernel[k]
                up = M[ch, max(y - k, 0)]
                dn = M[ch, min(y + k, h - 1)]
                for x in range(w):
                    core[x] += kk * (up[x] + dn[x])
            for k in range(m):
                pad[k] = pad[m]
                pad[w + m + k] = pad[w + m - 1]
            o = hs[ch]
            for x in range(w):
                o[x] = k0 * core[x]
            for k in range(1, m + 1):
                kk = kernel[k]
                left = pad[m - k:m - k + w]
                right = pad[m + k:m + k + w]
                for x in range(w):
                    o[x] += kk * (left[x] + right[x])
        g11 = hs[0]
        g12 = hs[1]
        g22 = hs[2]
        h1 = hs[3]
        h2 = hs[4]
        fu = flow[0, y]
        fv = flow[1, y]
        for x in range(w):
            idet = F1 / (g11[x] * g22[x] - g12[x] * g12[x] + e)
            fu[x] = (g22[x] * h1[x] - g12[x] * h2[x]) * idet
            fv[x] = (g11[x] * h2[x] - g12[x] * h1[x]) * idet


def blur_solve_numpy(M, kernel, flow, eps):
    full = np.concatenate([kernel[:0:-1], kernel]).astype(np.float32)
    tmp = ndimage.correlate1d(M, full, axis=1, mode="nearest")
    sm = ndimage.correlate1d(tmp, full, axis=2, mode="nearest")
    g11, g12, g22, h1, h2 = sm
    idet = 1.0 / (g11 * g22 - g12 * g12 + eps)
    flow[0] = (g22 * h1 - g12 * h2) * idet
    flow[1] = (g11 * h2 - g12 * h1) * idet


blur_solve = select(blur_solve_jit, blur_solve_numpy)


@njit(fastmath=True)
def box_solve_jit(M, radius, flow, eps):
    """Box-window variant of :func:`blur_solve_jit`."""
    _, h, w = M.shape
    m = radius
    pad = np.empty(w + 2 * m, dtype=np.float32)
    hs = np.empty((5, w), dtype=np.float32)
    e = np.float32(eps)
    norm = np.float32(1.0 / ((2 * m + 1) * (2 * m + 1)))
    for y in range(h):
        for ch in range(5):
            core = pad[m:m + w]
            row = M[ch, y]
            for x in range(w):
                core[x] = row[x]
            for k in range(1, m + 1):
                up = M[ch, max(y - k, 0)]
                dn = M[ch, min(y + k, h - 1)]
                for x in range(w):
                    core[x] += up[x] + dn[x]
            for k in range(m):
                pad[k] = pad[m]
                pad[w + m + k] = pad[w + m - 1]
            o = hs[ch]
            for x in range(w):
                o[x] = core[x]
            for k in range(1, m + 1):
                left = pad[m - k:m - k + w]
                right = pad[m + k:m + k + w]
                for x in range(w):
                    o[x] += left[x] + right[x]
        fu = flow[0, y]
        fv = flow[1, y]
        for x in range(w):
            g11 = hs[0, x] * norm
            g12 = hs[1, x] * norm
            g22 = hs[2, x] * norm
            h1 = hs[3, x] * norm
            h2 = hs[4, x] * norm
            idet = F1 / (g11 * g22 - g12 * g12 + e)
            fu[x] = (g22 * h1 - g12 * h2) * idet
            fv[x] = (g11 * h2 - g12 * h1) * idet


def box_solve_numpy(M, radius, flow, eps):
    size = 2 * radius + 1
    sm = ndimage.uniform_filter1d(M, size, axis=1, mode="nearest")
    sm = ndimage.uniform_filter1d(sm, size, axis=2, mode="nearest")
    g11, g12, g22, h1, h2 = sm
    idet = 1.0 / (g11 * g22 - g12 * g12 + eps)
    flow[0] = (g22 * h1 - g12 * h2) * idet
    flow[1] = (g11 * h2 - g12 * h1) * idet


box_solve = select(box_solve_jit, box_solve_numpy)


# ---------------------------------------------------------------------------
# monotone point correspondence (accumulated cost table)
# ---------------------------------------------------------------------------

@njit
def dtw_table_jit(cost):
    n, m = cost.shape
    acc = np.empty((n, m), dtype=np.float64)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i, j] + best
    return acc


def dtw_table_numpy(cost):
    # sweep anti-diagonals: every cell on one depends only on the previous two
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for d in range(1, n + m - 1):
        i = np.arange(max(0, d - m + 1), min(n, d + 1))
        j = d - i
        best = np.full(i.shape, np.inf)
        up = i > 0
        left = j > 0
        diag = up & left
        best[up] = acc[i[up] - 1, j[up]]
        best[left] = np.minimum(best[left], acc[i[left], j[left] - 1])
        best[diag] = np.minimum(best[diag], acc[i[diag] - 1, j[diag] - 1])
        acc[i, j] = cost[i, j] + best
    return acc


dtw_table = select(dtw_table_jit, dtw_table_numpy)


# ---------------------------------------------------------------------------
# distance from every pixel to a polyline (tube rendering)
# ---------------------------------------------------------------------------

@njit
def polyline_distance_jit(points, h, w, reach):
    out = np.full((h, w), reach, dtype=np.float64)
    for s in range(points.shape[0] - 1):
        ax, ay = points[s, 0], points[s, 1]
        dx, dy = points[s + 1, 0] - ax, points[s + 1, 1] - ay
        ll = dx * dx + dy * dy
        x0 = max(int(math.floor(min(ax, ax + dx) - reach)), 0)
        x1 = min(int(math.ceil(max(ax, ax + dx) + reach)) + 1, w)
        y0 = max(int(math.floor(min(ay, ay + dy) - reach)), 0)
        y1 = min(int(math.ceil(max(ay, ay + dy) + reach)) + 1, h)
        for y in range(y0, y1):
            for x in range(x0, x1):
                px, py = x - ax, y - ay
                t = 0.0
                if ll > 0.0:
                    t = min(max((px * dx + py * dy) / ll, 0.0), 1.0)
                ex, ey = px - t * dx, py - t * dy
                dist = math.sqrt(ex * ex + ey * ey)
                if dist < out[y, x]:
                    out[y, x] = dist
    return out


def polyline_distance_numpy(points, h, w, reach):
    out = np.full((h, w), float(reach))
    for s in range(points.shape[0] - 1):
        a, b = points[s], points[s + 1]
        d = b - a
        ll = float(d @ d)
        x0 = max(int(math.floor(min(a[0], b[0]) - reach)), 0)
        x1 = min(int(math.ceil(max(a[0], b[0]) + reach)) + 1, w)
        y0 = max(int(math.floor(min(a[1], b[1]) - reach)), 0)
        y1 = min(int(math.ceil(max(a[1], b[1]) + reach)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        px = np.arange(x0, x1)[None, :] - a[0]
        py = np.arange(y0, y1)[:, None] - a[1]
        t = np.clip((px * d[0] + py * d[1]) / ll, 0.0, 1.0) if ll > 0 else np.zeros((1, 1))
        dist = np.hypot(px - t * d[0], py - t * d[1])
        np.minimum(out[y0:y1, x0:x1], dist, out=out[y0:y1, x0:x1])
    return out


polyline_distance = select(polyline_distance_jit, polyline_distance_numpy)
