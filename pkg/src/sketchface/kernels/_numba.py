"""Numba-jitted implementations of the hot kernels."""
import numpy as np
from numba import njit


@njit(cache=True)
def rasterize_triangles(xy, z, tris, width, height):
    depth = np.full((height, width), np.inf, dtype=np.float64)
    tri_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)

    for t in range(tris.shape[0]):
        i0 = tris[t, 0]
        i1 = tris[t, 1]
        i2 = tris[t, 2]
        x0 = xy[i0, 0]
        y0 = xy[i0, 1]
        x1 = xy[i1, 0]
        y1 = xy[i1, 1]
        x2 = xy[i2, 0]
        y2 = xy[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xlo = min(x0, min(x1, x2))
        xhi = max(x0, max(x1, x2))
        ylo = min(y0, min(y1, y2))
        yhi = max(y0, max(y1, y2))
        xmin = max(int(np.floor(xlo - 0.5)), 0)
        xmax = min(int(np.ceil(xhi - 0.5)), width - 1)
        ymin = max(int(np.floor(ylo - 0.5)), 0)
        ymax = min(int(np.ceil(yhi - 0.5)), height - 1)
        iz0 = 1.0 / z[i0]
        iz1 = 1.0 / z[i1]
        iz2 = 1.0 / z[i2]
        for yi in range(ymin, ymax + 1):
            py = yi + 0.5
            for xi in range(xmin, xmax + 1):
                px = xi + 0.5
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                zp = 1.0 / (w0 * iz0 + w1 * iz1 + w2 * iz2)
                if zp < depth[yi, xi]:
                    depth[yi, xi] = zp
                    tri_id[yi, xi] = t
                    bary[yi, xi, 0] = w0
                    bary[yi, xi, 1] = w1
                    bary[yi, xi, 2] = w2
    return depth, tri_id, bary


@njit(cache=True)
def mls_affine_points(pts, src, dst):
    n = src.shape[0]
    out = np.empty_like(pts)
    for k in range(pts.shape[0]):
        vx = pts[k, 0]
        vy = pts[k, 1]
        hit = -1
        for i in range(n):
            dx = src[i, 0] - vx
            dy = src[i, 1] - vy
            if dx * dx + dy * dy < 1e-12:
                hit = i
                break
        if hit >= 0:
            out[k, 0] = dst[hit, 0] + (vx - src[hit, 0])
            out[k, 1] = dst[hit, 1] + (vy - src[hit, 1])
            continue
        wsum = 0.0
        psx = 0.0
        psy = 0.0
        qsx = 0.0
        qsy = 0.0
        for i in range(n):
            dx = src[i, 0] - vx
            dy = src[i, 1] - vy
            w = 1.0 / (dx * dx + dy * dy)
            wsum += w
            psx += w * src[i, 0]
            psy += w * src[i, 1]
            qsx += w * dst[i, 0]
            qsy += w * dst[i, 1]
        psx /= wsum
        psy /= wsum
        qsx /= wsum
        qsy /= wsum
        a00 = 0.0
        a01 = 0.0
        a11 = 0.0
        b00 = 0.0
        b01 = 0.0
        b10 = 0.0
        b11 = 0.0
        for i in range(n):
            dx = src[i, 0] - vx
            dy = src[i, 1] - vy
            w = 1.0 / (dx * dx + dy * dy)
            phx = src[i, 0] - psx
            phy = src[i, 1] - psy
            qhx = dst[i, 0] - qsx
            qhy = dst[i, 1] - qsy
            a00 += w * phx * phx
            a01 += w * phx * phy
            a11 += w * phy * phy
            b00 += w * phx * qhx
            b01 += w * phx * qhy
            b10 += w * phy * qhx
            b11 += w * phy * qhy
        d00 = b00 - a00
        d01 = b01 - a01
        d10 = b10 - a01
        d11 = b11 - a11
        det = a00 * a11 - a01 * a01
        m00 = (a11 * d00 - a01 * d10) / det
        m01 = (a11 * d01 - a01 * d11) / det
        m10 = (a00 * d10 - a01 * d00) / det
        m11 = (a00 * d11 - a01 * d01) / det
        rx = vx - psx
        ry = vy - psy
        out[k, 0] = vx + (qsx - psx) + rx * m00 + ry * m10
        out[k, 1] = vy + (qsy - psy) + rx * m01 + ry * m11
    return out


@njit(cache=True)
def median3x3_band(img, band):
    h = img.shape[0]
    w = img.shape[1]
    c = img.shape[2]
    out = img.copy()
    vals = np.empty(9, dtype=img.dtype)
    for yi in range(h):
        for xi in range(w):
            if not band[yi, xi]:
                continue
            for ch in range(c):
                n = 0
                for dy in range(-1, 2):
                    yy = min(max(yi + dy, 0), h - 1)
                    for dx in range(-1, 2):
                        xx = min(max(xi + dx, 0), w - 1)
                        vals[n] = img[yy, xx, ch]
                        n += 1
                # insertion sort of 9 values, median is vals[4]
                for a in range(1, 9):
                    key = vals[a]
                    b = a - 1
                    while b >= 0 and vals[b] > key:
                        vals[b + 1] = vals[b]
                        b -= 1
                    vals[b + 1] = key
                out[yi, xi, ch] = vals[4]
    return out
