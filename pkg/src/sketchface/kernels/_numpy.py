"""Pure-numpy fallback implementations of the hot kernels.

Same signatures and semantics as the numba backend; used when
SKETCHFACE_DISABLE_NUMBA=1 or numba is unavailable.
"""
import numpy as np


def rasterize_triangles(xy, z, tris, width, height):
    """Z-buffered rasterization of 2D-projected triangles.

    xy: (N,2) float64 vertex positions in pixel coords.
    z:  (N,)  float64 positive depths (1/z interpolated for the buffer).
    tris: (M,3) int64 vertex indices.

    Returns (depth, tri_id, bary):
      depth  (H,W) float64, +inf where empty
      tri_id (H,W) int32, -1 where empty
      bary   (H,W,3) float64 screen-space barycentrics of the winning triangle
    """
    depth = np.full((height, width), np.inf, dtype=np.float64)
    tri_id = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)

    inv_z = 1.0 / z
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t]
        x0, y0 = xy[i0]
        x1, y1 = xy[i1]
        x2, y2 = xy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) - 0.5)), width - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) - 0.5)), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        xs = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
        ys = np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5
        px, py = np.meshgrid(xs, ys)
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        zin = 1.0 / (w0 * inv_z[i0] + w1 * inv_z[i1] + w2 * inv_z[i2])
        patch = depth[ymin:ymax + 1, xmin:xmax + 1]
        win = inside & (zin < patch)
        if not win.any():
            continue
        patch[win] = zin[win]
        tri_id[ymin:ymax + 1, xmin:xmax + 1][win] = t
        bpatch = bary[ymin:ymax + 1, xmin:xmax + 1]
        bpatch[win, 0] = w0[win]
        bpatch[win, 1] = w1[win]
        bpatch[win, 2] = w2[win]
    return depth, tri_id, bary


def mls_affine_points(pts, src, dst):
    """Affine moving-least-squares map (weights 1/d^2) evaluated at pts.

    Evaluates f(v) = v + (q* - p*) + (v - p*) @ (M - I), which is
    algebraically the standard affine MLS fit and bit-exact identity when
    src == dst.
    """
    out = np.empty_like(pts)
    for k in range(pts.shape[0]):
        v = pts[k]
        d2 = (src[:, 0] - v[0]) ** 2 + (src[:, 1] - v[1]) ** 2
        hit = np.argmin(d2)
        if d2[hit] < 1e-12:
            out[k, 0] = dst[hit, 0] + (v[0] - src[hit, 0])
            out[k, 1] = dst[hit, 1] + (v[1] - src[hit, 1])
            continue
        w = 1.0 / d2
        wsum = w.sum()
        pstar = (w[:, None] * src).sum(axis=0) / wsum
        qstar = (w[:, None] * dst).sum(axis=0) / wsum
        ph = src - pstar
        qh = dst - qstar
        a00 = (w * ph[:, 0] * ph[:, 0]).sum()
        a01 = (w * ph[:, 0] * ph[:, 1]).sum()
        a11 = (w * ph[:, 1] * ph[:, 1]).sum()
        b00 = (w * ph[:, 0] * qh[:, 0]).sum()
        b01 = (w * ph[:, 0] * qh[:, 1]).sum()
        b10 = (w * ph[:, 1] * qh[:, 0]).sum()
        b11 = (w * ph[:, 1] * qh[:, 1]).sum()
        # M - I via adjugate solve of A (M - I) = B - A
        d00 = b00 - a00
        d01 = b01 - a01
        d10 = b10 - a01
        d11 = b11 - a11
        det = a00 * a11 - a01 * a01
        m00 = (a11 * d00 - a01 * d10) / det
        m01 = (a11 * d01 - a01 * d11) / det
        m10 = (a00 * d10 - a01 * d00) / det
        m11 = (a00 * d11 - a01 * d01) / det
        rx = v[0] - pstar[0]
        ry = v[1] - pstar[1]
        out[k, 0] = v[0] + (qstar[0] - pstar[0]) + rx * m00 + ry * m10
        out[k, 1] = v[1] + (qstar[1] - pstar[1]) + rx * m01 + ry * m11
    return out


def median3x3_band(img, band):
    """3x3 median filter applied only at band pixels (clamped borders)."""
    h, w = img.shape[:2]
    out = img.copy()
    if not band.any():
        return out
    stack = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ys = np.clip(np.arange(h) + dy, 0, h - 1)
            xs = np.clip(np.arange(w) + dx, 0, w - 1)
            stack.append(img[ys][:, xs])
    med = np.median(np.stack(stack, axis=0), axis=0)
    out[band] = med[band].astype(img.dtype)
    return out
