"""Per-frame propagation: isomap extraction/refinement, face re-rendering,
moving-least-squares background warping and boundary median blending.

Images are uint8 RGB (H, W, 3); isomaps carry float32 RGB in [0,1] plus a
validity mask. All stages are pure functions over immutable inputs so frames
can be processed in any order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .face_model import project_points

ISOMAP_SIZE_SD = 256   # below 720 lines
ISOMAP_SIZE_HD = 512   # 720 lines and up


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Isomap:
    """UV-space texture: pixels (S,S,3) float32 in [0,1], valid (S,S) bool."""
    pixels: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float32)
        v = np.asarray(self.valid, dtype=bool)
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "pixels", p)
        object.__setattr__(self, "valid", v)
        if p.ndim != 3 or p.shape[2] != 3 or v.shape != p.shape[:2]:
            raise RenderError("isomap needs (S,S,3) pixels and matching mask")
        size = p.shape[0]
        if p.shape[1] != size or size & (size - 1):
            raise RenderError("isomap must be square with power-of-two size")
        if not np.isfinite(p[v]).all():
            raise RenderError("isomap has non-finite valid texels")

    @property
    def size(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class FrameImage:
    pixels: np.ndarray  # (H,W,3) uint8

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)
        if p.ndim != 3 or p.shape[2] != 3:
            raise RenderError("frame must be (H,W,3) RGB")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


def isomap_size_for(height):
    return ISOMAP_SIZE_HD if height >= 720 else ISOMAP_SIZE_SD


def _face_normals_cam(posed, tris):
    e1 = posed[tris[:, 1]] - posed[tris[:, 0]]
    e2 = posed[tris[:, 2]] - posed[tris[:, 0]]
    return np.cross(e1, e2)


def front_facing(posed, tris):
    """Triangles whose outward normal points toward the camera at origin."""
    n = _face_normals_cam(posed, tris)
    centroids = posed[tris].mean(axis=1)
    return np.einsum("ij,ij->i", n, centroids) < 0.0


def rasterize_mesh(posed, tris, cam):
    """Project and z-buffer the mesh at frame resolution."""
    xy = project_points(posed, cam)
    w, h = cam.image_size
    return kernels.rasterize_triangles(xy, np.ascontiguousarray(posed[:, 2]),
                                       np.ascontiguousarray(tris, dtype=np.int64), w, h)


def sample_bilinear(img, xs, ys):
    """Bilinear sample of (H,W,C) float image at pixel-center coordinates."""
    h, w = img.shape[:2]
    x = np.clip(xs - 0.5, 0.0, w - 1.0)
    y = np.clip(ys - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def extract_isomap(frame, posed, mesh, cam, size):
    """Sample the frame into UV space for every texel covered by a triangle.

    Texels of back-facing, depth-occluded or out-of-frame surface points are
    marked invalid.
    """
    if mesh.uvs is None or not mesh.uvs.size:
        raise RenderError("mesh has no UV coordinates")
    tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    uv_px = np.ascontiguousarray(mesh.uvs * size)
    dummy_z = np.ones(mesh.n_vertices)
    _, tri_id, bary = kernels.rasterize_triangles(uv_px, dummy_z, tris, size, size)

    covered = tri_id >= 0
    t = tri_id[covered]
    b = bary[covered]
    corners = posed[tris[t]]                  # (K,3,3)
    pos_cam = np.einsum("kj,kjc->kc", b, corners)

    facing = front_facing(posed, tris)
    ok = facing[t] & (pos_cam[:, 2] > 0)

    depth_buf, _, _ = rasterize_mesh(posed, tris, cam)
    w, h = cam.image_size
    pix = np.full((len(t), 2), -1.0)
    if ok.any():
        pix[ok] = cam.focal * pos_cam[ok, :2] / pos_cam[ok, 2:3] + cam.principal_point
    inside = ok & (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)

    zspan = float(posed[:, 2].max() - posed[:, 2].min())
    bias = 0.5 * zspan / size + 1e-9  # half-texel depth bias against self-shadow acne
    xi = np.clip(pix[:, 0].astype(np.int64), 0, w - 1)
    yi = np.clip(pix[:, 1].astype(np.int64), 0, h - 1)
    visible = inside & (pos_cam[:, 2] <= depth_buf[yi, xi] + bias)

    fpix = frame.pixels.astype(np.float32) / 255.0
    colors = np.zeros((len(t), 3), dtype=np.float32)
    if visible.any():
        colors[visible] = sample_bilinear(fpix, pix[visible, 0], pix[visible, 1])

    pixels = np.zeros((size, size, 3), dtype=np.float32)
    valid = np.zeros((size, size), dtype=bool)
    pixels[covered] = colors
    vmask = np.zeros(covered.sum(), dtype=bool)
    vmask[:] = visible
    valid[covered] = vmask
    return Isomap(pixels, valid)


def mean_isomap(maps):
    """Per-texel mean over the frames where the texel is valid."""
    if not maps:
        raise RenderError("mean of an empty isomap list")
    size = maps[0].size
    if any(m.size != size for m in maps):
        raise RenderError("isomap dimension mismatch")
    acc = np.zeros((size, size, 3), dtype=np.float64)
    cnt = np.zeros((size, size), dtype=np.int64)
    for m in maps:
        acc[m.valid] += m.pixels[m.valid]
        cnt[m.valid] += 1
    valid = cnt > 0
    pixels = np.zeros_like(acc, dtype=np.float32)
    pixels[valid] = (acc[valid] / cnt[valid, None]).astype(np.float32)
    return Isomap(pixels, valid)


@dataclass(frozen=True)
class RefineReport:
    filled_count: int
    unfilled_count: int
    unfilled_mask: np.ndarray


def refine_isomap(m, mean, blur_sigma=2.0):
    """Fill holes from the mean isomap and feather only the fill seams.

    Texels invalid in both stay invalid and are reported. A Gaussian blur of
    std blur_sigma touches only the band within 2*blur_sigma of the
    filled-region boundary.
    """
    if m.size != mean.size:
        raise RenderError("isomap dimension mismatch")
    fill = (~m.valid) & mean.valid
    pixels = np.array(m.pixels)
    valid = m.valid | fill
    pixels[fill] = mean.pixels[fill]
    unfilled = (~m.valid) & (~mean.valid)

    if fill.any():
        # distance to the fill region and to its complement: both small near seams
        d_out = ndimage.distance_transform_edt(~fill)
        d_in = ndimage.distance_transform_edt(fill)
        band = valid & (np.minimum(d_out, d_in) <= 2.0 * blur_sigma)
        if band.any():
            vf = valid.astype(np.float32)
            blurred = np.empty_like(pixels)
            norm = ndimage.gaussian_filter(vf, blur_sigma)
            for c in range(3):
                num = ndimage.gaussian_filter(pixels[:, :, c] * vf, blur_sigma)
                blurred[:, :, c] = np.where(norm > 1e-6, num / np.maximum(norm, 1e-6), 0.0)
            pixels[band] = blurred[band]

    iso = Isomap(pixels, valid)
    return iso, RefineReport(int(fill.sum()), int(unfilled.sum()), unfilled)


def fill_nearest_valid(iso):
    """Every texel takes the nearest valid texel's color (for render fallback)."""
    if iso.valid.all() or not iso.valid.any():
        return iso.pixels
    _, (iy, ix) = ndimage.distance_transform_edt(~iso.valid, return_indices=True)
    return iso.pixels[iy, ix]


def render_face(frame, posed, mesh, cam, tex):
    """Z-buffered textured render of the mesh composited over the frame.

    Returns (FrameImage, coverage mask, fallback_count) where fallback_count
    is the number of pixels that sampled invalid texels (served by the
    nearest valid texel).
    """
    tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    depth, tri_id, bary = rasterize_mesh(posed, tris, cam)
    mask = tri_id >= 0
    out = frame.pixels.astype(np.float32) / 255.0
    if mask.any():
        t = tri_id[mask]
        b = bary[mask]
        zc = posed[tris[t]][:, :, 2]          # (K,3) corner depths
        inv_z = b / zc
        denom = inv_z.sum(axis=1, keepdims=True)
        pc = inv_z / denom                    # perspective-correct weights
        uvc = mesh.uvs[tris[t]]               # (K,3,2)
        uv = np.einsum("kj,kjc->kc", pc, uvc)
        size = tex.size
        tx = uv[:, 0] * size
        ty = uv[:, 1] * size
        filled = fill_nearest_valid(tex)
        colors = sample_bilinear(filled, tx, ty)
        # count pixels whose nearest texel was invalid in the source map
        txi = np.clip(tx.astype(np.int64), 0, size - 1)
        tyi = np.clip(ty.astype(np.int64), 0, size - 1)
        fallback = int((~tex.valid[tyi, txi]).sum())
        out[mask] = colors
    else:
        fallback = 0
    img = FrameImage(np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8))
    return img, mask, fallback


def mls_apply(points, src, dst):
    """Closed-form affine MLS (weights 1/d^2) of arbitrary 2D points."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    return kernels.mls_affine_points(pts, np.ascontiguousarray(src, dtype=np.float64),
                                     np.ascontiguousarray(dst, dtype=np.float64))


def _check_controls(src, dst):
    if src.shape != dst.shape or src.shape[0] < 3:
        raise RenderError("need >=3 control pairs")
    d = src - src.mean(axis=0)
    if np.linalg.matrix_rank(np.c_[d, np.ones(len(d))]) < 3:
        raise RenderError("control points are collinear")


def mls_warp(img, src, dst, grid_step=8, exact=False):
    """Warp img so control points move src -> dst.

    The resampling field (output pixel -> source position) is the affine MLS
    map of the reversed pairs, evaluated on a grid of spacing grid_step and
    bilinearly interpolated (or per-pixel when exact=True).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    _check_controls(src, dst)
    h, w = img.pixels.shape[:2]

    if exact:
        ys, xs = np.mgrid[0:h, 0:w]
        pts = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
        field = mls_apply(pts, dst, src).reshape(h, w, 2)
    else:
        gx = np.arange(0, w + grid_step, grid_step, dtype=np.float64)
        gy = np.arange(0, h + grid_step, grid_step, dtype=np.float64)
        gxx, gyy = np.meshgrid(gx, gy)
        nodes = np.stack([gxx.ravel(), gyy.ravel()], axis=1)
        node_field = mls_apply(nodes, dst, src).reshape(len(gy), len(gx), 2)
        ys, xs = np.mgrid[0:h, 0:w]
        fx = (xs + 0.5) / grid_step
        fy = (ys + 0.5) / grid_step
        x0 = np.clip(fx.astype(np.int64), 0, len(gx) - 2)
        y0 = np.clip(fy.astype(np.int64), 0, len(gy) - 2)
        ax = (fx - x0)[..., None]
        ay = (fy - y0)[..., None]
        f00 = node_field[y0, x0]
        f01 = node_field[y0, x0 + 1]
        f10 = node_field[y0 + 1, x0]
        f11 = node_field[y0 + 1, x0 + 1]
        top = f00 * (1 - ax) + f01 * ax
        bot = f10 * (1 - ax) + f11 * ax
        field = top * (1 - ay) + bot * ay

    fpix = img.pixels.astype(np.float32) / 255.0
    warped = sample_bilinear(fpix, field[:, :, 0], field[:, :, 1])
    return FrameImage(np.clip(np.rint(warped * 255.0), 0, 255).astype(np.uint8))


def mls_warp_field(width, height, src, dst, grid_step=8):
    """The grid-node MLS field used by mls_warp, for inspection/tests."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    _check_controls(src, dst)
    gx = np.arange(0, width + grid_step, grid_step, dtype=np.float64)
    gy = np.arange(0, height + grid_step, grid_step, dtype=np.float64)
    gxx, gyy = np.meshgrid(gx, gy)
    nodes = np.stack([gxx.ravel(), gyy.ravel()], axis=1)
    return nodes, mls_apply(nodes, dst, src)


def boundary_band(mask, band_width):
    """Pixels within band_width of the mask boundary (either side)."""
    if not mask.any() or mask.all():
        return np.zeros_like(mask)
    d_in = ndimage.distance_transform_edt(mask)
    d_out = ndimage.distance_transform_edt(~mask)
    return (mask & (d_in <= band_width)) | (~mask & (d_out <= band_width))


def blend_boundary(img, face_mask, band_width=2):
    """3x3 median filter restricted to the band around the mask boundary."""
    if face_mask.shape != img.pixels.shape[:2]:
        raise RenderError("mask does not match image dimensions")
    band = boundary_band(face_mask, band_width)
    out = kernels.median3x3_band(img.pixels, np.ascontiguousarray(band))
    return FrameImage(out)


def extract_all_isomaps(session):
    """Per-frame isomaps of the original performance plus their mean."""
    maps = [extract_isomap(session.load_frame(t), session.posed_vertices(t),
                           session.mesh, session.camera, session.isomap_size)
            for t in range(session.frame_count)]
    return maps, mean_isomap(maps)


def propagate(session, modified_identity, progress_cb=None, warp_background=True,
              blur_sigma=2.0, band_width=2):
    """Re-render every frame with the modified identity.

    Per frame: compose the posed modified mesh, refine the frame's isomap
    against the mean, warp the background by the frame's control tracks,
    render the face over it and median-blend the mask boundary.
    """
    mesh = session.mesh
    cam = session.camera
    maps, mean = extract_all_isomaps(session)
    out = []
    for t in range(session.frame_count):
        frame = session.load_frame(t)
        refined, _ = refine_isomap(maps[t], mean, blur_sigma)
        if warp_background:
            src, dst = session.tracks[t]
            frame = mls_warp(frame, src, dst)
        posed_mod = session.posed_vertices(t, modified_identity.vertices)
        img, mask, _ = render_face(frame, posed_mod, mesh, cam, refined)
        img = blend_boundary(img, mask, band_width)
        out.append(img)
        if progress_cb is not None:
            progress_cb(t + 1, session.frame_count)
    return out
