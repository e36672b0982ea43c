"""Hot numeric kernels with a compiled fast path and a pure-numpy fallback.

The Cython extension ``bevdrive._ckernels`` is selected at import time when it
built successfully; setting the environment variable ``BEVDRIVE_PURE=1`` forces
the numpy fallback. Both paths are bitwise-equivalent (same accumulation
order, same arithmetic), which ``tests/test_kernels.py`` pins down and
``benchmarks/bench_kernels.py`` times.
"""
import os

import numpy as np

try:
    if os.environ.get("BEVDRIVE_PURE", "0") == "1":
        _C = None
    else:
        from bevdrive import _ckernels as _C
except ImportError:
    _C = None


def backend() -> str:
    return "cython" if _C is not None else "numpy"


def conv_out_hw(H, W, kh, kw, sh, sw, ph, pw):
    return (H + 2 * ph - kh) // sh + 1, (W + 2 * pw - kw) // sw + 1


def im2col(x, kh, kw, sh, sw, ph, pw):
    """(N, C, H, W) -> (N, OH*OW, C*kh*kw) patch matrix with zero padding."""
    N, C, H, W = x.shape
    OH, OW = conv_out_hw(H, W, kh, kw, sh, sw, ph, pw)
    if _C is not None:
        out = np.empty((N, OH * OW, C * kh * kw), dtype=x.dtype)
        _C.im2col(np.ascontiguousarray(x), kh, kw, sh, sw, ph, pw, out)
        return out
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]  # (N, C, OH, OW, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N, OH * OW, C * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols, C, H, W, kh, kw, sh, sw, ph, pw):
    """Adjoint of im2col: scatter patch columns back to (N, C, H, W)."""
    N = cols.shape[0]
    OH, OW = conv_out_hw(H, W, kh, kw, sh, sw, ph, pw)
    if _C is not None:
        out = np.zeros((N, C, H, W), dtype=cols.dtype)
        _C.col2im(np.ascontiguousarray(cols), C, H, W, kh, kw, sh, sw, ph, pw, out)
        return out
    xp = np.zeros((N, C, H + 2 * ph, W + 2 * pw), dtype=cols.dtype)
    c6 = cols.reshape(N, OH, OW, C, kh, kw)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + sh * OH:sh, j:j + sw * OW:sw] += c6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if ph or pw:
        return np.ascontiguousarray(xp[:, :, ph:ph + H, pw:pw + W])
    return xp


def scatter_add_rows(out, idx, src):
    """out[idx[j]] += src[j] accumulated in ascending-target-index order.

    The fixed order (stable sort of idx) makes float accumulation
    deterministic and independent of how the point list was produced.
    """
    idx = np.asarray(idx, dtype=np.int64)
    order = np.argsort(idx, kind="stable")
    if _C is not None:
        _C.scatter_add_rows(out, idx, np.ascontiguousarray(src), order)
        return out
    np.add.at(out, idx[order], src[order])
    return out


def fill_polys(img, depth, verts, starts, colors, zs):
    """Paint convex CCW screen-space polygons into an RGB uint8 image.

    verts: (K, 2) float64 stacked polygon vertices, starts: (F+1,) offsets,
    colors: (F, 3) uint8, zs: (F,) view depth written into `depth` per pixel.
    Pixel centers sit at (+0.5, +0.5); a pixel is painted when its center is
    inside the polygon (edge function >= 0 for every edge).
    """
    if _C is not None:
        _C.fill_polys(img, depth, verts, starts, colors, zs)
        return img
    H, W = depth.shape
    for f in range(len(starts) - 1):
        poly = verts[starts[f]:starts[f + 1]]
        if len(poly) < 3:
            continue
        x0 = max(int(poly[:, 0].min()), 0)
        x1 = min(int(poly[:, 0].max()) + 1, W)
        y0 = max(int(poly[:, 1].min()), 0)
        y1 = min(int(poly[:, 1].max()) + 1, H)
        if x0 >= x1 or y0 >= y1:
            continue
        cx = np.arange(x0, x1, dtype=np.float64) + 0.5
        cy = np.arange(y0, y1, dtype=np.float64) + 0.5
        inside = np.ones((y1 - y0, x1 - x0), dtype=bool)
        for k in range(len(poly)):
            ax, ay = poly[k]
            bx, by = poly[(k + 1) % len(poly)]
            e = (bx - ax) * (cy[:, None] - ay) - (by - ay) * (cx[None, :] - ax)
            inside &= e >= 0
        img[y0:y1, x0:x1][inside] = colors[f]
        depth[y0:y1, x0:x1][inside] = zs[f]
    return img
