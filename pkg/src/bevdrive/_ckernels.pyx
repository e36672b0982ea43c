# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops: conv patch gather/scatter, sorted scatter-add, polygon fill.

Every function here has a pure-numpy twin in ``bevdrive.kernels`` producing
bitwise-identical results; dispatch happens at import time in that module.
"""
import numpy as np

cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw, int ph, int pw,
           real[:, :, ::1] out):
    # x: (N, C, H, W) -> out: (N, OH*OW, C*kh*kw), zero-padded borders
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t OH = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - kw) // sw + 1
    cdef Py_ssize_t n, c, oh, ow, i, j, ih, iw, pos, col0
    for n in range(N):
        for oh in range(OH):
            for ow in range(OW):
                pos = oh * OW + ow
                col0 = 0
                for c in range(C):
                    for i in range(kh):
                        ih = oh * sh - ph + i
                        if 0 <= ih < H:
                            for j in range(kw):
                                iw = ow * sw - pw + j
                                if 0 <= iw < W:
                                    out[n, pos, col0 + j] = x[n, c, ih, iw]
                                else:
                                    out[n, pos, col0 + j] = 0
                        else:
                            for j in range(kw):
                                out[n, pos, col0 + j] = 0
                        col0 += kw
    return np.asarray(out)


def col2im(real[:, :, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int kh, int kw, int sh, int sw, int ph, int pw, real[:, :, :, ::1] out):
    # Adjoint of im2col: accumulate patch columns back into (N, C, H, W).
    # Tap-major (i, j) loop order matches the numpy fallback so overlapping
    # contributions round identically.
    cdef Py_ssize_t N = cols.shape[0]
    cdef Py_ssize_t OH = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - kw) // sw + 1
    cdef Py_ssize_t n, c, oh, ow, i, j, ih, iw, col
    for i in range(kh):
        for j in range(kw):
            for n in range(N):
                for c in range(C):
                    col = (c * kh + i) * kw + j
                    for oh in range(OH):
                        ih = oh * sh - ph + i
                        if ih < 0 or ih >= H:
                            continue
                        for ow in range(OW):
                            iw = ow * sw - pw + j
                            if 0 <= iw < W:
                                out[n, c, ih, iw] += cols[n, oh * OW + ow, col]
    return np.asarray(out)


def scatter_add_rows(real[:, ::1] out, cnp.int64_t[::1] idx, real[:, ::1] src,
                     cnp.int64_t[::1] order):
    # out[idx[j]] += src[j], visiting j in the supplied order (ascending target
    # index when order = stable argsort(idx)) so accumulation is deterministic.
    cdef Py_ssize_t P = idx.shape[0], C = src.shape[1]
    cdef Py_ssize_t i, j, c, row
    for i in range(P):
        j = order[i]
        row = idx[j]
        for c in range(C):
            out[row, c] += src[j, c]
    return np.asarray(out)


def fill_polys(cnp.uint8_t[:, :, ::1] img, double[:, ::1] depth,
               double[:, ::1] verts, cnp.int64_t[::1] starts,
               cnp.uint8_t[:, ::1] colors, double[::1] zs):
    # Paint convex screen-space polygons (CCW winding) into an RGB byte image,
    # recording per-pixel depth of the last write. Pixel centers at (+0.5, +0.5).
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1], F = starts.shape[0] - 1
    cdef Py_ssize_t f, k, v0, v1, nv, px, py, x0, x1, y0, y1
    cdef double minx, maxx, miny, maxy, cx, cy, e, x1v, y1v, x2v, y2v
    cdef bint inside
    for f in range(F):
        v0 = starts[f]
        v1 = starts[f + 1]
        nv = v1 - v0
        if nv < 3:
            continue
        minx = verts[v0, 0]
        maxx = minx
        miny = verts[v0, 1]
        maxy = miny
        for k in range(v0 + 1, v1):
            if verts[k, 0] < minx: minx = verts[k, 0]
            if verts[k, 0] > maxx: maxx = verts[k, 0]
            if verts[k, 1] < miny: miny = verts[k, 1]
            if verts[k, 1] > maxy: maxy = verts[k, 1]
        x0 = <Py_ssize_t>minx
        if x0 < 0: x0 = 0
        x1 = <Py_ssize_t>maxx + 1
        if x1 > W: x1 = W
        y0 = <Py_ssize_t>miny
        if y0 < 0: y0 = 0
        y1 = <Py_ssize_t>maxy + 1
        if y1 > H: y1 = H
        for py in range(y0, y1):
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                inside = True
                for k in range(nv):
                    x1v = verts[v0 + k, 0]
                    y1v = verts[v0 + k, 1]
                    x2v = verts[v0 + (k + 1) % nv, 0]
                    y2v = verts[v0 + (k + 1) % nv, 1]
                    e = (x2v - x1v) * (cy - y1v) - (y2v - y1v) * (cx - x1v)
                    if e < 0:
                        inside = False
                        break
                if inside:
                    img[py, px, 0] = colors[f, 0]
                    img[py, px, 1] = colors[f, 1]
                    img[py, px, 2] = colors[f, 2]
                    depth[py, px] = zs[f]
    return np.asarray(img)
