# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops; see ``_kernels_py`` for the reference numpy versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()

cdef double WENO_EPS = 1e-6


cdef inline Py_ssize_t wrap(Py_ssize_t i, Py_ssize_t n) nogil:
    # offsets are a few cells, so a couple of adds beat an integer division
    while i < 0:
        i += n
    while i >= n:
        i -= n
    return i


cdef inline double smooth_side(double a, double b, double c) nogil:
    cdef double d2 = a - 2.0 * b + c
    cdef double d1 = a - 4.0 * b + 3.0 * c
    return 13.0 / 12.0 * (d2 * d2) + 0.25 * (d1 * d1)


cdef inline double smooth_mid(double a, double b, double c) nogil:
    cdef double d2 = a - 2.0 * b + c
    cdef double d1 = a - c
    return 13.0 / 12.0 * (d2 * d2) + 0.25 * (d1 * d1)


cdef inline double face_left(double um2, double um1, double u0,
                             double up1, double up2) nogil:
    cdef double q0 = (2.0 * um2 - 7.0 * um1 + 11.0 * u0) / 6.0
    cdef double q1 = (-um1 + 5.0 * u0 + 2.0 * up1) / 6.0
    cdef double q2 = (2.0 * u0 + 5.0 * up1 - up2) / 6.0
    cdef double b0 = WENO_EPS + smooth_side(um2, um1, u0)
    cdef double b1 = WENO_EPS + smooth_mid(um1, u0, up1)
    cdef double b2 = WENO_EPS + smooth_side(up2, up1, u0)
    cdef double a0 = 0.1 / (b0 * b0)
    cdef double a1 = 0.6 / (b1 * b1)
    cdef double a2 = 0.3 / (b2 * b2)
    return (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)


cdef inline double partial_right(double um2, double um1, double u0,
                                 double up1, double up2, double th) nogil:
    cdef double th2 = th * th
    cdef double th3 = th2 * th
    cdef double r0 = (um2 * (th3 / 6.0 - th2 / 2.0 + th / 3.0)
                      + um1 * (-th3 / 3.0 + 1.5 * th2 - 7.0 * th / 6.0)
                      + u0 * (th3 / 6.0 - th2 + 11.0 * th / 6.0))
    cdef double r1 = (um1 * (th3 / 6.0 - th / 6.0)
                      + u0 * (-th3 / 3.0 + th2 / 2.0 + 5.0 * th / 6.0)
                      + up1 * (th3 / 6.0 - th2 / 2.0 + th / 3.0))
    cdef double r2 = (u0 * (th3 / 6.0 + th2 / 2.0 + th / 3.0)
                      + up1 * (-th3 / 3.0 - th2 / 2.0 + 5.0 * th / 6.0)
                      + up2 * (th3 / 6.0 - th / 6.0))
    cdef double g0 = (th + 1.0) * (th + 2.0) / 20.0
    cdef double g1 = (3.0 - th) * (th + 2.0) / 10.0
    cdef double g2 = (th - 3.0) * (th - 2.0) / 20.0
    cdef double b0 = WENO_EPS + smooth_side(um2, um1, u0)
    cdef double b1 = WENO_EPS + smooth_mid(um1, u0, up1)
    cdef double b2 = WENO_EPS + smooth_side(up2, up1, u0)
    cdef double a0 = g0 / (b0 * b0)
    cdef double a1 = g1 / (b1 * b1)
    cdef double a2 = g2 / (b2 * b2)
    return (a0 * r0 + a1 * r1 + a2 * r2) / (a0 + a1 + a2)


def weno5_faces(u):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t m = uv.shape[0], n = uv.shape[1], r, i
    out = np.empty((m, n))
    cdef double[:, ::1] ov = out
    with nogil:
        for r in range(m):
            for i in range(n):
                ov[r, i] = face_left(uv[r, wrap(i - 2, n)], uv[r, wrap(i - 1, n)],
                                     uv[r, i], uv[r, wrap(i + 1, n)],
                                     uv[r, wrap(i + 2, n)])
    return out


def sl_fluxes(u, xi):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] xv = np.ascontiguousarray(xi, dtype=np.float64)
    cdef Py_ssize_t m = uv.shape[0], n = uv.shape[1], r, i, j, q, k, sgn
    cdef double s, th, acc, part
    out = np.empty((m, n))
    cdef double[:, ::1] ov = out
    with nogil:
        for r in range(m):
            for i in range(n):
                s = xv[r, i]
                acc = 0.0
                if s <= 0.0:
                    s = -s
                    k = <Py_ssize_t>floor(s)
                    th = s - k
                    for q in range(k):
                        acc = acc + uv[r, wrap(i - q, n)]
                    j = i - k
                    part = partial_right(uv[r, wrap(j - 2, n)], uv[r, wrap(j - 1, n)],
                                         uv[r, wrap(j, n)], uv[r, wrap(j + 1, n)],
                                         uv[r, wrap(j + 2, n)], th)
                    ov[r, i] = acc + part
                else:
                    k = <Py_ssize_t>floor(s)
                    th = s - k
                    for q in range(k):
                        acc = acc - uv[r, wrap(i + 1 + q, n)]
                    j = i + 1 + k
                    part = partial_right(uv[r, wrap(j + 2, n)], uv[r, wrap(j + 1, n)],
                                         uv[r, wrap(j, n)], uv[r, wrap(j - 1, n)],
                                         uv[r, wrap(j - 2, n)], th)
                    ov[r, i] = acc - part
    return out


def stencil_apply_1d(u, c):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t nb = cv.shape[0], s = cv.shape[1], n = cv.shape[2]
    cdef Py_ssize_t rad = s // 2, b, o, i
    cdef double acc
    out = np.empty((nb, n))
    cdef double[:, ::1] ov = out
    with nogil:
        for b in range(nb):
            for i in range(n):
                acc = 0.0
                for o in range(s):
                    acc = acc + cv[b, o, i] * uv[b, wrap(i + o - rad, n)]
                ov[b, i] = acc
    return out


def stencil_adjoint_1d(u, c, g):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t nb = cv.shape[0], s = cv.shape[1], n = cv.shape[2]
    cdef Py_ssize_t rad = s // 2, b, o, i, src
    dc = np.empty((nb, s, n))
    du = np.zeros((nb, n))
    cdef double[:, :, ::1] dcv = dc
    cdef double[:, ::1] duv = du
    with nogil:
        for b in range(nb):
            for o in range(s):
                for i in range(n):
                    src = wrap(i + o - rad, n)
                    dcv[b, o, i] = gv[b, i] * uv[b, src]
            # Separate pass keeps the summation order identical to the numpy path.
            for o in range(s):
                for i in range(n):
                    src = wrap(i + o - rad, n)
                    duv[b, src] = duv[b, src] + cv[b, o, i] * gv[b, i]
    return dc, du


def column_sums_1d(c):
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t nb = cv.shape[0], s = cv.shape[1], n = cv.shape[2]
    cdef Py_ssize_t rad = s // 2, b, o, i
    out = np.zeros((nb, n))
    cdef double[:, ::1] ov = out
    with nogil:
        for b in range(nb):
            for o in range(s):
                for i in range(n):
                    ov[b, wrap(i + o - rad, n)] += cv[b, o, i]
    return out


def spread_1d(v, Py_ssize_t s):
    cdef const double[:, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t nb = vv.shape[0], n = vv.shape[1], rad = s // 2, b, o, i
    out = np.empty((nb, s, n))
    cdef double[:, :, ::1] ov = out
    with nogil:
        for b in range(nb):
            for o in range(s):
                for i in range(n):
                    ov[b, o, i] = vv[b, wrap(i + o - rad, n)]
    return out


cdef cnp.ndarray wrap_table(Py_ssize_t s, Py_ssize_t n):
    """Row o holds the periodic source index of j + o - s // 2 for every j."""
    cdef Py_ssize_t o, j, rad = s // 2
    tab = np.empty((s, n), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] tv = tab
    for o in range(s):
        for j in range(n):
            tv[o, j] = wrap(j + o - rad, n)
    return tab


def stencil_apply_2d(u, c):
    cdef const double[:, :, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, :, :, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t nb = cv.shape[0], nx = cv.shape[2], ny = cv.shape[3]
    cdef Py_ssize_t s = <Py_ssize_t>(sqrt(<double>cv.shape[1]) + 0.5)
    cdef Py_ssize_t b, ox, oy, o, i, j, sx
    cdef Py_ssize_t[:, ::1] tx = wrap_table(s, nx)
    cdef Py_ssize_t[:, ::1] ty = wrap_table(s, ny)
    out = np.zeros((nb, nx, ny))
    cdef double[:, :, ::1] ov = out
    with nogil:
        for b in range(nb):
            for ox in range(s):
                for oy in range(s):
                    o = ox * s + oy
                    for i in range(nx):
                        sx = tx[ox, i]
                        for j in range(ny):
                            ov[b, i, j] += cv[b, o, i, j] * uv[b, sx, ty[oy, j]]
    return out


def stencil_adjoint_2d(u, c, g):
    cdef const double[:, :, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, :, :, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t nb = cv.shape[0], nx = cv.shape[2], ny = cv.shape[3]
    cdef Py_ssize_t s = <Py_ssize_t>(sqrt(<double>cv.shape[1]) + 0.5)
    cdef Py_ssize_t b, ox, oy, o, i, j, sx, sy
    cdef Py_ssize_t[:, ::1] tx = wrap_table(s, nx)
    cdef Py_ssize_t[:, ::1] ty = wrap_table(s, ny)
    dc = np.empty((nb, s * s, nx, ny))
    du = np.zeros((nb, nx, ny))
    cdef double[:, :, :, ::1] dcv = dc
    cdef double[:, :, ::1] duv = du
    with nogil:
        for b in range(nb):
            for ox in range(s):
                for oy in range(s):
                    o = ox * s + oy
                    for i in range(nx):
                        sx = tx[ox, i]
                        for j in range(ny):
                            sy = ty[oy, j]
                            dcv[b, o, i, j] = gv[b, i, j] * uv[b, sx, sy]
                            duv[b, sx, sy] += cv[b, o, i, j] * gv[b, i, j]
    return dc, du


def column_sums_2d(c):
    cdef const double[:, :, :, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t nb = cv.shape[0], nx = cv.shape[2], ny = cv.shape[3]
    cdef Py_ssize_t s = <Py_ssize_t>(sqrt(<double>cv.shape[1]) + 0.5)
    cdef Py_ssize_t b, ox, oy, o, i, j, sx
    cdef Py_ssize_t[:, ::1] tx = wrap_table(s, nx)
    cdef Py_ssize_t[:, ::1] ty = wrap_table(s, ny)
    out = np.zeros((nb, nx, ny))
    cdef double[:, :, ::1] ov = out
    with nogil:
        for b in range(nb):
            for ox in range(s):
                for oy in range(s):
                    o = ox * s + oy
                    for i in range(nx):
                        sx = tx[ox, i]
                        for j in range(ny):
                            ov[b, sx, ty[oy, j]] += cv[b, o, i, j]
    return out


def spread_2d(v, Py_ssize_t s):
    cdef const double[:, :, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t nb = vv.shape[0], nx = vv.shape[1], ny = vv.shape[2]
    cdef Py_ssize_t b, ox, oy, o, i, j, sx
    cdef Py_ssize_t[:, ::1] tx = wrap_table(s, nx)
    cdef Py_ssize_t[:, ::1] ty = wrap_table(s, ny)
    out = np.empty((nb, s * s, nx, ny))
    cdef double[:, :, :, ::1] ov = out
    with nogil:
        for b in range(nb):
            for ox in range(s):
                for oy in range(s):
                    o = ox * s + oy
                    for i in range(nx):
                        sx = tx[ox, i]
                        for j in range(ny):
                            ov[b, o, i, j] = vv[b, sx, ty[oy, j]]
    return out


def im2col_1d(x, Py_ssize_t k):
    """Channels-last periodic patches: (B, N, C) -> (B*N, K*C), column = a*C + c."""
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t nb = xv.shape[0], n = xv.shape[1], nc = xv.shape[2]
    cdef Py_ssize_t p = k // 2, b, i, a, c, src, row
    out = np.empty((nb * n, k * nc))
    cdef double[:, ::1] ov = out
    with nogil:
        for b in range(nb):
            for i in range(n):
                row = b * n + i
                for a in range(k):
                    src = wrap(i + a - p, n)
                    for c in range(nc):
                        ov[row, a * nc + c] = xv[b, src, c]
    return out


def im2col_2d(x, Py_ssize_t k):
    """Channels-last periodic patches: (B, NX, NY, C) -> (B*NX*NY, K*K*C)."""
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t nb = xv.shape[0], nx = xv.shape[1], ny = xv.shape[2], nc = xv.shape[3]
    cdef Py_ssize_t p = k // 2, b, i, j, a, d, c, si, sj, row, col
    out = np.empty((nb * nx * ny, k * k * nc))
    cdef double[:, ::1] ov = out
    with nogil:
        for b in range(nb):
            for i in range(nx):
                for j in range(ny):
                    row = (b * nx + i) * ny + j
                    for a in range(k):
                        si = wrap(i + a - p, nx)
                        for d in range(k):
                            sj = wrap(j + d - p, ny)
                            col = (a * k + d) * nc
                            for c in range(nc):
                                ov[row, col + c] = xv[b, si, sj, c]
    return out
