"""Pure-numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with identical
semantics.  All arrays are periodic along their spatial axes.
"""
import numpy as np

WENO_EPS = 1e-6


def _smoothness(a, b, c):
    return 13.0 / 12.0 * (a - 2.0 * b + c) ** 2 + 0.25 * (a - 4.0 * b + 3.0 * c) ** 2


def _smoothness_mid(a, b, c):
    return 13.0 / 12.0 * (a - 2.0 * b + c) ** 2 + 0.25 * (a - c) ** 2


def weno5_faces(u):
    """Left-biased WENO5 values at the right interface of every cell.

    ``u`` has shape (M, N); the reconstruction runs along the last axis.
    """
    u = np.asarray(u, dtype=np.float64)
    um2 = np.roll(u, 2, axis=-1)
    um1 = np.roll(u, 1, axis=-1)
    up1 = np.roll(u, -1, axis=-1)
    up2 = np.roll(u, -2, axis=-1)

    q0 = (2.0 * um2 - 7.0 * um1 + 11.0 * u) / 6.0
    q1 = (-um1 + 5.0 * u + 2.0 * up1) / 6.0
    q2 = (2.0 * u + 5.0 * up1 - up2) / 6.0

    b0 = _smoothness(um2, um1, u)
    b1 = _smoothness_mid(um1, u, up1)
    b2 = _smoothness(up2, up1, u)

    a0 = 0.1 / (WENO_EPS + b0) ** 2
    a1 = 0.6 / (WENO_EPS + b1) ** 2
    a2 = 0.3 / (WENO_EPS + b2) ** 2
    return (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)


def _partial_right(um2, um1, u0, up1, up2, th):
    """WENO5 integral of the reconstruction over the rightmost ``th`` of a cell."""
    th2 = th * th
    th3 = th2 * th
    r0 = (um2 * (th3 / 6.0 - th2 / 2.0 + th / 3.0)
          + um1 * (-th3 / 3.0 + 1.5 * th2 - 7.0 * th / 6.0)
          + u0 * (th3 / 6.0 - th2 + 11.0 * th / 6.0))
    r1 = (um1 * (th3 / 6.0 - th / 6.0)
          + u0 * (-th3 / 3.0 + th2 / 2.0 + 5.0 * th / 6.0)
          + up1 * (th3 / 6.0 - th2 / 2.0 + th / 3.0))
    r2 = (u0 * (th3 / 6.0 + th2 / 2.0 + th / 3.0)
          + up1 * (-th3 / 3.0 - th2 / 2.0 + 5.0 * th / 6.0)
          + up2 * (th3 / 6.0 - th / 6.0))
    g0 = (th + 1.0) * (th + 2.0) / 20.0
    g1 = (3.0 - th) * (th + 2.0) / 10.0
    g2 = (th - 3.0) * (th - 2.0) / 20.0

    b0 = _smoothness(um2, um1, u0)
    b1 = _smoothness_mid(um1, u0, up1)
    b2 = _smoothness(up2, up1, u0)
    a0 = g0 / (WENO_EPS + b0) ** 2
    a1 = g1 / (WENO_EPS + b1) ** 2
    a2 = g2 / (WENO_EPS + b2) ** 2
    return (a0 * r0 + a1 * r1 + a2 * r2) / (a0 + a1 + a2)


def sl_fluxes(u, xi):
    """Conservative semi-Lagrangian fluxes G_{i+1/2} along the last axis.

    ``G[i] = (1/h) * integral of the reconstruction from the foot
    x_{i+1/2} + xi[i]*h up to x_{i+1/2}``.  The update is then
    ``u_new = u + roll(G, 1) - G``.
    """
    u = np.asarray(u, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    m, n = u.shape
    rows = np.arange(m)[:, None]
    cols = np.arange(n)[None, :]
    out = np.zeros_like(u)

    neg = xi <= 0.0
    # Feet to the left: whole cells i, i-1, ..., then a right part of cell i-k.
    s = np.where(neg, -xi, xi)
    k = np.floor(s).astype(np.int64)
    th = s - k

    # Whole-cell contributions.
    csum = np.zeros_like(u)
    for q in range(int(k.max()) if k.size else 0):
        active = k > q
        left_idx = (cols - q) % n
        right_idx = (cols + 1 + q) % n
        contrib = np.where(neg, u[rows, left_idx], -u[rows, right_idx])
        csum += np.where(active, contrib, 0.0)

    # Partial cell: for neg, cell j = i - k integrated over its right part;
    # for pos, cell j = i + 1 + k integrated over its left part (mirrored stencil).
    j = np.where(neg, cols - k, cols + 1 + k)
    sgn = np.where(neg, 1, -1)

    def at(off):
        return u[rows, (j + sgn * off) % n]

    part = _partial_right(at(-2), at(-1), at(0), at(1), at(2), th)
    out = csum + np.where(neg, part, -part)
    return out


def stencil_apply_1d(u, c):
    """out[b, i] = sum_o c[b, o, i] * u[b, i + o - r]."""
    s = c.shape[1]
    r = s // 2
    out = np.zeros_like(u)
    for o in range(s):
        out += c[:, o, :] * np.roll(u, -(o - r), axis=-1)
    return out


def stencil_adjoint_1d(u, c, g):
    """Return (dc, du) for the adjoint of :func:`stencil_apply_1d`."""
    s = c.shape[1]
    r = s // 2
    dc = np.empty_like(c)
    du = np.zeros_like(u)
    for o in range(s):
        dc[:, o, :] = g * np.roll(u, -(o - r), axis=-1)
        du += np.roll(c[:, o, :] * g, o - r, axis=-1)
    return dc, du


def column_sums_1d(c):
    """colsum[b, l] = sum_o c[b, o, l - (o - r)] (mass sent out of source cell l)."""
    s = c.shape[1]
    r = s // 2
    out = np.zeros((c.shape[0], c.shape[2]))
    for o in range(s):
        out += np.roll(c[:, o, :], o - r, axis=-1)
    return out


def spread_1d(v, s):
    """out[b, o, i] = v[b, i + o - r]; the transpose of :func:`column_sums_1d`."""
    r = s // 2
    return np.stack([np.roll(v, -(o - r), axis=-1) for o in range(s)], axis=1)


def stencil_apply_2d(u, c):
    """2D analog; offset channel o = (ox + r) * S + (oy + r)."""
    s = int(round(np.sqrt(c.shape[1])))
    r = s // 2
    out = np.zeros_like(u)
    for ox in range(s):
        ux = np.roll(u, -(ox - r), axis=-2)
        for oy in range(s):
            out += c[:, ox * s + oy] * np.roll(ux, -(oy - r), axis=-1)
    return out


def stencil_adjoint_2d(u, c, g):
    s = int(round(np.sqrt(c.shape[1])))
    r = s // 2
    dc = np.empty_like(c)
    du = np.zeros_like(u)
    for ox in range(s):
        ux = np.roll(u, -(ox - r), axis=-2)
        for oy in range(s):
            o = ox * s + oy
            dc[:, o] = g * np.roll(ux, -(oy - r), axis=-1)
            du += np.roll(c[:, o] * g, (ox - r, oy - r), axis=(-2, -1))
    return dc, du


def column_sums_2d(c):
    s = int(round(np.sqrt(c.shape[1])))
    r = s // 2
    out = np.zeros((c.shape[0],) + c.shape[2:])
    for ox in range(s):
        for oy in range(s):
            out += np.roll(c[:, ox * s + oy], (ox - r, oy - r), axis=(-2, -1))
    return out


def spread_2d(v, s):
    r = s // 2
    chans = []
    for ox in range(s):
        vx = np.roll(v, -(ox - r), axis=-2)
        for oy in range(s):
            chans.append(np.roll(vx, -(oy - r), axis=-1))
    return np.stack(chans, axis=1)


def im2col_1d(x, k):
    """Channels-last periodic patches: (B, N, C) -> (B*N, K*C), column = a*C + c."""
    p = k // 2
    nb, n, nc = x.shape
    xp = np.concatenate([x[:, n - p:], x, x[:, :p]], axis=1) if p else x
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (B, N, C, K)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(nb * n, k * nc)


def im2col_2d(x, k):
    """Channels-last periodic patches: (B, NX, NY, C) -> (B*NX*NY, K*K*C)."""
    p = k // 2
    nb, nx, ny, nc = x.shape
    xp = np.pad(x, [(0, 0), (p, p), (p, p), (0, 0)], mode="wrap")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))  # (B,NX,NY,C,K,K)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(nb * nx * ny, k * k * nc)
