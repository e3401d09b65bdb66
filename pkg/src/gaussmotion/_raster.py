"""Compiled inner loops for rendering kernel sums and back-propagating weights.

Kernel parameters arrive as flat arrays: ``c (N,)``, ``mu (N, 2)``,
``theta (N,)``, ``log_s (N, 2)``. A kernel contributes at location ``p`` only
when ``|p - center| <= cutoff * max(s)`` on both axes, where ``center`` is
``mu`` plus the shared shift. Loops run kernel by kernel in index order so
floating-point sums are reproducible.

For a location with offset ``d = p - center`` and ``u = R^T d``::

    q = u1^2 / sx^2 + u2^2 / sy^2,   G = c * exp(-q / 2)
    dG/dc       = exp(-q / 2)
    dG/dmu      = G * R @ (u1 / sx^2, u2 / sy^2)
    dG/dtheta   = -G * u1 * u2 * (1 / sx^2 - 1 / sy^2)
    dG/dlog sx  = G * u1^2 / sx^2,   dG/dlog sy = G * u2^2 / sy^2
"""
import math

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _fill_row(buf, x0, x1, cx, ddy, qa, qb, qc, decay):
    """Write exp(-q/2) for pixels x0..x1 of one row into ``buf``.

    With ``q = qa*dx^2 + 2*qb*dx*dy + qc*dy^2`` the ratio between neighbouring
    pixels changes by ``exp(-qa)`` per step, so only three exponentials are
    needed per row. The walk starts at the row maximum so values only shrink.
    """
    lp = int(math.floor(cx - qb * ddy / qa + 0.5))
    if lp < x0:
        lp = x0
    elif lp > x1:
        lp = x1
    ddx = lp - cx
    e = math.exp(-0.5 * (qa * ddx * ddx + 2.0 * qb * ddx * ddy + qc * ddy * ddy))
    buf[lp] = e
    ee = e
    rr = math.exp(-0.5 * (qa * (2.0 * ddx + 1.0) + 2.0 * qb * ddy))
    for l in range(lp + 1, x1 + 1):
        ee *= rr
        rr *= decay
        buf[l] = ee
    ee = e
    rr = math.exp(-0.5 * (qa * (1.0 - 2.0 * ddx) - 2.0 * qb * ddy))
    for l in range(lp - 1, x0 - 1, -1):
        ee *= rr
        rr *= decay
        buf[l] = ee


@njit(cache=True, fastmath=True)
def render_grid(c, mu, theta, log_s, dx, dy, cutoff, out):
    h, w = out.shape
    buf = np.empty(w)
    for i in range(c.shape[0]):
        sx = math.exp(log_s[i, 0])
        sy = math.exp(log_s[i, 1])
        ix2 = 1.0 / (sx * sx)
        iy2 = 1.0 / (sy * sy)
        ct = math.cos(theta[i])
        st = math.sin(theta[i])
        qa = ct * ct * ix2 + st * st * iy2
        qb = ct * st * (ix2 - iy2)
        qc = st * st * ix2 + ct * ct * iy2
        decay = math.exp(-qa)
        cx = mu[i, 0] + dx
        cy = mu[i, 1] + dy
        r = cutoff * max(sx, sy)
        x0 = max(0, int(math.ceil(cx - r)))
        x1 = min(w - 1, int(math.floor(cx + r)))
        y0 = max(0, int(math.ceil(cy - r)))
        y1 = min(h - 1, int(math.floor(cy + r)))
        if x0 > x1:
            continue
        ci = c[i]
        for m in range(y0, y1 + 1):
            _fill_row(buf, x0, x1, cx, m - cy, qa, qb, qc, decay)
            for l in range(x0, x1 + 1):
                out[m, l] += ci * buf[l]


@njit(cache=True, fastmath=True)
def backward_grid(c, mu, theta, log_s, dx, dy, cutoff, weights, gc, gmu, gtheta, glog_s):
    """Accumulate sum_p weights[p] * dR(p)/dparam into the gradient arrays.

    Returns the gradient with respect to the shared shift, which equals the
    sum of the per-kernel center gradients from this call.
    """
    h, w = weights.shape
    buf = np.empty(w)
    gsx = 0.0
    gsy = 0.0
    for i in range(c.shape[0]):
        sx = math.exp(log_s[i, 0])
        sy = math.exp(log_s[i, 1])
        ix2 = 1.0 / (sx * sx)
        iy2 = 1.0 / (sy * sy)
        ct = math.cos(theta[i])
        st = math.sin(theta[i])
        qa = ct * ct * ix2 + st * st * iy2
        qb = ct * st * (ix2 - iy2)
        qc = st * st * ix2 + ct * ct * iy2
        decay = math.exp(-qa)
        cx = mu[i, 0] + dx
        cy = mu[i, 1] + dy
        r = cutoff * max(sx, sy)
        x0 = max(0, int(math.ceil(cx - r)))
        x1 = min(w - 1, int(math.floor(cx + r)))
        y0 = max(0, int(math.ceil(cy - r)))
        y1 = min(h - 1, int(math.floor(cy + r)))
        if x0 > x1:
            continue
        ci = c[i]
        acc_c = 0.0
        acc_mx = 0.0
        acc_my = 0.0
        acc_t = 0.0
        acc_lx = 0.0
        acc_ly = 0.0
        for m in range(y0, y1 + 1):
            ddy = m - cy
            _fill_row(buf, x0, x1, cx, ddy, qa, qb, qc, decay)
            for l in range(x0, x1 + 1):
                wt = weights[m, l]
                ddx = l - cx
                u1 = ct * ddx + st * ddy
                u2 = -st * ddx + ct * ddy
                a1 = u1 * ix2
                a2 = u2 * iy2
                e = buf[l]
                wg = wt * ci * e
                acc_c += wt * e
                acc_mx += wg * (a1 * ct - a2 * st)
                acc_my += wg * (a1 * st + a2 * ct)
                acc_t -= wg * u1 * u2 * (ix2 - iy2)
                acc_lx += wg * u1 * a1
                acc_ly += wg * u2 * a2
        gc[i] += acc_c
        gmu[i, 0] += acc_mx
        gmu[i, 1] += acc_my
        gtheta[i] += acc_t
        glog_s[i, 0] += acc_lx
        glog_s[i, 1] += acc_ly
        gsx += acc_mx
        gsy += acc_my
    return gsx, gsy


@njit(cache=True, fastmath=True)
def render_points(c, mu, theta, log_s, dx, dy, cutoff, px, py, cell_start, ox, oy, gw, gh, out):
    """Render at binned points. ``px, py`` are sorted by cell; ``out`` follows that order."""
    for i in range(c.shape[0]):
        sx = math.exp(log_s[i, 0])
        sy = math.exp(log_s[i, 1])
        ix2 = 1.0 / (sx * sx)
        iy2 = 1.0 / (sy * sy)
        ct = math.cos(theta[i])
        st = math.sin(theta[i])
        cx = mu[i, 0] + dx
        cy = mu[i, 1] + dy
        r = cutoff * max(sx, sy)
        gx0 = max(0, int(math.floor(cx - r)) - ox)
        gx1 = min(gw - 1, int(math.floor(cx + r)) - ox)
        gy0 = max(0, int(math.floor(cy - r)) - oy)
        gy1 = min(gh - 1, int(math.floor(cy + r)) - oy)
        if gx0 > gx1 or gy0 > gy1:
            continue
        ci = c[i]
        for gy in range(gy0, gy1 + 1):
            # cells of one bbox row are contiguous in the sorted point arrays
            for j in range(cell_start[gy * gw + gx0], cell_start[gy * gw + gx1 + 1]):
                ddx = px[j] - cx
                ddy = py[j] - cy
                if abs(ddx) > r or abs(ddy) > r:
                    continue
                u1 = ct * ddx + st * ddy
                u2 = -st * ddx + ct * ddy
                out[j] += ci * math.exp(-0.5 * (u1 * u1 * ix2 + u2 * u2 * iy2))


@njit(cache=True, fastmath=True)
def backward_points(c, mu, theta, log_s, dx, dy, cutoff, px, py, cell_start, ox, oy, gw, gh,
                    weights, gc, gmu, gtheta, glog_s):
    gsx = 0.0
    gsy = 0.0
    for i in range(c.shape[0]):
        sx = math.exp(log_s[i, 0])
        sy = math.exp(log_s[i, 1])
        ix2 = 1.0 / (sx * sx)
        iy2 = 1.0 / (sy * sy)
        ct = math.cos(theta[i])
        st = math.sin(theta[i])
        cx = mu[i, 0] + dx
        cy = mu[i, 1] + dy
        r = cutoff * max(sx, sy)
        gx0 = max(0, int(math.floor(cx - r)) - ox)
        gx1 = min(gw - 1, int(math.floor(cx + r)) - ox)
        gy0 = max(0, int(math.floor(cy - r)) - oy)
        gy1 = min(gh - 1, int(math.floor(cy + r)) - oy)
        if gx0 > gx1 or gy0 > gy1:
            continue
        ci = c[i]
        acc_c = 0.0
        acc_mx = 0.0
        acc_my = 0.0
        acc_t = 0.0
        acc_lx = 0.0
        acc_ly = 0.0
        for gy in range(gy0, gy1 + 1):
            for j in range(cell_start[gy * gw + gx0], cell_start[gy * gw + gx1 + 1]):
                wt = weights[j]
                if wt == 0.0:
                    continue
                ddx = px[j] - cx
                ddy = py[j] - cy
                if abs(ddx) > r or abs(ddy) > r:
                    continue
                u1 = ct * ddx + st * ddy
                u2 = -st * ddx + ct * ddy
                a1 = u1 * ix2
                a2 = u2 * iy2
                e = math.exp(-0.5 * (u1 * a1 + u2 * a2))
                wg = wt * ci * e
                acc_c += wt * e
                acc_mx += wg * (a1 * ct - a2 * st)
                acc_my += wg * (a1 * st + a2 * ct)
                acc_t -= wg * u1 * u2 * (ix2 - iy2)
                acc_lx += wg * u1 * a1
                acc_ly += wg * u2 * a2
        gc[i] += acc_c
        gmu[i, 0] += acc_mx
        gmu[i, 1] += acc_my
        gtheta[i] += acc_t
        glog_s[i, 0] += acc_lx
        glog_s[i, 1] += acc_ly
        gsx += acc_mx
        gsy += acc_my
    return gsx, gsy


class PointBins:
    """Sub-pixel locations bucketed by unit cell for kernel-local traversal."""

    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=np.float64).ravel()
        ys = np.asarray(ys, dtype=np.float64).ravel()
        if xs.shape != ys.shape:
            raise ValueError("x and y coordinate arrays differ in length")
        self.n = xs.size
        if self.n == 0:
            self.ox = self.oy = 0
            self.gw = self.gh = 1
            self.order = np.zeros(0, dtype=np.intp)
            self.px = xs
            self.py = ys
            self.cell_start = np.zeros(2, dtype=np.int64)
            return
        fx = np.floor(xs).astype(np.int64)
        fy = np.floor(ys).astype(np.int64)
        self.ox = int(fx.min())
        self.oy = int(fy.min())
        self.gw = int(fx.max()) - self.ox + 1
        self.gh = int(fy.max()) - self.oy + 1
        cells = (fy - self.oy) * self.gw + (fx - self.ox)
        self.order = np.argsort(cells, kind="stable")
        self.px = np.ascontiguousarray(xs[self.order])
        self.py = np.ascontiguousarray(ys[self.order])
        counts = np.bincount(cells, minlength=self.gw * self.gh)
        self.cell_start = np.zeros(self.gw * self.gh + 1, dtype=np.int64)
        np.cumsum(counts, out=self.cell_start[1:])

    def args(self):
        return (self.px, self.py, self.cell_start, self.ox, self.oy, self.gw, self.gh)

    def to_sorted(self, values):
        return np.ascontiguousarray(np.asarray(values, dtype=np.float64)[self.order])

    def from_sorted(self, values):
        out = np.empty_like(values)
        out[self.order] = values
        return out
