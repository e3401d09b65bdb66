"""Reference implementations written directly from the model equations.

Nothing here imports the package's compiled paths; these are slow, dense and
meant only for checking the fast code.
"""
import math

import numpy as np


def kernel_values(c, mu, theta, log_s, xs, ys, shift=(0.0, 0.0), cutoff=None):
    """Dense ``(N, P)`` matrix of every kernel evaluated at every location."""
    c = np.asarray(c, float)[:, None]
    cx = np.asarray(mu, float)[:, 0:1] + shift[0]
    cy = np.asarray(mu, float)[:, 1:2] + shift[1]
    sx = np.exp(np.asarray(log_s, float)[:, 0:1])
    sy = np.exp(np.asarray(log_s, float)[:, 1:2])
    th = np.asarray(theta, float)[:, None]
    dx = np.asarray(xs, float)[None, :] - cx
    dy = np.asarray(ys, float)[None, :] - cy
    u1 = np.cos(th) * dx + np.sin(th) * dy
    u2 = -np.sin(th) * dx + np.cos(th) * dy
    vals = c * np.exp(-0.5 * ((u1 / sx) ** 2 + (u2 / sy) ** 2))
    if cutoff is not None:
        r = cutoff * np.maximum(sx, sy)
        vals = np.where((np.abs(dx) <= r) & (np.abs(dy) <= r), vals, 0.0)
    return vals


def render_dense(params, width, height, shift=(0.0, 0.0), cutoff=None):
    c, mu, theta, log_s = params
    ys, xs = np.mgrid[0:height, 0:width]
    vals = kernel_values(c, mu, theta, log_s, xs.ravel(), ys.ravel(), shift, cutoff)
    return vals.sum(axis=0).reshape(height, width)


def render_at(params, xs, ys, shift=(0.0, 0.0), cutoff=None):
    c, mu, theta, log_s = params
    return kernel_values(c, mu, theta, log_s, xs, ys, shift, cutoff).sum(axis=0)


def bilinear(img, xs, ys):
    """Textbook bilinear interpolation; exact at grid nodes."""
    img = np.asarray(img, float)
    out = np.empty(len(xs))
    h, w = img.shape
    for k, (x, y) in enumerate(zip(xs, ys)):
        l0 = min(int(math.floor(x)), w - 2)
        m0 = min(int(math.floor(y)), h - 2)
        fx, fy = x - l0, y - m0
        out[k] = ((1 - fx) * (1 - fy) * img[m0, l0] + fx * (1 - fy) * img[m0, l0 + 1]
                  + (1 - fx) * fy * img[m0 + 1, l0] + fx * fy * img[m0 + 1, l0 + 1])
    return out


def total_loss(params, shift, img_a, img_b, xs, ys, w_s, beta, cutoff=None, symmetric=False):
    h, w = img_a.shape
    e_a = img_a - render_dense(params, w, h, (0.0, 0.0), cutoff)
    e_b = img_b - render_dense(params, w, h, shift, cutoff)
    data = np.mean((np.abs(e_a) + np.abs(e_b)) / 2)
    terms = [(img_a, (0.0, 0.0))] + ([(img_b, shift)] if symmetric else [])
    sr = 0.0
    if w_s > 0 and len(xs):
        parts = []
        for img, s in terms:
            e_s = bilinear(img, xs, ys) - render_at(params, xs, ys, s, cutoff)
            parts.append(np.mean(np.where(np.abs(e_s) > beta, np.abs(e_s), 0.0)))
        sr = float(np.mean(parts))
    return (1 - w_s) * data + w_s * sr


def residual_margins(params, shift, img_a, img_b, xs, ys, beta, cutoff=None, symmetric=False):
    """Smallest distance of any residual to a kink of the loss (0 or +-beta)."""
    h, w = img_a.shape
    e = np.concatenate([(img_a - render_dense(params, w, h, (0.0, 0.0), cutoff)).ravel(),
                        (img_b - render_dense(params, w, h, shift, cutoff)).ravel()])
    margin = np.abs(e).min()
    terms = [(img_a, (0.0, 0.0))] + ([(img_b, shift)] if symmetric else [])
    for img, s in terms:
        if len(xs):
            e_s = np.abs(bilinear(img, xs, ys) - render_at(params, xs, ys, s, cutoff))
            margin = min(margin, e_s.min(), np.abs(e_s - beta).min())
    return margin


def flatten(params, shift):
    c, mu, theta, log_s = params
    return np.concatenate([c, np.ravel(mu), theta, np.ravel(log_s), shift])


def unflatten(vec, n):
    c = vec[:n]
    mu = vec[n:3 * n].reshape(n, 2)
    theta = vec[3 * n:4 * n]
    log_s = vec[4 * n:6 * n].reshape(n, 2)
    shift = vec[6 * n:6 * n + 2]
    return (c, mu, theta, log_s), shift


def central_difference(fn, vec, step):
    grad = np.empty_like(vec)
    for k in range(vec.size):
        up = vec.copy()
        dn = vec.copy()
        up[k] += step
        dn[k] -= step
        grad[k] = (fn(up) - fn(dn)) / (2 * step)
    return grad


def shift_rows_backward_warp(img, dx, dy):
    """Bilinear backward warp by ``-d``: out(x) = img(x - d), interior only (NaN elsewhere)."""
    img = np.asarray(img, float)
    h, w = img.shape
    out = np.full_like(img, np.nan)
    for m in range(h):
        for l in range(w):
            x, y = l - dx, m - dy
            if 0 <= x <= w - 1 and 0 <= y <= h - 1:
                out[m, l] = bilinear(img, [x], [y])[0]
    return out
