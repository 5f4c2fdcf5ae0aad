"""Hot per-pixel kernels, each in a numba and a pure-numpy flavour.

The numba versions are used when numba imports cleanly and the environment
variable ``OMNEDIT_DISABLE_NUMBA`` is unset (or ``0``).  Both flavours are
kept importable as ``numba_impl`` / ``numpy_impl`` so tests and the
benchmark can compare them directly.

All kernels take and return float64 arrays shaped ``(H, W, 3)`` unless noted.
"""

from __future__ import annotations

import os
import types

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("OMNEDIT_DISABLE_NUMBA", "0") in ("", "0")


# ---------------------------------------------------------------------------
# numpy flavour
# ---------------------------------------------------------------------------


def _np_rgb_to_hsv(img):
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    v = img.max(axis=-1)
    c = v - img.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    h = np.where(
        v == r,
        (g - b) / safe_c,
        np.where(v == g, 2.0 + (b - r) / safe_c, 4.0 + (r - g) / safe_c),
    )
    h = np.where(c > 0, (h / 6.0) % 1.0, 0.0)
    h[h >= 1.0] = 0.0  # tiny negative hues round up to 1.0
    return np.stack([h, s, v], axis=-1)


def _np_hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = h * 6.0
    i = np.floor(h6)
    f = h6 - i
    i = i.astype(np.int64) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def _np_laplacian(x):
    p = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * x


def _np_laplacian_adjoint(g):
    out = -4.0 * g
    # neighbour above (clamped at the top row)
    out[:-1] += g[1:]
    out[0] += g[0]
    # neighbour below
    out[1:] += g[:-1]
    out[-1] += g[-1]
    # neighbour left
    out[:, :-1] += g[:, 1:]
    out[:, 0] += g[:, 0]
    # neighbour right
    out[:, 1:] += g[:, :-1]
    out[:, -1] += g[:, -1]
    return out


def _np_curve_apply(x, w):
    n = w.shape[0]
    z = w.sum()
    c = np.clip(n * x[..., None] - np.arange(n), 0.0, 1.0)
    return (c @ w) / z


def _np_curve_slope(x, w):
    n = w.shape[0]
    idx = np.minimum(np.floor(n * x).astype(np.int64), n - 1)
    idx = np.maximum(idx, 0)
    return n * w[idx] / w.sum()


def _np_curve_param_grad(x, w, g):
    n = w.shape[0]
    z = w.sum()
    c = np.clip(n * x.ravel()[:, None] - np.arange(n), 0.0, 1.0)
    gf = g.ravel()
    f = (c @ w) / z
    return (gf @ c - gf @ f) / z


def _np_diffuse_fill(img, region, tol, max_iter):
    out = img.copy()
    known = ~region
    fill = img[known].mean(axis=0)
    out[region] = fill
    h, w = region.shape
    # neighbour counts with out-of-image neighbours dropped
    cnt = np.full((h, w), 4.0)
    cnt[0, :] -= 1
    cnt[-1, :] -= 1
    cnt[:, 0] -= 1
    cnt[:, -1] -= 1
    cnt = cnt[..., None]
    for _ in range(max_iter):
        acc = np.zeros_like(out)
        acc[1:] += out[:-1]
        acc[:-1] += out[1:]
        acc[:, 1:] += out[:, :-1]
        acc[:, :-1] += out[:, 1:]
        new = acc / cnt
        delta = np.abs(new[region] - out[region]).max() if region.any() else 0.0
        out[region] = new[region]
        if delta < tol:
            break
    return out


numpy_impl = types.SimpleNamespace(
    rgb_to_hsv=_np_rgb_to_hsv,
    hsv_to_rgb=_np_hsv_to_rgb,
    laplacian=_np_laplacian,
    laplacian_adjoint=_np_laplacian_adjoint,
    curve_apply=_np_curve_apply,
    curve_slope=_np_curve_slope,
    curve_param_grad=_np_curve_param_grad,
    diffuse_fill=_np_diffuse_fill,
)


# ---------------------------------------------------------------------------
# numba flavour
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_rgb_to_hsv(img):
        H, W, _ = img.shape
        out = np.empty_like(img)
        for y in range(H):
            for x in range(W):
                r = img[y, x, 0]
                g = img[y, x, 1]
                b = img[y, x, 2]
                v = max(r, g, b)
                c = v - min(r, g, b)
                s = c / v if v > 0.0 else 0.0
                h = 0.0
                if c > 0.0:
                    if v == r:
                        h = (g - b) / c
                    elif v == g:
                        h = 2.0 + (b - r) / c
                    else:
                        h = 4.0 + (r - g) / c
                    h = (h / 6.0) % 1.0
                    if h >= 1.0:
                        h = 0.0
                out[y, x, 0] = h
                out[y, x, 1] = s
                out[y, x, 2] = v
        return out

    @njit(cache=True)
    def _nb_hsv_to_rgb(hsv):
        H, W, _ = hsv.shape
        out = np.empty_like(hsv)
        for y in range(H):
            for x in range(W):
                h = hsv[y, x, 0]
                s = hsv[y, x, 1]
                v = hsv[y, x, 2]
                h6 = h * 6.0
                fi = np.floor(h6)
                f = h6 - fi
                i = int(fi) % 6
                p = v * (1.0 - s)
                q = v * (1.0 - s * f)
                t = v * (1.0 - s * (1.0 - f))
                if i == 0:
                    r, g, b = v, t, p
                elif i == 1:
                    r, g, b = q, v, p
                elif i == 2:
                    r, g, b = p, v, t
                elif i == 3:
                    r, g, b = p, q, v
                elif i == 4:
                    r, g, b = t, p, v
                else:
                    r, g, b = v, p, q
                out[y, x, 0] = r
                out[y, x, 1] = g
                out[y, x, 2] = b
        return out

    @njit(cache=True)
    def _nb_laplacian(img):
        H, W, C = img.shape
        out = np.empty_like(img)
        for y in range(H):
            yu = y - 1 if y > 0 else 0
            yd = y + 1 if y < H - 1 else H - 1
            for x in range(W):
                xl = x - 1 if x > 0 else 0
                xr = x + 1 if x < W - 1 else W - 1
                for c in range(C):
                    out[y, x, c] = (
                        img[yu, x, c]
                        + img[yd, x, c]
                        + img[y, xl, c]
                        + img[y, xr, c]
                        - 4.0 * img[y, x, c]
                    )
        return out

    @njit(cache=True)
    def _nb_laplacian_adjoint(g):
        H, W, C = g.shape
        out = np.zeros_like(g)
        for y in range(H):
            yu = y - 1 if y > 0 else 0
            yd = y + 1 if y < H - 1 else H - 1
            for x in range(W):
                xl = x - 1 if x > 0 else 0
                xr = x + 1 if x < W - 1 else W - 1
                for c in range(C):
                    v = g[y, x, c]
                    out[yu, x, c] += v
                    out[yd, x, c] += v
                    out[y, xl, c] += v
                    out[y, xr, c] += v
                    out[y, x, c] -= 4.0 * v
        return out

    @njit(cache=True)
    def _nb_curve_apply_flat(xf, w):
        n = w.shape[0]
        z = w.sum()
        out = np.empty_like(xf)
        for k in range(xf.shape[0]):
            nx = n * xf[k]
            acc = 0.0
            for i in range(n):
                c = nx - i
                if c <= 0.0:
                    break
                acc += (c if c < 1.0 else 1.0) * w[i]
            out[k] = acc / z
        return out

    @njit(cache=True)
    def _nb_curve_slope_flat(xf, w):
        n = w.shape[0]
        z = w.sum()
        out = np.empty_like(xf)
        for k in range(xf.shape[0]):
            i = int(np.floor(n * xf[k]))
            if i > n - 1:
                i = n - 1
            if i < 0:
                i = 0
            out[k] = n * w[i] / z
        return out

    @njit(cache=True)
    def _nb_curve_param_grad_flat(xf, w, gf):
        n = w.shape[0]
        z = w.sum()
        gc = np.zeros(n)
        gsum_f = 0.0
        for k in range(xf.shape[0]):
            nx = n * xf[k]
            g = gf[k]
            acc = 0.0
            for i in range(n):
                c = nx - i
                if c <= 0.0:
                    break
                if c > 1.0:
                    c = 1.0
                acc += c * w[i]
                gc[i] += g * c
            gsum_f += g * acc / z
        return (gc - gsum_f) / z

    @njit(cache=True)
    def _nb_diffuse_fill(img, region, tol, max_iter):
        H, W, C = img.shape
        out = img.copy()
        fill = np.zeros(C)
        nknown = 0
        for y in range(H):
            for x in range(W):
                if not region[y, x]:
                    nknown += 1
                    for c in range(C):
                        fill[c] += img[y, x, c]
        for c in range(C):
            fill[c] /= nknown
        for y in range(H):
            for x in range(W):
                if region[y, x]:
                    for c in range(C):
                        out[y, x, c] = fill[c]
        new = out.copy()
        for _ in range(max_iter):
            delta = 0.0
            for y in range(H):
                for x in range(W):
                    if not region[y, x]:
                        continue
                    for c in range(C):
                        acc = 0.0
                        cnt = 0.0
                        if y > 0:
                            acc += out[y - 1, x, c]
                            cnt += 1.0
                        if y < H - 1:
                            acc += out[y + 1, x, c]
                            cnt += 1.0
                        if x > 0:
                            acc += out[y, x - 1, c]
                            cnt += 1.0
                        if x < W - 1:
                            acc += out[y, x + 1, c]
                            cnt += 1.0
                        v = acc / cnt
                        d = abs(v - out[y, x, c])
                        if d > delta:
                            delta = d
                        new[y, x, c] = v
            for y in range(H):
                for x in range(W):
                    if region[y, x]:
                        for c in range(C):
                            out[y, x, c] = new[y, x, c]
            if delta < tol:
                break
        return out

    def _nb_curve_apply(x, w):
        return _nb_curve_apply_flat(np.ascontiguousarray(x).ravel(), w).reshape(x.shape)

    def _nb_curve_slope(x, w):
        return _nb_curve_slope_flat(np.ascontiguousarray(x).ravel(), w).reshape(x.shape)

    def _nb_curve_param_grad(x, w, g):
        return _nb_curve_param_grad_flat(
            np.ascontiguousarray(x).ravel(), w, np.ascontiguousarray(g).ravel()
        )

    def _contig(fn):
        def wrapper(a, *args):
            return fn(np.ascontiguousarray(a, dtype=np.float64), *args)

        wrapper.__name__ = fn.__name__
        return wrapper

    numba_impl = types.SimpleNamespace(
        rgb_to_hsv=_contig(_nb_rgb_to_hsv),
        hsv_to_rgb=_contig(_nb_hsv_to_rgb),
        laplacian=_contig(_nb_laplacian),
        laplacian_adjoint=_contig(_nb_laplacian_adjoint),
        curve_apply=_nb_curve_apply,
        curve_slope=_nb_curve_slope,
        curve_param_grad=_nb_curve_param_grad,
        diffuse_fill=lambda img, region, tol, max_iter: _nb_diffuse_fill(
            np.ascontiguousarray(img, dtype=np.float64),
            np.ascontiguousarray(region),
            float(tol),
            int(max_iter),
        ),
    )
else:  # pragma: no cover
    numba_impl = None

active = numba_impl if USE_NUMBA else numpy_impl
BACKEND = "numba" if USE_NUMBA else "numpy"

rgb_to_hsv = active.rgb_to_hsv
hsv_to_rgb = active.hsv_to_rgb
laplacian = active.laplacian
laplacian_adjoint = active.laplacian_adjoint
curve_apply = active.curve_apply
curve_slope = active.curve_slope
curve_param_grad = active.curve_param_grad
diffuse_fill = active.diffuse_fill
