"""The eight editing operations, their mask blending and analytic gradients.

Every operation computes an *edited* image from its input and parameters,
then blends it into the input through a mask::

    out = mask * edited + (1 - mask) * input

Scalar operations take ``p`` with ``p = 0`` meaning "no change".  Curve
operations (tint, hue) take raw piece weights that are floored at
``CURVE_EPS`` before use; equal weights give the identity curve.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import imgcore, kernels
from .imgcore import check_same_shape, clipped_linear

CURVE_PIECES = 8
CURVE_EPS = 1e-3
LUM_WEIGHTS = np.array([0.27, 0.67, 0.06])
LUM_EPS = 1e-6

# Search box used when fitting; curve bounds apply to the raw weights.
SCALAR_RANGE = (-1.0, 3.0)
CURVE_RANGE = (CURVE_EPS, 5.0)


class OpKind(str, enum.Enum):
    BRIGHTNESS = "brightness"
    SATURATION = "saturation"
    CONTRAST = "contrast"
    SHARPNESS = "sharpness"
    TINT = "tint"
    HUE = "hue"
    COLOR_BG = "color_bg"
    INPAINT_OBJ = "inpaint_obj"

    @property
    def arity(self) -> int:
        return _ARITY[self]

    @property
    def differentiable(self) -> bool:
        return _ARITY[self] > 0

    @property
    def is_curve(self) -> bool:
        return self in (OpKind.TINT, OpKind.HUE)

    def identity_params(self) -> np.ndarray:
        if self.is_curve:
            return np.ones(self.arity)
        return np.zeros(self.arity)

    def param_bounds(self):
        return CURVE_RANGE if self.is_curve else SCALAR_RANGE


_ARITY = {
    OpKind.BRIGHTNESS: 1,
    OpKind.SATURATION: 1,
    OpKind.CONTRAST: 1,
    OpKind.SHARPNESS: 1,
    OpKind.TINT: CURVE_PIECES,
    OpKind.HUE: 3 * CURVE_PIECES,
    OpKind.COLOR_BG: 0,
    OpKind.INPAINT_OBJ: 0,
}

DIFFERENTIABLE_KINDS = tuple(k for k in OpKind if k.differentiable)


class _GlobalMask:
    """Marker for "apply everywhere"; behaves like an all-ones mask."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "GLOBAL"

    def __reduce__(self):
        return (_GlobalMask, ())


GLOBAL = _GlobalMask()


class DegenerateCurveError(ValueError):
    pass


class NotDifferentiableError(TypeError):
    pass


class NothingToInpaintError(ValueError):
    pass


@dataclass
class OpInvocation:
    kind: OpKind
    params: np.ndarray | None = None
    mask: object = GLOBAL

    def __post_init__(self):
        self.kind = OpKind(self.kind)
        self.params = check_params(self.kind, self.params)


def check_params(kind: OpKind, params) -> np.ndarray | None:
    kind = OpKind(kind)
    if kind.arity == 0:
        if params is not None and np.size(params) != 0:
            raise ValueError(f"{kind.value} takes no parameters")
        return None
    if params is None:
        raise ValueError(f"{kind.value} needs {kind.arity} parameter(s)")
    arr = np.atleast_1d(np.asarray(params, dtype=np.float64)).ravel()
    if arr.shape[0] != kind.arity:
        raise ValueError(f"{kind.value} needs {kind.arity} parameter(s), got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{kind.value} parameters must be finite")
    return arr


def resolve_mask(mask, shape) -> np.ndarray | None:
    """Return a checked mask array, or None for a global mask."""
    if mask is GLOBAL or mask is None:
        return None
    return imgcore.as_mask(mask, shape)


# ---------------------------------------------------------------------------
# blending
# ---------------------------------------------------------------------------


def blend(original, edited, mask) -> np.ndarray:
    original = np.asarray(original, dtype=np.float64)
    edited = np.asarray(edited, dtype=np.float64)
    check_same_shape(original, edited)
    m = resolve_mask(mask, original.shape)
    if m is None:
        return edited.copy()
    m = m[..., None]
    return m * edited + (1.0 - m) * original


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


def eval_curve(x, p):
    """Monotone piecewise-linear curve with ``len(p)`` pieces.

    ``f(x) = sum_i clip(N x - i, 0, 1) p_i / sum_i p_i``
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or p.sum() <= 0:
        raise DegenerateCurveError("curve weights must be non-negative with a positive sum")
    x = np.asarray(x, dtype=np.float64)
    out = kernels.curve_apply(np.atleast_1d(x), p)
    return float(out[0]) if x.ndim == 0 else out


def curve_weights(raw) -> np.ndarray:
    return np.maximum(np.asarray(raw, dtype=np.float64), CURVE_EPS)


def _curve_weight_grad(raw) -> np.ndarray:
    return (np.asarray(raw) >= CURVE_EPS).astype(np.float64)


# ---------------------------------------------------------------------------
# per-kind edited images
# ---------------------------------------------------------------------------


def _luminance(img):
    return img @ LUM_WEIGHTS


def _contrast_ratio(lum):
    enhanced = 0.5 * (1.0 - np.cos(math.pi * lum))
    return enhanced / np.maximum(lum, LUM_EPS)


def _contrast_ratio_deriv(lum):
    big = lum > LUM_EPS
    safe = np.where(big, lum, LUM_EPS)
    enhanced = 0.5 * (1.0 - np.cos(math.pi * lum))
    slope = 0.5 * math.pi * np.sin(math.pi * lum)
    return np.where(big, (slope * safe - enhanced) / safe**2, slope / LUM_EPS)


def _edited(kind: OpKind, img: np.ndarray, p) -> np.ndarray:
    if kind is OpKind.BRIGHTNESS or kind is OpKind.SATURATION:
        hsv = kernels.rgb_to_hsv(img)
        ch = 2 if kind is OpKind.BRIGHTNESS else 1
        hsv[..., ch] = np.clip((1.0 + p[0]) * hsv[..., ch], 0.0, 1.0)
        return kernels.hsv_to_rgb(hsv)
    if kind is OpKind.CONTRAST:
        ratio = _contrast_ratio(_luminance(img))[..., None]
        return np.clip((1.0 - p[0]) * img + p[0] * img * ratio, 0.0, 1.0)
    if kind is OpKind.SHARPNESS:
        return np.clip(img + p[0] * kernels.laplacian(img), 0.0, 1.0)
    if kind is OpKind.TINT:
        return np.clip(kernels.curve_apply(img, curve_weights(p)), 0.0, 1.0)
    if kind is OpKind.HUE:
        w = curve_weights(p)
        out = np.empty_like(img)
        for c in range(3):
            sl = slice(c * CURVE_PIECES, (c + 1) * CURVE_PIECES)
            out[..., c] = kernels.curve_apply(np.ascontiguousarray(img[..., c]), w[sl])
        return np.clip(out, 0.0, 1.0)
    if kind is OpKind.COLOR_BG:
        return np.ones_like(img)
    raise AssertionError(kind)


def apply_op(kind, img, params=None, mask=GLOBAL, inpainter=None) -> np.ndarray:
    """Apply one operation and blend it through ``mask``."""
    kind = OpKind(kind)
    img = imgcore.as_image(img)
    params = check_params(kind, params)
    m = resolve_mask(mask, img.shape)
    if kind is OpKind.INPAINT_OBJ:
        return apply_inpaint(img, mask, inpainter)
    if m is not None and not m.any():
        return img.copy()
    edited = _edited(kind, img, params)
    if m is None:
        return edited
    m = m[..., None]
    return m * edited + (1.0 - m) * img


def apply_brightness(img, p, mask=GLOBAL):
    return apply_op(OpKind.BRIGHTNESS, img, [p], mask)


def apply_saturation(img, p, mask=GLOBAL):
    return apply_op(OpKind.SATURATION, img, [p], mask)


def apply_contrast(img, p, mask=GLOBAL):
    return apply_op(OpKind.CONTRAST, img, [p], mask)


def apply_sharpness(img, p, mask=GLOBAL):
    return apply_op(OpKind.SHARPNESS, img, [p], mask)


def apply_tint(img, p, mask=GLOBAL):
    return apply_op(OpKind.TINT, img, p, mask)


def apply_hue(img, p, mask=GLOBAL):
    return apply_op(OpKind.HUE, img, p, mask)


def apply_color_bg(img, mask):
    return apply_op(OpKind.COLOR_BG, img, None, mask)


def diffusion_inpainter(img, region, tol=1e-4, max_iter=500):
    """Fill ``region`` by repeated 4-neighbour averaging (discrete Laplace fill)."""
    return kernels.diffuse_fill(img, region, tol, max_iter)


def apply_inpaint(img, mask, inpainter=None):
    """Replace the masked pixels with the inpainter's fill.

    ``inpainter(img, region)`` receives a boolean region of pixels to fill and
    must return a full image; it should be a pure function.
    """
    img = imgcore.as_image(img)
    m = resolve_mask(mask, img.shape)
    if m is None or np.all(m > 0):
        raise NothingToInpaintError("mask covers the whole image; nothing to inpaint from")
    region = m > 0
    if not region.any():
        return img.copy()
    inpainter = inpainter or diffusion_inpainter
    filled = np.clip(inpainter(img, region), 0.0, 1.0)
    return blend(img, filled, m)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def _edited_vjp(kind: OpKind, img, p, g, need_input=True):
    """Pull a cotangent on the edited image back to (params, input image)."""
    gp = np.zeros(kind.arity)
    gi = None

    if kind is OpKind.BRIGHTNESS:
        hsv = kernels.rgb_to_hsv(img)
        v = hsv[..., 2]
        vn, d = clipped_linear((1.0 + p[0]) * v)
        gdot = np.einsum("ijc,ijc->ij", g, img)
        gp[0] = np.sum(gdot * d)
        if need_input:
            pos = v > 0
            safe_v = np.where(pos, v, 1.0)
            s = np.where(pos, vn / safe_v, max(1.0 + p[0], 0.0))
            ds = np.where(pos, (d * (1.0 + p[0]) * v - vn) / safe_v**2, 0.0)
            gi = g * s[..., None]
            amax = np.argmax(img, axis=-1)
            np.put_along_axis(
                gi, amax[..., None],
                np.take_along_axis(gi, amax[..., None], -1) + (gdot * ds)[..., None], -1,
            )
        return gp, gi

    if kind is OpKind.SATURATION:
        hsv = kernels.rgb_to_hsv(img)
        sat, v = hsv[..., 1], hsv[..., 2]
        sn, d = clipped_linear((1.0 + p[0]) * sat)
        gap = v[..., None] - img
        gdot = np.einsum("ijc,ijc->ij", g, gap)
        gp[0] = -np.sum(gdot * d)
        if need_input:
            pos = sat > 0
            safe_s = np.where(pos, sat, 1.0)
            safe_v = np.where(v > 0, v, 1.0)
            k = np.where(pos, sn / safe_s, max(1.0 + p[0], 0.0))
            dk = np.where(pos, (d * (1.0 + p[0]) * sat - sn) / safe_s**2, 0.0)
            mn = img.min(axis=-1)
            gsum = g.sum(axis=-1)
            gi = g * k[..., None]
            amax = np.argmax(img, axis=-1)[..., None]
            amin = np.argmin(img, axis=-1)[..., None]
            add_max = (1.0 - k) * gsum - gdot * dk * mn / safe_v**2
            add_min = gdot * dk / safe_v
            np.put_along_axis(gi, amax, np.take_along_axis(gi, amax, -1) + add_max[..., None], -1)
            np.put_along_axis(gi, amin, np.take_along_axis(gi, amin, -1) + add_min[..., None], -1)
        return gp, gi

    if kind is OpKind.CONTRAST:
        lum = _luminance(img)
        ratio = _contrast_ratio(lum)[..., None]
        _, d = clipped_linear((1.0 - p[0]) * img + p[0] * img * ratio)
        gd = g * d
        gp[0] = np.sum(gd * img * (ratio - 1.0))
        if need_input:
            cross = np.einsum("ijc,ijc->ij", gd, img) * _contrast_ratio_deriv(lum)
            gi = gd * (1.0 - p[0] + p[0] * ratio) + p[0] * cross[..., None] * LUM_WEIGHTS
        return gp, gi

    if kind is OpKind.SHARPNESS:
        lap = kernels.laplacian(img)
        _, d = clipped_linear(img + p[0] * lap)
        gd = g * d
        gp[0] = np.sum(gd * lap)
        if need_input:
            gi = gd + p[0] * kernels.laplacian_adjoint(gd)
        return gp, gi

    if kind is OpKind.TINT:
        w = curve_weights(p)
        gp = kernels.curve_param_grad(img, w, g) * _curve_weight_grad(p)
        if need_input:
            gi = g * kernels.curve_slope(img, w)
        return gp, gi

    if kind is OpKind.HUE:
        w = curve_weights(p)
        dw = _curve_weight_grad(p)
        gi = np.empty_like(img) if need_input else None
        for c in range(3):
            sl = slice(c * CURVE_PIECES, (c + 1) * CURVE_PIECES)
            x = np.ascontiguousarray(img[..., c])
            gc = np.ascontiguousarray(g[..., c])
            gp[sl] = kernels.curve_param_grad(x, w[sl], gc) * dw[sl]
            if need_input:
                gi[..., c] = gc * kernels.curve_slope(x, w[sl])
        return gp, gi

    if kind is OpKind.COLOR_BG:
        return gp, (np.zeros_like(img) if need_input else None)

    raise NotDifferentiableError(f"{kind.value} has no gradient")


def vjp(kind, img, params, mask, upstream, need_input=True):
    """Vector-Jacobian product of a masked operation.

    Returns ``(d/d params, d/d img)`` of ``sum(upstream * op(img, params, mask))``.
    ``d/d img`` is None when ``need_input`` is false.
    """
    kind = OpKind(kind)
    if kind is OpKind.INPAINT_OBJ:
        raise NotDifferentiableError("inpaint_obj has no gradient")
    img = np.asarray(img, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    check_same_shape(img, upstream)
    params = check_params(kind, params)
    m = resolve_mask(mask, img.shape)
    if m is None:
        return _edited_vjp(kind, img, params, upstream, need_input)
    m3 = m[..., None]
    gp, gi = _edited_vjp(kind, img, params, upstream * m3, need_input)
    if need_input:
        gi = gi + upstream * (1.0 - m3)
    return gp, gi


def grad_params(kind, img, params, mask, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * op(img, params, mask))`` w.r.t. params."""
    kind = OpKind(kind)
    if not kind.differentiable:
        raise NotDifferentiableError(f"{kind.value} has no parameters to differentiate")
    return vjp(kind, img, params, mask, upstream, need_input=False)[0]


def finite_diff_check(kind, img, params, mask=GLOBAL, h=1e-4, reference=None, rng=None):
    """Compare ``grad_params`` with central differences of an L1 probe.

    The probe is ``mean |op(img, p) - reference|`` restricted, per parameter,
    to pixels whose response is smooth across ``[p - h, p + h]``; pixels
    where the forward and backward one-sided slopes disagree straddle a clip
    breakpoint (or the probe's own kink) and are dropped.

    Returns a dict with per-parameter analytic/numeric values and relative
    errors, plus ``max_rel_err`` and the number of dropped pixels.
    """
    kind = OpKind(kind)
    if not kind.differentiable:
        raise NotDifferentiableError(f"{kind.value} has no parameters to differentiate")
    img = imgcore.as_image(img)
    params = check_params(kind, params)
    if reference is None:
        rng = np.random.default_rng(0) if rng is None else rng
        reference = rng.random(img.shape)
    n = img.size

    def probe(pv):
        return np.abs(apply_op(kind, img, pv, mask) - reference)

    base = apply_op(kind, img, params, mask)
    sign = np.sign(base - reference)
    analytic = np.zeros(kind.arity)
    numeric = np.zeros(kind.arity)
    dropped = 0
    for j in range(kind.arity):
        step = np.zeros(kind.arity)
        step[j] = h
        hi, mid, lo = probe(params + step), np.abs(base - reference), probe(params - step)
        fwd = (hi - mid) / h
        bwd = (mid - lo) / h
        kink = np.abs(fwd - bwd) > 1e-2 * np.maximum(np.abs(fwd), np.abs(bwd)) + 1e-9
        keep = ~kink
        dropped += int(kink.sum())
        numeric[j] = np.sum((hi - lo)[keep]) / (2 * h * n)
        up = np.where(keep, sign, 0.0) / n
        analytic[j] = grad_params(kind, img, params, mask, up)[j]
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-9)
    rel = np.abs(analytic - numeric) / scale
    return {
        "kind": kind.value,
        "analytic": analytic,
        "numeric": numeric,
        "rel_err": rel,
        "max_rel_err": float(rel.max()),
        "dropped_pixels": dropped,
    }
