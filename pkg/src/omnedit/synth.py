"""Synthetic images and recovery benchmarks.

Targets are produced from sources by known edit chains, so a fit can be
judged against a known optimum without any dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import omn, ops
from .ops import OpKind

# Parameter ranges used to draw benchmark targets.  They sit well inside the
# fitting search box so that targets are not dominated by clipping.
BENCH_SCALAR_RANGE = {
    OpKind.BRIGHTNESS: (-0.5, 0.8),
    OpKind.SATURATION: (-0.5, 0.8),
    OpKind.CONTRAST: (-0.5, 0.8),
    OpKind.SHARPNESS: (-0.2, 0.6),
}
BENCH_CURVE_RANGE = (0.3, 3.0)


def synthetic_image(seed, size=64) -> np.ndarray:
    """Smooth colour gradients plus soft blobs and mild texture."""
    rng = np.random.default_rng(seed)
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(size - 1, 1)
    img = np.empty((h, w, 3))
    for c in range(3):
        a, b, off = rng.uniform(-0.6, 0.6, 3)
        img[..., c] = 0.5 + a * (xx - 0.5) + b * (yy - 0.5) + 0.2 * off
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, 1, 2)
        rad = rng.uniform(0.08, 0.3)
        color = rng.uniform(0, 1, 3)
        wgt = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rad**2))[..., None]
        img = (1 - 0.8 * wgt) * img + 0.8 * wgt * color
    img += 0.03 * rng.standard_normal(img.shape)
    # stretch each channel over the full range so every curve piece is populated
    lo = img.min(axis=(0, 1))
    hi = img.max(axis=(0, 1))
    return np.clip((img - lo) / np.maximum(hi - lo, 1e-6), 0.0, 1.0)


def random_params(kind: OpKind, rng) -> np.ndarray:
    if kind.is_curve:
        return rng.uniform(*BENCH_CURVE_RANGE, kind.arity)
    return rng.uniform(*BENCH_SCALAR_RANGE[kind], 1)


@dataclass
class Pair:
    source: np.ndarray
    target: np.ndarray
    truth: omn.EditScript

    def fit_script(self, order=None) -> omn.EditScript:
        """The ground-truth operations with every parameter set to fit,
        in canonical order unless ``order`` is given."""
        kinds = omn.canonical_order(self.truth.kinds) if order is None else order
        return omn.EditScript([omn.Step(k, fit=True) for k in kinds])


def single_op_pair(kind, seed, size=128) -> Pair:
    kind = OpKind(kind)
    rng = np.random.default_rng([seed, 1])
    src = synthetic_image(seed, size)
    truth = omn.EditScript([omn.Step(kind, random_params(kind, rng))])
    return Pair(src, omn.execute(truth, src).final, truth)


def chain_pair(seed, size=64, min_ops=2, max_ops=3) -> Pair:
    """Target made by 2-3 distinct random operations applied in random order.

    The generating order is independent of any fitting order, so canonical
    and permuted fits face the same kind of order mismatch.
    """
    rng = np.random.default_rng([seed, 2])
    src = synthetic_image(seed, size)
    n = int(rng.integers(min_ops, max_ops + 1))
    picks = rng.choice(len(ops.DIFFERENTIABLE_KINDS), size=n, replace=False)
    kinds = [ops.DIFFERENTIABLE_KINDS[i] for i in picks]
    truth = omn.EditScript([omn.Step(k, random_params(k, rng)) for k in kinds])
    return Pair(src, omn.execute(truth, src).final, truth)


def is_monotone(trace: omn.Trace, target, atol=1e-12) -> bool:
    """True when every step moves the image no farther from ``target``."""
    d = [float(np.abs(im - target).mean()) for im in trace.images]
    return all(b <= a + atol for a, b in zip(d, d[1:]))
