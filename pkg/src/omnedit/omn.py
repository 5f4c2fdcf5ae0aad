"""Operation modular network: ordered chains of editing operations.

A chain turns ``I_0`` into ``I_K`` one operation at a time and keeps every
intermediate image.  Fitting treats the parameters of the chain as free
variables and minimises

    |I_K - target| + lam * (1/K) * sum_k max(|I_{k+1} - target| - |I_k - target| + margin, 0)

with the ``|I_k - target|`` term of each hinge held constant during
differentiation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import imgcore, ops
from .ops import GLOBAL, OpKind

log = logging.getLogger(__name__)

# Parameterless operations lead the chain, followed by the differentiable ones.
CANONICAL_ORDER = (
    OpKind.INPAINT_OBJ,
    OpKind.COLOR_BG,
    OpKind.BRIGHTNESS,
    OpKind.CONTRAST,
    OpKind.SATURATION,
    OpKind.SHARPNESS,
    OpKind.HUE,
    OpKind.TINT,
)


@dataclass
class Step:
    kind: OpKind
    params: np.ndarray | None = None
    fit: bool = False
    mask: object = GLOBAL
    mask_ref: str = "global"

    def __post_init__(self):
        self.kind = OpKind(self.kind)
        if self.fit:
            if not self.kind.differentiable:
                raise ValueError(f"{self.kind.value} has no parameters to fit")
            if self.params is None:
                self.params = self.kind.identity_params()
        self.params = ops.check_params(self.kind, self.params)

    def invocation(self) -> ops.OpInvocation:
        return ops.OpInvocation(self.kind, self.params, self.mask)


@dataclass
class EditScript:
    steps: list[Step] = field(default_factory=list)

    def __post_init__(self):
        kinds = [s.kind for s in self.steps]
        if len(set(kinds)) != len(kinds):
            raise ValueError("an edit script may use each operation at most once")

    @property
    def kinds(self) -> list[OpKind]:
        return [s.kind for s in self.steps]

    def __len__(self):
        return len(self.steps)

    def copy(self) -> EditScript:
        return EditScript(
            [replace(s, params=None if s.params is None else s.params.copy()) for s in self.steps]
        )

    def reordered(self, kinds) -> EditScript:
        by_kind = {s.kind: s for s in self.copy().steps}
        return EditScript([by_kind[OpKind(k)] for k in kinds])

    def canonical(self) -> EditScript:
        return self.reordered(canonical_order(self.kinds))


@dataclass
class Trace:
    images: list[np.ndarray]
    steps: list[ops.OpInvocation]

    @property
    def final(self) -> np.ndarray:
        return self.images[-1]

    def __len__(self):
        return len(self.images)


@dataclass
class FitConfig:
    lr: float = 0.05
    iters: int = 500
    margin: float = 0.005
    lam: float = 1.0
    tol: float = 0.0
    patience: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    # cosine decay from lr down to lr * lr_floor over the budget
    lr_floor: float = 0.01
    restarts: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.iters <= 0:
            raise ValueError("learning rate and iteration budget must be positive")
        if self.margin < 0 or self.lam < 0:
            raise ValueError("margin and lambda must be non-negative")


@dataclass
class FitResult:
    script: EditScript
    trace: Trace
    history: list[float]
    status: str
    loss: float


def canonical_order(kinds) -> list[OpKind]:
    present = {OpKind(k) for k in kinds}
    return [k for k in CANONICAL_ORDER if k in present]


def execute(script: EditScript, image, inpainter=None, prefix: Trace | None = None) -> Trace:
    """Run ``script`` on ``image``.  ``prefix`` is an already computed trace of
    the script's leading steps, which are then not re-run."""
    img = imgcore.as_image(image)
    images = [img]
    invs = []
    if prefix is not None:
        images = list(prefix.images)
        invs = list(prefix.steps)
        img = images[-1]
    for step in script.steps[len(invs):]:
        inv = step.invocation()
        ops.resolve_mask(inv.mask, img.shape)
        img = ops.apply_op(inv.kind, img, inv.params, inv.mask, inpainter=inpainter)
        images.append(img)
        invs.append(inv)
    return Trace(images, invs)


def _distances(trace: Trace, target) -> np.ndarray:
    return np.array([imgcore.l1_distance(im, target) for im in trace.images])


def loss_l1(trace: Trace, target) -> float:
    return imgcore.l1_distance(trace.final, target)


def loss_triplet(trace: Trace, target, margin: float) -> float:
    k = len(trace) - 1
    if k == 0:
        return 0.0
    d = _distances(trace, target)
    return float(np.maximum(d[1:] - d[:-1] + margin, 0.0).sum() / k)


def total_loss(trace: Trace, target, cfg: FitConfig | None = None) -> float:
    cfg = cfg or FitConfig()
    out = loss_l1(trace, target)
    if cfg.lam:
        out += cfg.lam * loss_triplet(trace, target, cfg.margin)
    return out


def loss_and_grad(script: EditScript, image, target, cfg: FitConfig, inpainter=None,
                  prefix: Trace | None = None):
    """Total loss and its gradient w.r.t. the parameters of every step.

    Returns ``(loss, grads, trace)``; ``grads[i]`` is None for parameterless
    steps.  Gradients for steps that precede every fitted step are still
    computed when cheap, but the backward pass stops at the first step whose
    input no longer influences a fitted parameter.  ``prefix`` is passed on
    to ``execute``.
    """
    target = imgcore.as_image(target)
    trace = execute(script, image, inpainter, prefix)
    imgcore.check_same_shape(trace.final, target)
    K = len(script)
    grads: list[np.ndarray | None] = [None] * K
    if K == 0:
        return loss_l1(trace, target), grads, trace

    d = _distances(trace, target)
    hinge = d[1:] - d[:-1] + cfg.margin
    active = hinge > 0
    loss = d[-1] + (cfg.lam * np.maximum(hinge, 0.0).sum() / K if cfg.lam else 0.0)

    def direct(k):
        # gradient reaching I_k straight from the loss (k >= 1)
        g_img = imgcore.l1_grad(trace.images[k], target)
        w = cfg.lam / K if (cfg.lam and active[k - 1]) else 0.0
        if k == K:
            w += 1.0
        return w * g_img

    fit_idx = [i for i, s in enumerate(script.steps) if s.fit]
    first_fit = fit_idx[0] if fit_idx else K
    g = direct(K)
    for i in range(K - 1, -1, -1):
        step = script.steps[i]
        need_input = i > first_fit
        if step.kind.differentiable:
            gp, gi = ops.vjp(step.kind, trace.images[i], step.params, step.mask, g, need_input)
            grads[i] = gp
        elif step.kind is OpKind.COLOR_BG:
            m = ops.resolve_mask(step.mask, g.shape)
            gi = np.zeros_like(g) if m is None else g * (1.0 - m[..., None])
        else:
            if need_input:
                raise ops.NotDifferentiableError(
                    "inpaint_obj must precede every fitted operation"
                )
            gi = None
        if not need_input:
            break
        g = gi + direct(i)
    return float(loss), grads, trace


def _project(kind: OpKind, p: np.ndarray) -> np.ndarray:
    lo, hi = kind.param_bounds()
    return np.clip(p, lo, hi)


def _adam_fit(script, image, target, cfg, inpainter, rng=None):
    script = script.copy()
    fit_idx = [i for i, s in enumerate(script.steps) if s.fit]
    if rng is not None:
        for i in fit_idx:
            s = script.steps[i]
            lo, hi = s.kind.param_bounds()
            span = 0.125 * (hi - lo)
            s.params = _project(s.kind, s.params + rng.uniform(-span, span, s.kind.arity))
    # steps before the first fitted one never change; run them once
    prefix = execute(EditScript(script.steps[: fit_idx[0]]), image, inpainter)
    m = {i: np.zeros(script.steps[i].kind.arity) for i in fit_idx}
    v = {i: np.zeros(script.steps[i].kind.arity) for i in fit_idx}
    history = []
    best_loss = math.inf
    best_params = {i: script.steps[i].params.copy() for i in fit_idx}
    stale = 0
    for t in range(1, cfg.iters + 1):
        loss, grads, _ = loss_and_grad(script, image, target, cfg, inpainter, prefix)
        history.append(loss)
        if loss < best_loss - cfg.tol:
            stale = 0
        else:
            stale += 1
        if loss < best_loss:
            best_loss = loss
            best_params = {i: script.steps[i].params.copy() for i in fit_idx}
        if cfg.tol > 0 and stale >= cfg.patience:
            break
        frac = (t - 1) / max(cfg.iters - 1, 1)
        lr = cfg.lr * (cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (1 + math.cos(math.pi * frac)))
        for i in fit_idx:
            s = script.steps[i]
            gi = grads[i]
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi
            mhat = m[i] / (1 - cfg.beta1**t)
            vhat = v[i] / (1 - cfg.beta2**t)
            s.params = _project(s.kind, s.params - lr * mhat / (np.sqrt(vhat) + 1e-12))
    for i in fit_idx:
        script.steps[i].params = best_params[i]
    return script, history, best_loss


def fit_parameters(script: EditScript, image, target, cfg: FitConfig | None = None,
                   inpainter=None) -> FitResult:
    """Fit every ``fit=True`` step of ``script`` so the chain maps image to target.

    Parameters start from their given values (identity by default) and are
    updated with Adam under a cosine-decayed step size, projected into each
    operation's search box after every update.  The best iterate seen is
    returned.  ``cfg.restarts`` extra runs start from jittered values drawn
    with ``cfg.seed``; the best run wins.
    """
    cfg = cfg or FitConfig()
    image = imgcore.as_image(image)
    target = imgcore.as_image(target)
    imgcore.check_same_shape(image, target)
    fit_idx = [i for i, s in enumerate(script.steps) if s.fit]
    if not fit_idx:
        raise ValueError("script has no parameters to fit")
    first_fit = fit_idx[0]
    if any(not s.kind.differentiable for s in script.steps[first_fit:]):
        raise ValueError("parameterless operations must precede every fitted operation")

    init_trace = execute(script, image, inpainter)
    init_loss = total_loss(init_trace, target, cfg)

    best = _adam_fit(script, image, target, cfg, inpainter)
    history = list(best[1])
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.restarts):
        cand = _adam_fit(script, image, target, cfg, inpainter, rng=rng)
        history.extend(cand[1])
        if cand[2] < best[2]:
            best = cand
    fitted, _, best_loss = best

    status = "ok"
    if not best_loss < init_loss:
        fitted = script.copy()
        best_loss = init_loss
        status = "no_improvement"
        if loss_l1(init_trace, target) > 1e-12:
            log.warning("fit made no progress; returning the initial parameters")
    trace = execute(fitted, image, inpainter)
    return FitResult(fitted, trace, history, status, float(best_loss))


def random_edit_script(seed) -> EditScript:
    """1 to 5 distinct differentiable operations in random order, with
    parameters drawn uniformly from the fitting search box and global masks."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    kinds = rng.choice(len(ops.DIFFERENTIABLE_KINDS), size=n, replace=False)
    steps = []
    for k in kinds:
        kind = ops.DIFFERENTIABLE_KINDS[k]
        lo, hi = kind.param_bounds()
        steps.append(Step(kind, rng.uniform(lo, hi, kind.arity)))
    return EditScript(steps)


def random_edit(image, seed) -> np.ndarray:
    return execute(random_edit_script(seed), image).final
