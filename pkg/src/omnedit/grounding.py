"""Operation-conditioned grounding over supplied embeddings.

The encoders that produce token, hidden-state, operation and region vectors
live outside this package; here we compute the attention, the phrase
embeddings, region matching scores, the ranking loss and the final
retrieval/mask logic from those vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgcore

MODULES = ("subj", "loc", "rel")
SCORE_GAIN = 5.0
BUNDLE_VERSION = 1


class DegenerateFeatureError(ValueError):
    pass


class BundleSchemaError(ValueError):
    pass


@dataclass
class GroundingInstance:
    tokens: np.ndarray  # (T, De)
    hidden: np.ndarray  # (T, Dh)
    operation: np.ndarray  # (Dh,)
    module_keys: np.ndarray  # (3, Dh) in MODULES order
    module_weights: np.ndarray  # (3,)
    region_features: np.ndarray  # (R, 3, De)
    region_masks: list = field(default_factory=list)
    global_prob: float | None = None
    labels: np.ndarray | None = None
    image_shape: tuple | None = None

    def __post_init__(self):
        self.tokens = np.atleast_2d(np.asarray(self.tokens, dtype=np.float64))
        self.hidden = np.atleast_2d(np.asarray(self.hidden, dtype=np.float64))
        self.operation = np.asarray(self.operation, dtype=np.float64).ravel()
        self.module_keys = np.asarray(self.module_keys, dtype=np.float64)
        self.module_weights = np.asarray(self.module_weights, dtype=np.float64).ravel()
        self.region_features = np.asarray(self.region_features, dtype=np.float64)
        if self.region_features.ndim == 2:
            self.region_features = self.region_features[None]
        T = self.tokens.shape[0]
        if T < 1 or self.hidden.shape[0] != T:
            raise BundleSchemaError("tokens and hidden states need the same length T >= 1")
        dh = self.hidden.shape[1]
        if self.operation.shape != (dh,) or self.module_keys.shape != (3, dh):
            raise BundleSchemaError("operation and module keys must match the hidden size")
        if self.module_weights.shape != (3,):
            raise BundleSchemaError("need one weight per module")
        if np.any(self.module_weights < 0) or not np.isclose(self.module_weights.sum(), 1.0):
            raise BundleSchemaError("module weights must be non-negative and sum to 1")
        if self.region_features.ndim != 3 or self.region_features.shape[1:] != (3, self.tokens.shape[1]):
            raise BundleSchemaError("region features must be shaped (R, 3, De)")
        for arr in (self.tokens, self.hidden, self.operation, self.module_keys, self.region_features):
            if not np.all(np.isfinite(arr)):
                raise BundleSchemaError("all vectors must be finite")

    @property
    def n_regions(self) -> int:
        return self.region_features.shape[0]


@dataclass
class RetrievalPolicy:
    theta_ground: float = 0.25
    theta_gate: float = 0.5

    def __post_init__(self):
        for v in (self.theta_ground, self.theta_gate):
            if not 0.0 < v < 1.0:
                raise ValueError("thresholds must lie in (0, 1)")


def _module_index(m) -> int:
    return MODULES.index(m) if isinstance(m, str) else int(m)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def op_attention(inst: GroundingInstance) -> np.ndarray:
    """Token weights from the operation embedding: softmax_t <o, h_t>."""
    return softmax(inst.hidden @ inst.operation)


def module_attention(inst: GroundingInstance, m) -> np.ndarray:
    return softmax(inst.hidden @ inst.module_keys[_module_index(m)])


def conditioned_phrase_embedding(inst: GroundingInstance, m):
    """Return ``(a_hat, q_m)``: module attention re-weighted by the operation
    attention and renormalised, and the resulting phrase embedding."""
    joint = op_attention(inst) * module_attention(inst, m)
    a_hat = joint / joint.sum()
    return a_hat, a_hat @ inst.tokens


def _cosine(a, b) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateFeatureError("zero-norm feature vector")
    return float(a @ b / (na * nb))


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def match_score(inst: GroundingInstance, r: int, gain=SCORE_GAIN) -> float:
    """Weighted average over modules of logistic(gain * cos(q_m, v_{m,r}))."""
    total = 0.0
    for mi in range(3):
        _, q = conditioned_phrase_embedding(inst, mi)
        total += inst.module_weights[mi] * _logistic(gain * _cosine(q, inst.region_features[r, mi]))
    return float(total)


def match_scores(inst: GroundingInstance, gain=SCORE_GAIN) -> np.ndarray:
    return np.array([match_score(inst, r, gain) for r in range(inst.n_regions)])


def ranking_loss(pos, neg_region, neg_query, margin) -> float:
    """Hinge ranking loss summed over positive pairs.

    ``pos[i] = s(Q_i, R_i)``, ``neg_region[i] = s(Q_i, R_j)`` and
    ``neg_query[i] = s(Q_j, R_i)``.
    """
    pos = np.asarray(pos, dtype=np.float64)
    a = np.maximum(0.0, margin + np.asarray(neg_region, dtype=np.float64) - pos)
    b = np.maximum(0.0, margin + np.asarray(neg_query, dtype=np.float64) - pos)
    return float(np.sum(a + b))


def retrieve_regions(scores, policy: RetrievalPolicy | None = None) -> list[int]:
    """Indices scoring at least the threshold; the best one alone if none do."""
    policy = policy or RetrievalPolicy()
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("need at least one region")
    picked = np.flatnonzero(scores >= policy.theta_ground).tolist()
    if not picked:
        picked = [int(np.argmax(scores))]
    return picked


def is_global(prob, policy: RetrievalPolicy | None = None) -> bool:
    policy = policy or RetrievalPolicy()
    return prob is not None and prob >= policy.theta_gate


def compose_mask(region_masks, selected, global_op: bool, shape) -> np.ndarray:
    shape = tuple(shape[:2])
    if global_op:
        return np.ones(shape)
    if not selected:
        raise ValueError("local grounding needs at least one selected region")
    out = np.zeros(shape)
    for r in selected:
        out = np.maximum(out, imgcore.as_mask(region_masks[r], shape))
    return out


@dataclass
class GroundingResult:
    scores: np.ndarray
    selected: list[int]
    global_op: bool
    mask: np.ndarray | None


def ground(inst: GroundingInstance, policy: RetrievalPolicy | None = None) -> GroundingResult:
    policy = policy or RetrievalPolicy()
    scores = match_scores(inst)
    selected = retrieve_regions(scores, policy)
    glob = is_global(inst.global_prob, policy)
    shape = inst.image_shape
    if shape is None and inst.region_masks:
        shape = np.shape(inst.region_masks[0])
    mask = None
    if shape is not None and (glob or inst.region_masks):
        mask = compose_mask(inst.region_masks, selected, glob, shape)
    return GroundingResult(scores, selected, glob, mask)


# ---------------------------------------------------------------------------
# feature bundle files
# ---------------------------------------------------------------------------


def load_bundle(path) -> GroundingInstance:
    """Read a feature bundle (JSON, see docs/formats.md).  Region mask paths
    are resolved relative to the bundle file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleSchemaError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("version") != BUNDLE_VERSION:
        raise BundleSchemaError(f"{path}: unsupported bundle version {doc.get('version')!r}")
    try:
        keys = doc["module_keys"]
        weights = doc["module_weights"]
        regions = doc["regions"]
        masks = []
        for reg in regions:
            ref = reg.get("mask")
            if ref is not None:
                masks.append(imgcore.read_mask(path.parent / ref))
        if masks and len(masks) != len(regions):
            raise BundleSchemaError("either every region has a mask or none does")
        shape = doc.get("image_size")
        return GroundingInstance(
            tokens=doc["tokens"],
            hidden=doc["hidden"],
            operation=doc["operation"],
            module_keys=[keys[m] for m in MODULES],
            module_weights=[weights[m] for m in MODULES],
            region_features=[[reg["features"][m] for m in MODULES] for reg in regions],
            region_masks=masks,
            global_prob=doc.get("global_prob"),
            labels=None if doc.get("labels") is None else np.asarray(doc["labels"]),
            image_shape=None if shape is None else tuple(shape),
        )
    except (KeyError, TypeError) as exc:
        raise BundleSchemaError(f"{path}: missing or malformed field {exc}") from exc


def bundle_dict(inst: GroundingInstance, mask_refs=None) -> dict:
    doc = {
        "version": BUNDLE_VERSION,
        "tokens": inst.tokens.tolist(),
        "hidden": inst.hidden.tolist(),
        "operation": inst.operation.tolist(),
        "module_keys": {m: inst.module_keys[i].tolist() for i, m in enumerate(MODULES)},
        "module_weights": {m: float(inst.module_weights[i]) for i, m in enumerate(MODULES)},
        "regions": [],
    }
    for r in range(inst.n_regions):
        reg = {"features": {m: inst.region_features[r, i].tolist() for i, m in enumerate(MODULES)}}
        if mask_refs is not None:
            reg["mask"] = mask_refs[r]
        doc["regions"].append(reg)
    if inst.global_prob is not None:
        doc["global_prob"] = float(inst.global_prob)
    if inst.labels is not None:
        doc["labels"] = np.asarray(inst.labels).tolist()
    if inst.image_shape is not None:
        doc["image_size"] = list(inst.image_shape[:2])
    return doc
