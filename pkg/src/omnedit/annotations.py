"""Annotation records for paired editing data and operation statistics.

The on-disk layout (``annotations.json`` under a root directory) is
documented in docs/formats.md.  A converter for other release formats
would produce the same records and plug in at ``load_annotations``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .ops import OpKind

log = logging.getLogger(__name__)

ANNOTATION_FILE = "annotations.json"
ANNOTATION_VERSION = 1

# The 23 candidate operations, in order of frequency.
VOCABULARY = (
    "brightness",
    "contrast",
    "saturation",
    "lightness",
    "hue",
    "remove_object",
    "tint",
    "sharpen",
    "remove_bg",
    "crop",
    "deform_object",
    "denoise",
    "dehaze",
    "gaussian_blur",
    "exposure",
    "rotate",
    "black_white",
    "radial_blur",
    "flip_image",
    "facet_filter",
    "rotate_object",
    "find_edges_filter",
    "flip_object",
)

_ALIASES = {
    "remove_obj": "remove_object",
    "inpaint_obj": "remove_object",
    "color_bg": "remove_bg",
    "remove_background": "remove_bg",
    "sharpness": "sharpen",
    "de_noise": "denoise",
    "gaussain_blur": "gaussian_blur",
    "black_and_white": "black_white",
    "black&white": "black_white",
}

# Vocabulary names executable by the modular network.
EXECUTABLE = {
    "brightness": OpKind.BRIGHTNESS,
    "lightness": OpKind.BRIGHTNESS,
    "contrast": OpKind.CONTRAST,
    "saturation": OpKind.SATURATION,
    "hue": OpKind.HUE,
    "tint": OpKind.TINT,
    "sharpen": OpKind.SHARPNESS,
    "remove_object": OpKind.INPAINT_OBJ,
    "remove_bg": OpKind.COLOR_BG,
}


class AnnotationError(ValueError):
    pass


def normalize_op_name(name: str) -> str:
    key = name.strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    key = re.sub(r"[\s\-]+", "_", key)
    key = _ALIASES.get(key, key)
    if key not in VOCABULARY:
        raise AnnotationError(f"unknown operation name {name!r}")
    return key


@dataclass
class OpAnnotation:
    name: str
    local: bool = False
    masks: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.name = normalize_op_name(self.name)
        if self.local and not self.masks:
            raise AnnotationError(f"local operation {self.name} needs at least one mask")


@dataclass
class AnnotationRecord:
    pair_id: str
    source: str
    target: str
    requests: list[str]
    operations: list[OpAnnotation]
    root: Path | None = None

    def __post_init__(self):
        if not self.requests:
            raise AnnotationError(f"{self.pair_id}: needs at least one request")

    def path(self, ref) -> Path:
        return (self.root or Path(".")) / ref

    def to_dict(self) -> dict:
        return {
            "id": self.pair_id,
            "source": self.source,
            "target": self.target,
            "requests": list(self.requests),
            "operations": [
                {"name": op.name, "local": op.local, "masks": list(op.masks)} for op in self.operations
            ],
        }


def record_from_dict(doc, root=None, check_paths=True) -> AnnotationRecord:
    try:
        rec = AnnotationRecord(
            pair_id=str(doc["id"]),
            source=doc["source"],
            target=doc["target"],
            requests=list(doc["requests"]),
            operations=[
                OpAnnotation(op["name"], bool(op.get("local", False)), list(op.get("masks", [])))
                for op in doc["operations"]
            ],
            root=None if root is None else Path(root),
        )
    except (KeyError, TypeError) as exc:
        raise AnnotationError(f"malformed record: missing {exc}") from exc
    if check_paths and root is not None:
        refs = [rec.source, rec.target] + [m for op in rec.operations for m in op.masks]
        for ref in refs:
            if not rec.path(ref).exists():
                raise AnnotationError(f"{rec.pair_id}: file not found: {rec.path(ref)}")
    return rec


def load_annotations(root, check_paths=True, strict=False) -> list[AnnotationRecord]:
    """Load every record under ``root``.  Invalid records are skipped with a
    warning unless ``strict``; a root without an annotation file is empty."""
    root = Path(root)
    f = root / ANNOTATION_FILE
    if not f.exists():
        log.warning("no %s under %s; treating as empty", ANNOTATION_FILE, root)
        return []
    doc = json.loads(f.read_text())
    if doc.get("version") != ANNOTATION_VERSION:
        raise AnnotationError(f"{f}: unsupported version {doc.get('version')!r}")
    records = []
    for raw in doc.get("records", []):
        try:
            records.append(record_from_dict(raw, root, check_paths))
        except AnnotationError as exc:
            if strict:
                raise
            log.warning("skipping record: %s", exc)
    return records


def save_annotations(records, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {"version": ANNOTATION_VERSION, "records": [r.to_dict() for r in records]}
    (root / ANNOTATION_FILE).write_text(json.dumps(doc, indent=2) + "\n")


@dataclass
class OpStat:
    name: str
    occur: int
    opr_pct: float
    img_pct: float
    local_pct: float


def operation_stats(records) -> list[OpStat]:
    """Per-operation count, share of all operations, share of images using
    it, and share of its occurrences that are local; vocabulary order."""
    occur = dict.fromkeys(VOCABULARY, 0)
    local = dict.fromkeys(VOCABULARY, 0)
    images = dict.fromkeys(VOCABULARY, 0)
    for rec in records:
        for op in rec.operations:
            occur[op.name] += 1
            local[op.name] += int(op.local)
        for name in {op.name for op in rec.operations}:
            images[name] += 1
    total = sum(occur.values())
    n_img = len(records)
    out = []
    for name in VOCABULARY:
        c = occur[name]
        out.append(
            OpStat(
                name,
                c,
                100.0 * c / total if total else 0.0,
                100.0 * images[name] / n_img if n_img else 0.0,
                100.0 * local[name] / c if c else 0.0,
            )
        )
    return out
