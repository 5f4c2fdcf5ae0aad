"""Edit-script files (JSON).  Layout is documented in docs/formats.md."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from . import imgcore
from .omn import EditScript, Step
from .ops import GLOBAL, OpKind

SCRIPT_VERSION = 1


class ScriptFormatError(ValueError):
    pass


def script_from_dict(doc, base_dir=None, shape=None) -> EditScript:
    """Build a script; mask paths are read relative to ``base_dir``.

    With ``base_dir=None`` masks are left unloaded (mask refs only), which is
    enough for round-tripping but not for execution of local steps.
    """
    if not isinstance(doc, dict) or doc.get("version") != SCRIPT_VERSION:
        raise ScriptFormatError(f"unsupported script version {doc.get('version') if isinstance(doc, dict) else None!r}")
    steps = []
    for n, raw in enumerate(doc.get("steps", [])):
        try:
            kind = OpKind(raw["op"])
        except (KeyError, ValueError) as exc:
            raise ScriptFormatError(f"step {n}: unknown or missing op ({exc})") from exc
        ref = raw.get("mask", "global")
        params = raw.get("params")
        fit = params == "fit"
        if fit:
            params = raw.get("init")
        elif params is not None and not isinstance(params, list):
            raise ScriptFormatError(f"step {n}: params must be a number list or \"fit\"")
        mask = GLOBAL
        if ref != "global":
            if base_dir is not None:
                path = Path(base_dir) / ref
                if not path.exists():
                    raise FileNotFoundError(f"mask file not found: {path}")
                mask = imgcore.read_mask(path)
                if shape is not None:
                    mask = imgcore.resize_mask(mask, shape)
        try:
            steps.append(Step(kind, params, fit=fit, mask=mask, mask_ref=ref))
        except ValueError as exc:
            raise ScriptFormatError(f"step {n}: {exc}") from exc
    try:
        return EditScript(steps)
    except ValueError as exc:
        raise ScriptFormatError(str(exc)) from exc


def script_to_dict(script: EditScript, keep_fit=False) -> dict:
    steps = []
    for s in script.steps:
        entry = {"op": s.kind.value, "mask": s.mask_ref}
        if keep_fit and s.fit:
            entry["params"] = "fit"
            if not np.array_equal(s.params, s.kind.identity_params()):
                entry["init"] = s.params.tolist()
        else:
            entry["params"] = [] if s.params is None else [float(v) for v in s.params]
        steps.append(entry)
    return {"version": SCRIPT_VERSION, "steps": steps}


def dumps(script: EditScript, keep_fit=False) -> str:
    return json.dumps(script_to_dict(script, keep_fit), indent=2) + "\n"


def load_script(path, shape=None, load_masks=True) -> EditScript:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScriptFormatError(f"{path}: not valid JSON ({exc})") from exc
    return script_from_dict(doc, path.parent if load_masks else None, shape)


def save_script(script: EditScript, path, keep_fit=False, relative_to=None) -> None:
    """Write ``script``; mask refs are rewritten relative to the new file when
    ``relative_to`` (the directory the refs were resolved against) is given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if relative_to is not None:
        script = script.copy()
        for s in script.steps:
            if s.mask_ref != "global":
                target = (Path(relative_to) / s.mask_ref).resolve()
                s.mask_ref = Path(os.path.relpath(target, path.parent.resolve())).as_posix()
    path.write_text(dumps(script, keep_fit))
