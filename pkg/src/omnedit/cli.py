"""Command-line front end: ``omnedit {apply,fit,ground,eval,stats,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import annotations, grounding, imgcore, metrics, omn, ops, scriptio

log = logging.getLogger("omnedit")


class CliError(Exception):
    """Reported as a one-line diagnostic with a nonzero exit status."""


def _load_image(path, policy):
    path = Path(path)
    if not path.exists():
        raise CliError(f"image not found: {path}")
    img = imgcore.read_image(path)
    if policy == "gier":
        img = imgcore.resize_gier(img)
    return img


def _load_script(path, shape):
    path = Path(path)
    if not path.exists():
        raise CliError(f"script not found: {path}")
    try:
        return scriptio.load_script(path, shape=shape)
    except (scriptio.ScriptFormatError, FileNotFoundError) as exc:
        raise CliError(str(exc)) from exc


def _write_trace(trace, out_dir: Path, stem: str):
    for k, im in enumerate(trace.images):
        imgcore.write_image(out_dir / f"{stem}_step{k:02d}.png", im)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_apply(args):
    img = _load_image(args.image, args.resize_policy)
    script = _load_script(args.script, img.shape)
    if any(s.fit for s in script.steps):
        raise CliError("script has \"fit\" parameters; run `fit` instead")
    try:
        trace = omn.execute(script, img)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out)
    imgcore.write_image(out, trace.final)
    if args.save_intermediate:
        _write_trace(trace, out.parent, out.stem)
    print(f"wrote {out} ({len(script)} step(s))")
    return 0


def _fit_config(args) -> omn.FitConfig:
    kw = {}
    if args.lam is not None:
        kw["lam"] = args.lam
    if args.triplet_margin is not None:
        kw["margin"] = args.triplet_margin
    if args.lr is not None:
        kw["lr"] = args.lr
    if args.iters is not None:
        kw["iters"] = args.iters
    kw["seed"] = args.seed
    return omn.FitConfig(**kw)


def cmd_fit(args):
    src = _load_image(args.source, args.resize_policy)
    tgt = _load_image(args.target, args.resize_policy)
    if src.shape != tgt.shape:
        raise CliError(f"source {src.shape[:2]} and target {tgt.shape[:2]} sizes differ")
    script = _load_script(args.script, src.shape)
    try:
        cfg = _fit_config(args)
        result = omn.fit_parameters(script, src, tgt, cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scriptio.save_script(result.script, out / "fitted_script.json",
                         relative_to=Path(args.script).parent)
    imgcore.write_image(out / "output.png", result.trace.final)
    _write_trace(result.trace, out, "trace")
    with open(out / "loss_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(result.history):
            w.writerow([i, repr(float(v))])
    summary = {
        "status": result.status,
        "loss": result.loss,
        "l1": omn.loss_l1(result.trace, tgt),
        "triplet": omn.loss_triplet(result.trace, tgt, cfg.margin),
        "lambda": cfg.lam,
        "iterations": len(result.history),
    }
    (out / "fit_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if result.status != "ok":
        print(f"warning: fit status {result.status}", file=sys.stderr)
    print(f"final L1 {summary['l1']:.6f}  loss {result.loss:.6f}  -> {out}")
    return 0


def cmd_ground(args):
    try:
        inst = grounding.load_bundle(args.bundle)
        policy = grounding.RetrievalPolicy(args.theta_ground, args.theta_gate)
        res = grounding.ground(inst, policy)
    except (grounding.BundleSchemaError, grounding.DegenerateFeatureError, ValueError, OSError) as exc:
        raise CliError(f"{args.bundle}: {exc}") from exc
    doc = {
        "selected": res.selected,
        "scores": [float(s) for s in res.scores],
        "global": res.global_op,
    }
    if args.out:
        if res.mask is None:
            raise CliError("bundle has no region masks or image_size; cannot compose a mask")
        out = Path(args.out)
        imgcore.write_mask(out, res.mask)
        out.with_suffix(".json").write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps(doc))
    return 0


def _find_prediction(pred_root: Path, pair_id: str):
    for ext in (".png", ".jpg", ".jpeg", ".npy"):
        p = pred_root / f"{pair_id}{ext}"
        if p.exists():
            return p
    return None


def evaluate(ann_root, pred_root, resize_policy="native") -> metrics.EvalReport:
    """Score ``<pred_root>/<pair id>.png`` against each record's target.

    With ``resize_policy="gier"`` targets and sources are resized the same
    way as fitting inputs before comparison.
    """
    records = annotations.load_annotations(ann_root)
    pred_root = Path(pred_root)
    report = metrics.EvalReport()
    produced, nothing = [], []
    used = []
    for rec in records:
        p = _find_prediction(pred_root, rec.pair_id)
        if p is None:
            log.warning("%s: no prediction found; skipped", rec.pair_id)
            report.skipped += 1
            continue
        tgt = _load_image(rec.path(rec.target), resize_policy)
        pred = imgcore.read_image(p)
        if pred.shape != tgt.shape:
            log.warning("%s: prediction size %s != target %s; skipped", rec.pair_id, pred.shape, tgt.shape)
            report.skipped += 1
            continue
        src = _load_image(rec.path(rec.source), resize_policy)
        produced.append((pred, tgt))
        if src.shape == tgt.shape:
            nothing.append((src, tgt))
        used.append(rec)
    report.sample_count = len(produced)
    if produced:
        report.l1 = metrics.dataset_l1(produced)
    if nothing:
        report.no_edit_l1 = metrics.dataset_l1(nothing)

    extra = pred_root / "predictions.json"
    if extra.exists():
        doc = json.loads(extra.read_text()).get("records", {})
        scores, labels, ious = [], [], []
        for rec in used:
            entry = doc.get(rec.pair_id)
            if not entry:
                continue
            truth = {op.name for op in rec.operations}
            for name, s in entry.get("op_scores", {}).items():
                scores.append(float(s))
                labels.append(annotations.normalize_op_name(name) in truth)
            for name, ref in entry.get("masks", {}).items():
                name = annotations.normalize_op_name(name)
                pm = imgcore.read_mask(pred_root / ref)
                gt = np.zeros_like(pm)
                for op in rec.operations:
                    if op.name != name:
                        continue
                    if not op.local:
                        gt[:] = 1.0
                    for m in op.masks:
                        gt = np.maximum(gt, imgcore.resize_mask(imgcore.read_mask(rec.path(m)), pm.shape))
                ious.append(metrics.mask_iou(pm, gt))
        if scores:
            report.f1 = {t: metrics.f1_at_threshold(scores, labels, t) for t in metrics.THRESHOLD_GRID}
            try:
                report.roc_auc = metrics.roc_auc(scores, labels)
            except metrics.UndefinedMetricError:
                log.warning("ROC-AUC undefined: single-class labels")
        if ious:
            report.mean_iou = float(np.mean(ious))
            report.iou_count = len(ious)
    return report


def cmd_eval(args):
    try:
        report = evaluate(args.annotations, args.predictions, args.resize_policy)
    except (annotations.AnnotationError, OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    if args.out:
        report.save(args.out)
    sys.stdout.write(report.dumps())
    return 0


def cmd_stats(args):
    try:
        records = annotations.load_annotations(args.annotations, check_paths=False)
    except (annotations.AnnotationError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    stats = annotations.operation_stats(records)
    rows = [["operation", "occur", "opr%", "img%", "local%"]]
    rows += [[s.name, str(s.occur), f"{s.opr_pct:.2f}", f"{s.img_pct:.2f}", f"{s.local_pct:.2f}"] for s in stats]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    for r in rows:
        print("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return 0


def gradcheck(kind, seed=0, n_configs=20, size=16, h=1e-4, tol=1e-3):
    """Run the finite-difference check on random configurations.

    Returns a list of ``(config index, max relative error, passed)``.
    """
    kind = ops.OpKind(kind)
    if not kind.differentiable:
        raise ops.NotDifferentiableError(f"{kind.value} is a non-differentiable operation")
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_configs):
        img = rng.random((size, size, 3))
        mask = rng.random((size, size)) if i % 2 else ops.GLOBAL
        if kind.is_curve:
            p = rng.uniform(0.2, 3.0, kind.arity) if i else kind.identity_params()
        else:
            p = rng.uniform(-0.5, 1.0, 1)
        rep = ops.finite_diff_check(kind, img, p, mask, h=h, rng=rng)
        rows.append((i, rep["max_rel_err"], rep["max_rel_err"] < tol))
    return rows


def cmd_gradcheck(args):
    try:
        kind = ops.OpKind(args.op)
    except ValueError:
        raise CliError(f"unknown operation {args.op!r}") from None
    try:
        rows = gradcheck(kind, args.seed)
    except ops.NotDifferentiableError as exc:
        raise CliError(f"error: {exc}") from exc
    print(f"{'config':>6}  {'max rel err':>12}  result")
    for i, err, ok in rows:
        print(f"{i:>6}  {err:>12.3e}  {'pass' if ok else 'FAIL'}")
    passed = all(ok for _, _, ok in rows)
    print(f"{kind.value}: {'pass' if passed else 'FAIL'}")
    return 0 if passed else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omnedit", description="Differentiable edit chains.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def add_resize(sp):
        sp.add_argument("--resize-policy", choices=("native", "gier"), default="native")

    sp = sub.add_parser("apply", help="run an edit script on an image")
    sp.add_argument("--script", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--save-intermediate", action="store_true")
    add_resize(sp)
    sp.set_defaults(func=cmd_apply)

    sp = sub.add_parser("fit", help="fit script parameters so source maps to target")
    sp.add_argument("--script", required=True)
    sp.add_argument("--source", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--triplet-margin", type=float)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--seed", type=int, default=0)
    add_resize(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("ground", help="select regions from a feature bundle")
    sp.add_argument("bundle")
    sp.add_argument("--theta-ground", type=float, default=0.25)
    sp.add_argument("--theta-gate", type=float, default=0.5)
    sp.add_argument("--out", help="mask PNG path (a .json sidecar is written next to it)")
    sp.set_defaults(func=cmd_ground)

    sp = sub.add_parser("eval", help="score predictions against annotated targets")
    sp.add_argument("annotations")
    sp.add_argument("predictions")
    sp.add_argument("--out")
    add_resize(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("stats", help="operation distribution of an annotation root")
    sp.add_argument("annotations")
    sp.add_argument("--out", help="optional CSV path")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("gradcheck", help="finite-difference check of an operation")
    sp.add_argument("op")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"omnedit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
