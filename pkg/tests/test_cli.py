import json
import subprocess
import sys

import numpy as np
import pytest

from omnedit import annotations as ann
from omnedit import grounding as gr
from omnedit import imgcore, ops, synth
from omnedit.cli import main

from conftest import gray, random_instance


def write_script(path, steps):
    path.write_text(json.dumps({"version": 1, "steps": steps}))
    return path


class TestApply:
    def test_identity_is_reencoded_input(self, tmp_path, rng):
        imgcore.write_image(tmp_path / "in.png", rng.random((8, 9, 3)))
        s = write_script(tmp_path / "s.json", [{"op": "brightness", "params": [0.0]}])
        assert main(["apply", "--script", str(s), "--image", str(tmp_path / "in.png"),
                     "--out", str(tmp_path / "out.png")]) == 0
        assert (tmp_path / "in.png").read_bytes() == (tmp_path / "out.png").read_bytes()

    def test_brightness_on_gray(self, tmp_path):
        imgcore.write_image(tmp_path / "g.png", gray(0.3, 6))
        s = write_script(tmp_path / "s.json", [{"op": "brightness", "mask": "global", "params": [0.5]}])
        assert main(["apply", "--script", str(s), "--image", str(tmp_path / "g.png"),
                     "--out", str(tmp_path / "o.png")]) == 0
        out = imgcore.read_image(tmp_path / "o.png")
        assert np.abs(out - 0.45).max() <= 1 / 255 + 1e-12

    def test_intermediates(self, tmp_path, rng):
        imgcore.write_image(tmp_path / "in.png", rng.random((8, 8, 3)))
        s = write_script(tmp_path / "s.json", [
            {"op": "contrast", "params": [0.4]}, {"op": "tint", "params": [1, 2, 1, 2, 1, 2, 1, 2]},
        ])
        main(["apply", "--script", str(s), "--image", str(tmp_path / "in.png"),
              "--out", str(tmp_path / "o.png"), "--save-intermediate"])
        assert sorted(p.name for p in tmp_path.glob("o_step*.png")) == [
            "o_step00.png", "o_step01.png", "o_step02.png",
        ]
        assert (tmp_path / "o_step02.png").read_bytes() == (tmp_path / "o.png").read_bytes()

    def test_missing_mask(self, tmp_path, capsys):
        imgcore.write_image(tmp_path / "in.png", gray(0.3))
        s = write_script(tmp_path / "s.json", [{"op": "tint", "mask": "absent.png", "params": [1] * 8}])
        code = main(["apply", "--script", str(s), "--image", str(tmp_path / "in.png"),
                     "--out", str(tmp_path / "o.png")])
        assert code != 0
        assert "absent.png" in capsys.readouterr().err
        assert not (tmp_path / "o.png").exists()

    def test_gier_resize_policy(self, tmp_path):
        imgcore.write_image(tmp_path / "in.png", gray(0.5, 10))
        s = write_script(tmp_path / "s.json", [])
        main(["apply", "--script", str(s), "--image", str(tmp_path / "in.png"),
              "--out", str(tmp_path / "o.png"), "--resize-policy", "gier"])
        assert imgcore.read_image(tmp_path / "o.png").shape == (300, 300, 3)

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "omnedit.cli", "gradcheck", "color_bg"],
                              capture_output=True, text=True)
        assert proc.returncode == 2 and "non-differentiable" in proc.stderr


class TestFit:
    def _run(self, tmp_path, src, tgt, steps, ext=".png", extra=()):
        imgcore.write_image(tmp_path / f"src{ext}", src)
        imgcore.write_image(tmp_path / f"tgt{ext}", tgt)
        s = write_script(tmp_path / "s.json", steps)
        out = tmp_path / "fit"
        code = main(["fit", "--script", str(s), "--source", str(tmp_path / f"src{ext}"),
                     "--target", str(tmp_path / f"tgt{ext}"), "--out", str(out), *extra])
        assert code == 0
        return out, json.loads((out / "fit_summary.json").read_text())

    def test_recovery_png(self, tmp_path):
        src = np.round(synth.synthetic_image(0, 128) * 255) / 255
        tgt = ops.apply_brightness(src, 0.3)
        out, summary = self._run(tmp_path, src, tgt, [{"op": "brightness", "params": "fit"}])
        assert summary["l1"] < 1e-3
        fitted = json.loads((out / "fitted_script.json").read_text())
        assert fitted["steps"][0]["params"][0] == pytest.approx(0.3, abs=1e-2)
        for name in ("output.png", "trace_step00.png", "trace_step01.png", "loss_history.csv"):
            assert (out / name).exists()

    def test_recovery_lossless(self, tmp_path):
        src = synth.synthetic_image(1, 128)
        tgt = ops.apply_tint(ops.apply_contrast(src, 0.4), [0.6, 1.4, 2, 1, 0.8, 1.2, 2.2, 0.7])
        _, summary = self._run(tmp_path, src, tgt, [
            {"op": "contrast", "params": "fit"}, {"op": "tint", "params": "fit"},
        ], ext=".npy")
        assert summary["l1"] < 1e-3

    def test_identity_target(self, tmp_path):
        src = synth.synthetic_image(2, 32)
        out, _ = self._run(tmp_path, src, src, [{"op": "saturation", "params": "fit"}])
        fitted = json.loads((out / "fitted_script.json").read_text())
        assert abs(fitted["steps"][0]["params"][0]) < 1e-2

    @pytest.mark.parametrize("lam", ["0", "1"])
    def test_lambda_flag_both_converge(self, tmp_path, lam):
        src = synth.synthetic_image(3, 48)
        tgt = ops.apply_saturation(ops.apply_brightness(src, 0.2), 0.3)
        steps = [{"op": "brightness", "params": "fit"}, {"op": "saturation", "params": "fit"}]
        _, summary = self._run(tmp_path, src, tgt, steps, ext=".npy", extra=["--lambda", lam])
        assert summary["lambda"] == float(lam)
        assert summary["l1"] < 1e-3

    def test_deterministic_outputs(self, tmp_path):
        src = synth.synthetic_image(4, 24)
        tgt = ops.apply_contrast(src, 0.3)
        a, _ = self._run(tmp_path / "a", src, tgt, [{"op": "contrast", "params": "fit"}], extra=["--iters", "50"])
        b, _ = self._run(tmp_path / "b", src, tgt, [{"op": "contrast", "params": "fit"}], extra=["--iters", "50"])
        for name in ("fitted_script.json", "output.png", "loss_history.csv", "fit_summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_size_mismatch(self, tmp_path, capsys):
        imgcore.write_image(tmp_path / "a.png", gray(0.2, 4))
        imgcore.write_image(tmp_path / "b.png", gray(0.2, 5))
        s = write_script(tmp_path / "s.json", [{"op": "brightness", "params": "fit"}])
        code = main(["fit", "--script", str(s), "--source", str(tmp_path / "a.png"),
                     "--target", str(tmp_path / "b.png"), "--out", str(tmp_path / "o")])
        assert code == 2 and "differ" in capsys.readouterr().err


class TestGround:
    def _bundle(self, tmp_path, inst):
        masks = []
        for r in range(inst.n_regions):
            m = np.zeros((6, 6))
            m[r] = 1.0
            imgcore.write_mask(tmp_path / f"r{r}.png", m)
            masks.append(f"r{r}.png")
        (tmp_path / "b.json").write_text(json.dumps(gr.bundle_dict(inst, masks)))
        return str(tmp_path / "b.json")

    def test_global_gate(self, tmp_path, rng, capsys):
        path = self._bundle(tmp_path, random_instance(rng, global_prob=0.9))
        assert main(["ground", path, "--out", str(tmp_path / "m.png")]) == 0
        assert json.loads(capsys.readouterr().out)["global"] is True
        np.testing.assert_array_equal(imgcore.read_mask(tmp_path / "m.png"), 1.0)

    def test_self_similar_region_selected(self, tmp_path, rng, capsys):
        inst = random_instance(rng, R=3, global_prob=0.1)
        for mi in range(3):
            inst.region_features[2, mi] = gr.conditioned_phrase_embedding(inst, mi)[1]
            inst.region_features[:2, mi] = -inst.region_features[2, mi]
        path = self._bundle(tmp_path, inst)
        main(["ground", path, "--out", str(tmp_path / "m.png")])
        doc = json.loads(capsys.readouterr().out)
        assert doc["selected"] == [2]
        mask = imgcore.read_mask(tmp_path / "m.png")
        assert mask[2].all() and mask.sum() == 6
        assert json.loads((tmp_path / "m.json").read_text())["selected"] == [2]

    def test_all_below_threshold(self, tmp_path, rng, capsys):
        path = self._bundle(tmp_path, random_instance(rng, R=4, global_prob=0.0))
        main(["ground", path, "--theta-ground", "0.999"])
        assert len(json.loads(capsys.readouterr().out)["selected"]) == 1

    def test_schema_violation(self, tmp_path, capsys):
        (tmp_path / "b.json").write_text('{"version": 1}')
        assert main(["ground", str(tmp_path / "b.json")]) == 2
        assert "b.json" in capsys.readouterr().err


def make_dataset(root, n=4):
    """Synthetic annotated pairs; returns (records, sources, targets)."""
    recs, srcs, tgts = [], [], []
    for i in range(n):
        pr = synth.single_op_pair("brightness", i, size=16)
        imgcore.write_image(root / f"s{i}.png", pr.source)
        imgcore.write_image(root / f"t{i}.png", pr.target)
        srcs.append(imgcore.read_image(root / f"s{i}.png"))
        tgts.append(imgcore.read_image(root / f"t{i}.png"))
        recs.append(ann.AnnotationRecord(f"p{i}", f"s{i}.png", f"t{i}.png", ["brighter"],
                                         [ann.OpAnnotation("brightness")]))
    ann.save_annotations(recs, root)
    return recs, srcs, tgts


class TestEval:
    def test_predictions_equal_targets(self, tmp_path, capsys):
        data, pred = tmp_path / "data", tmp_path / "pred"
        data.mkdir()
        _, _, tgts = make_dataset(data)
        for i, t in enumerate(tgts):
            imgcore.write_image(pred / f"p{i}.png", t)
        assert main(["eval", str(data), str(pred), "--out", str(tmp_path / "r.json")]) == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["l1"] == 0 and rep["sample_count"] == 4

    def test_predictions_equal_sources(self, tmp_path):
        data, pred = tmp_path / "data", tmp_path / "pred"
        data.mkdir()
        _, srcs, tgts = make_dataset(data)
        for i, s in enumerate(srcs):
            imgcore.write_image(pred / f"p{i}.png", s)
        main(["eval", str(data), str(pred), "--out", str(tmp_path / "r.json")])
        rep = json.loads((tmp_path / "r.json").read_text())
        expected = np.mean([np.abs(s - t).mean() for s, t in zip(srcs, tgts)])
        assert rep["l1"] == pytest.approx(expected, abs=1e-12)
        assert rep["no_edit_l1"] == pytest.approx(expected, abs=1e-12)

    def test_missing_prediction_skipped(self, tmp_path):
        data, pred = tmp_path / "data", tmp_path / "pred"
        data.mkdir()
        _, _, tgts = make_dataset(data, 3)
        imgcore.write_image(pred / "p0.png", tgts[0])
        main(["eval", str(data), str(pred), "--out", str(tmp_path / "r.json")])
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["sample_count"] == 1 and rep["skipped"] == 2

    def test_scores_and_masks(self, tmp_path):
        data, pred = tmp_path / "data", tmp_path / "pred"
        data.mkdir()
        _, _, tgts = make_dataset(data, 2)
        for i, t in enumerate(tgts):
            imgcore.write_image(pred / f"p{i}.png", t)
        imgcore.write_mask(pred / "m.png", np.ones((16, 16)))
        doc = {"records": {
            "p0": {"op_scores": {"brightness": 0.9, "tint": 0.1}, "masks": {"brightness": "m.png"}},
            "p1": {"op_scores": {"brightness": 0.3, "hue": 0.4}},
        }}
        (pred / "predictions.json").write_text(json.dumps(doc))
        main(["eval", str(data), str(pred), "--out", str(tmp_path / "r.json")])
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["roc_auc"] == pytest.approx(0.75)
        assert rep["f1"]["0.30"] == pytest.approx(0.8)  # tp 2, fp 1, fn 0
        assert rep["f1"]["0.35"] == pytest.approx(0.5)  # tp 1, fp 1, fn 1
        assert rep["mean_iou"] == 1.0 and rep["iou_count"] == 1

    def test_report_round_trip(self, tmp_path):
        data, pred = tmp_path / "data", tmp_path / "pred"
        data.mkdir()
        _, _, tgts = make_dataset(data, 2)
        for i, t in enumerate(tgts):
            imgcore.write_image(pred / f"p{i}.png", t)
        main(["eval", str(data), str(pred), "--out", str(tmp_path / "r.json")])
        from omnedit.metrics import EvalReport
        text = (tmp_path / "r.json").read_text()
        assert EvalReport.load(tmp_path / "r.json").dumps() == text


class TestStats:
    def test_empty_root(self, tmp_path, capsys):
        assert main(["stats", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 24
        assert all(line.split()[1:] == ["0", "0.00", "0.00", "0.00"] for line in lines[1:])

    def test_toy_root(self, tmp_path):
        for n in ("a.png", "b.png", "c.png", "d.png", "m.png"):
            imgcore.write_image(tmp_path / n, gray(0))
        recs = [
            ann.AnnotationRecord("1", "a.png", "b.png", ["x"], [ann.OpAnnotation("brightness")]),
            ann.AnnotationRecord("2", "c.png", "d.png", ["y"], [
                ann.OpAnnotation("brightness", True, ["m.png"]), ann.OpAnnotation("tint"),
            ]),
        ]
        ann.save_annotations(recs, tmp_path)
        main(["stats", str(tmp_path), "--out", str(tmp_path / "s.csv")])
        rows = (tmp_path / "s.csv").read_text().splitlines()
        assert rows[0] == "operation,occur,opr%,img%,local%"
        assert rows[1] == "brightness,2,66.67,100.00,50.00"


class TestGradcheck:
    @pytest.mark.parametrize("op", ["brightness", "tint"])
    def test_pass(self, op, capsys):
        assert main(["gradcheck", op]) == 0
        assert capsys.readouterr().out.strip().endswith(f"{op}: pass")

    def test_color_bg_rejected(self, capsys):
        assert main(["gradcheck", "color_bg"]) == 2
        assert "non-differentiable" in capsys.readouterr().err

    def test_unknown(self, capsys):
        assert main(["gradcheck", "blur"]) == 2
        assert "unknown operation" in capsys.readouterr().err
