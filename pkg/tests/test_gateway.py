import base64
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from synth import face_image

import sketchfill.editor as editor
from sketchfill.raster import BinaryMask, RasterImage, load_image, save_image, save_mask
from sketchfill.server import create_app


def b64_image(img: RasterImage) -> str:
    buf = io.BytesIO()
    save_image(img, buf)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_mask(mask: BinaryMask) -> str:
    buf = io.BytesIO()
    save_mask(mask, buf)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(b64: str) -> RasterImage:
    return load_image(io.BytesIO(base64.b64decode(b64)))


@pytest.fixture(scope="module")
def client(editor_model, config):
    app = create_app(editor_model, config)
    return TestClient(app, raise_server_exceptions=False)


@pytest.fixture(scope="module")
def face():
    return face_image(64, ((24, 32), (40, 32)), seed=21)


@pytest.fixture(scope="module")
def base_payload(face):
    bits = np.zeros((64, 64), dtype=bool)
    bits[20:44, 20:44] = True
    return {
        "image": b64_image(face),
        "mask": b64_mask(BinaryMask(bits)),
        "pen_strokes": [{"points": [[22.0, 30.0], [40.0, 30.0]]}],
        "color_strokes": [{"points": [[30.0, 36.0]], "rgb": [0.8, 0.1, 0.1]}],
        "iris_circles": [],
        "noise_seed": 3,
    }


class TestHealth:
    def test_reports_model_hash(self, client, editor_model):
        r = client.get("/v1/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "model": editor_model.content_hash}


class TestEditEndpoint:
    def test_roundtrip(self, client, base_payload, face):
        r = client.post("/v1/edit", json=base_payload)
        assert r.status_code == 200
        out = decode_image(r.json()["image"])
        assert (out.width, out.height) == (64, 64)
        # out-of-mask pixels survive the png quantization bit-exact
        orig = np.round(face.to_rgb().data * 255.0)
        got = np.round(out.data * 255.0)
        outside = np.ones((64, 64), dtype=bool)
        outside[20:44, 20:44] = False
        assert np.array_equal(got[outside], orig[outside])

    def test_deterministic(self, client, base_payload):
        a = client.post("/v1/edit", json=base_payload)
        b = client.post("/v1/edit", json=base_payload)
        assert a.json()["image"] == b.json()["image"]

    def test_noise_seed_changes_output(self, client, base_payload):
        a = client.post("/v1/edit", json=base_payload)
        other = dict(base_payload, noise_seed=99)
        b = client.post("/v1/edit", json=other)
        assert a.json()["image"] != b.json()["image"]

    def test_exactly_one_forward(self, client, base_payload):
        before = editor.forward_calls
        client.post("/v1/edit", json=base_payload)
        assert editor.forward_calls == before + 1


class TestBadRequests:
    def test_malformed_json_is_400(self, client):
        r = client.post("/v1/edit", content=b"{not json", headers={"content-type": "application/json"})
        assert r.status_code == 400
        assert r.json()["error"] == "invalid payload"

    def test_missing_field_names_path(self, client, base_payload):
        p = {k: v for k, v in base_payload.items() if k != "mask"}
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 400
        assert r.json()["field"] == "mask"

    def test_wrong_type_names_path(self, client, base_payload):
        p = dict(base_payload, noise_seed="many")
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 400
        assert r.json()["field"] == "noise_seed"

    def test_unknown_field_rejected(self, client, base_payload):
        p = dict(base_payload, extra_knob=1)
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 400
        assert "extra_knob" in r.json()["field"]

    def test_undecodable_image_names_field(self, client, base_payload):
        p = dict(base_payload, image="definitely-not-base64!!")
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 400
        assert r.json()["field"] == "image"

    def test_bad_points_shape_names_indexed_path(self, client, base_payload):
        p = dict(base_payload, pen_strokes=[{"points": [[1.0, 2.0, 3.0]]}])
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 400
        assert r.json()["field"] == "pen_strokes.0.points"

    def test_nested_type_error_names_indexed_path(self, client, base_payload):
        p = dict(base_payload, color_strokes=[{"points": [[1.0, 2.0]], "rgb": [0.1, 0.2]}])
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 400
        assert r.json()["field"].startswith("color_strokes.0.rgb")


class TestSemanticErrors:
    def test_empty_mask_is_422(self, client, base_payload):
        empty = BinaryMask(np.zeros((64, 64), dtype=bool))
        p = dict(base_payload, mask=b64_mask(empty))
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 422
        assert "no set bits" in r.json()["error"]

    def test_geometry_outside_image_is_422(self, client, base_payload):
        p = dict(base_payload, pen_strokes=[{"points": [[10.0, 99.0]]}])
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 422

    def test_size_mismatch_is_422(self, client, base_payload, face):
        small = RasterImage(face.to_rgb().data[:32, :32])
        p = dict(base_payload, image=b64_image(small))
        r = client.post("/v1/edit", json=p)
        assert r.status_code == 422


class TestCrash:
    def test_500_carries_only_an_id(self, client, base_payload, monkeypatch):
        import sketchfill.server as server

        def boom(*a, **k):
            raise RuntimeError("secret internal detail")

        monkeypatch.setattr(server, "edit", boom)
        r = client.post("/v1/edit", json=base_payload)
        assert r.status_code == 500
        body = r.json()
        assert set(body) == {"error_id"}
        assert len(body["error_id"]) == 32
        assert "secret" not in r.text


class TestPreview:
    def test_returns_layers_without_generator(self, client, base_payload):
        before = editor.forward_calls
        r = client.post("/v1/sketch-preview", json=base_payload)
        assert r.status_code == 200
        assert editor.forward_calls == before
        sketch = decode_image(r.json()["sketch"])
        color = decode_image(r.json()["color"])
        assert sketch.data.any()
        assert color.data.any()

    def test_preview_matches_edit_conditioning(self, client, base_payload, editor_model, config):
        from sketchfill.server import EditPayload, _to_edit_request
        from sketchfill.editor import rasterize_user_input

        r = client.post("/v1/sketch-preview", json=base_payload)
        got_sketch = decode_image(r.json()["sketch"]).data.mean(axis=2) > 0.5
        req = _to_edit_request(EditPayload(**base_payload))
        stack = rasterize_user_input(req, config)
        np.testing.assert_array_equal(got_sketch, stack[3].astype(bool))


class TestCopyPasteEndpoint:
    def test_roundtrip(self, client, face):
        bits = np.zeros((64, 64), dtype=bool)
        bits[20:40, 16:32] = True
        p = {
            "source": b64_image(face),
            "source_mask": b64_mask(BinaryMask(bits)),
            "target": b64_image(face),
            "offset": [8, 4],
            "noise_seed": 1,
        }
        r = client.post("/v1/copy-paste", json=p)
        assert r.status_code == 200
        out = decode_image(r.json()["image"])
        orig = np.round(face.to_rgb().data * 255.0)
        got = np.round(out.data * 255.0)
        pasted = np.zeros((64, 64), dtype=bool)
        pasted[24:44, 24:40] = True
        assert np.array_equal(got[~pasted], orig[~pasted])

    def test_offset_out_of_range_is_422(self, client, face):
        bits = np.zeros((64, 64), dtype=bool)
        bits[20:40, 16:32] = True
        p = {
            "source": b64_image(face),
            "source_mask": b64_mask(BinaryMask(bits)),
            "target": b64_image(face),
            "offset": [60, 0],
        }
        r = client.post("/v1/copy-paste", json=p)
        assert r.status_code == 422
        assert "outside" in r.json()["error"]


def run_cli(*args, **kw):
    return subprocess.run(
        [sys.executable, "-m", "sketchfill.cli", *args],
        capture_output=True,
        text=True,
        **kw,
    )


class TestCli:
    def test_missing_file_is_clean_error(self, tmp_path):
        r = run_cli(
            "edit",
            "--image", str(tmp_path / "nope.png"),
            "--mask", str(tmp_path / "m.png"),
            "--ckpt", str(tmp_path / "c.fsck"),
            "--out", str(tmp_path / "o.png"),
        )
        assert r.returncode == 1
        assert r.stderr.startswith("error: no such file")
        assert "Traceback" not in r.stderr

    def test_gradcheck_passes(self):
        r = run_cli("gradcheck")
        assert r.returncode == 0, r.stdout + r.stderr
        lines = [l for l in r.stdout.splitlines() if l.strip()]
        assert all(l.startswith("ok") for l in lines)
        assert len(lines) >= 20

    def test_report_renders_figures(self, tmp_path):
        csv = tmp_path / "metrics.csv"
        csv.write_text(
            "step,d_loss,g_loss,rec,gp,drift\n"
            "0,1.0,2.0,0.5,0.9,0.01\n"
            "1,0.9,1.9,0.45,0.8,0.01\n"
        )
        r = run_cli("report", "--metrics", str(csv), "--out", str(tmp_path))
        assert r.returncode == 0, r.stderr
        assert (tmp_path / "loss_curves.png").exists()
        assert (tmp_path / "loss_terms.png").exists()
        assert "loss_curves.png" in r.stdout

    def test_bad_metrics_is_clean_error(self, tmp_path):
        csv = tmp_path / "metrics.csv"
        csv.write_text("step,what\n0,1\n")
        r = run_cli("report", "--metrics", str(csv))
        assert r.returncode == 1
        assert r.stderr.startswith("error:")


FIXTURES = Path(__file__).resolve().parent.parent / "frontend" / "fixtures"


@pytest.mark.skipif(not FIXTURES.exists(), reason="frontend fixtures not built")
class TestFrontendContract:
    """Payloads the UI emits must pass the gateway's strict validation."""

    def test_fixture_payloads_accepted(self, client, base_payload):
        for path in sorted(FIXTURES.glob("*.json")):
            doc = json.loads(path.read_text())
            payload = dict(doc["payload"])
            # fixtures carry geometry only; images are supplied by the caller
            payload["image"] = base_payload["image"]
            payload["mask"] = base_payload["mask"]
            r = client.post(doc.get("endpoint", "/v1/edit"), json=payload)
            assert r.status_code == 200, f"{path.name}: {r.status_code} {r.text}"
