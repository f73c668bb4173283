"""Stateless HTTP editing API.

One checkpoint is loaded at startup and shared read-only across handlers;
every request carries its own images, so nothing persists between calls.
Error mapping: structurally malformed payloads (bad JSON shape, undecodable
base64/PNG) get 400 with the offending field path, semantically invalid
requests (empty mask, geometry outside the image, size mismatch) get 422,
and anything unexpected gets a 500 carrying only an opaque error id.
"""

from __future__ import annotations

import base64
import binascii
import io
import logging
import uuid

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .config import Config
from .editor import (
    ColorStroke,
    CopyPasteRequest,
    EditRequest,
    IrisCircle,
    LoadedModel,
    PenStroke,
    copy_paste,
    edit,
    rasterize_user_input,
)
from .raster import BinaryMask, RasterImage, load_image, save_image, save_mask

log = logging.getLogger("sketchfill.server")


class BadField(Exception):
    """Malformed content inside a structurally valid JSON body."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class PenStrokeIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    points: list = Field(min_length=1)
    erase: bool = False


class ColorStrokeIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    points: list = Field(min_length=1)
    rgb: list = Field(min_length=3, max_length=3)
    thickness: float = 4.0


class IrisIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    center: list = Field(min_length=2, max_length=2)
    radius: float
    rgb: list = Field(min_length=3, max_length=3)


class EditPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image: str
    mask: str
    pen_strokes: list[PenStrokeIn] = ()
    color_strokes: list[ColorStrokeIn] = ()
    iris_circles: list[IrisIn] = ()
    noise_seed: int = 0


class CopyPastePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    source: str
    source_mask: str
    target: str
    offset: list = Field(default=(0, 0), min_length=2, max_length=2)
    noise_seed: int = 0


def _decode_image(b64: str, field: str) -> RasterImage:
    try:
        raw = base64.b64decode(b64, validate=True)
        return load_image(io.BytesIO(raw))
    except (binascii.Error, OSError, ValueError) as e:
        raise BadField(field, f"not a base64 PNG image: {e}") from e


def _decode_mask(b64: str, field: str) -> BinaryMask:
    img = _decode_image(b64, field)
    return BinaryMask(img.data.mean(axis=2) > 0.5)


def _encode_image(img: RasterImage) -> str:
    buf = io.BytesIO()
    save_image(img, buf)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _encode_mask(mask: BinaryMask) -> str:
    buf = io.BytesIO()
    save_mask(mask, buf)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _points(raw, field: str) -> np.ndarray:
    try:
        pts = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise BadField(field, f"points must be numeric pairs: {e}") from e
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise BadField(field, f"points must be [x,y] pairs, got shape {pts.shape}")
    return pts


def _to_edit_request(p: EditPayload) -> EditRequest:
    return EditRequest(
        image=_decode_image(p.image, "image"),
        mask=_decode_mask(p.mask, "mask"),
        pen_strokes=tuple(
            PenStroke(points=_points(s.points, f"pen_strokes.{i}.points"), erase=s.erase)
            for i, s in enumerate(p.pen_strokes)
        ),
        color_strokes=tuple(
            ColorStroke(
                points=_points(s.points, f"color_strokes.{i}.points"),
                rgb=tuple(float(v) for v in s.rgb),
                thickness=float(s.thickness),
            )
            for i, s in enumerate(p.color_strokes)
        ),
        iris_circles=tuple(
            IrisCircle(
                center=(float(c.center[0]), float(c.center[1])),
                radius=float(c.radius),
                rgb=tuple(float(v) for v in c.rgb),
            )
            for c in p.iris_circles
        ),
        noise_seed=p.noise_seed,
    )


def create_app(model: LoadedModel, config: Config) -> FastAPI:
    app = FastAPI(title="sketchfill", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def on_validation(request: Request, exc: RequestValidationError):
        err = exc.errors()[0]
        field = ".".join(str(p) for p in err["loc"] if p != "body")
        return JSONResponse(
            status_code=400, content={"error": "invalid payload", "field": field, "detail": err["msg"]}
        )

    @app.exception_handler(BadField)
    async def on_bad_field(request: Request, exc: BadField):
        return JSONResponse(
            status_code=400,
            content={"error": "invalid payload", "field": exc.field, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def on_semantic(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(Exception)
    async def on_crash(request: Request, exc: Exception):
        error_id = uuid.uuid4().hex
        log.exception("request failed, error id %s", error_id)
        return JSONResponse(status_code=500, content={"error_id": error_id})

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "model": model.content_hash}

    @app.post("/v1/edit")
    async def edit_endpoint(payload: EditPayload):
        req = _to_edit_request(payload)
        out = edit(req, model, config)
        return {"image": _encode_image(out)}

    @app.post("/v1/copy-paste")
    async def copy_paste_endpoint(payload: CopyPastePayload):
        req = CopyPasteRequest(
            source=_decode_image(payload.source, "source"),
            source_mask=_decode_mask(payload.source_mask, "source_mask"),
            target=_decode_image(payload.target, "target"),
            offset=(int(payload.offset[0]), int(payload.offset[1])),
            noise_seed=payload.noise_seed,
        )
        out = copy_paste(req, model, config)
        return {"image": _encode_image(out)}

    @app.post("/v1/sketch-preview")
    async def sketch_preview(payload: EditPayload):
        # Conditioning channels only; never runs the generator.
        req = _to_edit_request(payload)
        stack = rasterize_user_input(req, config)
        sketch = BinaryMask(stack[3].astype(bool))
        color = RasterImage(stack[4:7].transpose(1, 2, 0).astype(np.float64))
        return {"sketch": _encode_mask(sketch), "color": _encode_image(color)}

    return app


def serve(model: LoadedModel, config: Config, host: str, port: int):
    import uvicorn

    uvicorn.run(create_app(model, config), host=host, port=port, log_level="info")
