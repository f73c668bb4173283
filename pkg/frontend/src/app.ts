// Browser shell: two canvases (input with overlays, live result), a tool
// palette, seed control, and the wiring between pointer events, the session
// stack, and the edit queue. All editing logic lives in session.ts and
// transport.ts; this file only pushes pixels and DOM events around.

import { EditQueue } from "./transport.js";
import {
  buildPayload,
  newSession,
  pushStroke,
  redo,
  setSeed,
  undo,
  type SessionState,
} from "./session.js";
import {
  makeStroke,
  type BrushSettings,
  type CopyPastePayloadWire,
  type Point,
  type StrokeModel,
  type Tool,
} from "./strokes.js";

interface Elements {
  input: HTMLCanvasElement;
  result: HTMLCanvasElement;
  tools: HTMLElement;
  seed: HTMLInputElement;
  color: HTMLInputElement;
  thickness: HTMLInputElement;
  undoBtn: HTMLButtonElement;
  redoBtn: HTMLButtonElement;
  badge: HTMLElement;
  file: HTMLInputElement;
}

function grab(): Elements {
  const byId = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing #${id} in the host page`);
    return el as T;
  };
  return {
    input: byId<HTMLCanvasElement>("input-canvas"),
    result: byId<HTMLCanvasElement>("result-canvas"),
    tools: byId<HTMLElement>("tool-palette"),
    seed: byId<HTMLInputElement>("seed"),
    color: byId<HTMLInputElement>("brush-color"),
    thickness: byId<HTMLInputElement>("brush-thickness"),
    undoBtn: byId<HTMLButtonElement>("undo"),
    redoBtn: byId<HTMLButtonElement>("redo"),
    badge: byId<HTMLElement>("stale-badge"),
    file: byId<HTMLInputElement>("photo"),
  };
}

function hexToRgb(hex: string): [number, number, number] {
  const v = parseInt(hex.replace("#", ""), 16);
  return [((v >> 16) & 255) / 255, ((v >> 8) & 255) / 255, (v & 255) / 255];
}

function b64Png(canvas: HTMLCanvasElement): string {
  return canvas.toDataURL("image/png").split(",")[1];
}

class App {
  private readonly el: Elements;
  private session: SessionState;
  private tool: Tool = "pen";
  private photo: HTMLImageElement | null = null;
  private readonly maskCanvas: HTMLCanvasElement;
  private drawing: Point[] = [];
  private sourceRect: { x0: number; y0: number; x1: number; y1: number } | null = null;
  private readonly queue: EditQueue;

  constructor(el: Elements) {
    this.el = el;
    this.session = newSession({ width: el.input.width, height: el.input.height });
    this.maskCanvas = document.createElement("canvas");
    this.maskCanvas.width = el.input.width;
    this.maskCanvas.height = el.input.height;
    this.queue = new EditQueue(
      {
        onResult: (result) => this.showResult(result.image),
        onError: () => this.setBadge("offline"),
      },
      { endpoint: "/v1/edit" },
    );
    this.bind();
  }

  private brush(): BrushSettings {
    return {
      rgb: hexToRgb(this.el.color.value || "#000000"),
      thickness: Number(this.el.thickness.value) || 4,
    };
  }

  private bind(): void {
    const canvas = this.el.input;
    canvas.addEventListener("pointerdown", (e) => {
      canvas.setPointerCapture(e.pointerId);
      this.drawing = [this.canvasPoint(e)];
    });
    canvas.addEventListener("pointermove", (e) => {
      if (this.drawing.length === 0) return;
      this.drawing.push(this.canvasPoint(e));
      this.paintOverlay();
    });
    canvas.addEventListener("pointerup", () => this.finishStroke());

    this.el.tools.addEventListener("click", (e) => {
      const btn = (e.target as HTMLElement).closest("[data-tool]");
      if (btn) this.tool = (btn as HTMLElement).dataset.tool as Tool;
    });
    this.el.undoBtn.addEventListener("click", () => {
      this.session = undo(this.session);
      this.afterEdit();
    });
    this.el.redoBtn.addEventListener("click", () => {
      this.session = redo(this.session);
      this.afterEdit();
    });
    this.el.seed.addEventListener("change", () => {
      this.session = setSeed(this.session, Math.trunc(Number(this.el.seed.value) || 0));
      this.afterEdit();
    });
    this.el.file.addEventListener("change", () => this.loadPhoto());
  }

  private canvasPoint(e: PointerEvent): Point {
    const rect = this.el.input.getBoundingClientRect();
    return {
      x: ((e.clientX - rect.left) / rect.width) * this.el.input.width,
      y: ((e.clientY - rect.top) / rect.height) * this.el.input.height,
    };
  }

  private finishStroke(): void {
    if (this.drawing.length === 0) return;
    const points = this.drawing;
    this.drawing = [];
    if (this.tool === "source") {
      // copy-paste flow: first drag picks the source box, second names the
      // destination; see pasteTo
      const xs = points.map((p) => p.x);
      const ys = points.map((p) => p.y);
      this.sourceRect = {
        x0: Math.min(...xs),
        y0: Math.min(...ys),
        x1: Math.max(...xs),
        y1: Math.max(...ys),
      };
      return;
    }
    const size = { width: this.el.input.width, height: this.el.input.height };
    const stroke = makeStroke(this.tool, points, size, this.brush());
    if (stroke.tool === "mask" || stroke.tool === "eraser") this.paintMask(stroke);
    this.session = pushStroke(this.session, stroke);
    this.afterEdit();
  }

  private paintMask(stroke: StrokeModel): void {
    const ctx = this.maskCanvas.getContext("2d");
    if (!ctx) return;
    ctx.strokeStyle = stroke.tool === "mask" ? "#ffffff" : "#000000";
    ctx.lineWidth = Math.max(stroke.thickness * 4, 8);
    ctx.lineCap = "round";
    ctx.beginPath();
    for (const [i, p] of stroke.points.entries()) {
      if (i === 0) ctx.moveTo(p.x, p.y);
      else ctx.lineTo(p.x, p.y);
    }
    ctx.stroke();
  }

  private paintOverlay(): void {
    const ctx = this.el.input.getContext("2d");
    if (!ctx || !this.photo) return;
    ctx.drawImage(this.photo, 0, 0);
    ctx.globalAlpha = 0.35;
    ctx.drawImage(this.maskCanvas, 0, 0);
    ctx.globalAlpha = 1.0;
    for (const s of this.session.strokes) this.paintStroke(ctx, s);
  }

  private paintStroke(ctx: CanvasRenderingContext2D, s: StrokeModel): void {
    if (s.tool === "mask") return;
    const [r, g, b] = s.rgb.map((v) => Math.round(v * 255));
    ctx.strokeStyle = s.tool === "eraser" ? "#888" : `rgb(${r},${g},${b})`;
    ctx.lineWidth = s.tool === "pen" || s.tool === "eraser" ? 1 : s.thickness;
    if (s.tool === "iris") {
      ctx.beginPath();
      ctx.arc(s.points[0].x, s.points[0].y, s.thickness, 0, Math.PI * 2);
      ctx.stroke();
      return;
    }
    ctx.beginPath();
    for (const [i, p] of s.points.entries()) {
      if (i === 0) ctx.moveTo(p.x, p.y);
      else ctx.lineTo(p.x, p.y);
    }
    ctx.stroke();
  }

  private afterEdit(): void {
    this.paintOverlay();
    if (!this.photo) return;
    this.setBadge("updating");
    this.queue.submit(
      buildPayload(this.session, {
        image: this.photoB64(),
        mask: b64Png(this.maskCanvas),
      }),
    );
  }

  private photoB64(): string {
    const scratch = document.createElement("canvas");
    scratch.width = this.el.input.width;
    scratch.height = this.el.input.height;
    const ctx = scratch.getContext("2d");
    if (!ctx || !this.photo) throw new Error("no photo loaded");
    ctx.drawImage(this.photo, 0, 0);
    return b64Png(scratch);
  }

  pasteTo(target: Point): void {
    if (!this.sourceRect || !this.photo) return;
    const r = this.sourceRect;
    const payload: CopyPastePayloadWire = {
      source: this.photoB64(),
      source_mask: this.rectMaskB64(r),
      target: this.photoB64(),
      offset: [
        Math.round(target.x - (r.x0 + r.x1) / 2),
        Math.round(target.y - (r.y0 + r.y1) / 2),
      ],
      noise_seed: this.session.noiseSeed,
    };
    fetch("/v1/copy-paste", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    })
      .then(async (resp) => {
        if (!resp.ok) throw new Error(`copy-paste failed: HTTP ${resp.status}`);
        const body = (await resp.json()) as { image: string };
        this.showResult(body.image);
      })
      .catch(() => this.setBadge("offline"));
  }

  private rectMaskB64(r: { x0: number; y0: number; x1: number; y1: number }): string {
    const scratch = document.createElement("canvas");
    scratch.width = this.el.input.width;
    scratch.height = this.el.input.height;
    const ctx = scratch.getContext("2d");
    if (!ctx) throw new Error("2d context unavailable");
    ctx.fillStyle = "#000";
    ctx.fillRect(0, 0, scratch.width, scratch.height);
    ctx.fillStyle = "#fff";
    ctx.fillRect(r.x0, r.y0, r.x1 - r.x0, r.y1 - r.y0);
    return b64Png(scratch);
  }

  private showResult(imageB64: string): void {
    const img = new Image();
    img.onload = () => {
      const ctx = this.el.result.getContext("2d");
      if (ctx) ctx.drawImage(img, 0, 0);
      this.setBadge("");
    };
    img.src = `data:image/png;base64,${imageB64}`;
  }

  private setBadge(text: string): void {
    this.el.badge.textContent = text;
    this.el.badge.hidden = text === "";
  }

  private loadPhoto(): void {
    const file = this.el.file.files?.[0];
    if (!file) return;
    const img = new Image();
    img.onload = () => {
      this.photo = img;
      this.el.input.width = img.width;
      this.el.input.height = img.height;
      this.el.result.width = img.width;
      this.el.result.height = img.height;
      this.maskCanvas.width = img.width;
      this.maskCanvas.height = img.height;
      this.session = newSession({ width: img.width, height: img.height });
      this.paintOverlay();
    };
    img.src = URL.createObjectURL(file);
  }
}

declare global {
  interface Window {
    sketchfillApp?: App;
  }
}

export function start(): App {
  const app = new App(grab());
  window.sketchfillApp = app;
  return app;
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  start();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => start());
}
