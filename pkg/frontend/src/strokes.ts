// Stroke model shared by every tool. A stroke is recorded in canvas pixels
// and serializes losslessly into the wire schema (see session.buildPayload).

export type Tool = "mask" | "pen" | "eraser" | "color" | "iris" | "source";

export interface Point {
  x: number;
  y: number;
}

export type Rgb = [number, number, number];

export interface StrokeModel {
  tool: Tool;
  points: Point[]; // at least one; clamped into the image
  rgb: Rgb;
  thickness: number;
  erase: boolean;
}

export interface CanvasSize {
  width: number;
  height: number;
}

// Wire shapes, field for field what the gateway validates. image and mask
// are base64 PNGs painted by the canvas layer, not by the stroke model.
export interface PenStrokeWire {
  points: [number, number][];
  erase: boolean;
}

export interface ColorStrokeWire {
  points: [number, number][];
  rgb: Rgb;
  thickness: number;
}

export interface IrisWire {
  center: [number, number];
  radius: number;
  rgb: Rgb;
}

export interface EditPayloadWire {
  image: string;
  mask: string;
  pen_strokes: PenStrokeWire[];
  color_strokes: ColorStrokeWire[];
  iris_circles: IrisWire[];
  noise_seed: number;
}

export interface CopyPastePayloadWire {
  source: string;
  source_mask: string;
  target: string;
  offset: [number, number];
  noise_seed: number;
}

// The backend accepts coordinates in [0, side-1]; everything drawn past the
// edge is pulled back onto it rather than rejected.
export function clampPoint(p: Point, size: CanvasSize): Point {
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  return { x: clamp(p.x, size.width - 1), y: clamp(p.y, size.height - 1) };
}

function clampRgb(rgb: Rgb): Rgb {
  const unit = (v: number) => Math.min(Math.max(v, 0), 1);
  return [unit(rgb[0]), unit(rgb[1]), unit(rgb[2])];
}

export interface BrushSettings {
  rgb: Rgb;
  thickness: number;
}

export function makeStroke(
  tool: Tool,
  points: Point[],
  size: CanvasSize,
  brush: BrushSettings,
): StrokeModel {
  if (points.length < 1) {
    throw new Error(`${tool} stroke needs at least one point`);
  }
  if (!(brush.thickness > 0)) {
    throw new Error(`brush thickness must be positive, got ${brush.thickness}`);
  }
  return {
    tool,
    points: points.map((p) => clampPoint(p, size)),
    rgb: clampRgb(brush.rgb),
    thickness: brush.thickness,
    erase: tool === "eraser",
  };
}
