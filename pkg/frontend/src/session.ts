// Edit session: an undoable stroke list plus the payload builder.
//
// Everything here is a pure function over SessionState, so undo/redo is a
// stack discipline and nothing else: replaying the same strokes through
// pushStroke always rebuilds byte-identical payloads. The DOM layer owns
// canvases and encodings; this module never touches either.

import type {
  CanvasSize,
  EditPayloadWire,
  StrokeModel,
  Tool,
} from "./strokes.js";

export interface SessionState {
  size: CanvasSize;
  strokes: StrokeModel[];
  undone: StrokeModel[];
  noiseSeed: number;
}

export function newSession(size: CanvasSize, noiseSeed = 0): SessionState {
  if (!(size.width >= 1) || !(size.height >= 1)) {
    throw new Error(`canvas must be at least 1x1, got ${size.width}x${size.height}`);
  }
  return { size, strokes: [], undone: [], noiseSeed };
}

// A new stroke invalidates the redo branch, like every paint program.
export function pushStroke(state: SessionState, stroke: StrokeModel): SessionState {
  return { ...state, strokes: [...state.strokes, stroke], undone: [] };
}

export function undo(state: SessionState): SessionState {
  if (state.strokes.length === 0) return state;
  const strokes = state.strokes.slice(0, -1);
  const undone = [...state.undone, state.strokes[state.strokes.length - 1]];
  return { ...state, strokes, undone };
}

export function redo(state: SessionState): SessionState {
  if (state.undone.length === 0) return state;
  const undone = state.undone.slice(0, -1);
  const strokes = [...state.strokes, state.undone[state.undone.length - 1]];
  return { ...state, strokes, undone };
}

export function setSeed(state: SessionState, noiseSeed: number): SessionState {
  if (!Number.isInteger(noiseSeed)) {
    throw new Error(`noise seed must be an integer, got ${noiseSeed}`);
  }
  return { ...state, noiseSeed };
}

// Rebuild a session from a recorded stroke list; used by tests to prove the
// stack is pure and by the app to restore a session after reload.
export function replay(
  size: CanvasSize,
  strokes: readonly StrokeModel[],
  noiseSeed = 0,
): SessionState {
  let state = newSession(size, noiseSeed);
  for (const s of strokes) state = pushStroke(state, s);
  return state;
}

const pair = (p: { x: number; y: number }): [number, number] => [p.x, p.y];

export interface CanvasLayers {
  image: string; // base64 PNG of the loaded photo
  mask: string; // base64 PNG of the mask canvas (white = edit region)
}

// Serialize the visible strokes in draw order. Mask strokes shape the mask
// canvas, so they carry no geometry of their own here; the iris tool stores
// its center as the stroke's single point and its radius as the thickness.
export function buildPayload(state: SessionState, layers: CanvasLayers): EditPayloadWire {
  const payload: EditPayloadWire = {
    image: layers.image,
    mask: layers.mask,
    pen_strokes: [],
    color_strokes: [],
    iris_circles: [],
    noise_seed: state.noiseSeed,
  };
  for (const s of state.strokes) {
    switch (s.tool) {
      case "pen":
      case "eraser":
        payload.pen_strokes.push({ points: s.points.map(pair), erase: s.erase });
        break;
      case "color":
        payload.color_strokes.push({
          points: s.points.map(pair),
          rgb: s.rgb,
          thickness: s.thickness,
        });
        break;
      case "iris":
        payload.iris_circles.push({
          center: pair(s.points[0]),
          radius: s.thickness,
          rgb: s.rgb,
        });
        break;
      case "mask":
      case "source":
        // both shape canvases (mask layer, copy-paste box), not stroke geometry
        break;
    }
  }
  return payload;
}

export function payloadBytes(payload: EditPayloadWire): string {
  return JSON.stringify(payload);
}

export function activeTools(state: SessionState): Set<Tool> {
  return new Set(state.strokes.map((s) => s.tool));
}
