import { describe, expect, it } from "vitest";

import {
  copyPastePayloadSchema,
  editPayloadSchema,
  editResponseSchema,
  healthResponseSchema,
} from "../src/schema.js";

const OK = {
  image: "aW1n",
  mask: "bWFzaw==",
  pen_strokes: [{ points: [[22, 30], [40, 30]], erase: false }],
  color_strokes: [{ points: [[30, 36]], rgb: [0.8, 0.1, 0.1], thickness: 4 }],
  iris_circles: [{ center: [32, 26], radius: 3, rgb: [0.2, 0.4, 0.6] }],
  noise_seed: 3,
};

describe("edit payload schema", () => {
  it("accepts the canonical payload", () => {
    expect(editPayloadSchema.safeParse(OK).success).toBe(true);
  });

  it("fills the same defaults the gateway does", () => {
    const parsed = editPayloadSchema.parse({ image: "aW1n", mask: "bWFzaw==" });
    expect(parsed.pen_strokes).toEqual([]);
    expect(parsed.color_strokes).toEqual([]);
    expect(parsed.iris_circles).toEqual([]);
    expect(parsed.noise_seed).toBe(0);
  });

  it("rejects what the gateway rejects", () => {
    const bad = [
      { ...OK, extra_knob: 1 }, // unknown field
      { ...OK, pen_strokes: [{ points: [], erase: false }] }, // empty stroke
      { ...OK, pen_strokes: [{ points: [[1, 2, 3]], erase: false }] }, // not a pair
      { ...OK, color_strokes: [{ points: [[1, 1]], rgb: [0.5, 0.5], thickness: 4 }] },
      { ...OK, color_strokes: [{ points: [[1, 1]], rgb: [0.5, 0.5, 1.5], thickness: 4 }] },
      { ...OK, iris_circles: [{ center: [1, 1], radius: 0, rgb: [0, 0, 0] }] },
      { ...OK, noise_seed: 0.5 },
      { ...OK, image: "" },
    ];
    for (const payload of bad) {
      expect(editPayloadSchema.safeParse(payload).success, JSON.stringify(payload)).toBe(false);
    }
  });
});

describe("other schemas", () => {
  it("copy-paste payload round-trips", () => {
    const p = copyPastePayloadSchema.parse({
      source: "YQ==",
      source_mask: "Yg==",
      target: "Yw==",
      offset: [8, -4],
    });
    expect(p.offset).toEqual([8, -4]);
    expect(p.noise_seed).toBe(0);
    expect(copyPastePayloadSchema.safeParse({ source: "YQ==" }).success).toBe(false);
  });

  it("response shapes are exact", () => {
    expect(editResponseSchema.safeParse({ image: "aW1n" }).success).toBe(true);
    expect(editResponseSchema.safeParse({ image: "aW1n", extra: 1 }).success).toBe(false);
    expect(healthResponseSchema.safeParse({ status: "ok", model: "abc" }).success).toBe(true);
    expect(healthResponseSchema.safeParse({ status: "down", model: "abc" }).success).toBe(false);
  });
});
