// Zod mirror of the gateway's request/response schemas. The contract tests
// parse every payload the session builder can emit through these before the
// fixtures ever reach the backend; a drift between this file and the
// gateway's validator shows up as a failing fixture replay on the Python
// side, not as a silent 400 in production.

import { z } from "zod";

const coord = z.number().finite();
const pointPair = z.tuple([coord, coord]);
const unit = z.number().min(0).max(1);
const rgb = z.tuple([unit, unit, unit]);

export const penStrokeSchema = z.strictObject({
  points: z.array(pointPair).min(1),
  erase: z.boolean().default(false),
});

export const colorStrokeSchema = z.strictObject({
  points: z.array(pointPair).min(1),
  rgb,
  thickness: z.number().positive().default(4),
});

export const irisCircleSchema = z.strictObject({
  center: pointPair,
  radius: z.number().positive(),
  rgb,
});

export const editPayloadSchema = z.strictObject({
  image: z.string().min(1),
  mask: z.string().min(1),
  pen_strokes: z.array(penStrokeSchema).default([]),
  color_strokes: z.array(colorStrokeSchema).default([]),
  iris_circles: z.array(irisCircleSchema).default([]),
  noise_seed: z.number().int().default(0),
});

export const copyPastePayloadSchema = z.strictObject({
  source: z.string().min(1),
  source_mask: z.string().min(1),
  target: z.string().min(1),
  offset: z.tuple([z.number().int(), z.number().int()]).default([0, 0]),
  noise_seed: z.number().int().default(0),
});

export const editResponseSchema = z.strictObject({
  image: z.string().min(1),
});

export const previewResponseSchema = z.strictObject({
  sketch: z.string().min(1),
  color: z.string().min(1),
});

export const healthResponseSchema = z.strictObject({
  status: z.literal("ok"),
  model: z.string().min(1),
});

export type EditPayload = z.infer<typeof editPayloadSchema>;
export type CopyPastePayload = z.infer<typeof copyPastePayloadSchema>;
