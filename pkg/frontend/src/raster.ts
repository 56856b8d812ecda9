/** Pure stroke rasterizer: StrokeSet -> white-on-black grayscale PNG.
 *
 * The retrieval model was trained on white strokes over a black background,
 * so the raster uses that polarity. Output bytes depend only on the stroke
 * geometry and the target size (no clock, no RNG, no platform canvas).
 */

import { encodeGrayPng } from "./png.js";
import type { StrokePoint, StrokeSet } from "./strokes.js";

const SUPERSAMPLE = 2;
/** stroke radius in target-resolution pixels */
const STROKE_RADIUS = 1.1;

function distanceToSegment(px: number, py: number, a: StrokePoint, b: StrokePoint): number {
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const lengthSq = dx * dx + dy * dy;
  let t = 0;
  if (lengthSq > 0) {
    t = Math.max(0, Math.min(1, ((px - a.x) * dx + (py - a.y) * dy) / lengthSq));
  }
  const cx = a.x + t * dx;
  const cy = a.y + t * dy;
  return Math.hypot(px - cx, py - cy);
}

/**
 * Rasterize the strokes to a square grayscale PNG of side targetSize.
 * Throws on an empty stroke set; callers gate the retrieve action instead.
 */
export function rasterize(set: StrokeSet, targetSize: number): Uint8Array {
  if (set.strokes.length === 0) {
    throw new Error("cannot rasterize an empty stroke set");
  }
  if (!Number.isInteger(targetSize) || targetSize <= 0) {
    throw new RangeError(`target size must be a positive integer, got ${targetSize}`);
  }

  const side = targetSize * SUPERSAMPLE;
  const scale = side / set.canvasSize;
  const radius = STROKE_RADIUS * SUPERSAMPLE;
  const coverage = new Float64Array(side * side);

  for (const stroke of set.strokes) {
    const scaled = stroke.map((p) => ({ x: p.x * scale, y: p.y * scale, t: p.t }));
    const segments: Array<[StrokePoint, StrokePoint]> =
      scaled.length === 1
        ? [[scaled[0]!, scaled[0]!]]
        : scaled.slice(1).map((p, i) => [scaled[i]!, p]);

    for (const [a, b] of segments) {
      const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x) - radius - 1));
      const x1 = Math.min(side - 1, Math.ceil(Math.max(a.x, b.x) + radius + 1));
      const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y) - radius - 1));
      const y1 = Math.min(side - 1, Math.ceil(Math.max(a.y, b.y) + radius + 1));
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          const d = distanceToSegment(x + 0.5, y + 0.5, a, b);
          const c = Math.max(0, Math.min(1, radius + 0.5 - d));
          const i = y * side + x;
          if (c > coverage[i]!) coverage[i] = c;
        }
      }
    }
  }

  // box-filter the supersampled coverage down to the target grid
  const pixels = new Uint8Array(targetSize * targetSize);
  const area = SUPERSAMPLE * SUPERSAMPLE;
  for (let y = 0; y < targetSize; y++) {
    for (let x = 0; x < targetSize; x++) {
      let sum = 0;
      for (let sy = 0; sy < SUPERSAMPLE; sy++) {
        for (let sx = 0; sx < SUPERSAMPLE; sx++) {
          sum += coverage[(y * SUPERSAMPLE + sy) * side + x * SUPERSAMPLE + sx]!;
        }
      }
      pixels[y * targetSize + x] = Math.round((255 * sum) / area);
    }
  }
  return encodeGrayPng(pixels, targetSize, targetSize);
}
