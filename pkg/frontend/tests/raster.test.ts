import { describe, expect, it } from "vitest";

import { decodeGrayPng } from "../src/png.js";
import { rasterize } from "../src/raster.js";
import { StrokeSet, beginStroke, emptyStrokeSet, extendStroke } from "../src/strokes.js";

function line(canvas: number, points: Array<[number, number]>): StrokeSet {
  let set = emptyStrokeSet(canvas);
  points.forEach(([x, y], i) => {
    set = i === 0 ? beginStroke(set, { x, y, t: i }) : extendStroke(set, { x, y, t: i });
  });
  return set;
}

describe("rasterize", () => {
  it("draws a horizontal stroke as white pixels on a black background", () => {
    const set = line(256, [
      [20, 128],
      [236, 128],
    ]);
    const { width, height, pixels } = decodeGrayPng(rasterize(set, 64));
    expect(width).toBe(64);
    expect(height).toBe(64);

    // full intensity along the stroke path
    for (const x of [8, 20, 32, 44, 56]) {
      expect(pixels[32 * 64 + x]).toBe(255);
    }
    // corners and rows far from the stroke stay black
    expect(pixels[0]).toBe(0);
    expect(pixels[63]).toBe(0);
    expect(pixels[63 * 64]).toBe(0);
    expect(pixels[63 * 64 + 63]).toBe(0);
    for (let x = 0; x < 64; x++) {
      expect(pixels[10 * 64 + x]).toBe(0);
      expect(pixels[54 * 64 + x]).toBe(0);
    }
  });

  it("renders a single-point stroke as a visible dot", () => {
    const set = line(256, [[128, 128]]);
    const { pixels } = decodeGrayPng(rasterize(set, 64));
    expect(pixels[32 * 64 + 32]).toBeGreaterThan(200);
    expect(pixels[0]).toBe(0);
  });

  it("is deterministic byte for byte", () => {
    const set = line(256, [
      [30, 40],
      [100, 200],
      [220, 60],
    ]);
    const a = rasterize(set, 64);
    const b = rasterize(set, 64);
    expect(a.length).toBe(b.length);
    expect(a.every((byte, i) => byte === b[i])).toBe(true);
  });

  it("depends only on geometry, not point timestamps", () => {
    let slow = emptyStrokeSet(256);
    slow = beginStroke(slow, { x: 10, y: 10, t: 0 });
    slow = extendStroke(slow, { x: 200, y: 180, t: 5000 });

    let fast = emptyStrokeSet(256);
    fast = beginStroke(fast, { x: 10, y: 10, t: 100 });
    fast = extendStroke(fast, { x: 200, y: 180, t: 116 });

    const a = rasterize(slow, 64);
    const b = rasterize(fast, 64);
    expect(a.every((byte, i) => byte === b[i])).toBe(true);
  });

  it("scales canvas coordinates to the target grid", () => {
    // same diagonal drawn on two canvas sizes lands on the same pixels
    const big = line(512, [
      [0, 0],
      [512, 512],
    ]);
    const small = line(128, [
      [0, 0],
      [128, 128],
    ]);
    const a = rasterize(big, 48);
    const b = rasterize(small, 48);
    expect(a.every((byte, i) => byte === b[i])).toBe(true);
  });

  it("rejects an empty stroke set", () => {
    expect(() => rasterize(emptyStrokeSet(256), 64)).toThrow(/empty/);
  });

  it.each([0, -3, 2.5])("rejects target size %p", (size) => {
    const set = line(256, [[10, 10]]);
    expect(() => rasterize(set, size)).toThrow(RangeError);
  });
});
