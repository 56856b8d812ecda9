import { describe, expect, it } from "vitest";

import { adler32, crc32, decodeGrayPng, encodeGrayPng } from "../src/png.js";

const ascii = (s: string) => new Uint8Array([...s].map((c) => c.charCodeAt(0)));

describe("crc32", () => {
  it("matches the standard check value", () => {
    // canonical CRC-32 test vector
    expect(crc32(ascii("123456789"))).toBe(0xcbf43926);
  });

  it("is 0 for empty input", () => {
    expect(crc32(new Uint8Array(0))).toBe(0);
  });

  it("matches a known value for the IEND chunk type", () => {
    expect(crc32(ascii("IEND"))).toBe(0xae426082);
  });
});

describe("adler32", () => {
  it("is 1 for empty input", () => {
    expect(adler32(new Uint8Array(0))).toBe(1);
  });

  it("matches the canonical Wikipedia vector", () => {
    expect(adler32(ascii("Wikipedia"))).toBe(0x11e60398);
  });
});

describe("encodeGrayPng", () => {
  it("starts with the PNG signature", () => {
    const png = encodeGrayPng(new Uint8Array([0, 128, 255, 64]), 2, 2);
    expect([...png.slice(0, 8)]).toEqual([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  });

  it("round-trips pixel data exactly", () => {
    const width = 7;
    const height = 5;
    const pixels = new Uint8Array(width * height);
    for (let i = 0; i < pixels.length; i++) pixels[i] = (i * 37) % 256;

    const decoded = decodeGrayPng(encodeGrayPng(pixels, width, height));
    expect(decoded.width).toBe(width);
    expect(decoded.height).toBe(height);
    expect([...decoded.pixels]).toEqual([...pixels]);
  });

  it("round-trips an image larger than one stored deflate block", () => {
    // 300x300 plus filter bytes exceeds the 65535-byte block limit
    const side = 300;
    const pixels = new Uint8Array(side * side);
    for (let i = 0; i < pixels.length; i++) pixels[i] = (i * 97 + 13) % 256;

    const decoded = decodeGrayPng(encodeGrayPng(pixels, side, side));
    expect(decoded.width).toBe(side);
    expect([...decoded.pixels]).toEqual([...pixels]);
  });

  it("is deterministic byte for byte", () => {
    const pixels = new Uint8Array([1, 2, 3, 4, 5, 6]);
    const a = encodeGrayPng(pixels, 3, 2);
    const b = encodeGrayPng(pixels, 3, 2);
    expect([...a]).toEqual([...b]);
  });

  it("rejects pixel buffers that do not match the dimensions", () => {
    expect(() => encodeGrayPng(new Uint8Array(5), 2, 2)).toThrow();
  });
});
