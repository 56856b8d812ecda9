/** Minimal deterministic PNG encoder for 8-bit grayscale images.
 *
 * Uses stored (uncompressed) deflate blocks inside the zlib stream, so the
 * output bytes are a pure function of the pixel data — no compressor
 * version or settings can change them.
 */

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]!) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

export function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]!) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(value: number): number[] {
  return [(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff];
}

function chunk(type: string, data: Uint8Array): number[] {
  const body = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) body[i] = type.charCodeAt(i);
  body.set(data, 4);
  return [...u32(data.length), ...body, ...u32(crc32(body))];
}

/** zlib stream with stored-only deflate blocks (max 65535 bytes each). */
function zlibStore(raw: Uint8Array): Uint8Array {
  const blocks: number[] = [0x78, 0x01];
  for (let off = 0; off < raw.length; off += 65535) {
    const len = Math.min(65535, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    blocks.push(final, len & 0xff, len >>> 8, ~len & 0xff, (~len >>> 8) & 0xff);
    for (let i = 0; i < len; i++) blocks.push(raw[off + i]!);
  }
  blocks.push(...u32(adler32(raw)));
  return new Uint8Array(blocks);
}

/**
 * Encode row-major grayscale pixels (0 = black, 255 = white) as a PNG.
 */
export function encodeGrayPng(pixels: Uint8Array, width: number, height: number): Uint8Array {
  if (pixels.length !== width * height) {
    throw new RangeError(`expected ${width * height} pixels, got ${pixels.length}`);
  }
  const ihdr = new Uint8Array([...u32(width), ...u32(height), 8, 0, 0, 0, 0]);

  // each scanline gets a filter-type byte (0 = None)
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }

  return new Uint8Array([
    ...SIGNATURE,
    ...chunk("IHDR", ihdr),
    ...chunk("IDAT", zlibStore(raw)),
    ...chunk("IEND", new Uint8Array(0)),
  ]);
}

/** Decode a PNG produced by encodeGrayPng (test helper, not a general decoder). */
export function decodeGrayPng(png: Uint8Array): { width: number; height: number; pixels: Uint8Array } {
  for (let i = 0; i < 8; i++) {
    if (png[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  const view = new DataView(png.buffer, png.byteOffset, png.byteLength);
  const width = view.getUint32(16);
  const height = view.getUint32(20);

  // collect IDAT payloads
  let off = 8;
  const idat: number[] = [];
  while (off < png.length) {
    const len = view.getUint32(off);
    const type = String.fromCharCode(png[off + 4]!, png[off + 5]!, png[off + 6]!, png[off + 7]!);
    if (type === "IDAT") {
      for (let i = 0; i < len; i++) idat.push(png[off + 8 + i]!);
    }
    off += 12 + len;
  }

  // walk the stored deflate blocks, skipping the 2-byte zlib header
  const raw: number[] = [];
  let p = 2;
  for (;;) {
    const final = idat[p]!;
    const len = idat[p + 1]! | (idat[p + 2]! << 8);
    p += 5;
    for (let i = 0; i < len; i++) raw.push(idat[p + i]!);
    p += len;
    if (final & 1) break;
  }

  const pixels = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    if (raw[y * (width + 1)] !== 0) throw new Error("unexpected scanline filter");
    for (let x = 0; x < width; x++) {
      pixels[y * width + x] = raw[y * (width + 1) + 1 + x]!;
    }
  }
  return { width, height, pixels };
}
