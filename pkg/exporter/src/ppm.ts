/** Minimal netpbm reader: binary PPM (P6) and PGM (P5), 8-bit maxval. */

export interface Image {
  width: number;
  height: number;
  /** row-major RGB triples in [0, 1] (grayscale replicated) */
  pixels: Float64Array;
}

export function decodeNetpbm(data: Buffer): Image {
  const magic = data.subarray(0, 2).toString("ascii");
  if (magic !== "P6" && magic !== "P5") {
    throw new Error(`unsupported image magic ${JSON.stringify(magic)}`);
  }
  let off = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    if (off >= data.length) throw new Error("truncated netpbm header");
    const ch = data[off];
    if (ch === 0x23) {
      // comment: skip to end of line
      while (off < data.length && data[off] !== 0x0a) off++;
      off++;
    } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
      off++;
    } else {
      let value = 0;
      while (off < data.length && data[off] >= 0x30 && data[off] <= 0x39) {
        value = value * 10 + (data[off] - 0x30);
        off++;
      }
      fields.push(value);
    }
  }
  off++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval <= 0 || maxval > 255) throw new Error(`unsupported maxval ${maxval}`);
  const channels = magic === "P6" ? 3 : 1;
  const need = width * height * channels;
  if (data.length - off < need) {
    throw new Error(`truncated netpbm payload: need ${need}, have ${data.length - off}`);
  }
  const pixels = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    if (channels === 3) {
      pixels[3 * i] = data[off + 3 * i] / maxval;
      pixels[3 * i + 1] = data[off + 3 * i + 1] / maxval;
      pixels[3 * i + 2] = data[off + 3 * i + 2] / maxval;
    } else {
      const g = data[off + i] / maxval;
      pixels[3 * i] = pixels[3 * i + 1] = pixels[3 * i + 2] = g;
    }
  }
  return { width, height, pixels };
}

export function encodePpm(width: number, height: number, rgb: Uint8Array): Buffer {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(rgb)]);
}
