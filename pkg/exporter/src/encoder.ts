/**
 * Dual encoders mapping class names and images into one d-dim space.
 *
 * The built-in "colorlex" encoder is a deliberately tiny vision-language
 * pair for smoke sets: both modalities are reduced to the same 16-dim
 * feature layout (global RGB means, brightness, 2x2 patch RGB means) -
 * images by measuring pixels, class names through a color-word lexicon
 * that imagines a solid swatch - then projected with one shared, seeded
 * random matrix and L2-normalized.  Same-class text and images land close
 * together because they produce similar features, which is exactly the
 * property the downstream simulator assumes of a real dual encoder.
 */

import { Image } from "./ppm.js";
import { Stream, childSeed } from "./splitmix.js";

export interface DualEncoder {
  readonly name: string;
  readonly dim: number;
  embedText(className: string): Float64Array;
  embedImage(image: Image): Float64Array;
}

const FEATURES = 16;

const LEXICON: Record<string, [number, number, number]> = {
  red: [0.9, 0.1, 0.1],
  green: [0.1, 0.8, 0.15],
  blue: [0.1, 0.2, 0.9],
  yellow: [0.9, 0.85, 0.1],
  orange: [0.95, 0.55, 0.1],
  purple: [0.55, 0.15, 0.7],
  magenta: [0.9, 0.1, 0.8],
  pink: [0.95, 0.6, 0.7],
  cyan: [0.1, 0.8, 0.85],
  brown: [0.5, 0.3, 0.15],
  white: [0.95, 0.95, 0.95],
  gray: [0.5, 0.5, 0.5],
  grey: [0.5, 0.5, 0.5],
  black: [0.05, 0.05, 0.05],
};

function pseudoColor(word: string): [number, number, number] {
  const s = new Stream(childSeed("colorlex-word", word));
  return [s.uniform(), s.uniform(), s.uniform()];
}

function solidFeatures(rgb: [number, number, number]): Float64Array {
  const f = new Float64Array(FEATURES);
  f[0] = rgb[0];
  f[1] = rgb[1];
  f[2] = rgb[2];
  f[3] = (rgb[0] + rgb[1] + rgb[2]) / 3;
  for (let patch = 0; patch < 4; patch++) {
    f[4 + 3 * patch] = rgb[0];
    f[5 + 3 * patch] = rgb[1];
    f[6 + 3 * patch] = rgb[2];
  }
  return f;
}

function imageFeatures(img: Image): Float64Array {
  const f = new Float64Array(FEATURES);
  const { width, height, pixels } = img;
  const n = width * height;
  for (let i = 0; i < n; i++) {
    f[0] += pixels[3 * i];
    f[1] += pixels[3 * i + 1];
    f[2] += pixels[3 * i + 2];
  }
  f[0] /= n;
  f[1] /= n;
  f[2] /= n;
  f[3] = (f[0] + f[1] + f[2]) / 3;
  const counts = [0, 0, 0, 0];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const patch = (y < height / 2 ? 0 : 2) + (x < width / 2 ? 0 : 1);
      const i = y * width + x;
      f[4 + 3 * patch] += pixels[3 * i];
      f[5 + 3 * patch] += pixels[3 * i + 1];
      f[6 + 3 * patch] += pixels[3 * i + 2];
      counts[patch]++;
    }
  }
  for (let patch = 0; patch < 4; patch++) {
    if (counts[patch] > 0) {
      f[4 + 3 * patch] /= counts[patch];
      f[5 + 3 * patch] /= counts[patch];
      f[6 + 3 * patch] /= counts[patch];
    }
  }
  return f;
}

function normalize(v: Float64Array): Float64Array {
  let norm = 0;
  for (const x of v) norm += x * x;
  norm = Math.sqrt(norm);
  if (norm === 0) throw new Error("zero-norm embedding");
  return v.map((x) => x / norm);
}

class ColorLexEncoder implements DualEncoder {
  readonly name = "colorlex";
  readonly dim: number;
  private projection: Float64Array; // dim x FEATURES, row-major

  constructor(dim: number) {
    this.dim = dim;
    const s = new Stream(childSeed("colorlex-projection", dim));
    const w = s.gaussians(dim * FEATURES);
    this.projection = w.map((x) => x / Math.sqrt(FEATURES));
  }

  private project(features: Float64Array): Float64Array {
    const out = new Float64Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      let acc = 0;
      for (let j = 0; j < FEATURES; j++) {
        acc += this.projection[i * FEATURES + j] * features[j];
      }
      out[i] = acc;
    }
    return normalize(out);
  }

  embedText(className: string): Float64Array {
    const words = className.toLowerCase().split(/[^a-z]+/).filter(Boolean);
    const anchors = words.map((w) => LEXICON[w] ?? pseudoColor(w));
    if (anchors.length === 0) anchors.push(pseudoColor(className));
    const rgb: [number, number, number] = [0, 0, 0];
    for (const a of anchors) {
      rgb[0] += a[0] / anchors.length;
      rgb[1] += a[1] / anchors.length;
      rgb[2] += a[2] / anchors.length;
    }
    return this.project(solidFeatures(rgb));
  }

  embedImage(image: Image): Float64Array {
    return this.project(imageFeatures(image));
  }
}

export function createEncoder(name: string, dim: number): DualEncoder {
  if (name === "colorlex") return new ColorLexEncoder(dim);
  throw new Error(
    `unknown encoder ${JSON.stringify(name)}; available: colorlex`
  );
}
