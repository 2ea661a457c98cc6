/** Deterministic 5-class color smoke set: noisy solid-color PPM images. */

import { mkdirSync, writeFileSync } from "fs";
import { join } from "path";

import { encodePpm } from "../src/ppm.js";
import { Stream, childSeed } from "../src/splitmix.js";

export const SMOKE_CLASSES: Array<{ name: string; rgb: [number, number, number] }> = [
  { name: "red", rgb: [230, 25, 25] },
  { name: "green", rgb: [25, 205, 40] },
  { name: "blue", rgb: [25, 50, 230] },
  { name: "yellow", rgb: [230, 215, 25] },
  { name: "purple", rgb: [140, 40, 180] },
];

export function writeSmokeSet(
  dir: string,
  imagesPerClass = 6,
  size = 16
): { manifestPath: string } {
  mkdirSync(join(dir, "img"), { recursive: true });
  const classes = SMOKE_CLASSES.map(({ name, rgb }) => {
    const images: string[] = [];
    for (let i = 0; i < imagesPerClass; i++) {
      const s = new Stream(childSeed("smoke", name, i));
      const pixels = new Uint8Array(size * size * 3);
      const g = s.gaussians(pixels.length);
      for (let p = 0; p < size * size; p++) {
        for (let c = 0; c < 3; c++) {
          const noisy = rgb[c] + 28 * g[3 * p + c];
          pixels[3 * p + c] = Math.max(0, Math.min(255, Math.round(noisy)));
        }
      }
      const rel = join("img", `${name}_${i}.ppm`);
      writeFileSync(join(dir, rel), encodePpm(size, size, pixels));
      images.push(rel);
    }
    return { name, images };
  });
  const manifest = {
    dataset: "colors5",
    encoder: "colorlex",
    d: 32,
    m: 4,
    trainPerClass: 4,
    classes,
  };
  const manifestPath = join(dir, "manifest.json");
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2));
  return { manifestPath };
}
