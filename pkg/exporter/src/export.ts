/**
 * Turn a manifest of class names + image files into an FTPGEMB1 store.
 *
 * Unreadable or undecodable images are skipped with a warning (and counted);
 * a class with no usable image at all is a hard error.  The first
 * `trainPerClass` usable images of a class become its train pool, the rest
 * its eval pool.  Real-encoder stores carry encoder_seed = 0: the simulator's
 * frozen surrogate is not meant to reproduce this encoder.
 */

import { readFileSync } from "fs";
import { dirname, isAbsolute, join } from "path";

import { createEncoder } from "./encoder.js";
import { assignSplits, ExportManifest } from "./manifest.js";
import { decodeNetpbm } from "./ppm.js";
import { encodeStore, Store, StoreClass } from "./store.js";

export interface ExportResult {
  bytes: Buffer;
  skippedImages: number;
  classCount: number;
}

export function exportStore(
  manifest: ExportManifest,
  manifestPath: string,
  warn: (message: string) => void = (m) => console.warn(m)
): ExportResult {
  const encoder = createEncoder(manifest.encoder, manifest.d);
  const splits = assignSplits(manifest);
  const root = dirname(manifestPath);
  let skipped = 0;

  const classes: StoreClass[] = manifest.classes.map((cls, idx) => {
    const embeddings: Float64Array[] = [];
    for (const rel of cls.images) {
      const path = isAbsolute(rel) ? rel : join(root, rel);
      try {
        embeddings.push(encoder.embedImage(decodeNetpbm(readFileSync(path))));
      } catch (err) {
        skipped++;
        warn(`skipping ${path}: ${(err as Error).message}`);
      }
    }
    if (embeddings.length === 0) {
      throw new Error(`class ${JSON.stringify(cls.name)} has no usable images`);
    }
    const nTrain = Math.min(manifest.trainPerClass, embeddings.length);
    return {
      name: cls.name,
      split: splits[idx],
      token: encoder.embedText(cls.name),
      train: embeddings.slice(0, nTrain),
      // a class must keep at least one eval image; reuse the last train
      // image when the pool is too small to split
      eval: embeddings.length > nTrain
        ? embeddings.slice(nTrain)
        : [embeddings[embeddings.length - 1]],
    };
  });

  const store: Store = {
    d: manifest.d,
    m: manifest.m,
    encoderSeed: 0n,
    datasets: [{ name: manifest.dataset, classes }],
  };
  return { bytes: encodeStore(store), skippedImages: skipped, classCount: classes.length };
}
