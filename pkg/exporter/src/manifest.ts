/** Export manifest: dataset name, classes with image lists, encoder choice. */

import { readFileSync } from "fs";
import { z } from "zod";

const classSchema = z.object({
  name: z.string().min(1),
  split: z.enum(["base", "new"]).optional(),
  images: z.array(z.string()).min(1),
});

export const manifestSchema = z.object({
  dataset: z.string().min(1),
  encoder: z.string().default("colorlex"),
  d: z.number().int().positive(),
  m: z.number().int().positive().default(4),
  trainPerClass: z.number().int().positive().default(8),
  classes: z.array(classSchema).min(2),
});

export type ExportManifest = z.infer<typeof manifestSchema>;

export function loadManifest(path: string): ExportManifest {
  const raw = JSON.parse(readFileSync(path, "utf-8"));
  const manifest = manifestSchema.parse(raw);
  const names = new Set(manifest.classes.map((c) => c.name));
  if (names.size !== manifest.classes.length) {
    throw new Error("class names must be unique within the dataset");
  }
  return manifest;
}

/** First ceil(C/2) classes are base, the rest new (matches the simulator). */
export function assignSplits(manifest: ExportManifest): Array<"base" | "new"> {
  const nBase = Math.ceil(manifest.classes.length / 2);
  return manifest.classes.map((cls, i) => cls.split ?? (i < nBase ? "base" : "new"));
}
