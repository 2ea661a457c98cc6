#!/usr/bin/env node
/**
 * ftpg-export: write an FTPGEMB1 embedding store from a JSON manifest.
 *
 *   ftpg-export --manifest manifest.json --out store.ftpgemb
 *
 * Exit codes: 0 success, 1 bad manifest/arguments, 2 I/O failure.
 */

import { writeFileSync } from "fs";
import { pathToFileURL } from "url";

import { exportStore } from "./export.js";
import { loadManifest } from "./manifest.js";

function parseArgs(argv: string[]): { manifest: string; out: string } {
  let manifest: string | undefined;
  let out: string | undefined;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--manifest") manifest = argv[++i];
    else if (argv[i] === "--out") out = argv[++i];
    else if (argv[i] === "--help" || argv[i] === "-h") {
      console.log("usage: ftpg-export --manifest <manifest.json> --out <store.ftpgemb>");
      process.exit(0);
    } else throw new Error(`unknown argument ${argv[i]}`);
  }
  if (!manifest || !out) {
    throw new Error("both --manifest and --out are required");
  }
  return { manifest, out };
}

export function main(argv: string[]): number {
  let args: { manifest: string; out: string };
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
  try {
    const manifest = loadManifest(args.manifest);
    const result = exportStore(manifest, args.manifest);
    writeFileSync(args.out, result.bytes);
    console.error(
      `wrote ${args.out}: ${result.classCount} classes, ` +
        `${result.bytes.length} bytes, ${result.skippedImages} image(s) skipped`
    );
    return 0;
  } catch (err) {
    const message = (err as Error).message;
    console.error(`error: ${message}`);
    return /ENOENT|EACCES|truncated|no usable/.test(message) ? 2 : 1;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
