/**
 * FTPGEMB1 binary store writer/reader (little-endian).
 *
 * Layout: magic "FTPGEMB1" | u32 version=1 | u32 d | u32 m | u64 encoder_seed
 * | u32 num_datasets | per dataset (u32 name_len, name, u32 num_classes; per
 * class u32 name_len, name, u8 split, u32 num_train, u32 num_eval) | payload:
 * all class token embeddings (f32, class order), then per class its train
 * then eval image embeddings (f32).
 */

export const STORE_MAGIC = "FTPGEMB1";
export const STORE_VERSION = 1;

export interface StoreClass {
  name: string;
  split: "base" | "new";
  token: Float64Array;
  train: Float64Array[];
  eval: Float64Array[];
}

export interface StoreDataset {
  name: string;
  classes: StoreClass[];
}

export interface Store {
  d: number;
  m: number;
  encoderSeed: bigint;
  datasets: StoreDataset[];
}

class Writer {
  private chunks: Buffer[] = [];

  raw(bytes: Buffer): void {
    this.chunks.push(bytes);
  }

  string(text: string): void {
    const bytes = Buffer.from(text, "utf-8");
    this.u32(bytes.length);
    this.chunks.push(bytes);
  }

  u8(v: number): void {
    this.chunks.push(Buffer.from([v]));
  }

  u32(v: number): void {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v);
    this.chunks.push(b);
  }

  u64(v: bigint): void {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(v);
    this.chunks.push(b);
  }

  f32Vector(v: Float64Array): void {
    const b = Buffer.alloc(4 * v.length);
    for (let i = 0; i < v.length; i++) b.writeFloatLE(v[i], 4 * i);
    this.chunks.push(b);
  }

  bytes(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

export function encodeStore(store: Store): Buffer {
  const w = new Writer();
  w.raw(Buffer.from(STORE_MAGIC, "ascii"));
  w.u32(STORE_VERSION);
  w.u32(store.d);
  w.u32(store.m);
  w.u64(store.encoderSeed);
  w.u32(store.datasets.length);
  for (const ds of store.datasets) {
    w.string(ds.name);
    w.u32(ds.classes.length);
    for (const cls of ds.classes) {
      w.string(cls.name);
      w.u8(cls.split === "base" ? 0 : 1);
      w.u32(cls.train.length);
      w.u32(cls.eval.length);
    }
  }
  for (const ds of store.datasets) {
    for (const cls of ds.classes) w.f32Vector(cls.token);
  }
  for (const ds of store.datasets) {
    for (const cls of ds.classes) {
      for (const img of cls.train) w.f32Vector(img);
      for (const img of cls.eval) w.f32Vector(img);
    }
  }
  return w.bytes();
}

class Reader {
  private off = 0;

  constructor(private data: Buffer) {}

  private need(n: number): number {
    if (this.off + n > this.data.length) {
      throw new Error(
        `store truncated at byte ${this.data.length}: need ${n} at offset ${this.off}`
      );
    }
    const at = this.off;
    this.off += n;
    return at;
  }

  raw(n: number): Buffer {
    const at = this.need(n);
    return this.data.subarray(at, at + n);
  }

  u8(): number {
    return this.data.readUInt8(this.need(1));
  }

  u32(): number {
    return this.data.readUInt32LE(this.need(4));
  }

  u64(): bigint {
    return this.data.readBigUInt64LE(this.need(8));
  }

  string(): string {
    return this.raw(this.u32()).toString("utf-8");
  }

  f32Vector(d: number): Float64Array {
    const at = this.need(4 * d);
    const out = new Float64Array(d);
    for (let i = 0; i < d; i++) out[i] = this.data.readFloatLE(at + 4 * i);
    return out;
  }

  get offset(): number {
    return this.off;
  }
}

export function decodeStore(data: Buffer): Store {
  const r = new Reader(data);
  const magic = r.raw(8).toString("ascii");
  if (magic !== STORE_MAGIC) {
    throw new Error(`bad store magic ${JSON.stringify(magic)}`);
  }
  const version = r.u32();
  if (version !== STORE_VERSION) throw new Error(`unsupported version ${version}`);
  const d = r.u32();
  const m = r.u32();
  const encoderSeed = r.u64();
  const headers: Array<{
    name: string;
    classes: Array<{ name: string; split: "base" | "new"; train: number; eval: number }>;
  }> = [];
  const nDatasets = r.u32();
  for (let k = 0; k < nDatasets; k++) {
    const name = r.string();
    const classes: (typeof headers)[number]["classes"] = [];
    const nClasses = r.u32();
    for (let j = 0; j < nClasses; j++) {
      const cname = r.string();
      const flag = r.u8();
      if (flag !== 0 && flag !== 1) throw new Error(`bad split flag ${flag}`);
      classes.push({
        name: cname,
        split: flag === 0 ? "base" : "new",
        train: r.u32(),
        eval: r.u32(),
      });
    }
    headers.push({ name, classes });
  }
  const tokens: Float64Array[] = [];
  for (const ds of headers) {
    for (let j = 0; j < ds.classes.length; j++) tokens.push(r.f32Vector(d));
  }
  let ti = 0;
  const datasets: StoreDataset[] = headers.map((ds) => ({
    name: ds.name,
    classes: ds.classes.map((cls) => {
      const train: Float64Array[] = [];
      const evals: Float64Array[] = [];
      for (let i = 0; i < cls.train; i++) train.push(r.f32Vector(d));
      for (let i = 0; i < cls.eval; i++) evals.push(r.f32Vector(d));
      return { name: cls.name, split: cls.split, token: tokens[ti++], train, eval: evals };
    }),
  }));
  if (r.offset !== data.length) {
    throw new Error(`${data.length - r.offset} trailing bytes after payload`);
  }
  return { d, m, encoderSeed, datasets };
}
