/**
 * Counter-based SplitMix64: output i of seed s is mix64(s + (i+1) * GOLDEN).
 * Matches the simulator's stream definition bit for bit, so projection
 * matrices derived from a seed are identical on both sides.
 */

const MASK = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

export function mix64(z: bigint): bigint {
  z &= MASK;
  z = ((z ^ (z >> 30n)) * MIX1) & MASK;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK;
  return z ^ (z >> 31n);
}

export class Stream {
  private seed: bigint;
  private pos = 0n;

  constructor(seed: bigint | number) {
    this.seed = BigInt(seed) & MASK;
  }

  nextU64(): bigint {
    this.pos += 1n;
    return mix64((this.seed + this.pos * GOLDEN) & MASK);
  }

  /** double in [0, 1) with 53 random bits */
  uniform(): number {
    return Number(this.nextU64() >> 11n) * 2 ** -53;
  }

  /** standard normals via Box-Muller (pairs, first n returned) */
  gaussians(n: number): Float64Array {
    const out = new Float64Array(n + (n % 2));
    for (let i = 0; i < out.length; i += 2) {
      const u1 = (Number(this.nextU64() >> 11n) + 1) * 2 ** -53;
      const u2 = this.uniform();
      const r = Math.sqrt(-2 * Math.log(u1));
      out[i] = r * Math.cos(2 * Math.PI * u2);
      out[i + 1] = r * Math.sin(2 * Math.PI * u2);
    }
    return out.subarray(0, n);
  }
}

export function childSeed(...parts: Array<number | string>): bigint {
  let h = GOLDEN;
  for (const part of parts) {
    if (typeof part === "string") {
      for (const byte of Buffer.from(part, "utf-8")) {
        h = mix64(h ^ BigInt(byte + 0x100));
      }
    } else {
      h = mix64(h ^ (BigInt(part) & MASK));
    }
    h = mix64((h + GOLDEN) & MASK);
  }
  return h;
}
