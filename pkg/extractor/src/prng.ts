/**
 * Seeded PRNG for deterministic weight initialization.
 *
 * splitmix64-style scrambling into a mulberry32 core: the same seed always
 * produces the same stream, independent of platform or process.
 */

export class Prng {
  private state: number;

  constructor(seed: number) {
    // scramble so nearby seeds do not produce nearby streams
    let h = (seed >>> 0) ^ 0x9e3779b9;
    h = Math.imul(h ^ (h >>> 16), 0x21f0aaad);
    h = Math.imul(h ^ (h >>> 15), 0x735a2d97);
    this.state = (h ^ (h >>> 15)) >>> 0;
  }

  /** Uniform float in [0, 1). */
  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  /** Uniform float in [-bound, bound). */
  uniform(bound: number): number {
    return (this.next() * 2 - 1) * bound;
  }

  /** Xavier-uniform array for a map with the given fan-in/fan-out. */
  xavier(count: number, fanIn: number, fanOut: number): Float32Array {
    const bound = Math.sqrt(6 / (fanIn + fanOut));
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) out[i] = this.uniform(bound);
    return out;
  }
}
