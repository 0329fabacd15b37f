/**
 * Raw clip container (.nvv) and frame sampling.
 *
 * Stimulus directories hold one .nvv file per video: a small uncompressed
 * RGB container that keeps the extractor free of codec dependencies.
 * Header (little-endian): magic "NVID", version u32, frames u32, height
 * u32, width u32, channels u32; then uint8 pixel data, frame-major.
 */

import { readFileSync, readdirSync, writeFileSync, mkdirSync } from "fs";
import { basename, join } from "path";

import { Prng } from "./prng.js";

export const VIDEO_MAGIC = "NVID";
export const VIDEO_VERSION = 1;
const HEADER_BYTES = 24;

export interface RawClip {
  id: string;
  frames: number;
  height: number;
  width: number;
  channels: number;
  /** uint8 pixels, [frames][height][width][channels] */
  data: Uint8Array;
}

export function encodeClip(clip: Omit<RawClip, "id">): Buffer {
  const { frames, height, width, channels, data } = clip;
  if (data.length !== frames * height * width * channels) {
    throw new Error("clip data length disagrees with header dims");
  }
  const buf = Buffer.alloc(HEADER_BYTES + data.length);
  buf.write(VIDEO_MAGIC, 0, "ascii");
  buf.writeUInt32LE(VIDEO_VERSION, 4);
  buf.writeUInt32LE(frames, 8);
  buf.writeUInt32LE(height, 12);
  buf.writeUInt32LE(width, 16);
  buf.writeUInt32LE(channels, 20);
  Buffer.from(data).copy(buf, HEADER_BYTES);
  return buf;
}

export function readClip(path: string): RawClip {
  const buf = readFileSync(path);
  if (buf.length < HEADER_BYTES || buf.toString("ascii", 0, 4) !== VIDEO_MAGIC) {
    throw new Error(`undecodable video ${path}: bad magic`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== VIDEO_VERSION) {
    throw new Error(`undecodable video ${path}: unsupported version ${version}`);
  }
  const frames = buf.readUInt32LE(8);
  const height = buf.readUInt32LE(12);
  const width = buf.readUInt32LE(16);
  const channels = buf.readUInt32LE(20);
  const expected = HEADER_BYTES + frames * height * width * channels;
  if (frames < 1 || buf.length !== expected) {
    throw new Error(
      `undecodable video ${path}: expected ${expected} bytes, found ${buf.length}`,
    );
  }
  return {
    id: basename(path).replace(/\.nvv$/, ""),
    frames,
    height,
    width,
    channels,
    data: new Uint8Array(buf.buffer, buf.byteOffset + HEADER_BYTES, expected - HEADER_BYTES),
  };
}

/** Sorted .nvv paths of a stimulus directory (the stimulus ordering). */
export function listVideos(dir: string): string[] {
  const names = readdirSync(dir)
    .filter((n) => n.endsWith(".nvv"))
    .sort();
  if (names.length === 0) throw new Error(`no .nvv videos under ${dir}`);
  return names.map((n) => join(dir, n));
}

/**
 * Frame indices for a clip sampled every `rate` frames; the clip length
 * follows from the video length, so longer videos yield longer clips.
 */
export function sampleFrameIndices(totalFrames: number, rate: number): number[] {
  if (rate < 1) throw new Error(`sampling rate must be >= 1, got ${rate}`);
  const indices: number[] = [];
  for (let t = 0; t < totalFrames; t += rate) indices.push(t);
  return indices;
}

/**
 * Synthesize a deterministic stimulus directory of moving-gradient clips.
 * Useful for smoke tests and demos; real stimuli are converted upstream.
 */
export function synthesizeVideos(
  outDir: string,
  options: { count: number; frames: number; height: number; width: number; seed: number },
): string[] {
  const { count, frames, height, width, seed } = options;
  mkdirSync(outDir, { recursive: true });
  const paths: string[] = [];
  for (let v = 0; v < count; v++) {
    const rng = new Prng(seed * 10007 + v);
    const phase = rng.next() * Math.PI * 2;
    const fx = 1 + Math.floor(rng.next() * 4);
    const fy = 1 + Math.floor(rng.next() * 4);
    const speed = (rng.next() - 0.5) * 0.6;
    const data = new Uint8Array(frames * height * width * 3);
    let k = 0;
    for (let t = 0; t < frames; t++) {
      for (let y = 0; y < height; y++) {
        for (let x = 0; x < width; x++) {
          const wave =
            Math.sin((x / width) * fx * Math.PI * 2 + phase + speed * t) *
            Math.cos((y / height) * fy * Math.PI * 2 - speed * t);
          const base = Math.round((wave * 0.5 + 0.5) * 255);
          data[k++] = base;
          data[k++] = (base + 64) % 256;
          data[k++] = 255 - base;
        }
      }
    }
    const id = `vid${String(v).padStart(4, "0")}`;
    const path = join(outDir, `${id}.nvv`);
    writeFileSync(path, encodeClip({ frames, height, width, channels: 3, data }));
    paths.push(path);
  }
  return paths;
}
