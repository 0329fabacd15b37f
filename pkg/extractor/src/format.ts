/**
 * Writers (and readers, used by tests) for the nenc feature-set layout:
 *
 *   <set>/manifest.json
 *   <set>/layers/<layer>.bin   16-byte header: magic "NENC", version u32,
 *                              rows u32, cols u32 (little-endian), then
 *                              row-major float32 data.
 *
 * This mirrors the encoding toolkit's on-disk contract; sets written here
 * are validated by invoking that toolkit's validator.
 */

import { mkdirSync, readFileSync, writeFileSync } from "fs";
import { join } from "path";

export const MAGIC = "NENC";
export const FORMAT_VERSION = 1;
const HEADER_BYTES = 16;

export interface LayerSpec {
  name: string;
  raw_dim: number;
  averaged: boolean;
  frame_counts: number[] | null;
}

export interface FeatureManifest {
  format: "nenc-featureset";
  version: number;
  model_name: string;
  video_ids: string[];
  dtype: "float32";
  notes: string;
  layers: LayerSpec[];
}

export function encodeMatrix(rows: number, cols: number, data: Float32Array): Buffer {
  if (data.length !== rows * cols) {
    throw new Error(`matrix data length ${data.length} != ${rows}x${cols}`);
  }
  const buf = Buffer.alloc(HEADER_BYTES + data.length * 4);
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt32LE(FORMAT_VERSION, 4);
  buf.writeUInt32LE(rows, 8);
  buf.writeUInt32LE(cols, 12);
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], HEADER_BYTES + i * 4);
  }
  return buf;
}

export function decodeMatrix(buf: Buffer): { rows: number; cols: number; data: Float32Array } {
  if (buf.length < HEADER_BYTES || buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error("not a NENC matrix file");
  }
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const rows = buf.readUInt32LE(8);
  const cols = buf.readUInt32LE(12);
  if (buf.length !== HEADER_BYTES + rows * cols * 4) {
    throw new Error(`length mismatch: ${buf.length} bytes for ${rows}x${cols}`);
  }
  const data = new Float32Array(rows * cols);
  for (let i = 0; i < data.length; i++) data[i] = buf.readFloatLE(HEADER_BYTES + i * 4);
  return { rows, cols, data };
}

export interface FeatureSetPayload {
  modelName: string;
  videoIds: string[];
  notes: string;
  /** layer name -> row-major (videos x dim) matrix */
  layers: Map<string, { dim: number; data: Float32Array }>;
}

export function writeFeatureSet(outDir: string, payload: FeatureSetPayload): void {
  const numVideos = payload.videoIds.length;
  mkdirSync(join(outDir, "layers"), { recursive: true });
  const layerSpecs: LayerSpec[] = [];
  for (const [name, { dim, data }] of payload.layers) {
    if (data.length !== numVideos * dim) {
      throw new Error(`layer ${name}: expected ${numVideos}x${dim} values`);
    }
    for (const v of data) {
      if (!Number.isFinite(v)) throw new Error(`layer ${name}: non-finite value`);
    }
    writeFileSync(join(outDir, "layers", `${name}.bin`), encodeMatrix(numVideos, dim, data));
    layerSpecs.push({ name, raw_dim: dim, averaged: true, frame_counts: null });
  }
  const manifest: FeatureManifest = {
    format: "nenc-featureset",
    version: FORMAT_VERSION,
    model_name: payload.modelName,
    video_ids: payload.videoIds,
    dtype: "float32",
    notes: payload.notes,
    layers: layerSpecs,
  };
  writeFileSync(join(outDir, "manifest.json"), stableJson(manifest) + "\n");
}

export function readFeatureSet(dir: string): {
  manifest: FeatureManifest;
  layers: Map<string, { rows: number; cols: number; data: Float32Array }>;
} {
  const manifest = JSON.parse(
    readFileSync(join(dir, "manifest.json"), "utf8"),
  ) as FeatureManifest;
  const layers = new Map<string, { rows: number; cols: number; data: Float32Array }>();
  for (const layer of manifest.layers) {
    layers.set(layer.name, decodeMatrix(readFileSync(join(dir, "layers", `${layer.name}.bin`))));
  }
  return { manifest, layers };
}

export interface ResponsePayload {
  videoIds: string[];
  /** ordered [region, voxelCount] table */
  regions: [string, number][];
  /** subject -> region -> row-major (videos x voxels) matrix */
  subjects: Map<string, Map<string, Float32Array>>;
}

/** Write a response set (regions.json + per-subject region matrices). */
export function writeResponseSet(outDir: string, payload: ResponsePayload): void {
  const numVideos = payload.videoIds.length;
  for (const [subject, regions] of payload.subjects) {
    const dir = join(outDir, `subject_${subject}`);
    mkdirSync(dir, { recursive: true });
    for (const [region, voxels] of payload.regions) {
      const matrix = regions.get(region);
      if (!matrix || matrix.length !== numVideos * voxels) {
        throw new Error(`subject ${subject} region ${region}: bad matrix`);
      }
      writeFileSync(join(dir, `${region}.bin`), encodeMatrix(numVideos, voxels, matrix));
    }
  }
  const sidecar = {
    format: "nenc-responses",
    version: FORMAT_VERSION,
    video_ids: payload.videoIds,
    regions: payload.regions,
    subjects: [...payload.subjects.keys()],
  };
  writeFileSync(join(outDir, "regions.json"), stableJson(sidecar) + "\n");
}

/** JSON with sorted keys so repeated extraction writes identical bytes. */
export function stableJson(value: unknown): string {
  const sort = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sort);
    if (v && typeof v === "object") {
      return Object.fromEntries(
        Object.keys(v as Record<string, unknown>)
          .sort()
          .map((k) => [k, sort((v as Record<string, unknown>)[k])]),
      );
    }
    return v;
  };
  return JSON.stringify(sort(value), null, 2);
}
