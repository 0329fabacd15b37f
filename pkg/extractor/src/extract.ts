/**
 * Extraction pipeline: stimulus videos -> per-layer averaged features on
 * disk in the encoding toolkit's feature-set layout.
 *
 * Per video: decode, sample frames at the recipe's rate (clip length
 * follows the video length), resize and normalize, run the backbone, and
 * average per-frame features over the temporal dimension. One row per
 * video per layer is written, with the recipe echoed into the manifest
 * notes for provenance.
 */

import * as tf from "@tensorflow/tfjs";

import { stableJson, writeFeatureSet } from "./format.js";
import { buildModel, LayerFeatures } from "./models.js";
import { ExtractionRecipe, validateRecipe } from "./recipes.js";
import { listVideos, readClip, sampleFrameIndices } from "./video.js";

export interface ExtractResult {
  videoIds: string[];
  layerDims: Map<string, number>;
  outDir: string;
}

function temporalAverage(features: LayerFeatures): Float32Array {
  const { frames, dim, data } = features;
  if (frames === 1) return data.slice(0, dim);
  const out = new Float32Array(dim);
  for (let t = 0; t < frames; t++) {
    for (let j = 0; j < dim; j++) out[j] += data[t * dim + j];
  }
  for (let j = 0; j < dim; j++) out[j] /= frames;
  return out;
}

function preprocess(
  clipData: Uint8Array,
  dims: { frames: number; height: number; width: number; channels: number },
  frameIndices: number[],
  recipe: ExtractionRecipe,
): tf.Tensor4D {
  const { height, width, channels } = dims;
  if (channels !== 3) throw new Error(`expected RGB clips, got ${channels} channels`);
  const frameSize = height * width * channels;
  const sampled = new Float32Array(frameIndices.length * frameSize);
  frameIndices.forEach((frame, i) => {
    const from = frame * frameSize;
    for (let k = 0; k < frameSize; k++) {
      sampled[i * frameSize + k] = clipData[from + k] / 255;
    }
  });
  return tf.tidy(() => {
    let x = tf.tensor4d(sampled, [frameIndices.length, height, width, channels]);
    if (height !== recipe.resize[0] || width !== recipe.resize[1]) {
      x = tf.image.resizeBilinear(x, recipe.resize);
    }
    return x.sub(recipe.mean).div(recipe.std);
  });
}

export async function extract(
  recipe: ExtractionRecipe,
  videoDir: string,
  outDir: string,
): Promise<ExtractResult> {
  validateRecipe(recipe);
  await tf.ready();
  const paths = listVideos(videoDir);
  const model = buildModel(recipe.model, recipe.weightsSeed);
  try {
    const videoIds: string[] = [];
    const rows = new Map<string, Float32Array[]>(recipe.layers.map((l) => [l, []]));
    for (const path of paths) {
      const clip = readClip(path);
      videoIds.push(clip.id);
      const frameIndices = sampleFrameIndices(clip.frames, recipe.samplingRate);
      const input = preprocess(clip.data, clip, frameIndices, recipe);
      const taps = model.forward(input);
      input.dispose();
      for (const layer of recipe.layers) {
        const features = taps.get(layer);
        if (!features) throw new Error(`model produced no tap named ${layer}`);
        rows.get(layer)!.push(temporalAverage(features));
      }
    }
    const layers = new Map<string, { dim: number; data: Float32Array }>();
    const layerDims = new Map<string, number>();
    for (const layer of recipe.layers) {
      const vectors = rows.get(layer)!;
      const dim = vectors[0].length;
      const data = new Float32Array(videoIds.length * dim);
      vectors.forEach((vec, i) => data.set(vec, i * dim));
      layers.set(layer, { dim, data });
      layerDims.set(layer, dim);
    }
    writeFeatureSet(outDir, {
      modelName: recipe.model,
      videoIds,
      notes: `extracted with recipe ${stableJson(recipe)}`,
      layers,
    });
    return { videoIds, layerDims, outDir };
  } finally {
    model.dispose();
  }
}
