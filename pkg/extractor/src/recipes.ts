/**
 * Extraction recipes: which model, which sampled layers, how frames are
 * sampled and preprocessed, and which weights seed stands in for the
 * published checkpoint.
 *
 * Image backbones always sample every 8th frame (their standard rate);
 * video backbones default to the rate used for their training
 * configuration. The sampled-layer list must follow the family scheme:
 * layers can be dropped but not renamed or reordered.
 */

import { readFileSync } from "fs";

import { buildModel, modelKind, assertKnownModel } from "./models.js";

export const IMAGE_SAMPLING_RATE = 8;

const VIDEO_SAMPLING_RATE: Record<string, number> = {
  tiny_i3d: 2,
  tiny_slowfast: 2,
  tiny_mvit: 2,
};

export interface ExtractionRecipe {
  model: string;
  samplingRate: number;
  /** sampled taps in scheme order; defaults to the full family scheme */
  layers: string[];
  resize: [number, number];
  mean: number;
  std: number;
  weightsSeed: number;
}

export function defaultRecipe(model: string, weightsSeed = 1): ExtractionRecipe {
  assertKnownModel(model);
  const probe = buildModel(model, 0);
  const layers = [...probe.layerNames];
  probe.dispose();
  return {
    model,
    samplingRate:
      modelKind(model) === "image" ? IMAGE_SAMPLING_RATE : VIDEO_SAMPLING_RATE[model],
    layers,
    resize: [32, 32],
    mean: 0.45,
    std: 0.225,
    weightsSeed,
  };
}

export function validateRecipe(recipe: ExtractionRecipe): ExtractionRecipe {
  assertKnownModel(recipe.model);
  const scheme = defaultRecipe(recipe.model);
  if (modelKind(recipe.model) === "image" && recipe.samplingRate !== IMAGE_SAMPLING_RATE) {
    throw new Error(
      `image models sample every ${IMAGE_SAMPLING_RATE} frames, got rate ${recipe.samplingRate}`,
    );
  }
  if (!Number.isInteger(recipe.samplingRate) || recipe.samplingRate < 1) {
    throw new Error(`invalid sampling rate ${recipe.samplingRate}`);
  }
  if (recipe.layers.length === 0) throw new Error("recipe samples no layers");
  // subset of the scheme, preserving scheme order
  let cursor = 0;
  for (const layer of recipe.layers) {
    const at = scheme.layers.indexOf(layer, cursor);
    if (at < 0) {
      throw new Error(
        `layer ${layer} not in ${recipe.model}'s scheme (${scheme.layers.join(", ")}) ` +
          "or out of order",
      );
    }
    cursor = at + 1;
  }
  if (recipe.resize[0] < 8 || recipe.resize[1] < 8) {
    throw new Error("resize target too small for the patch size");
  }
  if (recipe.std <= 0) throw new Error("std must be positive");
  return recipe;
}

export function loadRecipe(path: string): ExtractionRecipe {
  const doc = JSON.parse(readFileSync(path, "utf8")) as Partial<ExtractionRecipe> & {
    model: string;
  };
  if (!doc.model) throw new Error(`${path}: recipe needs a model id`);
  const base = defaultRecipe(doc.model, doc.weightsSeed ?? 1);
  return validateRecipe({
    ...base,
    ...doc,
    resize: (doc.resize ?? base.resize) as [number, number],
    layers: doc.layers ?? base.layers,
  });
}
