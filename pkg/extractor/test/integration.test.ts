/**
 * Round trip against the encoding toolkit: extracted sets must pass its
 * validator and drive a real-mode run end to end. Requires the `nenc`
 * Python package to be installed (python3 -m nenc.cli).
 */

import { spawnSync } from "child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { beforeAll, describe, expect, it } from "vitest";

import { extract } from "../src/extract.js";
import { readFeatureSet, writeResponseSet } from "../src/format.js";
import { Prng } from "../src/prng.js";
import { defaultRecipe } from "../src/recipes.js";
import { synthesizeVideos } from "../src/video.js";

const PYTHON = process.env.NENC_PYTHON ?? "python3";

function nenc(...args: string[]) {
  return spawnSync(PYTHON, ["-m", "nenc.cli", ...args], { encoding: "utf8" });
}

function tmp(prefix: string): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

let stim: string;
let imageSet: string;
let imageSetNarrow: string;
let videoSet: string;

beforeAll(async () => {
  const probe = nenc("--help");
  if (probe.status !== 0) {
    throw new Error("nenc CLI unavailable; install the Python package first");
  }
  stim = tmp("stim-");
  synthesizeVideos(stim, { count: 60, frames: 16, height: 32, width: 32, seed: 11 });
  imageSet = tmp("feat-image-");
  imageSetNarrow = tmp("feat-image-narrow-");
  videoSet = tmp("feat-video-");
  await extract(defaultRecipe("tiny_resnet"), stim, imageSet);
  // a two-layer subset keeps the planted regression fully determined at
  // this stimulus count (24 feature dims vs 45 training videos)
  const narrow = { ...defaultRecipe("tiny_resnet"), layers: ["conv1", "conv2"] };
  await extract(narrow, stim, imageSetNarrow);
  await extract(defaultRecipe("tiny_mvit"), stim, videoSet);
});

describe("validation by the encoding toolkit", () => {
  it("accepts the image-model set", () => {
    const result = nenc("validate", "--set", imageSet);
    expect(result.stderr).toBe("");
    expect(result.status).toBe(0);
    expect(result.stdout).toContain("tiny_resnet");
  });

  it("accepts the video-model set", () => {
    const result = nenc("validate", "--set", videoSet);
    expect(result.status).toBe(0);
    expect(result.stdout).toContain("tiny_mvit");
  });

  it("rejects a corrupted layer file", () => {
    const corrupt = tmp("feat-corrupt-");
    spawnSync("cp", ["-r", `${imageSet}/.`, corrupt]);
    const layer = join(corrupt, "layers", "conv1.bin");
    const bytes = readFileSync(layer);
    writeFileSync(layer, bytes.subarray(0, bytes.length - 4));
    const result = nenc("validate", "--set", corrupt);
    expect(result.status).toBe(1);
  });
});

function plantReadout(featureSet: string, layer: string, voxels: number, seed: number) {
  const { manifest, layers } = readFeatureSet(featureSet);
  const source = layers.get(layer)!;
  const rng = new Prng(seed);
  const weights = Array.from({ length: voxels }, () =>
    Float32Array.from({ length: source.cols }, () => rng.uniform(1)),
  );
  const y = new Float32Array(source.rows * voxels);
  for (let i = 0; i < source.rows; i++) {
    for (let v = 0; v < voxels; v++) {
      let acc = 0;
      for (let j = 0; j < source.cols; j++) {
        acc += source.data[i * source.cols + j] * weights[v][j];
      }
      y[i * voxels + v] = acc;
    }
  }
  const responses = tmp("resp-");
  writeResponseSet(responses, {
    videoIds: manifest.video_ids,
    regions: [["V1", voxels]],
    subjects: new Map([["01", new Map([["V1", y]])]]),
  });
  return responses;
}

function runFit(featureSet: string, responses: string) {
  const bundle = tmp("bundle-");
  const config = {
    mode: "real",
    feature_sets: [featureSet],
    responses,
    folds: 4,
    seed: 0,
    grid: { beta1: [0.1], beta2: [1.0] },
    // standardization tames the large common offset of relu-pooled features
    encoder: { patience: 30, zscore_features: true },
    out_dir: bundle,
  };
  const configPath = join(tmp("cfg-"), "run.json");
  writeFileSync(configPath, JSON.stringify(config));
  return { result: nenc("fit", "--config", configPath), bundle };
}

describe("round trip through a real-mode run", () => {
  it("full image and video sets drive run_real without error", () => {
    for (const featureSet of [imageSet, videoSet]) {
      const firstLayer = readFeatureSet(featureSet).manifest.layers[0].name;
      const responses = plantReadout(featureSet, firstLayer, 6, 99);
      const { result, bundle } = runFit(featureSet, responses);
      expect(result.stderr).toBe("");
      expect(result.status).toBe(0);
      expect(readFileSync(join(bundle, "scores.csv"), "utf8")).toContain("V1");
    }
  });

  it("a planted readout of a stored layer is recovered", () => {
    const responses = plantReadout(imageSetNarrow, "conv1", 6, 99);
    const { result, bundle } = runFit(imageSetNarrow, responses);
    expect(result.stderr).toBe("");
    expect(result.status).toBe(0);
    const summary = readFileSync(join(bundle, "summary.csv"), "utf8").trim().split("\n");
    expect(summary[0]).toBe("model,stage,region,mean,std,n_subjects,n_folds");
    const row = summary[1].split(",");
    expect(row[0]).toBe("tiny_resnet");
    expect(row[2]).toBe("V1");
    expect(Number(row[3])).toBeGreaterThan(0.9);
  });
});
