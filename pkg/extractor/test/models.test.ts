import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";

import { buildModel, MODEL_IDS, randomizeWeights } from "../src/models.js";
import { Prng } from "../src/prng.js";

function demoClip(frames: number, seed = 0): tf.Tensor4D {
  const rng = new Prng(seed);
  const data = new Float32Array(frames * 32 * 32 * 3).map(() => rng.next() * 2 - 1);
  return tf.tensor4d(data, [frames, 32, 32, 3]);
}

function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}

describe("layer sampling schemes", () => {
  it("matches the per-family layer counts", () => {
    const expected: Record<string, string[]> = {
      tiny_resnet: ["conv1", "conv2", "conv3", "conv4", "conv5", "avgpool", "fc"],
      tiny_i3d: ["conv1", "conv2", "conv3", "conv4", "conv5", "maxpool", "fc"],
      tiny_slowfast: [
        "slow1", "slow2", "slow3", "slow4", "slow5",
        "fast1", "fast2", "fast3", "fast4", "fast5",
        "concat", "fc",
      ],
      tiny_vit: ["group1", "group2", "group3", "fc"],
      tiny_mvit: ["group1", "group2", "group3", "group4", "fc"],
      tiny_mae: ["group1", "group2", "group3"],
    };
    for (const id of MODEL_IDS) {
      const model = buildModel(id, 0);
      expect(model.layerNames, id).toEqual(expected[id]);
      model.dispose();
    }
  });

  it("rejects unknown model ids", () => {
    expect(() => buildModel("resnet-9000", 0)).toThrow(/unknown model/);
  });
});

describe("determinism", () => {
  it("same seed, same features", () => {
    for (const id of ["tiny_resnet", "tiny_mvit"]) {
      const clip = demoClip(8);
      const a = buildModel(id, 42);
      const b = buildModel(id, 42);
      const tapsA = a.forward(clip);
      const tapsB = b.forward(clip);
      for (const layer of a.layerNames) {
        expect([...tapsA.get(layer)!.data], `${id}/${layer}`).toEqual([
          ...tapsB.get(layer)!.data,
        ]);
      }
      a.dispose();
      b.dispose();
      clip.dispose();
    }
  });

  it("reinitialized weights give different features (cosine < 0.9 on average)", () => {
    for (const id of ["tiny_resnet", "tiny_mvit"]) {
      const trained = buildModel(id, 1);
      const random = randomizeWeights(id, 2);
      const lastTap = trained.layerNames[trained.layerNames.length - 1];
      const cosines: number[] = [];
      for (let v = 0; v < 10; v++) {
        const clip = demoClip(8, 100 + v);
        const a = trained.forward(clip).get(lastTap)!;
        const b = random.forward(clip).get(lastTap)!;
        cosines.push(Math.abs(cosine(a.data, b.data)));
        clip.dispose();
      }
      const mean = cosines.reduce((s, c) => s + c, 0) / cosines.length;
      expect(mean, id).toBeLessThan(0.9);
      trained.dispose();
      random.dispose();
    }
  });
});

describe("feature shapes", () => {
  it("image models emit one row per frame, video models one per clip", () => {
    const clip = demoClip(6);
    const image = buildModel("tiny_resnet", 0);
    for (const features of image.forward(clip).values()) {
      expect(features.frames).toBe(6);
    }
    image.dispose();
    const video = buildModel("tiny_i3d", 0);
    for (const features of video.forward(clip).values()) {
      expect(features.frames).toBe(1);
    }
    video.dispose();
    clip.dispose();
  });
});
