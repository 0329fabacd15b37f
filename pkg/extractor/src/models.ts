/**
 * Miniature feature-extraction backbones, one per model family: a 2D CNN,
 * a 3D CNN, a two-stream network, a plain vision transformer, a multiscale
 * video transformer, and a self-supervised-style encoder without a head.
 *
 * Layer sampling follows the family schemes: CNNs expose their five
 * convolutional blocks plus pooling and classifier taps, transformer
 * stacks are grouped four blocks per tap, and the headless encoder exposes
 * only its grouped blocks.
 *
 * Weights are generated from a seeded PRNG (Xavier uniform), so the same
 * (model, seed) pair always yields identical features; pass a different
 * seed to get the re-initialized control variant of the same architecture.
 */

import * as tf from "@tensorflow/tfjs";

import { Prng } from "./prng.js";

export type ModelKind = "image" | "video";

/** Per-layer activations: image models emit one row per frame. */
export interface LayerFeatures {
  frames: number;
  dim: number;
  data: Float32Array;
}

export interface FeatureModel {
  id: string;
  family: string;
  kind: ModelKind;
  layerNames: string[];
  /** preprocessed clip [T, H, W, C] in, feature vectors per tap out */
  forward(clip: tf.Tensor4D): Map<string, LayerFeatures>;
  dispose(): void;
}

export const MODEL_IDS = [
  "tiny_resnet",
  "tiny_i3d",
  "tiny_slowfast",
  "tiny_vit",
  "tiny_mvit",
  "tiny_mae",
] as const;

export type ModelId = (typeof MODEL_IDS)[number];

const MODEL_KIND: Record<ModelId, ModelKind> = {
  tiny_resnet: "image",
  tiny_i3d: "video",
  tiny_slowfast: "video",
  tiny_vit: "image",
  tiny_mvit: "video",
  tiny_mae: "image",
};

export function modelKind(id: string): ModelKind {
  assertKnownModel(id);
  return MODEL_KIND[id as ModelId];
}

export function assertKnownModel(id: string): asserts id is ModelId {
  if (!(MODEL_IDS as readonly string[]).includes(id)) {
    throw new Error(`unknown model id ${id}; known: ${MODEL_IDS.join(", ")}`);
  }
}

/** Same architecture, freshly initialized weights: the random control. */
export function randomizeWeights(id: string, seed: number): FeatureModel {
  return buildModel(id, seed);
}

export function buildModel(id: string, seed: number): FeatureModel {
  assertKnownModel(id);
  switch (id as ModelId) {
    case "tiny_resnet":
      return buildConv2dNet(seed);
    case "tiny_i3d":
      return buildConv3dNet(seed);
    case "tiny_slowfast":
      return buildTwoStreamNet(seed);
    case "tiny_vit":
      return buildTransformer("tiny_vit", seed, {
        blocks: 12,
        dim: 32,
        groupTaps: [4, 8, 12],
        withHead: true,
      });
    case "tiny_mae":
      return buildTransformer("tiny_mae", seed, {
        blocks: 12,
        dim: 24,
        groupTaps: [4, 8, 12],
        withHead: false,
      });
    case "tiny_mvit":
      return buildMultiscaleTransformer(seed);
  }
}

// --------------------------------------------------------------------------
// shared pieces

class WeightStore {
  private rng: Prng;
  private tensors: tf.Tensor[] = [];

  constructor(seed: number) {
    this.rng = new Prng(seed);
  }

  conv2d(kh: number, kw: number, cin: number, cout: number): tf.Tensor4D {
    const fan = kh * kw;
    const t = tf.tensor4d(
      this.rng.xavier(kh * kw * cin * cout, fan * cin, fan * cout),
      [kh, kw, cin, cout],
    );
    this.tensors.push(t);
    return t;
  }

  conv3d(kt: number, kh: number, kw: number, cin: number, cout: number): tf.Tensor5D {
    const fan = kt * kh * kw;
    const t = tf.tensor5d(
      this.rng.xavier(kt * kh * kw * cin * cout, fan * cin, fan * cout),
      [kt, kh, kw, cin, cout],
    );
    this.tensors.push(t);
    return t;
  }

  dense(cin: number, cout: number): tf.Tensor2D {
    const t = tf.tensor2d(this.rng.xavier(cin * cout, cin, cout), [cin, cout]);
    this.tensors.push(t);
    return t;
  }

  dispose(): void {
    tf.dispose(this.tensors);
    this.tensors = [];
  }
}

function perFrameVector(x: tf.Tensor4D, mode: "mean" | "max"): tf.Tensor2D {
  // [T, H, W, C] -> [T, C]
  return (mode === "mean" ? x.mean([1, 2]) : x.max([1, 2])) as tf.Tensor2D;
}

function toLayerFeatures(t: tf.Tensor2D): LayerFeatures {
  const [frames, dim] = t.shape;
  return { frames, dim, data: t.dataSync() as Float32Array };
}

function singleVector(t: tf.Tensor): LayerFeatures {
  const data = t.dataSync() as Float32Array;
  return { frames: 1, dim: data.length, data };
}

function layerNorm(x: tf.Tensor3D): tf.Tensor3D {
  const mean = x.mean(-1, true);
  const centered = x.sub(mean);
  const variance = centered.square().mean(-1, true);
  return centered.div(variance.add(1e-5).sqrt());
}

interface BlockWeights {
  wq: tf.Tensor2D;
  wk: tf.Tensor2D;
  wv: tf.Tensor2D;
  wo: tf.Tensor2D;
  w1: tf.Tensor2D;
  w2: tf.Tensor2D;
}

function makeBlockWeights(store: WeightStore, dim: number): BlockWeights {
  return {
    wq: store.dense(dim, dim),
    wk: store.dense(dim, dim),
    wv: store.dense(dim, dim),
    wo: store.dense(dim, dim),
    w1: store.dense(dim, dim * 2),
    w2: store.dense(dim * 2, dim),
  };
}

function project(x: tf.Tensor3D, w: tf.Tensor2D): tf.Tensor3D {
  const [b, n, d] = x.shape;
  return x.reshape([b * n, d]).matMul(w).reshape([b, n, w.shape[1]]) as tf.Tensor3D;
}

function attentionBlock(x: tf.Tensor3D, w: BlockWeights): tf.Tensor3D {
  const dim = x.shape[2];
  const normed = layerNorm(x);
  const q = project(normed, w.wq);
  const k = project(normed, w.wk);
  const v = project(normed, w.wv);
  const scores = tf.matMul(q, k, false, true).div(Math.sqrt(dim));
  const context = tf.matMul(tf.softmax(scores, -1), v) as tf.Tensor3D;
  const afterAttn = x.add(project(context, w.wo)) as tf.Tensor3D;
  const mlp = project(project(layerNorm(afterAttn), w.w1).relu(), w.w2);
  return afterAttn.add(mlp) as tf.Tensor3D;
}

// --------------------------------------------------------------------------
// 2D CNN (per-frame image backbone): 5 conv blocks, avg pooling, fc

function buildConv2dNet(seed: number): FeatureModel {
  const store = new WeightStore(seed);
  const channels = [8, 16, 24, 32, 48];
  const kernels: tf.Tensor4D[] = [];
  let cin = 3;
  for (const cout of channels) {
    kernels.push(store.conv2d(3, 3, cin, cout));
    cin = cout;
  }
  const head = store.dense(channels[channels.length - 1], 32);
  const layerNames = [
    "conv1",
    "conv2",
    "conv3",
    "conv4",
    "conv5",
    "avgpool",
    "fc",
  ];
  return {
    id: "tiny_resnet",
    family: "image/convolutional",
    kind: "image",
    layerNames,
    forward(clip) {
      const taps = new Map<string, LayerFeatures>();
      tf.tidy(() => {
        let x = clip;
        kernels.forEach((kernel, i) => {
          x = tf.conv2d(x, kernel, i === 0 ? 1 : 2, "same").relu();
          taps.set(`conv${i + 1}`, toLayerFeatures(perFrameVector(x, "max")));
        });
        const pooled = perFrameVector(x, "mean");
        taps.set("avgpool", toLayerFeatures(pooled));
        taps.set("fc", toLayerFeatures(pooled.matMul(head) as tf.Tensor2D));
      });
      return taps;
    },
    dispose: () => store.dispose(),
  };
}

// --------------------------------------------------------------------------
// 3D CNN (single-stream video backbone): 5 conv blocks, max pooling, fc

function buildConv3dNet(seed: number): FeatureModel {
  const store = new WeightStore(seed);
  const channels = [8, 16, 24, 32, 48];
  const temporalStride = [1, 2, 1, 2, 1];
  const kernels: tf.Tensor5D[] = [];
  let cin = 3;
  for (const cout of channels) {
    kernels.push(store.conv3d(3, 3, 3, cin, cout));
    cin = cout;
  }
  const head = store.dense(channels[channels.length - 1], 32);
  const layerNames = ["conv1", "conv2", "conv3", "conv4", "conv5", "maxpool", "fc"];
  return {
    id: "tiny_i3d",
    family: "video/convolutional",
    kind: "video",
    layerNames,
    forward(clip) {
      const taps = new Map<string, LayerFeatures>();
      tf.tidy(() => {
        const [t, h, w, c] = clip.shape;
        let x = clip.reshape([1, t, h, w, c]) as tf.Tensor5D;
        kernels.forEach((kernel, i) => {
          const spatial = i === 0 ? 1 : 2;
          x = tf
            .conv3d(x, kernel, [temporalStride[i], spatial, spatial], "same")
            .relu();
          taps.set(`conv${i + 1}`, singleVector(x.mean([0, 1, 2, 3])));
        });
        const pooledMax = x.max([0, 1, 2, 3]);
        taps.set("maxpool", singleVector(pooledMax));
        taps.set(
          "fc",
          singleVector(pooledMax.reshape([1, -1]).matMul(head).reshape([-1])),
        );
      });
      return taps;
    },
    dispose: () => store.dispose(),
  };
}

// --------------------------------------------------------------------------
// two-stream video backbone: 5 conv blocks per branch + the 2 fused layers

function buildTwoStreamNet(seed: number): FeatureModel {
  const store = new WeightStore(seed);
  const slowChannels = [12, 24, 36, 48, 64];
  const fastChannels = [4, 8, 12, 16, 24];
  const makeBranch = (channels: number[]) => {
    const kernels: tf.Tensor5D[] = [];
    let cin = 3;
    for (const cout of channels) {
      kernels.push(store.conv3d(3, 3, 3, cin, cout));
      cin = cout;
    }
    return kernels;
  };
  const slow = makeBranch(slowChannels);
  const fast = makeBranch(fastChannels);
  const head = store.dense(slowChannels[4] + fastChannels[4], 32);
  const layerNames = [
    ...slowChannels.map((_, i) => `slow${i + 1}`),
    ...fastChannels.map((_, i) => `fast${i + 1}`),
    "concat",
    "fc",
  ];
  return {
    id: "tiny_slowfast",
    family: "video/convolutional/two-stream",
    kind: "video",
    layerNames,
    forward(clip) {
      const taps = new Map<string, LayerFeatures>();
      tf.tidy(() => {
        const [t, h, w, c] = clip.shape;
        const full = clip.reshape([1, t, h, w, c]) as tf.Tensor5D;
        // slow pathway sees every 4th frame of the sampled clip
        const slowIdx: number[] = [];
        for (let i = 0; i < t; i += 4) slowIdx.push(i);
        const runBranch = (input: tf.Tensor5D, kernels: tf.Tensor5D[], tag: string) => {
          let x = input;
          kernels.forEach((kernel, i) => {
            const spatial = i === 0 ? 1 : 2;
            x = tf.conv3d(x, kernel, [1, spatial, spatial], "same").relu();
            taps.set(`${tag}${i + 1}`, singleVector(x.mean([0, 1, 2, 3])));
          });
          return x.mean([0, 1, 2, 3]);
        };
        const slowOut = runBranch(
          tf.gather(full, slowIdx, 1) as tf.Tensor5D,
          slow,
          "slow",
        );
        const fastOut = runBranch(full, fast, "fast");
        const fused = tf.concat([slowOut, fastOut]);
        taps.set("concat", singleVector(fused));
        taps.set("fc", singleVector(fused.reshape([1, -1]).matMul(head).reshape([-1])));
      });
      return taps;
    },
    dispose: () => store.dispose(),
  };
}

// --------------------------------------------------------------------------
// plain transformer (per-frame): grouped blocks of 4 (+ optional head)

function buildTransformer(
  id: "tiny_vit" | "tiny_mae",
  seed: number,
  options: { blocks: number; dim: number; groupTaps: number[]; withHead: boolean },
): FeatureModel {
  const store = new WeightStore(seed);
  const patch = 8;
  const embed = store.conv2d(patch, patch, 3, options.dim);
  const blocks = Array.from({ length: options.blocks }, () =>
    makeBlockWeights(store, options.dim),
  );
  const head = options.withHead ? store.dense(options.dim, 24) : null;
  const layerNames = options.groupTaps.map((_, i) => `group${i + 1}`);
  if (head) layerNames.push("fc");
  return {
    id,
    family: options.withHead ? "image/transformer" : "image/transformer/self-supervised",
    kind: "image",
    layerNames,
    forward(clip) {
      const taps = new Map<string, LayerFeatures>();
      tf.tidy(() => {
        const [t] = clip.shape;
        // non-overlapping patches -> tokens per frame
        const patches = tf.conv2d(clip, embed, patch, "valid");
        const n = patches.shape[1] * patches.shape[2];
        let x = patches.reshape([t, n, options.dim]) as tf.Tensor3D;
        let tapIndex = 0;
        blocks.forEach((blockWeights, i) => {
          x = attentionBlock(x, blockWeights);
          if (options.groupTaps.includes(i + 1)) {
            taps.set(`group${++tapIndex}`, toLayerFeatures(x.mean(1) as tf.Tensor2D));
          }
        });
        if (head) {
          taps.set(
            "fc",
            toLayerFeatures((x.mean(1) as tf.Tensor2D).matMul(head) as tf.Tensor2D),
          );
        }
      });
      return taps;
    },
    dispose: () => store.dispose(),
  };
}

// --------------------------------------------------------------------------
// multiscale video transformer: 4 grouped blocks with token pooling + fc

function buildMultiscaleTransformer(seed: number): FeatureModel {
  const store = new WeightStore(seed);
  const dim = 24;
  const patch = 8;
  const tubeLen = 2;
  const embed = store.conv3d(tubeLen, patch, patch, 3, dim);
  const blocks = Array.from({ length: 16 }, () => makeBlockWeights(store, dim));
  const head = store.dense(dim, 32);
  const layerNames = ["group1", "group2", "group3", "group4", "fc"];
  return {
    id: "tiny_mvit",
    family: "video/transformer/multiscale",
    kind: "video",
    layerNames,
    forward(clip) {
      const taps = new Map<string, LayerFeatures>();
      tf.tidy(() => {
        const [t, h, w, c] = clip.shape;
        const tubes = tf.conv3d(
          clip.reshape([1, t, h, w, c]) as tf.Tensor5D,
          embed,
          [tubeLen, patch, patch],
          "valid",
        );
        let x = tubes.reshape([1, -1, dim]) as tf.Tensor3D;
        let tapIndex = 0;
        blocks.forEach((blockWeights, i) => {
          x = attentionBlock(x, blockWeights);
          if ((i + 1) % 4 === 0) {
            taps.set(`group${++tapIndex}`, singleVector(x.mean([0, 1])));
            // multiscale stage transition: average token pairs
            const n = x.shape[1];
            if (n >= 2 && i + 1 < blocks.length) {
              const even = n - (n % 2);
              x = x
                .slice([0, 0, 0], [1, even, dim])
                .reshape([1, even / 2, 2, dim])
                .mean(2) as tf.Tensor3D;
            }
          }
        });
        taps.set(
          "fc",
          singleVector(x.mean([0, 1]).reshape([1, -1]).matMul(head).reshape([-1])),
        );
      });
      return taps;
    },
    dispose: () => store.dispose(),
  };
}
