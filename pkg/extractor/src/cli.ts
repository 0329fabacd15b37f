/**
 * Command-line entry: extract features, emit default recipes, synthesize
 * demo stimuli.
 *
 *   node dist/cli.js extract --recipe recipe.json --videos stimuli/ --out features/
 *   node dist/cli.js recipe --model tiny_mvit
 *   node dist/cli.js synth --out stimuli/ --count 20 --frames 16 --seed 0
 */

import { writeFileSync } from "fs";
import { parseArgs } from "node:util";

import { extract } from "./extract.js";
import { stableJson } from "./format.js";
import { MODEL_IDS } from "./models.js";
import { defaultRecipe, loadRecipe } from "./recipes.js";
import { synthesizeVideos } from "./video.js";

async function main(argv: string[]): Promise<number> {
  const command = argv[0];
  const rest = argv.slice(1);
  try {
    if (command === "extract") {
      const { values } = parseArgs({
        args: rest,
        options: {
          recipe: { type: "string" },
          videos: { type: "string" },
          out: { type: "string" },
          "weights-seed": { type: "string" },
        },
      });
      if (!values.recipe || !values.videos || !values.out) {
        throw new Error("extract needs --recipe, --videos, --out");
      }
      const recipe = loadRecipe(values.recipe);
      if (values["weights-seed"] !== undefined) {
        recipe.weightsSeed = Number(values["weights-seed"]);
      }
      const result = await extract(recipe, values.videos, values.out);
      console.log(
        `extracted ${result.layerDims.size} layer(s) x ${result.videoIds.length} video(s) -> ${result.outDir}`,
      );
      return 0;
    }
    if (command === "recipe") {
      const { values } = parseArgs({
        args: rest,
        options: { model: { type: "string" }, out: { type: "string" } },
      });
      if (!values.model) throw new Error(`recipe needs --model (one of ${MODEL_IDS.join(", ")})`);
      const recipe = defaultRecipe(values.model);
      const text = stableJson(recipe) + "\n";
      if (values.out) {
        writeFileSync(values.out, text);
        console.log(`wrote ${values.out}`);
      } else {
        process.stdout.write(text);
      }
      return 0;
    }
    if (command === "synth") {
      const { values } = parseArgs({
        args: rest,
        options: {
          out: { type: "string" },
          count: { type: "string", default: "20" },
          frames: { type: "string", default: "16" },
          height: { type: "string", default: "32" },
          width: { type: "string", default: "32" },
          seed: { type: "string", default: "0" },
        },
      });
      if (!values.out) throw new Error("synth needs --out");
      const paths = synthesizeVideos(values.out, {
        count: Number(values.count),
        frames: Number(values.frames),
        height: Number(values.height),
        width: Number(values.width),
        seed: Number(values.seed),
      });
      console.log(`synthesized ${paths.length} video(s) under ${values.out}`);
      return 0;
    }
    console.error("usage: cli.js <extract|recipe|synth> [options]");
    return 1;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

main(process.argv.slice(2)).then((code) => {
  process.exitCode = code;
});
