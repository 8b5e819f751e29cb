/** Batch figure generation: `node dist/cli.js figures RUN_DIR [RUN_DIR...] --out DIR` */

import * as fs from "fs";

import { loadRun } from "./loader";
import { renderAll } from "./plots";

export function main(argv: string[]): number {
  const args = [...argv];
  const cmd = args.shift();
  if (cmd !== "figures") {
    console.error("usage: cli.js figures RUN_DIR [RUN_DIR...] --out DIR");
    return 2;
  }
  let outDir = "figures";
  const dirs: string[] = [];
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--out") {
      outDir = args[++i];
    } else {
      dirs.push(args[i]);
    }
  }
  if (dirs.length === 0) {
    console.error("no run directories given");
    return 2;
  }
  try {
    const runs = dirs.map(loadRun);
    fs.mkdirSync(outDir, { recursive: true });
    const figures = renderAll(runs, outDir);
    for (const fig of figures) {
      console.log(`${fig.type}: ${fig.path}`);
    }
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
