#!/usr/bin/env node
/**
 * figkit render --figure N --in results.csv [more.csv ...] --out fig.svg
 *
 * Renders one reference figure from harness CSV output. Nothing is written
 * when loading or rendering fails.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { loadRows } from "./csv";
import { RECIPES } from "./recipes";
import { renderFigure } from "./render";

interface Args {
  figure: number;
  inputs: string[];
  out: string;
}

const USAGE = "usage: figkit render --figure <2..9> --in <csv...> --out <svg>";

function parseArgs(argv: string[]): Args {
  if (argv[0] !== "render") {
    throw new Error(USAGE);
  }
  let figure: number | undefined;
  const inputs: string[] = [];
  let out: string | undefined;
  let i = 1;
  while (i < argv.length) {
    const a = argv[i];
    if (a === "--figure") {
      figure = Number(argv[++i]);
    } else if (a === "--in") {
      i += 1;
      while (i < argv.length && !argv[i].startsWith("--")) {
        inputs.push(argv[i]);
        i += 1;
      }
      continue;
    } else if (a === "--out") {
      out = argv[++i];
    } else {
      throw new Error(`unknown argument '${a}'\n${USAGE}`);
    }
    i += 1;
  }
  if (figure === undefined || !RECIPES[figure]) {
    throw new Error(`--figure must be one of ${Object.keys(RECIPES).join(", ")}\n${USAGE}`);
  }
  if (inputs.length === 0 || !out) {
    throw new Error(USAGE);
  }
  return { figure, inputs, out };
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error((err as Error).message);
    return 2;
  }
  try {
    const rows = loadRows(args.inputs);
    const svg = renderFigure(rows, RECIPES[args.figure]);
    fs.mkdirSync(path.dirname(path.resolve(args.out)), { recursive: true });
    fs.writeFileSync(args.out, svg);
    console.log(`wrote ${args.out}`);
    return 0;
  } catch (err) {
    console.error(`figkit: ${(err as Error).message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
