#!/usr/bin/env node
/**
 * mcfnet-plot: render an evaluation-report CSV as an SVG scatter figure.
 *
 * Exit codes: 0 success, 1 usage error, 2 runtime error (missing file,
 * empty or unparseable CSV), 3 completed with warnings (malformed rows
 * skipped or highlight model absent).
 */

import { readFileSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { renderLossCurve, renderScatter } from "./render.js";

const USAGE = `usage: mcfnet-plot --csv report.csv --out figure.svg
                   [--highlight NAME] [--points figure.points.txt]
                   [--mode scatter|loss]`;

export function main(argv: string[]): number {
  let args;
  try {
    args = parseArgs({
      args: argv,
      options: {
        csv: { type: "string" },
        out: { type: "string" },
        highlight: { type: "string" },
        points: { type: "string" },
        mode: { type: "string", default: "scatter" },
      },
    });
  } catch (err) {
    console.error(`mcfnet-plot: ${(err as Error).message}\n${USAGE}`);
    return 1;
  }
  const { csv, out, highlight, points, mode } = args.values;
  if (!csv || !out) {
    console.error(`mcfnet-plot: --csv and --out are required\n${USAGE}`);
    return 1;
  }
  if (mode !== "scatter" && mode !== "loss") {
    console.error(`mcfnet-plot: unknown mode ${JSON.stringify(mode)}\n${USAGE}`);
    return 1;
  }

  let text: string;
  try {
    text = readFileSync(csv, "utf-8");
  } catch (err) {
    console.error(`mcfnet-plot: cannot read ${csv}: ${(err as Error).message}`);
    return 2;
  }

  try {
    const result = mode === "loss" ? renderLossCurve(text) : renderScatter(text, highlight);
    writeFileSync(out, result.svg);
    writeFileSync(points ?? `${out}.points.txt`, result.sidecar);
    for (const warning of result.warnings) {
      console.error(`mcfnet-plot: warning: ${warning}`);
    }
    return result.warnings.length > 0 ? 3 : 0;
  } catch (err) {
    console.error(`mcfnet-plot: ${(err as Error).message}`);
    return 2;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
