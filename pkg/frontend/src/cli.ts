/**
 * render --kind gap --in gap.csv --out fig.svg [--title TEXT]
 *
 * Exit codes: 0 ok, 1 usage or I/O error, 2 schema/validation failure.
 */

import { writeFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { SchemaError } from "./csv.js";
import { FigureKind, KINDS, renderFigure } from "./figures.js";

export function run(argv: string[]): number {
  if (argv[0] !== "render") {
    process.stderr.write("usage: utweak-figures render --kind KIND --in FILE.csv --out FILE.svg\n");
    return 1;
  }
  let values: { kind?: string; in?: string; out?: string; title?: string };
  try {
    ({ values } = parseArgs({
      args: argv.slice(1),
      options: {
        kind: { type: "string" },
        in: { type: "string" },
        out: { type: "string" },
        title: { type: "string" },
      },
    }));
  } catch (err) {
    process.stderr.write(`usage error: ${(err as Error).message}\n`);
    return 1;
  }
  const { kind, in: input, out: output, title } = values;
  if (!kind || !input || !output) {
    process.stderr.write("usage error: --kind, --in and --out are required\n");
    return 1;
  }
  if (!(kind in KINDS)) {
    process.stderr.write(`usage error: unknown kind '${kind}'; known: ${Object.keys(KINDS).join(", ")}\n`);
    return 1;
  }
  try {
    const svg = renderFigure({ kind: kind as FigureKind, input, output, title });
    writeFileSync(output, svg);
  } catch (err) {
    if (err instanceof SchemaError) {
      process.stderr.write(`schema error: ${err.message}\n`);
      return 2;
    }
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
  process.stdout.write(`${output}\n`);
  return 0;
}

const isMain = process.argv[1] !== undefined && import.meta.url.endsWith(
  process.argv[1].split("/").pop() ?? "",
);
if (isMain) {
  process.exit(run(process.argv.slice(2)));
}
