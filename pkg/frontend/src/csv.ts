/**
 * Reader for the versioned CSV artifacts of the simulation toolkit.
 *
 * Files start with `# key: value` comment lines (always including
 * `# schema:`), then one exact header row, then numeric rows (the token
 * `nan` marks gaps, e.g. Monte Carlo columns past their horizon).
 */

import { readFileSync } from "node:fs";

export interface CsvTable {
  schema: string;
  meta: Record<string, string>;
  columns: string[];
  /** column-major numeric data; NaN encodes a gap */
  data: Record<string, number[]>;
  rowCount: number;
}

export class SchemaError extends Error {}

export function parseCsv(text: string): CsvTable {
  const lines = text.split(/\r?\n/).filter((l) => l.trim().length > 0);
  const meta: Record<string, string> = {};
  let i = 0;
  while (i < lines.length && lines[i].startsWith("#")) {
    const body = lines[i].slice(1).trim();
    const colon = body.indexOf(":");
    if (colon > 0) {
      meta[body.slice(0, colon).trim()] = body.slice(colon + 1).trim();
    }
    i += 1;
  }
  const schema = meta["schema"];
  if (!schema) {
    throw new SchemaError("missing '# schema:' comment line");
  }
  if (i >= lines.length) {
    throw new SchemaError("no header row after the comment block");
  }
  const columns = lines[i].split(",").map((c) => c.trim());
  i += 1;
  const data: Record<string, number[]> = {};
  for (const c of columns) data[c] = [];
  let rowCount = 0;
  for (; i < lines.length; i += 1) {
    const parts = lines[i].split(",");
    if (parts.length !== columns.length) {
      throw new SchemaError(
        `row ${rowCount + 1} has ${parts.length} fields, expected ${columns.length}`,
      );
    }
    parts.forEach((p, j) => {
      const v = Number(p);
      if (p.trim() !== "nan" && Number.isNaN(v)) {
        throw new SchemaError(`row ${rowCount + 1}, column '${columns[j]}': not a number: '${p}'`);
      }
      data[columns[j]].push(p.trim() === "nan" ? Number.NaN : v);
    });
    rowCount += 1;
  }
  if (rowCount === 0) {
    throw new SchemaError("no data rows");
  }
  return { schema, meta, columns, data, rowCount };
}

export function loadCsv(path: string, expectedSchema: string, expectedColumns: string[]): CsvTable {
  const table = parseCsv(readFileSync(path, "utf8"));
  if (table.schema !== expectedSchema) {
    throw new SchemaError(`schema mismatch: file declares '${table.schema}', expected '${expectedSchema}'`);
  }
  const got = table.columns.join(",");
  const want = expectedColumns.join(",");
  if (got !== want) {
    throw new SchemaError(`header mismatch: got '${got}', expected '${want}'`);
  }
  return table;
}
