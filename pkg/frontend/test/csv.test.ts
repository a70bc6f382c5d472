import { describe, expect, it } from "vitest";

import { SchemaError, loadCsv, parseCsv } from "../src/csv.js";

const GOOD = `# schema: utweak.gap.v1
# label: demo
x,lambda,xi,gap
0,1,0.25,1.75
1,0.5,0.2,0.8
`;

describe("parseCsv", () => {
  it("reads metadata, header and rows", () => {
    const t = parseCsv(GOOD);
    expect(t.schema).toBe("utweak.gap.v1");
    expect(t.meta["label"]).toBe("demo");
    expect(t.columns).toEqual(["x", "lambda", "xi", "gap"]);
    expect(t.rowCount).toBe(2);
    expect(t.data["gap"]).toEqual([1.75, 0.8]);
  });

  it("treats nan as a gap marker", () => {
    const t = parseCsv("# schema: s\na,b\n1,nan\n");
    expect(Number.isNaN(t.data["b"][0])).toBe(true);
  });

  it("rejects files without a schema comment", () => {
    expect(() => parseCsv("a,b\n1,2\n")).toThrow(SchemaError);
  });

  it("rejects empty files", () => {
    expect(() => parseCsv("")).toThrow(SchemaError);
    expect(() => parseCsv("# schema: s\na,b\n")).toThrow(/no data rows/);
  });

  it("rejects ragged rows", () => {
    expect(() => parseCsv("# schema: s\na,b\n1\n")).toThrow(/fields/);
  });

  it("rejects non-numeric cells", () => {
    expect(() => parseCsv("# schema: s\na,b\n1,zebra\n")).toThrow(/not a number/);
  });
});

describe("loadCsv", () => {
  it("accepts the gap fixture", () => {
    const t = loadCsv("fixtures/gap.csv", "utweak.gap.v1", ["x", "lambda", "xi", "gap"]);
    expect(t.rowCount).toBeGreaterThan(10);
  });

  it("refuses a schema mismatch", () => {
    expect(() => loadCsv("fixtures/gap.csv", "utweak.overlay.v1", ["x", "drift", "lambda"]))
      .toThrow(/schema mismatch/);
  });

  it("refuses a header mismatch", () => {
    expect(() => loadCsv("fixtures/gap.csv", "utweak.gap.v1", ["x", "lambda", "gap"]))
      .toThrow(/header mismatch/);
  });
});
