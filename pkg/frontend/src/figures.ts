/**
 * The four figure kinds and their CSV contracts.
 *
 * Rendering is a pure function of the input bytes: no dates, no
 * randomness, fixed canvas and formatting.  All mathematics stays in the
 * producing toolkit; this module only scales data to pixels.
 */

import { CsvTable, SchemaError, loadCsv } from "./csv.js";
import {
  HEIGHT,
  MARGIN,
  PALETTE,
  WIDTH,
  apply,
  axes,
  bandPath,
  document,
  fmt,
  legend,
  linePath,
  makeScale,
} from "./svg.js";

export type FigureKind = "overlay" | "gap" | "variance-gap" | "error-curve";

export interface FigureSpec {
  kind: FigureKind;
  input: string;
  output: string;
  title?: string;
}

interface KindConfig {
  schema: string;
  columns: string[];
  xColumn: string;
  xLabel: string;
  yLabel: string;
}

export const KINDS: Record<FigureKind, KindConfig> = {
  overlay: {
    schema: "utweak.overlay.v1",
    columns: ["x", "drift", "lambda"],
    xColumn: "x",
    xLabel: "x",
    yLabel: "value",
  },
  gap: {
    schema: "utweak.gap.v1",
    columns: ["x", "lambda", "xi", "gap"],
    xColumn: "x",
    xLabel: "x",
    yLabel: "value",
  },
  "variance-gap": {
    schema: "utweak.variance_gap.v1",
    columns: ["t", "var_exact", "var_euler", "var_mc", "stderr_mc"],
    xColumn: "t",
    xLabel: "t",
    yLabel: "variance",
  },
  "error-curve": {
    schema: "utweak.error_curve.v1",
    columns: ["t", "estimate", "stderr", "sup_so_far"],
    xColumn: "t",
    xLabel: "t",
    yLabel: "weak error",
  },
};

const plotArea = {
  x0: MARGIN.left,
  x1: WIDTH - MARGIN.right,
  y0: HEIGHT - MARGIN.bottom,
  y1: MARGIN.top,
};

function seriesLabel(table: CsvTable, name: string): string {
  const label = table.meta["label"];
  return label ? `${label}: ${name}` : name;
}

export function loadFigureData(kind: FigureKind, path: string): CsvTable {
  const cfg = KINDS[kind];
  return loadCsv(path, cfg.schema, cfg.columns);
}

export function renderFigure(spec: FigureSpec): string {
  const cfg = KINDS[spec.kind];
  const table = loadFigureData(spec.kind, spec.input);
  const xs = table.data[cfg.xColumn];
  const title = spec.title ?? defaultTitle(spec.kind, table);

  const sx = makeScale(xs, plotArea.x0, plotArea.x1, 0.02);
  let body: string;
  switch (spec.kind) {
    case "overlay":
      body = renderLines(table, xs, sx, [
        { column: "drift", label: "drift", color: PALETTE[0] },
        { column: "lambda", label: "rate", color: PALETTE[1] },
      ], { zeroLine: true });
      break;
    case "gap":
      body = renderLines(table, xs, sx, [
        { column: "lambda", label: "rate", color: PALETTE[1], dash: "5 3" },
        { column: "xi", label: "generator ratio", color: PALETTE[2], dash: "2 3" },
        { column: "gap", label: "2 rate - ratio", color: PALETTE[0] },
      ], { zeroLine: true });
      break;
    case "variance-gap":
      body = renderVariance(table, xs, sx);
      break;
    case "error-curve":
      body = renderErrorCurve(table, xs, sx);
      break;
  }
  return document(title, body);
}

function defaultTitle(kind: FigureKind, table: CsvTable): string {
  const label = table.meta["label"] ?? "";
  const base: Record<FigureKind, string> = {
    overlay: "drift and coercivity rate",
    gap: "decay-rate gap",
    "variance-gap": "variance of the law vs the scheme",
    "error-curve": "weak error over time",
  };
  return label ? `${base[kind]} (${label})` : base[kind];
}

interface LineSeries {
  column: string;
  label: string;
  color: string;
  dash?: string;
}

function renderLines(
  table: CsvTable,
  xs: number[],
  sx: ReturnType<typeof makeScale>,
  series: LineSeries[],
  opts: { zeroLine?: boolean } = {},
): string {
  const cfg = KINDS.overlay;
  const all = series.flatMap((s) => table.data[s.column]);
  if (opts.zeroLine) all.push(0);
  const sy = makeScale(all, plotArea.y0, plotArea.y1);
  const out: string[] = [axes(sx, sy, cfg.xLabel, cfg.yLabel)];
  if (opts.zeroLine) {
    const py = fmt(apply(sy, 0));
    out.push(`<line x1="${plotArea.x0}" y1="${py}" x2="${plotArea.x1}" y2="${py}" stroke="#888" stroke-width="1" stroke-dasharray="4 4"/>`);
  }
  for (const s of series) {
    out.push(`<path d="${linePath(xs, table.data[s.column], sx, sy)}" fill="none" stroke="${s.color}" stroke-width="1.8"${s.dash ? ` stroke-dasharray="${s.dash}"` : ""}/>`);
  }
  out.push(legend(series.map((s) => ({ label: seriesLabel(table, s.label), color: s.color, dash: s.dash }))));
  return out.join("\n");
}

function renderVariance(table: CsvTable, xs: number[], sx: ReturnType<typeof makeScale>): string {
  const exact = table.data["var_exact"];
  const euler = table.data["var_euler"];
  const mc = table.data["var_mc"];
  const sy = makeScale([...exact, ...euler, 0], plotArea.y0, plotArea.y1);
  const out: string[] = [axes(sx, sy, "t", "variance")];
  out.push(`<path d="${linePath(xs, exact, sx, sy)}" fill="none" stroke="${PALETTE[0]}" stroke-width="1.8"/>`);
  out.push(`<path d="${linePath(xs, euler, sx, sy)}" fill="none" stroke="${PALETTE[1]}" stroke-width="1.8" stroke-dasharray="6 3"/>`);
  for (let i = 0; i < xs.length; i += 1) {
    if (!Number.isFinite(mc[i])) continue;
    out.push(`<circle cx="${fmt(apply(sx, xs[i]))}" cy="${fmt(apply(sy, mc[i]))}" r="2.5" fill="${PALETTE[2]}"/>`);
  }
  out.push(legend([
    { label: seriesLabel(table, "law variance"), color: PALETTE[0] },
    { label: seriesLabel(table, "scheme variance"), color: PALETTE[1], dash: "6 3" },
    { label: seriesLabel(table, "Monte Carlo"), color: PALETTE[2] },
  ]));
  return out.join("\n");
}

function renderErrorCurve(table: CsvTable, xs: number[], sx: ReturnType<typeof makeScale>): string {
  const est = table.data["estimate"];
  const se = table.data["stderr"];
  const sup = table.data["sup_so_far"];
  const lower = est.map((v, i) => v - 3 * se[i]);
  const upper = est.map((v, i) => v + 3 * se[i]);
  const sy = makeScale([...lower, ...upper, ...sup, 0], plotArea.y0, plotArea.y1);
  const out: string[] = [axes(sx, sy, "t", "weak error")];
  const band = bandPath(xs, lower, upper, sx, sy);
  if (band) {
    out.push(`<path d="${band}" fill="${PALETTE[0]}" fill-opacity="0.15" stroke="none"/>`);
  }
  out.push(`<path d="${linePath(xs, est, sx, sy)}" fill="none" stroke="${PALETTE[0]}" stroke-width="1.8"/>`);
  out.push(`<path d="${linePath(xs, sup, sx, sy)}" fill="none" stroke="${PALETTE[1]}" stroke-width="1.4" stroke-dasharray="5 3"/>`);
  out.push(legend([
    { label: seriesLabel(table, "estimate (3 s.e. band)"), color: PALETTE[0] },
    { label: seriesLabel(table, "running supremum"), color: PALETTE[1], dash: "5 3" },
  ]));
  return out.join("\n");
}

export { SchemaError };
