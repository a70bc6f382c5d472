/**
 * Minimal deterministic SVG building blocks: fixed canvas, fixed fonts,
 * fixed number formatting, so identical inputs yield identical bytes.
 */

export const WIDTH = 800;
export const HEIGHT = 500;
export const MARGIN = { top: 40, right: 24, bottom: 48, left: 64 };

export const PALETTE = ["#1f6fb2", "#d1495b", "#3c8d53", "#8661c1", "#c97b1e"];

const FONT = "font-family=\"Helvetica, Arial, sans-serif\"";

export function fmt(v: number): string {
  const r = v.toFixed(2);
  return r === "-0.00" ? "0.00" : r;
}

export interface Scale {
  lo: number;
  hi: number;
  rangeLo: number;
  rangeHi: number;
}

export function makeScale(values: number[], rangeLo: number, rangeHi: number, pad = 0.05): Scale {
  const finite = values.filter((v) => Number.isFinite(v));
  let lo = Math.min(...finite);
  let hi = Math.max(...finite);
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const span = hi - lo;
  return { lo: lo - pad * span, hi: hi + pad * span, rangeLo, rangeHi };
}

export function apply(s: Scale, v: number): number {
  return s.rangeLo + ((v - s.lo) / (s.hi - s.lo)) * (s.rangeHi - s.rangeLo);
}

/** Round tick positions: about n ticks at a 1/2/5 step. */
export function ticks(s: Scale, n = 5): number[] {
  const span = s.hi - s.lo;
  const raw = span / n;
  const mag = Math.pow(10, Math.floor(Math.log10(raw)));
  const norm = raw / mag;
  const step = (norm >= 5 ? 5 : norm >= 2 ? 2 : 1) * mag;
  const first = Math.ceil(s.lo / step) * step;
  const out: number[] = [];
  for (let v = first; v <= s.hi + 1e-12 * span; v += step) {
    out.push(Math.abs(v) < 1e-12 * span ? 0 : v);
  }
  return out;
}

export function tickLabel(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e5 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(6)));
}

/** Polyline path with gaps wherever a coordinate is not finite. */
export function linePath(xs: number[], ys: number[], sx: Scale, sy: Scale): string {
  const parts: string[] = [];
  let pen = false;
  for (let i = 0; i < xs.length; i += 1) {
    if (!Number.isFinite(xs[i]) || !Number.isFinite(ys[i])) {
      pen = false;
      continue;
    }
    const cmd = pen ? "L" : "M";
    parts.push(`${cmd}${fmt(apply(sx, xs[i]))} ${fmt(apply(sy, ys[i]))}`);
    pen = true;
  }
  return parts.join(" ");
}

export function bandPath(xs: number[], lower: number[], upper: number[], sx: Scale, sy: Scale): string {
  const up: string[] = [];
  const down: string[] = [];
  for (let i = 0; i < xs.length; i += 1) {
    if (!Number.isFinite(upper[i]) || !Number.isFinite(lower[i])) continue;
    up.push(`${up.length ? "L" : "M"}${fmt(apply(sx, xs[i]))} ${fmt(apply(sy, upper[i]))}`);
  }
  for (let i = xs.length - 1; i >= 0; i -= 1) {
    if (!Number.isFinite(upper[i]) || !Number.isFinite(lower[i])) continue;
    down.push(`L${fmt(apply(sx, xs[i]))} ${fmt(apply(sy, lower[i]))}`);
  }
  if (!up.length) return "";
  return `${up.join(" ")} ${down.join(" ")} Z`;
}

export function axes(sx: Scale, sy: Scale, xLabel: string, yLabel: string): string {
  const out: string[] = [];
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  out.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="#333" stroke-width="1"/>`);
  out.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="#333" stroke-width="1"/>`);
  for (const t of ticks(sx)) {
    const px = fmt(apply(sx, t));
    out.push(`<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 5}" stroke="#333" stroke-width="1"/>`);
    out.push(`<text x="${px}" y="${y0 + 20}" ${FONT} font-size="12" fill="#333" text-anchor="middle">${tickLabel(t)}</text>`);
    out.push(`<line x1="${px}" y1="${y0}" x2="${px}" y2="${y1}" stroke="#ddd" stroke-width="0.5"/>`);
  }
  for (const t of ticks(sy)) {
    const py = fmt(apply(sy, t));
    out.push(`<line x1="${x0 - 5}" y1="${py}" x2="${x0}" y2="${py}" stroke="#333" stroke-width="1"/>`);
    out.push(`<text x="${x0 - 9}" y="${py}" ${FONT} font-size="12" fill="#333" text-anchor="end" dominant-baseline="middle">${tickLabel(t)}</text>`);
    out.push(`<line x1="${x0}" y1="${py}" x2="${x1}" y2="${py}" stroke="#ddd" stroke-width="0.5"/>`);
  }
  out.push(`<text x="${(x0 + x1) / 2}" y="${HEIGHT - 10}" ${FONT} font-size="14" fill="#111" text-anchor="middle">${escapeText(xLabel)}</text>`);
  out.push(`<text x="18" y="${(y0 + y1) / 2}" ${FONT} font-size="14" fill="#111" text-anchor="middle" transform="rotate(-90 18 ${(y0 + y1) / 2})">${escapeText(yLabel)}</text>`);
  return out.join("\n");
}

export function legend(entries: { label: string; color: string; dash?: string }[]): string {
  const out: string[] = [];
  const x = WIDTH - MARGIN.right - 190;
  let y = MARGIN.top + 8;
  out.push(`<rect x="${x - 8}" y="${y - 14}" width="196" height="${entries.length * 18 + 10}" fill="#fff" fill-opacity="0.85" stroke="#999" stroke-width="0.5"/>`);
  for (const e of entries) {
    out.push(`<line x1="${x}" y1="${y}" x2="${x + 26}" y2="${y}" stroke="${e.color}" stroke-width="2"${e.dash ? ` stroke-dasharray="${e.dash}"` : ""}/>`);
    out.push(`<text x="${x + 32}" y="${y + 4}" ${FONT} font-size="12" fill="#111">${escapeText(e.label)}</text>`);
    y += 18;
  }
  return out.join("\n");
}

export function escapeText(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function document(title: string, body: string): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}">`,
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`,
    `<text x="${WIDTH / 2}" y="24" ${FONT} font-size="16" fill="#111" text-anchor="middle">${escapeText(title)}</text>`,
    body,
    "</svg>",
    "",
  ].join("\n");
}
