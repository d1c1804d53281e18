/**
 * Scatter rendering for evaluation-report CSVs.
 *
 * Input rows follow the `model,resolution,params,macs,miou,fps` header; the
 * figure plots FPS on the horizontal axis against mIoU in percent on the
 * vertical axis, one marker per model, the highlighted model as a red star.
 * A plain-text sidecar lists the plotted (x, y) pairs, one `x<TAB>y` per
 * line, so tests can verify placement without decoding the image.
 */

import Papa from "papaparse";

export interface BenchRow {
  model: string;
  fps: number;
  miou: number;
  highlight: boolean;
}

export interface ParsedBench {
  rows: BenchRow[];
  warnings: string[];
}

export const REPORT_HEADER = ["model", "resolution", "params", "macs", "miou", "fps"];

/** Convert an mIoU fraction to percent without accumulating float residue
 * (0.755 * 100 must print as 75.5, not 75.49999999999999). */
export function toPercent(miou: number): number {
  return Number((miou * 100).toPrecision(12));
}

export function formatNumber(v: number): string {
  return Number(v.toPrecision(12)).toString();
}

export function parseBenchCsv(text: string, highlightName?: string): ParsedBench {
  const parsed = Papa.parse<string[]>(text.trim(), { skipEmptyLines: true });
  const data = parsed.data;
  if (data.length === 0) {
    throw new Error("empty CSV: nothing to plot");
  }
  const header = data[0].map((h) => h.trim());
  if (REPORT_HEADER.some((want, i) => header[i] !== want)) {
    throw new Error(
      `unexpected CSV header [${header.join(",")}]; expected [${REPORT_HEADER.join(",")}]`,
    );
  }
  const warnings: string[] = [];
  const rows: BenchRow[] = [];
  for (let i = 1; i < data.length; i++) {
    const fields = data[i];
    const where = `row ${i + 1}`;
    if (fields.length !== REPORT_HEADER.length) {
      warnings.push(`${where}: expected ${REPORT_HEADER.length} fields, got ${fields.length}; skipped`);
      continue;
    }
    const model = fields[0].trim();
    const miou = Number(fields[4]);
    const fps = Number(fields[5]);
    if (!Number.isFinite(fps) || fps <= 0) {
      warnings.push(`${where} (${model}): fps ${fields[5].trim()} is not a positive number; skipped`);
      continue;
    }
    if (!Number.isFinite(miou) || miou < 0 || miou > 1) {
      warnings.push(`${where} (${model}): miou ${fields[4].trim()} is not in [0, 1]; skipped`);
      continue;
    }
    rows.push({ model, fps, miou, highlight: model === highlightName });
  }
  if (rows.length === 0) {
    throw new Error("empty CSV: no plottable rows");
  }
  if (highlightName !== undefined && !rows.some((r) => r.highlight)) {
    warnings.push(`highlight model ${JSON.stringify(highlightName)} not present in the CSV`);
  }
  return { rows, warnings };
}

export function sidecarText(rows: BenchRow[]): string {
  return rows.map((r) => `${formatNumber(r.fps)}\t${formatNumber(toPercent(r.miou))}`).join("\n") + "\n";
}

interface Scale {
  (v: number): number;
  ticks: number[];
}

function linearScale(lo: number, hi: number, outLo: number, outHi: number): Scale {
  if (lo === hi) {
    lo -= Math.abs(lo) * 0.1 + 1;
    hi += Math.abs(hi) * 0.1 + 1;
  }
  const pad = (hi - lo) * 0.08;
  const dLo = lo - pad;
  const dHi = hi + pad;
  const scale = ((v: number) => outLo + ((v - dLo) / (dHi - dLo)) * (outHi - outLo)) as Scale;
  scale.ticks = [0, 0.25, 0.5, 0.75, 1].map((t) => dLo + t * (dHi - dLo));
  return scale;
}

function starPath(cx: number, cy: number, outer: number): string {
  const inner = outer * 0.42;
  const pts: string[] = [];
  for (let i = 0; i < 10; i++) {
    const r = i % 2 === 0 ? outer : inner;
    const a = -Math.PI / 2 + (i * Math.PI) / 5;
    pts.push(`${(cx + r * Math.cos(a)).toFixed(2)},${(cy + r * Math.sin(a)).toFixed(2)}`);
  }
  return pts.join(" ");
}

const PALETTE = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#ff7f0e"];

const WIDTH = 680;
const HEIGHT = 460;
const MARGIN = { left: 64, right: 170, top: 24, bottom: 58 };

export function renderScatterSvg(rows: BenchRow[]): string {
  const x = linearScale(
    Math.min(...rows.map((r) => r.fps)),
    Math.max(...rows.map((r) => r.fps)),
    MARGIN.left,
    WIDTH - MARGIN.right,
  );
  const pct = rows.map((r) => toPercent(r.miou));
  const y = linearScale(Math.min(...pct), Math.max(...pct), HEIGHT - MARGIN.bottom, MARGIN.top);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
      `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`);

  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  for (const t of x.ticks) {
    const px = x(t);
    parts.push(`<line x1="${px.toFixed(2)}" y1="${y0}" x2="${px.toFixed(2)}" y2="${y1}" stroke="#eeeeee"/>`);
    parts.push(
      `<text x="${px.toFixed(2)}" y="${y0 + 18}" text-anchor="middle">${Number(t.toPrecision(4))}</text>`,
    );
  }
  for (const t of y.ticks) {
    const py = y(t);
    parts.push(`<line x1="${x0}" y1="${py.toFixed(2)}" x2="${x1}" y2="${py.toFixed(2)}" stroke="#eeeeee"/>`);
    parts.push(
      `<text x="${x0 - 8}" y="${(py + 4).toFixed(2)}" text-anchor="end">${Number(t.toPrecision(4))}</text>`,
    );
  }
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="black"/>`);
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="black"/>`);
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${HEIGHT - 14}" text-anchor="middle" font-size="14">FPS</text>`,
  );
  parts.push(
    `<text x="18" y="${(y0 + y1) / 2}" text-anchor="middle" font-size="14" ` +
      `transform="rotate(-90 18 ${(y0 + y1) / 2})">mIoU (%)</text>`,
  );

  rows.forEach((row, i) => {
    const px = x(row.fps);
    const py = y(toPercent(row.miou));
    const title = `<title>${row.model} (${formatNumber(row.fps)}, ${formatNumber(toPercent(row.miou))})</title>`;
    if (row.highlight) {
      parts.push(
        `<polygon class="marker highlight" points="${starPath(px, py, 9)}" fill="red">${title}</polygon>`,
      );
    } else {
      parts.push(
        `<circle class="marker" cx="${px.toFixed(2)}" cy="${py.toFixed(2)}" r="5" ` +
          `fill="${PALETTE[i % PALETTE.length]}">${title}</circle>`,
      );
    }
  });

  const legendX = WIDTH - MARGIN.right + 16;
  rows.forEach((row, i) => {
    const ly = MARGIN.top + 10 + i * 18;
    if (row.highlight) {
      parts.push(`<polygon points="${starPath(legendX + 5, ly, 7)}" fill="red"/>`);
    } else {
      parts.push(`<circle cx="${legendX + 5}" cy="${ly}" r="5" fill="${PALETTE[i % PALETTE.length]}"/>`);
    }
    parts.push(`<text x="${legendX + 16}" y="${ly + 4}">${row.model}</text>`);
  });

  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

export interface RenderResult {
  svg: string;
  sidecar: string;
  warnings: string[];
}

export function renderScatter(csvText: string, highlightName?: string): RenderResult {
  const { rows, warnings } = parseBenchCsv(csvText, highlightName);
  return { svg: renderScatterSvg(rows), sidecar: sidecarText(rows), warnings };
}

// ---------------------------------------------------------------------------
// loss-vs-iteration line plot for training logs (`iter,lr,loss`)

export function renderLossCurve(csvText: string): RenderResult {
  const parsed = Papa.parse<string[]>(csvText.trim(), { skipEmptyLines: true });
  const data = parsed.data;
  if (data.length === 0) {
    throw new Error("empty CSV: nothing to plot");
  }
  const header = data[0].map((h) => h.trim());
  if (header[0] !== "iter" || header[2] !== "loss") {
    throw new Error(`unexpected training log header [${header.join(",")}]`);
  }
  const warnings: string[] = [];
  const points: Array<[number, number]> = [];
  for (let i = 1; i < data.length; i++) {
    const it = Number(data[i][0]);
    const loss = Number(data[i][2]);
    if (!Number.isFinite(it) || !Number.isFinite(loss)) {
      warnings.push(`row ${i + 1}: not numeric; skipped`);
      continue;
    }
    points.push([it, loss]);
  }
  if (points.length === 0) {
    throw new Error("empty CSV: no plottable rows");
  }
  const x = linearScale(points[0][0], points[points.length - 1][0], MARGIN.left, WIDTH - 24);
  const losses = points.map((p) => p[1]);
  const y = linearScale(Math.min(...losses), Math.max(...losses), HEIGHT - MARGIN.bottom, MARGIN.top);
  const path = points
    .map(([it, loss], i) => `${i === 0 ? "M" : "L"}${x(it).toFixed(2)},${y(loss).toFixed(2)}`)
    .join(" ");
  const svg =
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif" font-size="12">\n` +
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>\n` +
    `<path d="${path}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>\n` +
    `<text x="${WIDTH / 2}" y="${HEIGHT - 14}" text-anchor="middle" font-size="14">iteration</text>\n` +
    `<text x="18" y="${HEIGHT / 2}" text-anchor="middle" font-size="14" ` +
    `transform="rotate(-90 18 ${HEIGHT / 2})">loss</text>\n</svg>\n`;
  const sidecar = points.map(([it, loss]) => `${formatNumber(it)}\t${formatNumber(loss)}`).join("\n") + "\n";
  return { svg, sidecar, warnings };
}
